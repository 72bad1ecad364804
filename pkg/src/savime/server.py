"""TCP server: one thread and one :class:`Session` per connection."""
from __future__ import annotations

import itertools
import logging
import shutil
import signal
import socketserver
import tempfile
import threading
from typing import BinaryIO

from .config import Config
from .db import Database, DdlResult
from .errors import BindFailure, ProtocolError, SavimeError
from .protocol import (
    DATASET_PUSH,
    DONE,
    ERROR,
    QUERY,
    RESULT_BLOCK,
    RESULT_SCHEMA,
    decode_block,
    encode_frame,
    read_frame,
    schema_payload,
    status_payload,
    subtar_blocks,
)
from .query import parse_script

log = logging.getLogger("savime.server")

_session_ids = itertools.count(1)

# Result frames are spooled before sending so that a query failing half way
# still answers with a lone ERROR frame.
SPOOL_MEMORY = 64 << 20


class Session:
    def __init__(self, db: Database, peer: str = "local", max_frame: int | None = None):
        self.db = db
        self.id = next(_session_ids)
        self.peer = peer
        self.max_frame = max_frame or db.config.max_frame_bytes
        self.query_text: str | None = None
        self.plan = None

    def _log(self, event: str, **fields) -> None:
        extra = " ".join(f"{k}={v!r}" for k, v in fields.items())
        log.info("session=%d event=%s %s", self.id, event, extra)

    def serve(self, rfile: BinaryIO, wfile: BinaryIO) -> None:
        """Answer frames until the peer disconnects or breaks framing."""
        self._log("open", peer=self.peer)
        try:
            while True:
                try:
                    frame = read_frame(rfile, self.max_frame)
                except ProtocolError as exc:
                    self._log("protocol_error", error=str(exc))
                    wfile.write(encode_frame(ERROR, str(exc).encode("utf-8")))
                    break
                if frame is None:
                    break
                self.handle(frame.kind, frame.payload, wfile)
                wfile.flush()
        except (BrokenPipeError, ConnectionError, OSError) as exc:
            self._log("disconnect", error=str(exc))
        finally:
            self._log("close")

    def handle(self, kind: int, payload: bytes, wfile: BinaryIO) -> None:
        try:
            if kind == QUERY:
                self._query(payload, wfile)
            elif kind == DATASET_PUSH:
                self._push(payload)
                wfile.write(encode_frame(DONE))
            else:
                raise ProtocolError(f"unexpected frame kind {kind}")
        except SavimeError as exc:
            self._error(wfile, f"{type(exc).__name__}: {exc}")
        except (BrokenPipeError, ConnectionError):
            raise
        except Exception as exc:  # session must survive any request
            log.exception("session=%d event=internal_error", self.id)
            self._error(wfile, f"internal error: {type(exc).__name__}: {exc}")
        finally:
            self.query_text = None
            self.plan = None

    def _error(self, wfile: BinaryIO, message: str) -> None:
        self._log("error", message=message)
        wfile.write(encode_frame(ERROR, message.encode("utf-8")))

    def _query(self, payload: bytes, wfile: BinaryIO) -> None:
        try:
            text = payload.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError(f"query text is not UTF-8: {exc}") from None
        statements = parse_script(text)
        if len(statements) != 1:
            raise ProtocolError(f"a QUERY frame must hold one statement, got {len(statements)}")
        self.query_text = text
        self._log("query", text=text)
        result = self.db.run(statements[0], text)
        if isinstance(result, DdlResult):
            wfile.write(encode_frame(RESULT_SCHEMA, status_payload(result.status)))
            wfile.write(encode_frame(DONE))
            return
        self.plan = result.plan
        with tempfile.SpooledTemporaryFile(SPOOL_MEMORY) as spool, result:
            n = 0
            for index, sub in enumerate(result):
                for block in subtar_blocks(index, sub, result.schema):
                    spool.write(encode_frame(RESULT_BLOCK, block))
                n += 1
            wfile.write(encode_frame(RESULT_SCHEMA, schema_payload(result.schema)))
            spool.seek(0)
            shutil.copyfileobj(spool, wfile)
        wfile.write(encode_frame(DONE))
        self._log("done", subtars=n, cells=result.counter.cells)

    def _push(self, payload: bytes) -> None:
        header, data = decode_block(payload)
        name, etype = header.get("name"), header.get("type")
        if not isinstance(name, str) or not isinstance(etype, str):
            raise ProtocolError("DATASET_PUSH header needs string 'name' and 'type'")
        ds = self.db.push_dataset(name, etype, data)
        self._log("dataset", name=name, length=ds.length)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        peer = "%s:%s" % self.client_address[:2]
        Session(self.server.db, peer).serve(self.rfile, self.wfile)


class SavimeServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, db: Database, host: str, port: int):
        self.db = db
        try:
            super().__init__((host, port), _Handler)
        except OSError as exc:
            raise BindFailure(f"cannot listen on {host}:{port}: {exc}") from exc

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]


def start_background(db: Database, host: str = "127.0.0.1", port: int = 0) -> tuple[SavimeServer, threading.Thread]:
    server = SavimeServer(db, host, port)
    thread = threading.Thread(target=server.serve_forever, name="savime-server", daemon=True)
    thread.start()
    return server, thread


def serve(config: Config) -> None:
    db = Database.open(config)
    server = SavimeServer(db, config.host, config.port)
    host, port = server.address
    log.info("event=listening host=%s port=%d storage=%s", host, port, config.storage_dir)

    def stop(signum, _frame):
        log.info("event=shutdown signal=%d", signum)
        threading.Thread(target=server.shutdown, daemon=True).start()

    signal.signal(signal.SIGTERM, stop)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
