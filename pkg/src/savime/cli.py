"""Command-line client: ``savime <command> ...``.

Commands run against a server over the frame protocol, or in-process with
``--embedded``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import bench
from .client import Client
from .config import Config, load_config
from .db import Database, DdlResult
from .errors import SavimeError
from .query import ast, parse_script, to_text
from .server import serve


def setup_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
        stream=sys.stderr,
    )


# -- result handling ----------------------------------------------------------


class Backend:
    """Uniform statement execution for embedded and remote modes."""

    def __init__(self, config: Config, embedded: bool):
        self.config = config
        self.db = Database.open(config) if embedded else None
        self.client = None if embedded else Client(config.host, config.port)

    def close(self) -> None:
        if self.client is not None:
            self.client.close()

    def run(self, text: str) -> tuple[str | None, dict[str, np.ndarray] | None]:
        """Return ``(status, None)`` for DDL and ``(None, columns)`` for queries."""
        if self.db is not None:
            result = self.db.execute(text)
            if isinstance(result, DdlResult):
                return result.status, None
            return None, result.table()
        rs = self.client.query(text)
        if rs.status is not None:
            return rs.status, None
        return None, rs.columns()

    def load_dataset(self, name: str, path: Path, element_type: str) -> str:
        if self.db is not None:
            ds = self.db.load_dataset(name, path, element_type)
            return f"dataset {name} created with {ds.length} cells"
        self.client.push_dataset(name, element_type, path.read_bytes())
        return f"dataset {name} pushed"


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_table(columns: dict[str, np.ndarray]) -> str:
    names = list(columns)
    rows = [[_fmt(v) for v in columns[n].tolist()] for n in names]
    n = len(rows[0]) if rows else 0
    widths = [max([len(name)] + [len(r) for r in col]) for name, col in zip(names, rows)]
    lines = ["  ".join(name.rjust(w) for name, w in zip(names, widths))]
    for i in range(n):
        lines.append("  ".join(col[i].rjust(w) for col, w in zip(rows, widths)))
    return "\n".join(lines)


def emit(status, columns, out_dir: str | None = None) -> None:
    if status is not None:
        print(status)
        return
    if out_dir:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        for name, col in columns.items():
            np.ascontiguousarray(col).tofile(d / f"{name}.bin")
        print(f"wrote {len(columns)} columns of {len(next(iter(columns.values())))} cells to {d}")
        return
    print(format_table(columns))


# -- commands -----------------------------------------------------------------


def cmd_query(args, config: Config) -> int:
    backend = Backend(config, args.embedded)
    try:
        status, columns = backend.run(args.text)
        emit(status, columns, args.raw)
    finally:
        backend.close()
    return 0


def cmd_exec(args, config: Config) -> int:
    text = Path(args.script).read_text()
    statements = parse_script(text)
    backend = Backend(config, args.embedded)
    try:
        for tree in statements:
            status, columns = backend.run(to_text(tree))
            emit(status, columns)
    finally:
        backend.close()
    return 0


def cmd_load_dataset(args, config: Config) -> int:
    backend = Backend(config, args.embedded)
    try:
        print(backend.load_dataset(args.name, Path(args.file), args.type))
    finally:
        backend.close()
    return 0


def _selector(text: str) -> tuple[str, float]:
    role, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"selector must look like role=value, got {text!r}")
    number = float(value)
    return role, int(number) if number.is_integer() and "." not in value else number


def cmd_export_vtk(args, config: Config) -> int:
    *tars, out = args.items
    if len(tars) < 2:
        raise SystemExit("export-vtk needs a geometry TAR, a topology TAR, optional fields and an output path")
    parts = [ast.Ref(t) for t in tars] + [ast.Str(str(Path(out).resolve()))]
    parts += [ast.Call("at", (ast.Ref(r), ast.Num(v))) for r, v in args.at]
    text = to_text(ast.Call("catalyze", tuple(parts)))
    backend = Backend(config, args.embedded)
    try:
        _, columns = backend.run(text)
    finally:
        backend.close()
    print(f"wrote {out}: {int(columns['points'][0])} points, {int(columns['cells'][0])} cells, "
          f"{int(columns['fields'][0])} fields")
    return 0


def cmd_bench(args, config: Config) -> int:
    if args.suite == "ingest":
        r = bench.ingest_bench(args.elements, args.type, workdir=args.workdir)
        print(f"ingest {r.n_elements} {r.element_type}: {r.ingest_s * 1000:.3f} ms, raw copy {r.copy_s * 1000:.3f} ms, "
              f"ratio {r.ratio:.3f}, element touches {r.element_touches}")
        return 0
    selectivity = args.selectivity
    try:
        selectivity = float(selectivity)
    except ValueError:
        pass
    spec = bench.WorkloadSpec(
        tiles=args.tiles,
        tile_shape=(args.tile_size, args.tile_size),
        density=args.density,
        fill=args.fill,
        selectivity=selectivity,
        touched=args.touched,
        queries=args.queries,
        repetitions=args.reps,
    )
    report = bench.run_suite(spec, args.seed, workdir=args.workdir, csv_path=args.csv)
    print(report.summary())
    if args.csv:
        print(f"csv written to {args.csv}")
    return 0


def cmd_serve(args, config: Config) -> int:
    serve(config)
    return 0


# -- parser -------------------------------------------------------------------


def _common() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand.
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--host", default=argparse.SUPPRESS)
    p.add_argument("--port", type=int, default=argparse.SUPPRESS)
    p.add_argument("--embedded", action="store_true", default=argparse.SUPPRESS, help="run in-process")
    p.add_argument("--config", default=argparse.SUPPRESS, help="TOML configuration file")
    p.add_argument("--storage-dir", default=argparse.SUPPRESS)
    p.add_argument("--log-level", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="savime", description="Typed array database", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("query", parents=[common], help="run one statement")
    p.add_argument("text")
    p.add_argument("--raw", metavar="DIR", help="write result columns as raw files instead of printing")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("load-dataset", parents=[common], help="create a dataset from a raw binary file")
    p.add_argument("name")
    p.add_argument("file")
    p.add_argument("type", choices=["int32", "int64", "float32", "float64"])
    p.set_defaults(func=cmd_load_dataset)

    p = sub.add_parser("exec", parents=[common], help="run a script of ';'-separated statements")
    p.add_argument("script")
    p.set_defaults(func=cmd_exec)

    p = sub.add_parser("export-vtk", parents=[common], help="write a mesh to a legacy VTK file")
    p.add_argument("items", nargs="+", metavar="GEOMETRY TOPOLOGY [FIELD ...] OUT")
    p.add_argument("--at", type=_selector, action="append", default=[], metavar="ROLE=VALUE")
    p.set_defaults(func=cmd_export_vtk)

    p = sub.add_parser("bench", parents=[common], help="run a benchmark suite")
    p.add_argument("suite", choices=["window", "ingest"])
    p.add_argument("--tiles", type=int, default=500)
    p.add_argument("--tile-size", type=int, default=100)
    p.add_argument("--density", choices=["dense", "sparse"], default="dense")
    p.add_argument("--fill", type=float, default=0.5)
    p.add_argument("--selectivity", default="low", help="low, high or a fraction")
    p.add_argument("--touched", type=int, default=1)
    p.add_argument("--queries", type=int, default=3)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--csv")
    p.add_argument("--elements", type=int, default=10**7)
    p.add_argument("--type", default="float64")
    p.add_argument("--workdir")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", parents=[common], help="run the server")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    args.embedded = getattr(args, "embedded", False)
    try:
        config = load_config(
            getattr(args, "config", None),
            host=getattr(args, "host", None),
            port=getattr(args, "port", None),
            storage_dir=getattr(args, "storage_dir", None),
            log_level=getattr(args, "log_level", None),
        )
        setup_logging(config.log_level or ("INFO" if args.command == "serve" else "WARNING"))
        return args.func(args, config)
    except (SavimeError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
