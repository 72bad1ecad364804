"""Pull-based execution of query plans.

Every plan node runs as a generator. Its outputs go into the shared
:class:`SubTarCache` and are read by one :class:`Port` per consumer edge, so a
node feeding several consumers computes each subTAR once. Nothing is freed
before every consumer has released it, and the cache is empty once a result
stream has been drained or closed.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Hashable, Iterator

import numpy as np

from ..catalog import Catalog
from ..errors import EvaluationError
from ..layout import Region, SubTar, VisitCounter, subtar_table
from ..query.plan import PlanNode, QueryPlan, parse
from ..schema import Tar
from .cache import Key, SubTarCache
from .operators import OPERATORS, check_emitted, subset_region

log = logging.getLogger(__name__)

CLIENT = "client"


@dataclass
class EngineConfig:
    workers: int = 1
    # cells per parallel task; subTARs smaller than two grains run serially
    grain: int = 1 << 16
    debug: bool = False
    instrument: bool = False
    # shell command run with the path of every file written by catalyze
    export_hook: str | None = None

    @classmethod
    def from_env(cls) -> "EngineConfig":
        return cls(workers=int(os.environ.get("SAVIME_WORKERS", "1")))


class Port:
    """One consumer edge's cursor over a producer's output stream."""

    def __init__(self, run: "NodeRun", consumer: Hashable):
        self.run = run
        self.consumer = consumer
        self.cursor = 0
        self.closed = False

    def next(self) -> tuple[Key, SubTar] | None:
        if self.closed:
            return None
        run = self.run
        while self.cursor >= len(run.produced):
            if not run.pull():
                return None
        key = run.produced[self.cursor]
        self.cursor += 1
        return key, run.cache.get(key)

    def release(self, key: Key) -> None:
        self.run.cache.release(self.consumer, key)

    def stream(self) -> Iterator[SubTar]:
        """Yield subTARs, releasing each one when the consumer asks for the next."""
        while (item := self.next()) is not None:
            key, sub = item
            try:
                yield sub
            finally:
                self.release(key)

    def close(self) -> None:
        """Give up on the rest of the stream."""
        if self.closed:
            return
        self.closed = True
        run = self.run
        for key in run.produced[self.cursor:]:
            run.cache.release(self.consumer, key)
        self.cursor = len(run.produced)


@dataclass
class ExecutionContext:
    catalog: Catalog
    cache: SubTarCache
    counter: VisitCounter
    workers: int
    grain: int
    debug: bool
    pushdown: dict[int, Region] = field(default_factory=dict)
    pool: ThreadPoolExecutor | None = None
    export_hook: str | None = None

    @property
    def store(self):
        return self.catalog.store


class NodeRun:
    def __init__(self, node: PlanNode, ctx: ExecutionContext):
        self.node = node
        self.ctx = ctx
        self.cache = ctx.cache
        self.produced: list[Key] = []
        self.ports: list[Port] = []
        self.inputs: list[Port] = []
        self.gen: Iterator[SubTar] | None = None
        self.done = False

    def pull(self) -> bool:
        if self.done:
            return False
        if self.gen is None:
            self.gen = OPERATORS[self.node.op](self.node, self.inputs, self.ctx)
        try:
            sub = next(self.gen)
        except StopIteration:
            self.done = True
            for p in self.inputs:
                p.close()
            return False
        except EvaluationError as exc:
            if exc.node_id is None:
                raise EvaluationError(str(exc), self.node.id) from exc
            raise
        if self.ctx.debug:
            check_emitted(self.node, sub)
        key = (self.node.id, len(self.produced))
        self.cache.put(key, sub, [p.consumer for p in self.ports])
        self.produced.append(key)
        for p in self.ports:
            if p.closed:
                self.cache.release(p.consumer, key)
        return True

    def close(self) -> None:
        if self.gen is not None:
            self.gen.close()
        self.done = True
        for p in self.inputs:
            p.close()


class ResultStream:
    """Iterator over the root node's subTARs.

    Each subTAR stays valid until the next one is requested. Exhausting or
    closing the stream releases everything the query still holds.
    """

    def __init__(self, plan: QueryPlan, runs: dict[int, NodeRun], port: Port, ctx: ExecutionContext):
        self.plan = plan
        self.schema: Tar = plan.root.schema
        self.runs = runs
        self.port = port
        self.ctx = ctx
        self._iter = port.stream()
        self.finished = False

    @property
    def counter(self) -> VisitCounter:
        return self.ctx.counter

    @property
    def cache(self) -> SubTarCache:
        return self.ctx.cache

    def __iter__(self) -> Iterator[SubTar]:
        return self

    def __next__(self) -> SubTar:
        if self.finished:
            raise StopIteration
        try:
            return next(self._iter)
        except BaseException:
            self.close()
            raise

    def __enter__(self) -> "ResultStream":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        if self.finished:
            return
        self.finished = True
        self._iter.close()
        self.port.close()
        # close consumers before producers so ports release in a valid order
        for node in reversed(self.plan.nodes):
            self.runs[node.id].close()
        if self.ctx.pool is not None:
            self.ctx.pool.shutdown()
        if len(self.ctx.cache):
            log.error("query finished with %d cached subTARs", len(self.ctx.cache))

    def table(self) -> dict[str, np.ndarray]:
        """Drain the stream into one column per output element."""
        names = [e.name for e in self.schema.elements]
        subs = [subtar_table(s, names) for s in self]
        out = {}
        for name in names:
            cols = [p[name] for p in subs]
            out[name] = np.concatenate(cols) if cols else np.empty(0)
        return out


class Engine:
    def __init__(self, catalog: Catalog, config: EngineConfig | None = None):
        self.catalog = catalog
        self.config = config or EngineConfig()

    def query(self, text: str) -> ResultStream:
        return self.run(parse(text, self.catalog.schema))

    def run(self, plan: QueryPlan, counter: VisitCounter | None = None) -> ResultStream:
        cfg = self.config
        ctx = ExecutionContext(
            self.catalog,
            SubTarCache(self.catalog.store, instrument=cfg.instrument),
            counter or VisitCounter(),
            cfg.workers,
            cfg.grain,
            cfg.debug,
            pool=ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None,
            export_hook=cfg.export_hook,
        )
        runs = {n.id: NodeRun(n, ctx) for n in plan.nodes}
        for n in plan.nodes:
            for slot, src in enumerate(n.inputs):
                port = Port(runs[src.id], (n.id, slot))
                runs[src.id].ports.append(port)
                runs[n.id].inputs.append(port)
            if n.op == "scan":
                consumers = plan.consumers(n)
                if n is not plan.root and len(consumers) == 1 and consumers[0][0].op == "subset":
                    region = subset_region(consumers[0][0], n.schema)
                    ctx.pushdown[n.id] = _EMPTY if region is None else region
        root = runs[plan.root.id]
        port = Port(root, CLIENT)
        root.ports.append(port)
        return ResultStream(plan, runs, port, ctx)


class _Nothing(Region):
    def intersects(self, other: Region) -> bool:
        return False


_EMPTY = _Nothing({})
