"""Window-query and ingestion benchmarks with a brute-force oracle.

The benchmark TAR is a strip of square tiles laid side by side along ``x``:
tile ``t`` covers ``x`` in ``[t*w, t*w + w - 1]`` and every ``y``. Dense tiles
are loaded with ORDERED specifications, sparse ones with TOTAL specifications
holding a random fraction of the cells. A window touching ``k`` tiles spans
``k`` whole tiles along ``x`` and a selectivity fraction of the ``y`` range, so
its volume is ``k * w * round(selectivity * h)``.
"""
from __future__ import annotations

import csv
import io
import os
import shutil
import statistics
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import Catalog
from .engine import Engine, EngineConfig
from .errors import OracleMismatch
from .layout import VisitCounter, ordered, total
from .query import parse
from .schema import Implicit, attribute, dimension
from .storage import DatasetStore, StorageConfig, dtype_of

SELECTIVITY = {"low": 0.7, "high": 0.2}
CSV_COLUMNS = ("query_id", "tiles_touched", "cells_visited", "wall_ms", "oracle_ok")


@dataclass(frozen=True)
class WorkloadSpec:
    tiles: int = 500
    tile_shape: tuple[int, int] = (100, 100)
    density: str = "dense"
    fill: float = 0.5  # fraction of cells present in sparse tiles
    selectivity: str | float = "low"
    touched: int = 1
    queries: int = 3
    repetitions: int = 5
    element_type: str = "float64"
    tar_name: str = "W"

    def __post_init__(self) -> None:
        if self.tiles <= 0 or min(self.tile_shape) <= 0 or self.repetitions <= 0 or self.queries <= 0:
            raise ValueError("workload sizes must be positive")
        if self.density not in ("dense", "sparse"):
            raise ValueError(f"density must be dense or sparse, got {self.density!r}")
        if not 0 < self.fill <= 1:
            raise ValueError("fill fraction must be in (0, 1]")
        if not 0 < self.fraction <= 1:
            raise ValueError("selectivity fraction must be in (0, 1]")
        if not 1 <= self.touched <= self.tiles:
            raise ValueError(f"touched must be between 1 and {self.tiles}")

    @property
    def fraction(self) -> float:
        s = self.selectivity
        return SELECTIVITY[s] if isinstance(s, str) else float(s)

    @property
    def exact(self) -> bool:
        """Single-tile windows cover the whole tile extent."""
        return self.touched == 1


@dataclass(frozen=True)
class WindowQuery:
    id: str
    text: str
    x: tuple[int, int]
    y: tuple[int, int]
    tiles: int

    @property
    def volume(self) -> int:
        return (self.x[1] - self.x[0] + 1) * (self.y[1] - self.y[0] + 1)


@dataclass
class Workload:
    spec: WorkloadSpec
    catalog: Catalog
    queries: list[WindowQuery]
    values: np.ndarray  # dense (width, height) oracle array
    present: np.ndarray  # occupancy mask of the oracle array
    tile_lengths: list[int]

    def oracle(self, q: WindowQuery) -> dict[str, np.ndarray]:
        (x0, x1), (y0, y1) = q.x, q.y
        mask = self.present[x0:x1 + 1, y0:y1 + 1]
        xs, ys = np.nonzero(mask)
        return {"x": xs + x0, "y": ys + y0, "v": self.values[x0:x1 + 1, y0:y1 + 1][mask]}

    def intersecting_cells(self, q: WindowQuery) -> int:
        w = self.spec.tile_shape[0]
        return sum(self.tile_lengths[q.x[0] // w:q.x[1] // w + 1])


def generate_workload(spec: WorkloadSpec, seed: int, catalog: Catalog) -> Workload:
    rng = np.random.default_rng(seed)
    w, h = spec.tile_shape
    width = spec.tiles * w
    xdim = dimension("x", "int64", Implicit(0, width - 1, 1))
    ydim = dimension("y", "int64", Implicit(0, h - 1, 1))
    catalog.define_tar(spec.tar_name, None, [xdim, ydim], [attribute("v", spec.element_type)])
    dt = dtype_of(spec.element_type)
    values = np.zeros((width, h), dtype=dt)
    present = np.zeros((width, h), dtype=bool)
    lengths = []
    prefix = f"{spec.tar_name.lower()}_"
    for t in range(spec.tiles):
        x0 = t * w
        block = rng.standard_normal((w, h)).astype(dt) if dt.kind == "f" else rng.integers(-1000, 1000, (w, h)).astype(dt)
        if spec.density == "dense":
            ds = catalog.create_dataset_bytes(f"{prefix}v{t}", spec.element_type, block.tobytes())
            catalog.attach_subtar(spec.tar_name, [ordered(xdim, x0, x0 + w - 1), ordered(ydim, 0, h - 1)], {"v": ds})
            values[x0:x0 + w] = block
            present[x0:x0 + w] = True
            lengths.append(w * h)
            continue
        n = max(1, int(round(spec.fill * w * h)))
        cells = np.sort(rng.choice(w * h, size=n, replace=False))
        xs, ys = cells // h + x0, cells % h
        vals = block.reshape(-1)[cells]
        dx = catalog.create_dataset_bytes(f"{prefix}x{t}", "int64", xs.astype("<i8").tobytes())
        dy = catalog.create_dataset_bytes(f"{prefix}y{t}", "int64", ys.astype("<i8").tobytes())
        dv = catalog.create_dataset_bytes(f"{prefix}v{t}", spec.element_type, vals.tobytes())
        catalog.attach_subtar(
            spec.tar_name,
            [total(xdim, x0, x0 + w - 1, dx), total(ydim, 0, h - 1, dy)],
            {"v": dv},
        )
        values[xs, ys] = vals
        present[xs, ys] = True
        lengths.append(n)
    queries = []
    rows = h if spec.exact else max(1, int(round(spec.fraction * h)))
    for k in range(spec.queries):
        t0 = int(rng.integers(0, spec.tiles - spec.touched + 1))
        y0 = int(rng.integers(0, h - rows + 1))
        x = (t0 * w, (t0 + spec.touched) * w - 1)
        y = (y0, y0 + rows - 1)
        text = f"subset({spec.tar_name}, x, {x[0]}, {x[1]}, y, {y[0]}, {y[1]})"
        queries.append(WindowQuery(f"q{k}", text, x, y, spec.touched))
    return Workload(spec, catalog, queries, values, present, lengths)


@dataclass
class QueryReport:
    query_id: str
    tiles_touched: int
    cells_visited: int
    wall_ms: float
    wall_ms_min: float
    oracle_ok: bool
    volume: int
    intersecting_cells: int


@dataclass
class SuiteReport:
    spec: WorkloadSpec
    seed: int
    rows: list[QueryReport] = field(default_factory=list)

    def csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow([r.query_id, r.tiles_touched, r.cells_visited, f"{r.wall_ms:.3f}", int(r.oracle_ok)])
        return out.getvalue()

    def summary(self) -> str:
        s = self.spec
        lines = [
            f"window suite: {s.tiles} tiles of {s.tile_shape[0]}x{s.tile_shape[1]}, {s.density}, "
            f"selectivity {s.fraction:g}, {s.touched} tiles per window, seed {self.seed}, {s.repetitions} reps"
        ]
        for r in self.rows:
            lines.append(
                f"  {r.query_id}: tiles={r.tiles_touched} cells={r.cells_visited} "
                f"median={r.wall_ms:.2f}ms min={r.wall_ms_min:.2f}ms oracle={'ok' if r.oracle_ok else 'MISMATCH'}"
            )
        return "\n".join(lines)


def _sorted(cols: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    order = np.lexsort((cols["y"], cols["x"]))
    return {k: np.asarray(v)[order] for k, v in cols.items()}


def run_query(engine: Engine, text: str, counter: VisitCounter) -> dict[str, np.ndarray]:
    return engine.run(parse(text, engine.catalog.schema), counter).table()


def run_suite(spec: WorkloadSpec, seed: int, workdir: str | Path | None = None, csv_path=None) -> SuiteReport:
    """Generate a workload in a scratch store, run every window and check it."""
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        store = DatasetStore(StorageConfig(Path(tmp) / "data", Path(tmp) / "tmp"))
        workload = generate_workload(spec, seed, Catalog(store))
        report = run_workload(workload, seed)
    if csv_path is not None:
        Path(csv_path).write_text(report.csv())
    return report


def run_workload(workload: Workload, seed: int = 0) -> SuiteReport:
    spec = workload.spec
    engine = Engine(workload.catalog, EngineConfig())
    report = SuiteReport(spec, seed)
    for q in workload.queries:
        times = []
        counter = VisitCounter()
        for rep in range(spec.repetitions):
            counter = VisitCounter()
            start = time.perf_counter()
            got = run_query(engine, q.text, counter)
            times.append((time.perf_counter() - start) * 1000)
            if rep == 0:
                expected = _sorted(workload.oracle(q))
                got = _sorted(got)
                ok = all(np.array_equal(got[k], expected[k]) for k in ("x", "y", "v"))
                if not ok:
                    raise OracleMismatch(f"query {q.id} ({q.text}) differs from the oracle")
        report.rows.append(
            QueryReport(
                q.id, counter.subtars, counter.cells, statistics.median(times), min(times), True,
                q.volume, workload.intersecting_cells(q),
            )
        )
    return report


@dataclass
class IngestReport:
    n_elements: int
    element_type: str
    ingest_s: float
    copy_s: float
    element_touches: int

    @property
    def ratio(self) -> float:
        return self.ingest_s / self.copy_s if self.copy_s > 0 else float("inf")


def ingest_bench(n_elements: int = 10**7, element_type: str = "float64", workdir=None, repetitions: int = 3) -> IngestReport:
    """Time adoption-path ingestion against a plain byte copy of the same file."""
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        root = Path(tmp)
        src = root / "source.bin"
        rng = np.random.default_rng(0)
        arr = rng.standard_normal(n_elements) if element_type.startswith("float") else rng.integers(0, 1 << 30, n_elements)
        arr.astype(dtype_of(element_type)).tofile(src)
        copy_times, ingest_times, touches = [], [], 0
        for k in range(repetitions):
            dest = root / f"copy{k}.bin"
            start = time.perf_counter()
            shutil.copyfile(src, dest)
            copy_times.append(time.perf_counter() - start)
            os.unlink(dest)
            store = DatasetStore(StorageConfig(root / f"store{k}", root / f"tmp{k}"))
            start = time.perf_counter()
            store.create_dataset("d", src, element_type)
            ingest_times.append(time.perf_counter() - start)
            touches += store.element_touches
        return IngestReport(n_elements, element_type, min(ingest_times), min(copy_times), touches)
