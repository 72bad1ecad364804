"""Mesh export: typed geometry, topology and field TARs to legacy VTK files.

A geometry TAR maps point ids to coordinates, an incident topology TAR lists
for every cell the point id at each vertex position, and each field TAR maps
point ids to one scalar. Time and trial roles, when present, are pinned with
selectors so that exactly one mesh is written.
"""
from __future__ import annotations

import logging
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    AdjacencyNotExportable,
    DanglingPointId,
    IncompleteField,
    MissingSelector,
    TypeViolation,
    VizError,
)
from .layout import table_of
from .schema import Tar, validate_type

log = logging.getLogger(__name__)

GEOMETRY = "cartesian_geometry"
INCIDENT = "incident_topology"
ADJACENCY = "adjacency_topology"
FIELD = "time_field"
SELECTOR_ROLES = ("time", "trial")

# Role lists of the standard visualization types: (mandatory, optional).
STANDARD_TYPES: dict[str, tuple[tuple[str, ...], tuple[str, ...]]] = {
    GEOMETRY: (("id", "x", "y", "z"), SELECTOR_ROLES),
    INCIDENT: (("cell", "vertex", "point"), SELECTOR_ROLES),
    ADJACENCY: (("point", "neighbor"), SELECTOR_ROLES),
    FIELD: (("id", "value"), SELECTOR_ROLES),
}

CELL_TYPES = {3: 5, 4: 10}  # vertices per cell -> VTK triangle / tetrahedron
TITLE = "savime mesh export"

Table = tuple[Tar, Mapping[str, np.ndarray]]


def define_standard_types(catalog) -> None:
    """Create the visualization types in ``catalog`` if they are missing."""
    for name, (mandatory, optional) in STANDARD_TYPES.items():
        if name not in catalog.schema.types:
            catalog.define_type(name, mandatory, optional)


@dataclass
class Mesh:
    ids: np.ndarray
    points: np.ndarray  # (n, 3) float64, ascending id order
    cells: np.ndarray  # (m, k) indexes into points
    cell_type: int
    fields: list[tuple[str, np.ndarray]] = field(default_factory=list)


@dataclass
class ExportSummary:
    points: int
    cells: int
    fields: int


@dataclass
class MeshBundle:
    geometry: Table
    topology: Table
    fields: list[Table] = field(default_factory=list)
    selectors: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_tars(
        cls, geometry: Tar, topology: Tar, fields: Sequence[Tar] = (), selectors: Mapping[str, float] | None = None
    ) -> "MeshBundle":
        """Bundle stored TARs, checking each against its declared type."""
        for tar in (geometry, topology, *fields):
            if tar.type is None or not validate_type(tar):
                raise TypeViolation(f"TAR {tar.name!r} does not satisfy its declared type")
        return cls(
            (geometry, table_of(geometry.subtars, geometry)),
            (topology, table_of(topology.subtars, topology)),
            [(f, table_of(f.subtars, f)) for f in fields],
            dict(selectors or {}),
        )

    def resolve(self) -> Mesh:
        gtar, gcols = _pinned(self.geometry, GEOMETRY, self.selectors)
        ids = _column(gtar, gcols, "id")
        order = np.argsort(ids, kind="stable")
        ids = ids[order]
        if ids.size > 1 and np.any(ids[1:] == ids[:-1]):
            raise TypeViolation(f"geometry {gtar.name!r} repeats point ids")
        points = np.column_stack([_column(gtar, gcols, r).astype(np.float64)[order] for r in ("x", "y", "z")])
        points = points.reshape(-1, 3)

        ttar, tcols = _pinned(self.topology, (INCIDENT, ADJACENCY), self.selectors)
        if ttar.type.name == ADJACENCY:
            raise AdjacencyNotExportable(f"{ttar.name!r} is an adjacency topology; legacy VTK cannot express it")
        cells, cell_type = _cells(ttar, tcols, ids)

        fields = []
        used: set[str] = set()
        for f in self.fields:
            ftar, fcols = _pinned(f, FIELD, self.selectors)
            fids = _column(ftar, fcols, "id")
            values = _column(ftar, fcols, "value").astype(np.float64)
            idx = _point_index(ids, fids, ftar.name)
            if idx.size != ids.size or np.unique(idx).size != ids.size:
                raise IncompleteField(f"field {ftar.name!r} must give exactly one value per point")
            out = np.empty(ids.size, dtype=np.float64)
            out[idx] = values
            fields.append((_field_name(ftar, used), out))
        return Mesh(ids, points, cells, cell_type, fields)


def _column(tar: Tar, cols: Mapping[str, np.ndarray], role: str) -> np.ndarray:
    e = tar.element_for_role(role)
    if e is None:
        raise TypeViolation(f"{tar.name!r} has no element with role {role!r}")
    return np.asarray(cols[e.name])


def _pinned(table: Table, type_names, selectors: Mapping[str, float]) -> Table:
    tar, cols = table
    names = (type_names,) if isinstance(type_names, str) else tuple(type_names)
    if tar.type is None or tar.type.name not in names:
        raise TypeViolation(f"{tar.name!r} is not typed {' or '.join(names)}")
    n = len(next(iter(cols.values()))) if cols else 0
    keep = np.ones(n, dtype=bool)
    for role in SELECTOR_ROLES:
        e = tar.element_for_role(role)
        if e is None:
            continue
        col = np.asarray(cols[e.name])
        if role in selectors:
            keep &= col == selectors[role]
        elif np.unique(col).size > 1:
            raise MissingSelector(f"{tar.name!r} holds several {role} values; pass a {role} selector")
    if keep.all():
        return tar, cols
    return tar, {k: np.asarray(v)[keep] for k, v in cols.items()}


def _point_index(ids: np.ndarray, refs: np.ndarray, what: str) -> np.ndarray:
    idx = np.searchsorted(ids, refs)
    ok = idx < ids.size
    ok[ok] = ids[idx[ok]] == refs[ok]
    if not ok.all():
        raise DanglingPointId(f"{what} references point id {refs[~ok][0]!r} absent from the geometry")
    return idx.astype(np.int64)


def _cells(tar: Tar, cols: Mapping[str, np.ndarray], ids: np.ndarray) -> tuple[np.ndarray, int]:
    cell = _column(tar, cols, "cell")
    vertex = _column(tar, cols, "vertex")
    point = _column(tar, cols, "point")
    idx = _point_index(ids, point, f"topology {tar.name!r}")
    if cell.size == 0:
        return np.empty((0, 3), dtype=np.int64), CELL_TYPES[3]
    order = np.lexsort((vertex, cell))
    cell, vertex, idx = cell[order], vertex[order], idx[order]
    _, counts = np.unique(cell, return_counts=True)
    arity = int(counts[0])
    if np.any(counts != arity) or arity not in CELL_TYPES:
        raise VizError(f"topology {tar.name!r}: every cell needs 3 or 4 vertices, all cells the same")
    if not np.array_equal(vertex.reshape(-1, arity), np.broadcast_to(np.arange(arity), (counts.size, arity))):
        raise VizError(f"topology {tar.name!r}: vertex positions must be 0..{arity - 1} once per cell")
    return idx.reshape(-1, arity), CELL_TYPES[arity]


def _field_name(tar: Tar, used: set[str]) -> str:
    base = tar.element_for_role("value").name.replace(".", "_")
    name, k = base, 2
    while name in used:
        name, k = f"{base}_{k}", k + 1
    used.add(name)
    return name


# -- writing ------------------------------------------------------------------


def _g(x: float) -> str:
    return "%.17g" % x


def render_vtk(mesh: Mesh) -> str:
    n, m = mesh.points.shape[0], mesh.cells.shape[0]
    k = mesh.cells.shape[1] if m else 0
    lines = ["# vtk DataFile Version 3.0", TITLE, "ASCII", "DATASET UNSTRUCTURED_GRID", f"POINTS {n} double"]
    lines.extend(" ".join(_g(c) for c in p) for p in mesh.points.tolist())
    lines.append(f"CELLS {m} {m * (k + 1)}")
    lines.extend(" ".join(str(v) for v in [k, *c]) for c in mesh.cells.tolist())
    lines.append(f"CELL_TYPES {m}")
    lines.extend(str(mesh.cell_type) for _ in range(m))
    if mesh.fields:
        lines.append(f"POINT_DATA {n}")
        for name, values in mesh.fields:
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(_g(v) for v in values.tolist())
    return "\n".join(lines) + "\n"


def export_vtk(bundle: MeshBundle, out, hook: str | None = None) -> ExportSummary:
    """Write ``bundle`` as a legacy ASCII VTK unstructured grid."""
    mesh = bundle.resolve()
    path = Path(out)
    tmp = path.with_name(path.name + ".part")
    tmp.write_text(render_vtk(mesh), encoding="ascii")
    tmp.replace(path)
    summary = ExportSummary(mesh.points.shape[0], mesh.cells.shape[0], len(mesh.fields))
    log.info("exported %s: %d points, %d cells, %d fields", path, summary.points, summary.cells, summary.fields)
    if hook:
        subprocess.run([*shlex.split(hook), str(path)], check=True)
    return summary


# -- reference parser ---------------------------------------------------------


@dataclass
class VtkFile:
    title: str
    points: np.ndarray
    cells: list[list[int]]
    cell_types: list[int]
    point_data: dict[str, np.ndarray]


def parse_vtk(text: str) -> VtkFile:
    """Strict reader for the subset of legacy VTK that :func:`render_vtk` emits."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    pos = 0

    def take() -> str:
        nonlocal pos
        if pos >= len(lines):
            raise ValueError("unexpected end of file")
        pos += 1
        return lines[pos - 1]

    def header(keyword: str, nfields: int) -> list[str]:
        parts = take().split(" ")
        if parts[0] != keyword or len(parts) != nfields:
            raise ValueError(f"line {pos}: expected {keyword} header, got {' '.join(parts)!r}")
        return parts[1:]

    if take() != "# vtk DataFile Version 3.0":
        raise ValueError("missing VTK version line")
    title = take()
    if take() != "ASCII":
        raise ValueError("only ASCII files are supported")
    if take() != "DATASET UNSTRUCTURED_GRID":
        raise ValueError("expected DATASET UNSTRUCTURED_GRID")
    n_s, kind = header("POINTS", 3)
    if kind != "double":
        raise ValueError("points must be double")
    n = int(n_s)
    points = np.array([[float(v) for v in _fields(take(), 3, pos)] for _ in range(n)], dtype=np.float64).reshape(n, 3)
    m_s, size_s = header("CELLS", 3)
    m, size = int(m_s), int(size_s)
    cells, seen = [], 0
    for _ in range(m):
        row = [int(v) for v in take().split(" ")]
        if row[0] != len(row) - 1:
            raise ValueError(f"line {pos}: vertex count {row[0]} does not match the row")
        if any(not 0 <= v < n for v in row[1:]):
            raise ValueError(f"line {pos}: vertex index outside the point list")
        cells.append(row[1:])
        seen += len(row)
    if seen != size:
        raise ValueError(f"CELLS size {size} does not match {seen} listed integers")
    (mt,) = header("CELL_TYPES", 2)
    if int(mt) != m:
        raise ValueError("CELL_TYPES count differs from CELLS count")
    cell_types = [int(take()) for _ in range(m)]
    point_data: dict[str, np.ndarray] = {}
    if pos < len(lines):
        (np_s,) = header("POINT_DATA", 2)
        if int(np_s) != n:
            raise ValueError("POINT_DATA count differs from POINTS count")
        while pos < len(lines):
            name, kind, ncomp = header("SCALARS", 4)
            if kind != "double" or ncomp != "1":
                raise ValueError("scalars must be single-component doubles")
            if take() != "LOOKUP_TABLE default":
                raise ValueError("expected LOOKUP_TABLE default")
            if name in point_data:
                raise ValueError(f"duplicate scalar array {name!r}")
            point_data[name] = np.array([float(take()) for _ in range(n)], dtype=np.float64)
    return VtkFile(title, points, cells, cell_types, point_data)


def _fields(line: str, count: int, lineno: int) -> list[str]:
    parts = line.split(" ")
    if len(parts) != count:
        raise ValueError(f"line {lineno}: expected {count} values")
    return parts
