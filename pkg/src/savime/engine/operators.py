"""Physical operators.

Each operator is a generator ``op(node, ports, ctx)`` that pulls subTARs from
its input ports and yields output subTARs. Outputs either share datasets with
their inputs (when the layout is unchanged) or own freshly created derived
datasets; the cache takes care of the reference counting in both cases.
"""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from ..errors import SchemaError
from ..layout import (
    ORDERED,
    PARTIAL,
    TOTAL,
    DimensionSpec,
    Region,
    SubTar,
    attach_subtar,
    clip_offsets,
    real_to_stored,
    table_of,
)
from ..query import expr
from ..query.plan import PlanNode, unit_dimension
from ..schema import DataElement, Implicit, Tar
from ..storage import Dataset, dtype_of, is_integer_type

# -- helpers ------------------------------------------------------------------


class Columns:
    """Lazy column access for expression evaluation over one subTAR."""

    def __init__(self, sub: SubTar):
        self.sub = sub
        self._coords = None

    def coords(self) -> dict[str, np.ndarray]:
        if self._coords is None:
            self._coords = self.sub.real_coords()
        return self._coords

    def __call__(self, name: str) -> np.ndarray:
        if name in self.sub.bindings:
            return self.sub.attribute(name)
        spec = self.sub.spec(name)
        return spec.dim.domain.to_logical(self.coords()[name], spec.dim.element_type)


def index_dataset(ctx, dim: DataElement, real: np.ndarray) -> Dataset:
    stored = real_to_stored(dim, real)
    if isinstance(dim.domain, Implicit):
        etype = dim.element_type if is_integer_type(dim.element_type) else "float64"
    else:
        etype = "int64"
    return ctx.store.create_derived(stored, etype)


def make_total(ctx, dims: list[DataElement], real: dict[str, np.ndarray], bindings: dict[str, Dataset]) -> SubTar:
    specs = []
    for d in dims:
        r = real[d.name]
        specs.append(DimensionSpec(d, int(r.min()), int(r.max()), TOTAL, index_dataset(ctx, d, r)))
    return SubTar(specs, bindings)


def gather(ctx, ds: Dataset, idx: np.ndarray) -> Dataset:
    """Dataset holding ``ds[idx]``; constants stay shared."""
    if ds.length == 1:
        return ds
    return ctx.store.create_derived(ds.array[idx], ds.element_type)


def evaluate(ctx, node: PlanNode, ast_node, sub: SubTar) -> np.ndarray:
    cols = Columns(sub)
    n = sub.length
    if ctx.workers > 1 and n >= 2 * ctx.grain:
        cols.coords()
        bounds = range(0, n, ctx.grain)
        parts = ctx.pool.map(
            lambda a: expr.evaluate(ast_node, cols, n, np.arange(a, min(a + ctx.grain, n))), bounds
        )
        return np.concatenate(list(parts))
    return expr.evaluate(ast_node, cols, n)


# -- operators ----------------------------------------------------------------


def op_scan(node: PlanNode, ports, ctx) -> Iterator[SubTar]:
    region: Region | None = ctx.pushdown.get(node.id)
    for sub in node.schema.subtars:
        if region is not None and not sub.extent.intersects(region):
            continue
        ctx.counter.subtars += 1
        yield sub


def op_select(node: PlanNode, ports, ctx) -> Iterator[SubTar]:
    keep = set(node.params["elements"])
    for sub in ports[0].stream():
        specs = [s for s in sub.specs if s.name in keep]
        bindings = {k: v for k, v in sub.bindings.items() if k in keep}
        yield SubTar(specs, bindings)


def op_where(node: PlanNode, ports, ctx) -> Iterator[SubTar]:
    pred = node.params["predicate"]
    dims = list(node.schema.dimensions)
    for sub in ports[0].stream():
        ctx.counter.cells += sub.length
        mask = np.asarray(evaluate(ctx, node, pred, sub), dtype=bool)
        kept = int(mask.sum())
        if kept == 0:
            continue
        if kept == sub.length:
            yield SubTar(sub.specs, sub.bindings)
            continue
        idx = np.flatnonzero(mask)
        coords = sub.real_coords()
        real = {d.name: coords[d.name][idx] for d in dims}
        bindings = {k: gather(ctx, v, idx) for k, v in sub.bindings.items()}
        yield make_total(ctx, [sub.spec(d.name).dim for d in dims], real, bindings)


def subset_region(node: PlanNode, schema: Tar) -> Region | None:
    """Real-index region of a subset node, ``None`` when it selects nothing."""
    bounds = {}
    for name, lo, hi in node.params["bounds"]:
        a, b = schema.element(name).domain.real_bounds(lo, hi)
        if a > b:
            return None
        bounds[name] = (a, b)
    return Region(bounds)


def _clipped_spec(ctx, spec: DimensionSpec, b) -> DimensionSpec:
    if b is None:
        return spec
    lo, hi = max(spec.lower, b[0]), min(spec.upper, b[1])
    if spec.kind == ORDERED:
        return DimensionSpec(spec.dim, lo, hi, ORDERED)
    keep = (spec.real >= b[0]) & (spec.real <= b[1])
    if keep.all():
        return DimensionSpec(spec.dim, lo, hi, PARTIAL, spec.data)
    data = ctx.store.create_derived(spec.data.array[keep], spec.data.element_type)
    return DimensionSpec(spec.dim, lo, hi, PARTIAL, data)


def op_subset(node: PlanNode, ports, ctx) -> Iterator[SubTar]:
    region = subset_region(node, node.inputs[0].schema)
    port = ports[0]
    if region is None:
        port.close()
        return
    for sub in port.stream():
        if not sub.extent.intersects(region):
            continue
        offsets, coords = clip_offsets(sub, region, ctx.counter)
        if offsets.size == 0:
            continue
        if offsets.size == sub.length:
            yield SubTar(sub.specs, sub.bindings)
            continue
        bindings = {k: gather(ctx, v, offsets) for k, v in sub.bindings.items()}
        if sub.is_total:
            yield make_total(ctx, [s.dim for s in sub.specs], coords, bindings)
        else:
            specs = [_clipped_spec(ctx, s, region.get(s.name)) for s in sub.specs]
            yield SubTar(specs, bindings)


def op_derive(node: PlanNode, ports, ctx) -> Iterator[SubTar]:
    name = node.params["name"]
    etype = node.schema.element(name).element_type
    for sub in ports[0].stream():
        ctx.counter.cells += sub.length
        values = evaluate(ctx, node, node.params["expr"], sub)
        bindings = dict(sub.bindings)
        bindings[name] = ctx.store.create_derived(np.asarray(values), etype)
        yield SubTar(sub.specs, bindings)


def _buffer(port) -> list[tuple]:
    items = []
    while (item := port.next()) is not None:
        items.append(item)
    return items


def op_cross_join(node: PlanNode, ports, ctx) -> Iterator[SubTar]:
    lmap, rmap = node.info["left_names"], node.info["right_names"]
    right = _buffer(ports[1])
    if not right:
        ports[0].close()
        return
    try:
        for left in ports[0].stream():
            for _, r in right:
                yield _cross_pair(ctx, left, r, lmap, rmap)
    finally:
        for key, _ in right:
            ports[1].release(key)


def _cross_pair(ctx, left: SubTar, right: SubTar, lmap, rmap) -> SubTar:
    nl, nr = left.length, right.length
    ctx.counter.cells += nl * nr
    bindings = {}
    for k, ds in left.bindings.items():
        bindings[lmap[k]] = ds if ds.length == 1 else ctx.store.create_derived(np.repeat(ds.array, nr), ds.element_type)
    for k, ds in right.bindings.items():
        bindings[rmap[k]] = ds if ds.length == 1 else ctx.store.create_derived(np.tile(ds.array, nl), ds.element_type)
    if not left.is_total and not right.is_total:
        specs = [s.renamed(lmap[s.name]) for s in left.specs] + [s.renamed(rmap[s.name]) for s in right.specs]
        return SubTar(specs, bindings)
    lc, rc = left.real_coords(), right.real_coords()
    real = {lmap[k]: np.repeat(v, nr) for k, v in lc.items()}
    real.update({rmap[k]: np.tile(v, nl) for k, v in rc.items()})
    dims = [s.dim.renamed(lmap[s.name]) for s in left.specs] + [s.dim.renamed(rmap[s.name]) for s in right.specs]
    return make_total(ctx, dims, real, bindings)


def _codes(columns: list[np.ndarray]) -> np.ndarray:
    """One int64 code per row so that equal rows get equal codes."""
    if len(columns) == 1:
        return np.unique(columns[0], return_inverse=True)[1].astype(np.int64)
    per = [np.unique(c, return_inverse=True)[1].astype(np.int64) for c in columns]
    return np.unique(np.stack(per, axis=1), axis=0, return_inverse=True)[1].reshape(-1).astype(np.int64)


def match_keys(left: list[np.ndarray], right: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs ``(li, ri)`` of rows with equal keys, ordered by left row."""
    nl = left[0].size
    codes = _codes([np.concatenate([l, r]) for l, r in zip(left, right)])
    lc, rc = codes[:nl], codes[nl:]
    order = np.argsort(rc, kind="stable")
    sorted_rc = rc[order]
    start = np.searchsorted(sorted_rc, lc, side="left")
    end = np.searchsorted(sorted_rc, lc, side="right")
    counts = end - start
    total = int(counts.sum())
    li = np.repeat(np.arange(nl, dtype=np.int64), counts)
    if total == 0:
        return li, np.empty(0, np.int64)
    first = np.repeat(np.cumsum(counts) - counts, counts)
    pos = np.arange(total, dtype=np.int64) - first + np.repeat(start, counts)
    return li, order[pos]


def op_dimjoin(node: PlanNode, ports, ctx) -> Iterator[SubTar]:
    pairs = node.params["pairs"]
    lmap, rmap = node.info["left_names"], node.info["right_names"]
    rschema = node.inputs[1].schema
    paired = {r for _, r in pairs}
    right_dims = [d for d in rschema.dimensions if d.name not in paired]

    # Index the whole right input, then let its subTARs go.
    keys: list[list[np.ndarray]] = [[] for _ in pairs]
    rreal: dict[str, list[np.ndarray]] = {d.name: [] for d in right_dims}
    ratts: dict[str, list[np.ndarray]] = {a.name: [] for a in rschema.attributes}
    seen_right = False
    for r in ports[1].stream():
        seen_right = True
        ctx.counter.cells += r.length
        cols = Columns(r)
        for k, (_, rd) in enumerate(pairs):
            keys[k].append(np.array(cols(rd)))
        coords = cols.coords()
        for name in rreal:
            rreal[name].append(np.array(coords[name]))
        for name in ratts:
            ratts[name].append(np.array(r.attribute(name)))
    if not seen_right:
        ports[0].close()
        return
    rkeys = [np.concatenate(k) for k in keys]
    rreal_all = {k: np.concatenate(v) for k, v in rreal.items()}
    ratts_all = {k: np.concatenate(v) for k, v in ratts.items()}

    for left in ports[0].stream():
        ctx.counter.cells += left.length
        cols = Columns(left)
        lkeys = [np.asarray(cols(ld)) for ld, _ in pairs]
        li, ri = match_keys(lkeys, rkeys)
        if li.size == 0:
            continue
        coords = cols.coords()
        real = {lmap[s.name]: coords[s.name][li] for s in left.specs}
        real.update({rmap[d.name]: rreal_all[d.name][ri] for d in right_dims})
        dims = [s.dim.renamed(lmap[s.name]) for s in left.specs] + [d.renamed(rmap[d.name]) for d in right_dims]
        bindings = {lmap[k]: gather(ctx, ds, li) for k, ds in left.bindings.items()}
        for a in rschema.attributes:
            bindings[rmap[a.name]] = ctx.store.create_derived(ratts_all[a.name][ri], a.element_type)
        yield make_total(ctx, dims, real, bindings)


def _group_reduce(fn: str, values: np.ndarray, inv: np.ndarray, ngroups: int, out_type: str) -> np.ndarray:
    counts = np.bincount(inv, minlength=ngroups)
    if fn == "count":
        return counts.astype(np.int64)
    order = np.argsort(inv, kind="stable")
    sv = values[order]
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    if fn in ("min", "max"):
        red = np.minimum if fn == "min" else np.maximum
        return red.reduceat(sv, starts).astype(dtype_of(out_type))
    if values.dtype.kind in "iu":
        sums = np.add.reduceat(sv.astype(np.int64), starts)
        if fn == "sum":
            return sums
        return sums.astype(np.float64) / counts
    sums = np.array([math.fsum(chunk) for chunk in np.split(sv.astype(np.float64), starts[1:])])
    return sums if fn == "sum" else sums / counts


def op_aggregate(node: PlanNode, ports, ctx) -> Iterator[SubTar]:
    fn, target, out = node.params["fn"], node.params["target"], node.params["out"]
    groups = node.params["groups"]
    out_type = node.schema.element(out).element_type
    values, keys = [], {g: [] for g in groups}
    for sub in ports[0].stream():
        ctx.counter.cells += sub.length
        cols = Columns(sub)
        values.append(expr.promote(np.array(cols(target))))
        coords = cols.coords() if groups else {}
        for g in groups:
            keys[g].append(np.array(coords[g]))
    if not values or sum(v.size for v in values) == 0:
        return
    vals = np.concatenate(values)
    if not groups:
        inv = np.zeros(vals.size, dtype=np.int64)
        result = _group_reduce(fn, vals, inv, 1, out_type)
        spec = DimensionSpec(unit_dimension(), 0, 0, ORDERED)
        yield SubTar([spec], {out: ctx.store.create_derived(result, out_type)})
        return
    gcols = [np.concatenate(keys[g]) for g in groups]
    uniq, inv = np.unique(np.stack(gcols, axis=1), axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    result = _group_reduce(fn, vals, inv, uniq.shape[0], out_type)
    dims = [node.schema.element(g) for g in groups]
    lo, hi = uniq.min(axis=0), uniq.max(axis=0)
    box = int(np.prod(hi - lo + 1, dtype=np.int64))
    data = ctx.store.create_derived(result, out_type)
    if box == uniq.shape[0]:
        # np.unique sorts rows lexicographically, which is row-major order.
        specs = [DimensionSpec(d, int(lo[k]), int(hi[k]), ORDERED) for k, d in enumerate(dims)]
        yield SubTar(specs, {out: data})
        return
    yield make_total(ctx, dims, {d.name: uniq[:, k] for k, d in enumerate(dims)}, {out: data})


def _safe(name: str) -> str:
    return name.replace(".", "_")


def op_materialize(node: PlanNode, ports, ctx) -> Iterator[SubTar]:
    name = node.params["name"]
    schema = node.schema
    tar = Tar(name, schema.elements, (), schema.type, schema.roles)
    # Source datasets are kept alongside their copies so that an id cannot be
    # reused by a later dataset once the source is freed upstream.
    stored: dict[int, tuple[Dataset, Dataset]] = {}
    count = 0

    def persist(ds: Dataset, label: str) -> Dataset:
        if ds.name in ctx.store:
            return ds
        if id(ds) not in stored:
            stored[id(ds)] = (ds, ctx.store.store_array(f"{_safe(name)}_{count}_{_safe(label)}", ds.array))
        return stored[id(ds)][1]

    for sub in ports[0].stream():
        specs = [
            DimensionSpec(s.dim, s.lower, s.upper, s.kind, None if s.data is None else persist(s.data, s.name))
            for s in sub.specs
        ]
        bindings = {k: persist(ds, k) for k, ds in sub.bindings.items()}
        tar, _ = attach_subtar(tar, specs, bindings)
        count += 1
    ctx.catalog.replace_tar(tar)
    yield from tar.subtars


def op_catalyze(node: PlanNode, ports, ctx) -> Iterator[SubTar]:
    from .. import viz

    tables = []
    for port, inp in zip(ports, node.inputs):
        items = _buffer(port)
        tables.append((inp.schema, table_of([s for _, s in items], inp.schema)))
        for key, _ in items:
            port.release(key)
    bundle = viz.MeshBundle(tables[0], tables[1], tables[2:], dict(node.params["selectors"]))
    summary = viz.export_vtk(bundle, node.params["path"], ctx.export_hook)
    spec = DimensionSpec(unit_dimension(), 0, 0, ORDERED)
    counts = {"points": summary.points, "cells": summary.cells, "fields": summary.fields}
    yield SubTar([spec], {k: ctx.store.create_derived(np.array([v]), "int64") for k, v in counts.items()})


OPERATORS = {
    "scan": op_scan,
    "select": op_select,
    "where": op_where,
    "subset": op_subset,
    "derive": op_derive,
    "cross_join": op_cross_join,
    "dimjoin": op_dimjoin,
    "aggregate": op_aggregate,
    "materialize": op_materialize,
    "catalyze": op_catalyze,
}


def check_emitted(node: PlanNode, sub: SubTar) -> None:
    """Debug check that an emitted subTAR matches the node's inferred schema."""
    schema = node.schema
    if sorted(sub.dim_names) != sorted(schema.dim_names):
        raise SchemaError(f"node {node.id} ({node.op}) emitted dimensions {sub.dim_names}, expected {schema.dim_names}")
    for s in sub.specs:
        if s.dim != schema.element(s.name):
            raise SchemaError(f"node {node.id} ({node.op}) emitted {s.name!r} with a different definition")
    if sorted(sub.bindings) != sorted(schema.att_names):
        raise SchemaError(
            f"node {node.id} ({node.op}) emitted attributes {sorted(sub.bindings)}, expected {schema.att_names}"
        )
    for k, ds in sub.bindings.items():
        if ds.element_type != schema.element(k).element_type:
            raise SchemaError(f"node {node.id} ({node.op}) emitted {k!r} as {ds.element_type}")
