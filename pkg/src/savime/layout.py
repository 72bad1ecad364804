"""SubTAR layouts: dimension specifications, position and data mappings.

A subTAR covers a hyper-rectangle of real (integer) indexes. Its cells are laid
out row-major over its ``specs`` list, last spec varying fastest. Three kinds
of dimension specification exist:

* ORDERED - every index in ``[lower, upper]`` is present;
* PARTIAL - only the indexes listed in a "present" dataset are present, the same
  set across all other dimensions;
* TOTAL   - every cell stores its index explicitly (all specs of the subTAR
  must then be TOTAL).

Index datasets hold logical values for implicit dimensions and real indexes for
explicit ones.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    LayoutError,
    LengthMismatch,
    MixedTotalSpec,
    NotInDomain,
    OutOfBounds,
    OutsideExtent,
    OverlapViolation,
    UnknownElement,
)
from .schema import DataElement, Domain, Explicit, Implicit, Tar
from .storage import Dataset, dtype_of

ORDERED = "ordered"
PARTIAL = "partial"
TOTAL = "total"
SPEC_KINDS = (ORDERED, PARTIAL, TOTAL)


class VisitCounter:
    """Counts cells and subTARs examined while answering a query."""

    def __init__(self) -> None:
        self.cells = 0
        self.subtars = 0

    def reset(self) -> None:
        self.cells = 0
        self.subtars = 0

    def __repr__(self) -> str:
        return f"VisitCounter(cells={self.cells}, subtars={self.subtars})"


# -- logical <-> real ---------------------------------------------------------

def logical_to_real(domain: Domain, value) -> int:
    return int(domain.to_real(np.atleast_1d(value))[0])


def real_to_logical(domain: Domain, index: int, element_type: str = "float64"):
    if index < 0 or index >= domain.cardinality:
        raise OutOfBounds(f"real index {index} outside [0, {domain.cardinality})")
    return domain.to_logical(np.array([index]), element_type)[0].item()


def stored_to_real(dim: DataElement, stored: np.ndarray) -> np.ndarray:
    """Translate an index dataset's contents to real indexes."""
    if isinstance(dim.domain, Implicit):
        return dim.domain.to_real(stored)
    stored = np.asarray(stored)
    if stored.size and not is_integer_type_dtype(stored.dtype):
        raise LayoutError(f"explicit dimension {dim.name!r} needs integer real indexes")
    return stored.astype(np.int64)


def real_to_stored(dim: DataElement, real: np.ndarray) -> np.ndarray:
    if isinstance(dim.domain, Implicit):
        return dim.domain.to_logical(real, dim.element_type)
    return np.asarray(real, dtype=np.int64)


def is_integer_type_dtype(dtype) -> bool:
    return np.issubdtype(dtype, np.integer)


# -- regions ------------------------------------------------------------------

@dataclass(frozen=True)
class Region:
    """Per-dimension closed intervals of real indexes.

    Dimensions absent from ``bounds`` are unconstrained.
    """

    bounds: Mapping[str, tuple[int, int]]

    def __post_init__(self) -> None:
        object.__setattr__(self, "bounds", dict(self.bounds))
        for name, (lo, hi) in self.bounds.items():
            if lo > hi:
                raise LayoutError(f"empty interval [{lo}, {hi}] on {name!r}")

    def __hash__(self) -> int:
        return hash(tuple(sorted(self.bounds.items())))

    def get(self, name: str) -> tuple[int, int] | None:
        return self.bounds.get(name)

    def intersects(self, other: "Region") -> bool:
        for name, (lo, hi) in self.bounds.items():
            o = other.bounds.get(name)
            if o is not None and (hi < o[0] or o[1] < lo):
                return False
        return True

    def contains(self, location: Mapping[str, int]) -> bool:
        for name, (lo, hi) in self.bounds.items():
            if name in location and not lo <= location[name] <= hi:
                return False
        return True

    def volume(self) -> int:
        n = 1
        for lo, hi in self.bounds.values():
            n *= hi - lo + 1
        return n


# -- dimension specifications -------------------------------------------------

@dataclass(frozen=True, eq=False)
class DimensionSpec:
    dim: DataElement
    lower: int
    upper: int
    kind: str = ORDERED
    data: Dataset | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "lower", int(self.lower))
        object.__setattr__(self, "upper", int(self.upper))
        if self.kind not in SPEC_KINDS:
            raise LayoutError(f"unknown specification kind {self.kind!r}")
        if not self.dim.is_dimension:
            raise LayoutError(f"{self.dim.name!r} is not a dimension")
        if not 0 <= self.lower <= self.upper:
            raise LayoutError(f"bad bounds [{self.lower}, {self.upper}] on {self.dim.name!r}")
        if self.upper >= self.dim.domain.cardinality:
            raise OutOfBounds(
                f"upper bound {self.upper} beyond cardinality {self.dim.domain.cardinality} of {self.dim.name!r}"
            )
        if self.kind == ORDERED:
            if self.data is not None:
                raise LayoutError("ordered specifications carry no index dataset")
            return
        if self.data is None:
            raise LayoutError(f"{self.kind} specification on {self.dim.name!r} needs an index dataset")
        real = self.real
        if real.size and (real.min() < self.lower or real.max() > self.upper):
            raise OutsideExtent(f"index dataset of {self.dim.name!r} leaves [{self.lower}, {self.upper}]")
        if self.kind == PARTIAL:
            if real.size == 0:
                raise LayoutError(f"partial specification on {self.dim.name!r} has no present indexes")
            if real.size > 1 and not bool(np.all(real[1:] > real[:-1])):
                raise LayoutError(f"present indexes of {self.dim.name!r} are not strictly increasing")

    @property
    def name(self) -> str:
        return self.dim.name

    @cached_property
    def real(self) -> np.ndarray:
        """Real indexes held by the index dataset (PARTIAL/TOTAL)."""
        try:
            return stored_to_real(self.dim, self.data.array)
        except NotInDomain as exc:
            raise LayoutError(f"index dataset of {self.dim.name!r}: {exc}") from exc

    @property
    def count(self) -> int:
        if self.kind == ORDERED:
            return self.upper - self.lower + 1
        if self.kind == PARTIAL:
            return self.data.length
        raise LayoutError("TOTAL specifications have no per-dimension count")

    def local_real(self) -> np.ndarray:
        """Real index for each local position of an ORDERED/PARTIAL spec."""
        if self.kind == ORDERED:
            return np.arange(self.lower, self.upper + 1, dtype=np.int64)
        return self.real

    def renamed(self, name: str) -> "DimensionSpec":
        return DimensionSpec(self.dim.renamed(name), self.lower, self.upper, self.kind, self.data)

    @property
    def datasets(self) -> list[Dataset]:
        return [self.data] if self.data is not None else []


def ordered(dim: DataElement, lower: int, upper: int) -> DimensionSpec:
    return DimensionSpec(dim, lower, upper, ORDERED)


def partial(dim: DataElement, lower: int, upper: int, present: Dataset) -> DimensionSpec:
    return DimensionSpec(dim, lower, upper, PARTIAL, present)


def total(dim: DataElement, lower: int, upper: int, indexes: Dataset) -> DimensionSpec:
    return DimensionSpec(dim, lower, upper, TOTAL, indexes)


# -- subTARs ------------------------------------------------------------------

_ordinals = itertools.count()


class SubTar:
    """A disjoint region of a TAR together with its mapping functions."""

    def __init__(
        self,
        specs: Sequence[DimensionSpec],
        bindings: Mapping[str, Dataset],
        tar_name: str = "",
    ):
        self.specs = tuple(specs)
        self.bindings = dict(bindings)
        self.tar_name = tar_name
        self.ordinal = next(_ordinals)
        if not self.specs:
            raise LayoutError("a subTAR needs at least one dimension specification")
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise LayoutError(f"duplicate dimension specifications {names}")
        kinds = {s.kind for s in self.specs}
        if TOTAL in kinds and kinds != {TOTAL}:
            raise MixedTotalSpec("TOTAL specifications cannot be mixed with ORDERED/PARTIAL ones")
        if kinds == {TOTAL}:
            lengths = {s.data.length for s in self.specs}
            if len(lengths) != 1:
                raise LengthMismatch(f"TOTAL index datasets have differing lengths {sorted(lengths)}")
            self.length = lengths.pop()
        else:
            self.length = int(np.prod([s.count for s in self.specs], dtype=np.int64))
        for att, ds in self.bindings.items():
            if ds.length not in (self.length, 1):
                raise LengthMismatch(
                    f"attribute {att!r} bound to {ds.length} cells, subTAR has {self.length}"
                )

    def __repr__(self) -> str:
        dims = " x ".join(f"{s.name}[{s.lower},{s.upper}]:{s.kind}" for s in self.specs)
        return f"SubTar(#{self.ordinal} {dims}, length={self.length})"

    @property
    def is_total(self) -> bool:
        return self.specs[0].kind == TOTAL

    @property
    def dim_names(self) -> list[str]:
        return [s.name for s in self.specs]

    def spec(self, name: str) -> DimensionSpec:
        for s in self.specs:
            if s.name == name:
                return s
        raise UnknownElement(f"subTAR has no dimension {name!r}")

    @property
    def extent(self) -> Region:
        return Region({s.name: (s.lower, s.upper) for s in self.specs})

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(s.count for s in self.specs)

    def datasets(self) -> list[Dataset]:
        out = [d for s in self.specs for d in s.datasets]
        out.extend(self.bindings.values())
        return out

    # -- columnar access ------------------------------------------------------

    def real_coords(self) -> dict[str, np.ndarray]:
        """Real index of every dimension for every cell, in offset order."""
        if self.is_total:
            return {s.name: s.real for s in self.specs}
        grids = np.unravel_index(np.arange(self.length, dtype=np.int64), self.shape) if self.length else [
            np.empty(0, np.int64) for _ in self.specs
        ]
        return {s.name: s.local_real()[g] for s, g in zip(self.specs, grids)}

    def attribute(self, name: str, broadcast: bool = True) -> np.ndarray:
        try:
            ds = self.bindings[name]
        except KeyError:
            raise UnknownElement(f"subTAR has no attribute {name!r}") from None
        arr = ds.array
        if broadcast and ds.length == 1 and self.length != 1:
            return np.broadcast_to(arr, (self.length,))
        return arr


def subtar_column(s: SubTar, element: str, broadcast: bool = True) -> np.ndarray:
    """Values of one element for every cell of ``s`` (dimensions as logical values)."""
    if element in s.bindings:
        return s.attribute(element, broadcast)
    spec = s.spec(element)
    real = s.real_coords()[element]
    return spec.dim.domain.to_logical(real, spec.dim.element_type)


# -- attaching ----------------------------------------------------------------

def attach_subtar(
    tar: Tar,
    specs: Sequence[DimensionSpec],
    bindings: Mapping[str, Dataset],
) -> tuple[Tar, SubTar]:
    """Validate a new subTAR against ``tar`` and return the extended TAR."""
    dims = {d.name: d for d in tar.dimensions}
    names = [s.name for s in specs]
    if sorted(names) != sorted(dims):
        raise LayoutError(f"subTAR must specify exactly the dimensions {sorted(dims)}, got {names}")
    for s in specs:
        if s.dim != dims[s.name]:
            raise LayoutError(f"specification for {s.name!r} uses a different element definition")
    atts = set(tar.att_names)
    for name in bindings:
        if name not in atts:
            raise UnknownElement(f"TAR {tar.name!r} has no attribute {name!r}")
    if set(bindings) != atts:
        raise LayoutError(f"subTAR must bind every attribute; missing {sorted(atts - set(bindings))}")
    for name, ds in bindings.items():
        if ds.element_type != tar.element(name).element_type:
            raise LayoutError(
                f"attribute {name!r} is {tar.element(name).element_type}, dataset is {ds.element_type}"
            )
    sub = SubTar(specs, bindings, tar.name)
    for other in tar.subtars:
        if sub.extent.intersects(other.extent):
            raise OverlapViolation(f"{sub} intersects existing {other}")
    return tar.with_subtars(tar.subtars + (sub,)), sub


# -- mapping functions --------------------------------------------------------

def _location_vector(s: SubTar, location) -> list[int]:
    if isinstance(location, Mapping):
        try:
            return [int(location[n]) for n in s.dim_names]
        except KeyError as exc:
            raise UnknownElement(f"location lacks dimension {exc}") from None
    location = [int(v) for v in location]
    if len(location) != len(s.specs):
        raise LayoutError(f"location has {len(location)} coordinates, subTAR has {len(s.specs)} dimensions")
    return location


def position_of(s: SubTar, location) -> int | None:
    """Linear offset of a real-index location inside ``s``; ``None`` for empty cells."""
    loc = _location_vector(s, location)
    for spec, v in zip(s.specs, loc):
        if not spec.lower <= v <= spec.upper:
            raise OutsideExtent(f"{spec.name}={v} outside [{spec.lower}, {spec.upper}]")
    if s.is_total:
        hit = np.ones(s.length, dtype=bool)
        for spec, v in zip(s.specs, loc):
            hit &= spec.real == v
        found = np.flatnonzero(hit)
        return int(found[0]) if found.size else None
    offset = 0
    for spec, v in zip(s.specs, loc):
        if spec.kind == ORDERED:
            local = v - spec.lower
        else:
            k = int(np.searchsorted(spec.real, v))
            if k >= spec.count or spec.real[k] != v:
                return None
            local = k
        offset = offset * spec.count + local
    return offset


def value_at(s: SubTar, offset: int, element: str):
    if not 0 <= offset < s.length:
        raise OutOfBounds(f"offset {offset} outside [0, {s.length})")
    if element in s.bindings:
        ds = s.bindings[element]
        return ds.array[0 if ds.length == 1 else offset].item()
    spec = s.spec(element)
    if s.is_total:
        real = int(spec.real[offset])
    else:
        local = np.unravel_index(offset, s.shape)[s.specs.index(spec)]
        real = int(spec.local_real()[local])
    return spec.dim.domain.to_logical(np.array([real]), spec.dim.element_type)[0].item()


def lookup_subtars(tar: Tar, region: Region) -> list[SubTar]:
    return [s for s in tar.subtars if s.extent.intersects(region)]


def enumerate_cells(
    s: SubTar, clip: Region | None = None, counter: VisitCounter | None = None
) -> Iterator[tuple[tuple[int, ...], int]]:
    """Yield ``(real location, offset)`` for occupied cells inside ``clip``.

    ORDERED/PARTIAL subTARs only visit cells inside the clip; TOTAL subTARs
    have to look at every cell.
    """
    if clip is not None and not s.extent.intersects(clip):
        return
    if s.is_total:
        cols = [spec.real for spec in s.specs]
        for i in range(s.length):
            if counter is not None:
                counter.cells += 1
            loc = tuple(int(c[i]) for c in cols)
            if clip is None or clip.contains(dict(zip(s.dim_names, loc))):
                yield loc, i
        return
    axes = []
    for spec in s.specs:
        local = spec.local_real()
        b = clip.get(spec.name) if clip is not None else None
        keep = range(len(local)) if b is None else [k for k, r in enumerate(local) if b[0] <= r <= b[1]]
        axes.append([(k, int(local[k])) for k in keep])
    shape = s.shape
    for combo in itertools.product(*axes):
        if counter is not None:
            counter.cells += 1
        offset = 0
        for (k, _), n in zip(combo, shape):
            offset = offset * n + k
        yield tuple(r for _, r in combo), offset


def clip_offsets(
    s: SubTar, clip: Region | None, counter: VisitCounter | None = None
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Vectorised counterpart of :func:`enumerate_cells`.

    Returns the offsets of the selected cells and the real coordinates of those
    cells per dimension.
    """
    if s.is_total:
        if counter is not None:
            counter.cells += s.length
        coords = s.real_coords()
        mask = np.ones(s.length, dtype=bool)
        if clip is not None:
            for name, col in coords.items():
                b = clip.get(name)
                if b is not None:
                    mask &= (col >= b[0]) & (col <= b[1])
        offsets = np.flatnonzero(mask)
        return offsets, {k: v[offsets] for k, v in coords.items()}
    locals_, reals = [], []
    for spec in s.specs:
        local = spec.local_real()
        b = clip.get(spec.name) if clip is not None else None
        if b is None:
            keep = np.arange(local.size)
        elif spec.kind == ORDERED:
            lo, hi = max(b[0], spec.lower), min(b[1], spec.upper)
            keep = np.arange(lo - spec.lower, hi - spec.lower + 1) if lo <= hi else np.arange(0)
        else:
            keep = np.flatnonzero((local >= b[0]) & (local <= b[1]))
        locals_.append(keep)
        reals.append(local[keep])
    n = int(np.prod([k.size for k in locals_], dtype=np.int64))
    if counter is not None:
        counter.cells += n
    if n == 0:
        return np.empty(0, np.int64), {spec.name: np.empty(0, np.int64) for spec in s.specs}
    mesh = np.meshgrid(*locals_, indexing="ij")
    offsets = np.ravel_multi_index([m.ravel() for m in mesh], s.shape).astype(np.int64)
    rmesh = np.meshgrid(*reals, indexing="ij")
    return offsets, {spec.name: r.ravel() for spec, r in zip(s.specs, rmesh)}


def subtar_table(s: SubTar, names: Sequence[str]) -> dict[str, np.ndarray]:
    """Logical values of ``names`` for every cell of ``s``, attributes broadcast."""
    coords = None
    out = {}
    for name in names:
        if name in s.bindings:
            out[name] = np.asarray(s.attribute(name))
            continue
        if coords is None:
            coords = s.real_coords()
        spec = s.spec(name)
        out[name] = spec.dim.domain.to_logical(coords[name], spec.dim.element_type)
    return out


def table_of(subtars: Sequence[SubTar], tar: Tar) -> dict[str, np.ndarray]:
    """Concatenate the cells of ``subtars`` into one column per element of ``tar``."""
    names = [e.name for e in tar.elements]
    parts = [subtar_table(s, names) for s in subtars]
    out = {}
    for e in tar.elements:
        cols = [p[e.name] for p in parts]
        if cols:
            out[e.name] = np.concatenate(cols)
        elif e.is_dimension and isinstance(e.domain, Explicit):
            out[e.name] = np.empty(0, e.domain.values.dtype)
        else:
            out[e.name] = np.empty(0, dtype_of(e.element_type))
    return out
