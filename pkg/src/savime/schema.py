"""Typed-array schema objects: domains, data elements, types, TARs and links.

Everything here is immutable. A :class:`TarSchema` is a snapshot; DDL builds a
new snapshot instead of mutating the current one (see :mod:`savime.catalog`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DomainError,
    DuplicateTar,
    DuplicateType,
    IncomparableTypes,
    MissingMandatoryRole,
    NonInjectiveRoleMap,
    NotInDomain,
    OutOfBounds,
    OverlappingRoleSets,
    SchemaError,
    UnknownElement,
    UnknownTar,
    UnknownType,
)
from .storage import ELEMENT_TYPES, Dataset, dtype_of, is_integer_type

if TYPE_CHECKING:
    from .layout import SubTar

DIMENSION = "dimension"
ATTRIBUTE = "attribute"

# Relative tolerance, in units of the spacing, for snapping values to an implicit grid.
GRID_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Implicit:
    """Equally spaced range ``lower, lower + spacing, ..., upper``."""

    lower: float
    upper: float
    spacing: float = 1

    kind = "implicit"

    def __post_init__(self) -> None:
        if not self.spacing > 0:
            raise DomainError(f"spacing must be positive, got {self.spacing}")
        if self.lower > self.upper:
            raise DomainError(f"lower bound {self.lower} above upper bound {self.upper}")
        q = (self.upper - self.lower) / self.spacing
        if abs(q - round(q)) > GRID_TOLERANCE:
            raise DomainError(
                f"range [{self.lower}, {self.upper}] is not a multiple of spacing {self.spacing}"
            )

    @property
    def cardinality(self) -> int:
        return int(round((self.upper - self.lower) / self.spacing)) + 1

    def to_real(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        q = (values - self.lower) / self.spacing
        k = np.rint(q)
        bad = (np.abs(q - k) > GRID_TOLERANCE) | (k < 0) | (k >= self.cardinality)
        if bad.any():
            raise NotInDomain(f"value {values[bad][0]!r} is not in {self}")
        return k.astype(np.int64)

    def to_logical(self, indexes, element_type: str = "float64") -> np.ndarray:
        indexes = np.asarray(indexes, dtype=np.int64)
        if indexes.size and (indexes.min() < 0 or indexes.max() >= self.cardinality):
            raise OutOfBounds(f"real index outside [0, {self.cardinality}) for {self}")
        if is_integer_type(element_type):
            out = int(self.lower) + indexes * int(self.spacing)
        else:
            out = self.lower + indexes * float(self.spacing)
        return out.astype(dtype_of(element_type))

    def real_bounds(self, lo: float, hi: float) -> tuple[int, int]:
        """Real-index interval of grid values inside the logical interval [lo, hi]."""
        a = math.ceil((lo - self.lower) / self.spacing - GRID_TOLERANCE)
        b = math.floor((hi - self.lower) / self.spacing + GRID_TOLERANCE)
        return max(a, 0), min(b, self.cardinality - 1)


@dataclass(frozen=True, eq=False)
class Explicit:
    """Domain enumerated by a strictly increasing dataset of logical values."""

    dataset: Dataset

    kind = "explicit"

    def __post_init__(self) -> None:
        values = self.dataset.array
        if values.size == 0:
            raise DomainError("explicit domain dataset is empty")
        if values.size > 1 and not bool(np.all(values[1:] > values[:-1])):
            raise DomainError(f"explicit domain dataset {self.dataset.name!r} is not strictly increasing")

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Explicit)
            and self.dataset.name == other.dataset.name
            and self.dataset.element_type == other.dataset.element_type
        )

    def __hash__(self) -> int:
        return hash(("explicit", self.dataset.name))

    def __repr__(self) -> str:
        return f"Explicit({self.dataset.name!r})"

    @property
    def values(self) -> np.ndarray:
        return self.dataset.array

    @property
    def cardinality(self) -> int:
        return self.dataset.length

    def to_real(self, values) -> np.ndarray:
        values = np.asarray(values)
        idx = np.searchsorted(self.values, values)
        ok = idx < self.cardinality
        ok[ok] = self.values[idx[ok]] == values[ok]
        if not ok.all():
            raise NotInDomain(f"value {values[~ok][0]!r} is not in {self}")
        return idx.astype(np.int64)

    def to_logical(self, indexes, element_type: str | None = None) -> np.ndarray:
        indexes = np.asarray(indexes, dtype=np.int64)
        if indexes.size and (indexes.min() < 0 or indexes.max() >= self.cardinality):
            raise OutOfBounds(f"real index outside [0, {self.cardinality}) for {self}")
        return self.values[indexes]

    def real_bounds(self, lo: float, hi: float) -> tuple[int, int]:
        a = int(np.searchsorted(self.values, lo, side="left"))
        b = int(np.searchsorted(self.values, hi, side="right")) - 1
        return a, b


Domain = Implicit | Explicit


@dataclass(frozen=True)
class DataElement:
    name: str
    kind: str
    element_type: str
    domain: Domain | None = None

    def __post_init__(self) -> None:
        if self.element_type not in ELEMENT_TYPES:
            raise SchemaError(f"element {self.name!r}: unsupported type {self.element_type!r}")
        if self.kind == ATTRIBUTE:
            if self.domain is not None:
                raise SchemaError(f"attribute {self.name!r} cannot carry a domain")
        elif self.kind == DIMENSION:
            if self.domain is None:
                raise SchemaError(f"dimension {self.name!r} needs a domain")
            if isinstance(self.domain, Explicit) and self.domain.dataset.element_type != self.element_type:
                raise SchemaError(
                    f"dimension {self.name!r} is {self.element_type} but its index dataset is "
                    f"{self.domain.dataset.element_type}"
                )
        else:
            raise SchemaError(f"unknown element kind {self.kind!r}")

    @property
    def is_dimension(self) -> bool:
        return self.kind == DIMENSION

    def renamed(self, name: str) -> "DataElement":
        return replace(self, name=name)


def dimension(name: str, element_type: str, domain: Domain) -> DataElement:
    return DataElement(name, DIMENSION, element_type, domain)


def attribute(name: str, element_type: str) -> DataElement:
    return DataElement(name, ATTRIBUTE, element_type)


@dataclass(frozen=True)
class TarType:
    name: str
    mandatory: frozenset[str] = frozenset()
    optional: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "mandatory", frozenset(self.mandatory))
        object.__setattr__(self, "optional", frozenset(self.optional))
        overlap = self.mandatory & self.optional
        if overlap:
            raise OverlappingRoleSets(f"type {self.name!r}: roles {sorted(overlap)} are both mandatory and optional")

    @property
    def roles(self) -> frozenset[str]:
        return self.mandatory | self.optional


@dataclass(frozen=True)
class Tar:
    """A typed array: named elements, loaded subTARs and an optional type binding.

    ``roles`` maps element names to role names. Derived (query-output) TARs use
    the same class with an empty subTAR tuple.
    """

    name: str
    elements: tuple[DataElement, ...]
    subtars: tuple["SubTar", ...] = ()
    type: TarType | None = None
    roles: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "elements", tuple(self.elements))
        object.__setattr__(self, "subtars", tuple(self.subtars))
        object.__setattr__(self, "roles", MappingProxyType(dict(self.roles)))
        names = [e.name for e in self.elements]
        if len(set(names)) != len(names):
            raise SchemaError(f"TAR {self.name!r} has duplicate element names")
        if not any(e.is_dimension for e in self.elements):
            raise SchemaError(f"TAR {self.name!r} needs at least one dimension")
        for elem in self.roles:
            if elem not in names:
                raise UnknownElement(f"role map of {self.name!r} names unknown element {elem!r}")
        check_injective(self.roles)

    __hash__ = object.__hash__

    @property
    def dimensions(self) -> tuple[DataElement, ...]:
        return tuple(e for e in self.elements if e.is_dimension)

    @property
    def attributes(self) -> tuple[DataElement, ...]:
        return tuple(e for e in self.elements if not e.is_dimension)

    @property
    def dim_names(self) -> list[str]:
        return [e.name for e in self.dimensions]

    @property
    def att_names(self) -> list[str]:
        return [e.name for e in self.attributes]

    def element(self, name: str) -> DataElement:
        for e in self.elements:
            if e.name == name:
                return e
        raise UnknownElement(f"TAR {self.name!r} has no element {name!r}")

    def has_element(self, name: str) -> bool:
        return any(e.name == name for e in self.elements)

    def role_of(self, name: str) -> str | None:
        return self.roles.get(name)

    def element_for_role(self, role: str) -> DataElement | None:
        for elem, r in self.roles.items():
            if r == role:
                return self.element(elem)
        return None

    def with_subtars(self, subtars: Iterable["SubTar"]) -> "Tar":
        return replace(self, subtars=tuple(subtars))

    def cell_capacity(self) -> int:
        n = 1
        for d in self.dimensions:
            n *= d.domain.cardinality
        return n


@dataclass(frozen=True)
class Link:
    left: tuple[str, str]
    right: tuple[str, str]


@dataclass(frozen=True)
class TarSchema:
    name: str = "default"
    tars: Mapping[str, Tar] = field(default_factory=dict)
    roles: frozenset[str] = frozenset()
    types: Mapping[str, TarType] = field(default_factory=dict)
    links: tuple[Link, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "tars", MappingProxyType(dict(self.tars)))
        object.__setattr__(self, "types", MappingProxyType(dict(self.types)))
        object.__setattr__(self, "roles", frozenset(self.roles))
        object.__setattr__(self, "links", tuple(self.links))
        for t in self.types.values():
            missing = t.roles - self.roles
            if missing:
                raise SchemaError(f"type {t.name!r} uses undeclared roles {sorted(missing)}")

    __hash__ = object.__hash__

    def tar(self, name: str) -> Tar:
        try:
            return self.tars[name]
        except KeyError:
            raise UnknownTar(f"unknown TAR {name!r}") from None

    def type(self, name: str) -> TarType:
        try:
            return self.types[name]
        except KeyError:
            raise UnknownType(f"unknown type {name!r}") from None

    def replace_tar(self, tar: Tar) -> "TarSchema":
        tars = dict(self.tars)
        tars[tar.name] = tar
        return replace(self, tars=tars)

    def without_tar(self, name: str) -> "TarSchema":
        self.tar(name)
        tars = {k: v for k, v in self.tars.items() if k != name}
        links = tuple(l for l in self.links if name not in (l.left[0], l.right[0]))
        return replace(self, tars=tars, links=links)


# -- DDL on snapshots ---------------------------------------------------------

def check_injective(role_map: Mapping[str, str]) -> None:
    seen: dict[str, str] = {}
    for elem, role in role_map.items():
        if role in seen:
            raise NonInjectiveRoleMap(f"elements {seen[role]!r} and {elem!r} both map to role {role!r}")
        seen[role] = elem


def define_type(
    schema: TarSchema, name: str, mandatory: Sequence[str] = (), optional: Sequence[str] = ()
) -> tuple[TarSchema, TarType]:
    if name in schema.types:
        raise DuplicateType(f"type {name!r} already exists")
    ttype = TarType(name, frozenset(mandatory), frozenset(optional))
    types = dict(schema.types)
    types[name] = ttype
    return replace(schema, types=types, roles=schema.roles | ttype.roles), ttype


def define_tar(
    schema: TarSchema,
    name: str,
    type_name: str | None,
    dims: Sequence[DataElement],
    atts: Sequence[DataElement],
    role_map: Mapping[str, str] | None = None,
) -> tuple[TarSchema, Tar]:
    if name in schema.tars:
        raise DuplicateTar(f"TAR {name!r} already exists")
    role_map = dict(role_map or {})
    ttype = schema.type(type_name) if type_name else None
    elements = tuple(dims) + tuple(atts)
    if any(not d.is_dimension for d in dims) or any(a.is_dimension for a in atts):
        raise SchemaError("dimension and attribute lists are mixed up")
    names = {e.name for e in elements}
    for elem in role_map:
        if elem not in names:
            raise UnknownElement(f"role map names unknown element {elem!r}")
    check_injective(role_map)
    if ttype is not None:
        stray = set(role_map.values()) - ttype.roles
        if stray:
            raise SchemaError(f"roles {sorted(stray)} are not part of type {ttype.name!r}")
        missing = ttype.mandatory - set(role_map.values())
        if missing:
            raise MissingMandatoryRole(f"TAR {name!r} leaves mandatory roles {sorted(missing)} unbound")
    tar = Tar(name, elements, (), ttype, role_map)
    roles = schema.roles | frozenset(role_map.values())
    return replace(schema.replace_tar(tar), roles=roles), tar


def validate_type(tar: Tar) -> bool:
    """Whether ``tar`` satisfies its bound type; untyped TARs pass vacuously."""
    if tar.type is None:
        return True
    mapped = list(tar.roles.values())
    if len(set(mapped)) != len(mapped):
        return False
    if any(r not in tar.type.roles for r in mapped):
        return False
    return tar.type.mandatory <= set(mapped)


def propagate_type(source: Tar, surviving: Mapping[str, str]) -> tuple[TarType | None, dict[str, str]]:
    """Type and role map of an operator output derived from ``source``.

    ``surviving`` maps source element names to their output names. The type is
    kept iff every element holding a mandatory role survives.
    """
    roles = {surviving[e]: r for e, r in source.roles.items() if e in surviving}
    if source.type is None:
        return None, roles
    if source.type.mandatory <= set(roles.values()):
        return source.type, roles
    return None, roles


def element_image(tar: Tar, element: str) -> set:
    """All values currently held by ``element`` across the TAR's subTARs."""
    from .layout import subtar_column

    tar.element(element)
    values: set = set()
    for s in tar.subtars:
        col = subtar_column(s, element, broadcast=False)
        values.update(np.unique(col).tolist())
    return values


def define_link(schema: TarSchema, left: tuple[str, str], right: tuple[str, str]) -> tuple[TarSchema, Link]:
    for tar_name, elem in (left, right):
        schema.tar(tar_name).element(elem)
    link = Link(tuple(left), tuple(right))
    return replace(schema, links=schema.links + (link,)), link


def check_link(schema: TarSchema, link: Link) -> bool:
    a = schema.tar(link.left[0]).element(link.left[1])
    b = schema.tar(link.right[0]).element(link.right[1])
    if is_integer_type(a.element_type) != is_integer_type(b.element_type):
        raise IncomparableTypes(f"cannot compare {a.element_type} with {b.element_type}")
    left = element_image(schema.tar(link.left[0]), link.left[1])
    if not left:
        return True
    return left <= element_image(schema.tar(link.right[0]), link.right[1])
