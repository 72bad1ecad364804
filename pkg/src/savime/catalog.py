"""Metadata manager: the current schema snapshot, DDL serialization and the JSON catalog."""
from __future__ import annotations

import json
import logging
import threading
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import schema as sc
from .errors import CorruptCatalog, DatasetInUse, SavimeError
from .layout import DimensionSpec, SubTar, attach_subtar
from .schema import DataElement, Explicit, Implicit, Link, Tar, TarSchema, TarType
from .storage import Dataset, DatasetStore

log = logging.getLogger(__name__)

CATALOG_VERSION = 1


class Catalog:
    """Holds the live schema snapshot and the dataset store.

    DDL calls are serialized by a lock and replace the snapshot wholesale, so a
    query that grabbed :attr:`schema` keeps a consistent view.
    """

    def __init__(self, store: DatasetStore, schema: TarSchema | None = None, path: Path | None = None):
        self.store = store
        self._schema = schema or TarSchema()
        self.path = Path(path) if path is not None else None
        self.lock = threading.RLock()

    @property
    def schema(self) -> TarSchema:
        return self._schema

    def _commit(self, schema: TarSchema) -> None:
        self._schema = schema
        if self.path is not None:
            persist_catalog(self, self.path)

    # -- DDL ------------------------------------------------------------------

    def define_type(self, name: str, mandatory: Sequence[str] = (), optional: Sequence[str] = ()) -> TarType:
        with self.lock:
            schema, ttype = sc.define_type(self._schema, name, mandatory, optional)
            self._commit(schema)
        return ttype

    def define_tar(
        self,
        name: str,
        type_name: str | None,
        dims: Sequence[DataElement],
        atts: Sequence[DataElement] = (),
        role_map: Mapping[str, str] | None = None,
    ) -> Tar:
        with self.lock:
            schema, tar = sc.define_tar(self._schema, name, type_name, dims, atts, role_map)
            self._commit(schema)
        return tar

    def define_link(self, left: tuple[str, str], right: tuple[str, str]) -> Link:
        with self.lock:
            schema, link = sc.define_link(self._schema, left, right)
            self._commit(schema)
        return link

    def attach_subtar(
        self, tar_name: str, specs: Sequence[DimensionSpec], bindings: Mapping[str, Dataset]
    ) -> SubTar:
        with self.lock:
            tar, sub = attach_subtar(self._schema.tar(tar_name), specs, bindings)
            self._commit(self._schema.replace_tar(tar))
        return sub

    def replace_tar(self, tar: Tar) -> None:
        with self.lock:
            if tar.name in self._schema.tars:
                raise sc.DuplicateTar(f"TAR {tar.name!r} already exists")
            self._commit(self._schema.replace_tar(tar))

    def drop_tar(self, name: str) -> None:
        with self.lock:
            self._commit(self._schema.without_tar(name))

    def datasets_in_use(self) -> set[str]:
        used = set()
        for tar in self._schema.tars.values():
            for e in tar.dimensions:
                if isinstance(e.domain, Explicit):
                    used.add(e.domain.dataset.name)
            for s in tar.subtars:
                used.update(d.name for d in s.datasets())
        return used

    def create_dataset(self, name: str, source, element_type: str, **kw) -> Dataset:
        with self.lock:
            ds = self.store.create_dataset(name, source, element_type, **kw)
            self._commit(self._schema)
        return ds

    def create_dataset_literal(self, name: str, element_type: str, values) -> Dataset:
        with self.lock:
            ds = self.store.create_dataset_literal(name, element_type, values)
            self._commit(self._schema)
        return ds

    def create_dataset_bytes(self, name: str, element_type: str, payload: bytes) -> Dataset:
        with self.lock:
            ds = self.store.create_dataset_bytes(name, element_type, payload)
            self._commit(self._schema)
        return ds

    def drop_dataset(self, name: str) -> None:
        with self.lock:
            if name in self.datasets_in_use():
                raise DatasetInUse(f"dataset {name!r} is still attached to a TAR or domain")
            self.store.drop(name)
            self._commit(self._schema)

    def dataset(self, name: str) -> Dataset:
        return self.store.get(name)

    # -- read-only helpers ----------------------------------------------------

    def tar(self, name: str) -> Tar:
        return self._schema.tar(name)

    def validate_type(self, name: str) -> bool:
        return sc.validate_type(self.tar(name))

    def check_link(self, link: Link) -> bool:
        return sc.check_link(self._schema, link)

    def element_image(self, tar_name: str, element: str) -> set:
        return sc.element_image(self.tar(tar_name), element)


# -- persistence ----------------------------------------------------------------

def _domain_json(domain) -> dict:
    if isinstance(domain, Implicit):
        return {"implicit": [domain.lower, domain.upper, domain.spacing]}
    return {"explicit": domain.dataset.name}


def catalog_to_dict(catalog: Catalog) -> dict:
    schema = catalog.schema
    tars = []
    for name in sorted(schema.tars):
        tar = schema.tars[name]
        tars.append({
            "name": tar.name,
            "type": tar.type.name if tar.type else None,
            "roles": dict(sorted(tar.roles.items())),
            "elements": [
                {
                    "name": e.name,
                    "kind": e.kind,
                    "type": e.element_type,
                    **({"domain": _domain_json(e.domain)} if e.is_dimension else {}),
                }
                for e in tar.elements
            ],
            "subtars": [
                {
                    "specs": [
                        {
                            "dim": sp.name,
                            "lower": sp.lower,
                            "upper": sp.upper,
                            "kind": sp.kind,
                            "data": sp.data.name if sp.data is not None else None,
                        }
                        for sp in s.specs
                    ],
                    "bindings": {k: v.name for k, v in sorted(s.bindings.items())},
                }
                for s in tar.subtars
            ],
        })
    return {
        "version": CATALOG_VERSION,
        "schema": schema.name,
        "roles": sorted(schema.roles),
        "types": [
            {"name": t.name, "mandatory": sorted(t.mandatory), "optional": sorted(t.optional)}
            for t in sorted(schema.types.values(), key=lambda t: t.name)
        ],
        "datasets": [
            {"name": d.name, "type": d.element_type, "length": d.length, "path": str(d.path), "origin": d.origin}
            for d in catalog.store.datasets()
        ],
        "tars": tars,
        "links": [[*l.left, *l.right] for l in schema.links],
    }


def dumps_catalog(catalog: Catalog) -> str:
    return json.dumps(catalog_to_dict(catalog), indent=2, sort_keys=True) + "\n"


def persist_catalog(catalog: Catalog, path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(dumps_catalog(catalog))
    tmp.replace(path)


def _req(obj: Any, key: str, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise CorruptCatalog(f"{where}.{key}" if where else key, "missing")
    return obj[key]


def catalog_from_dict(data: Any, store: DatasetStore, path: Path | None = None) -> Catalog:
    if not isinstance(data, dict):
        raise CorruptCatalog("$", "catalog root is not an object")
    if data.get("version") != CATALOG_VERSION:
        raise CorruptCatalog("version", f"unsupported catalog version {data.get('version')!r}")
    for i, d in enumerate(_req(data, "datasets", "")):
        where = f"datasets[{d.get('name', i) if isinstance(d, dict) else i}]"
        name = _req(d, "name", where)
        file = Path(_req(d, "path", where))
        if not file.exists():
            raise CorruptCatalog(f"{where}.path", f"file {file} of dataset {name!r} is missing")
        try:
            store.register_file(name, _req(d, "type", where), _req(d, "length", where), file, _req(d, "origin", where))
        except SavimeError as exc:
            raise CorruptCatalog(where, str(exc)) from exc

    def dataset(name: str, where: str) -> Dataset:
        if name not in store:
            raise CorruptCatalog(where, f"unknown dataset {name!r}")
        return store.get(name)

    try:
        types = {}
        for t in _req(data, "types", ""):
            types[t["name"]] = TarType(t["name"], frozenset(t["mandatory"]), frozenset(t["optional"]))
        tars = {}
        for ti, t in enumerate(_req(data, "tars", "")):
            where = f"tars[{t.get('name', ti)}]"
            elements = []
            for e in _req(t, "elements", where):
                ew = f"{where}.elements[{e.get('name')}]"
                domain = None
                if e["kind"] == sc.DIMENSION:
                    dj = _req(e, "domain", ew)
                    if "implicit" in dj:
                        domain = Implicit(*dj["implicit"])
                    else:
                        domain = Explicit(dataset(dj["explicit"], f"{ew}.domain"))
                elements.append(DataElement(e["name"], e["kind"], e["type"], domain))
            ttype = types[t["type"]] if t["type"] else None
            tar = Tar(t["name"], tuple(elements), (), ttype, t["roles"])
            for si, s in enumerate(_req(t, "subtars", where)):
                sw = f"{where}.subtars[{si}]"
                specs = [
                    DimensionSpec(
                        tar.element(sp["dim"]),
                        sp["lower"],
                        sp["upper"],
                        sp["kind"],
                        dataset(sp["data"], f"{sw}.specs") if sp["data"] else None,
                    )
                    for sp in _req(s, "specs", sw)
                ]
                bindings = {k: dataset(v, f"{sw}.bindings.{k}") for k, v in _req(s, "bindings", sw).items()}
                tar, _ = attach_subtar(tar, specs, bindings)
            tars[tar.name] = tar
        links = tuple(Link((l[0], l[1]), (l[2], l[3])) for l in _req(data, "links", ""))
        schema = TarSchema(data.get("schema", "default"), tars, frozenset(_req(data, "roles", "")), types, links)
    except CorruptCatalog:
        raise
    except (SavimeError, KeyError, TypeError, ValueError, IndexError) as exc:
        raise CorruptCatalog("tars", f"{type(exc).__name__}: {exc}") from exc
    return Catalog(store, schema, path)


def load_catalog(path, store: DatasetStore) -> Catalog:
    """Load a catalog file; an absent file yields a fresh, empty catalog."""
    path = Path(path)
    if not path.exists():
        return Catalog(store, TarSchema(), path)
    try:
        data = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise CorruptCatalog("$", f"cannot parse {path}: {exc}") from exc
    return catalog_from_dict(data, store, path)
