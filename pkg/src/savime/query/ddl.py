"""Data definition statements, written with the same call syntax as queries::

    create_type(cartesian_geometry, mandatory(id, x, y, z), optional(time, trial))
    create_dataset(xs, float64, "/data/xs.bin")
    create_dataset(ix, int64, values(1, 2, 3))
    create_tar(A, none, dim(x, int64, 0, 9, 1), dim(y, float64, ix), att(v, float64), role(x, id))
    load_subtar(A, ordered(x, 0, 4), partial(y, 0, 9, present), bind(v, vs))
    create_link(field, point, geometry, point)
    drop_tar(A)
    drop_dataset(xs)
"""
from __future__ import annotations

from ..catalog import Catalog
from ..errors import ArityError, QueryError, TypeMismatch
from ..layout import DimensionSpec, ORDERED, PARTIAL, TOTAL
from ..schema import Explicit, Implicit, attribute, dimension
from . import ast
from .ast import to_text
from .plan import Planner


def _ident(node: ast.Node, what: str) -> str:
    return Planner.ident(node, what)


def _num(node: ast.Node, what: str):
    return Planner.number(node, what)


def _sub(node: ast.Node, names: tuple[str, ...], what: str) -> ast.Call:
    if not isinstance(node, ast.Call) or node.name not in names:
        raise TypeMismatch(f"{what}: expected one of {', '.join(n + '(...)' for n in names)}, got {to_text(node)}")
    return node


def execute_ddl(call: ast.Call, catalog: Catalog) -> str:
    """Apply one DDL statement to ``catalog`` and return a short status line."""
    handler = globals().get(f"_ddl_{call.name}")
    if handler is None:
        raise QueryError(f"unknown DDL statement {call.name!r}")
    return handler(call, catalog)


def _ddl_create_type(call: ast.Call, catalog: Catalog) -> str:
    Planner.arity(call, 1, 3)
    name = _ident(call.args[0], "type name")
    sets = {"mandatory": [], "optional": []}
    for a in call.args[1:]:
        part = _sub(a, ("mandatory", "optional"), "create_type")
        sets[part.name] = [_ident(r, "role") for r in part.args]
    catalog.define_type(name, sets["mandatory"], sets["optional"])
    return f"type {name} created"


def _ddl_create_tar(call: ast.Call, catalog: Catalog) -> str:
    Planner.arity(call, 3)
    name = _ident(call.args[0], "TAR name")
    type_name = _ident(call.args[1], "type name")
    type_name = None if type_name.lower() == "none" else type_name
    dims, atts, roles = [], [], {}
    for a in call.args[2:]:
        part = _sub(a, ("dim", "att", "role"), "create_tar")
        if part.name == "dim":
            Planner.arity(part, 3, 5)
            dname = _ident(part.args[0], "dimension name")
            etype = _ident(part.args[1], "element type")
            if len(part.args) == 3:
                ds = catalog.dataset(_ident(part.args[2], "index dataset"))
                dims.append(dimension(dname, etype, Explicit(ds)))
            else:
                bounds = [_num(v, "domain bound") for v in part.args[2:]]
                dims.append(dimension(dname, etype, Implicit(*bounds)))
        elif part.name == "att":
            Planner.arity(part, 2, 2)
            atts.append(attribute(_ident(part.args[0], "attribute name"), _ident(part.args[1], "element type")))
        else:
            Planner.arity(part, 2, 2)
            roles[_ident(part.args[0], "element")] = _ident(part.args[1], "role")
    catalog.define_tar(name, type_name, dims, atts, roles)
    return f"tar {name} created"


def _ddl_create_dataset(call: ast.Call, catalog: Catalog) -> str:
    Planner.arity(call, 3, 3)
    name = _ident(call.args[0], "dataset name")
    etype = _ident(call.args[1], "element type")
    src = call.args[2]
    if isinstance(src, ast.Str):
        ds = catalog.create_dataset(name, src.value, etype)
    else:
        vals = _sub(src, ("values",), "create_dataset")
        ds = catalog.create_dataset_literal(name, etype, [_num(v, "dataset value") for v in vals.args])
    return f"dataset {name} created with {ds.length} cells"


def _ddl_load_subtar(call: ast.Call, catalog: Catalog) -> str:
    Planner.arity(call, 2)
    tar = catalog.tar(_ident(call.args[0], "TAR name"))
    specs, bindings = [], {}
    for a in call.args[1:]:
        part = _sub(a, ("ordered", "partial", "total", "bind"), "load_subtar")
        if part.name == "bind":
            Planner.arity(part, 2, 2)
            bindings[_ident(part.args[0], "attribute")] = catalog.dataset(_ident(part.args[1], "dataset"))
            continue
        kind = {"ordered": ORDERED, "partial": PARTIAL, "total": TOTAL}[part.name]
        n = 3 if kind == ORDERED else 4
        Planner.arity(part, n, n)
        dim = tar.element(_ident(part.args[0], "dimension"))
        lo, hi = _num(part.args[1], "lower index"), _num(part.args[2], "upper index")
        if not (isinstance(lo, int) and isinstance(hi, int)):
            raise TypeMismatch("subTAR bounds are integer real indexes")
        data = catalog.dataset(_ident(part.args[3], "index dataset")) if kind != ORDERED else None
        specs.append(DimensionSpec(dim, lo, hi, kind, data))
    sub = catalog.attach_subtar(tar.name, specs, bindings)
    return f"subtar loaded into {tar.name} with {sub.length} cells"


def _ddl_drop_tar(call: ast.Call, catalog: Catalog) -> str:
    Planner.arity(call, 1, 1)
    name = _ident(call.args[0], "TAR name")
    catalog.drop_tar(name)
    return f"tar {name} dropped"


def _ddl_drop_dataset(call: ast.Call, catalog: Catalog) -> str:
    Planner.arity(call, 1, 1)
    name = _ident(call.args[0], "dataset name")
    catalog.drop_dataset(name)
    return f"dataset {name} dropped"


def _ddl_create_link(call: ast.Call, catalog: Catalog) -> str:
    if len(call.args) != 4:
        raise ArityError("create_link() takes left TAR, left element, right TAR, right element")
    a, b, c, d = (_ident(x, "link endpoint") for x in call.args)
    catalog.define_link((a, b), (c, d))
    return f"link {a}.{b} -> {c}.{d} created"
