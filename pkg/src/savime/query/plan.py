"""Query plans: operator-node DAGs with an output schema fixed for every node."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Iterator

from ..errors import (
    ArityError,
    BoundsError,
    DuplicateTar,
    IncomparableDimensions,
    ProjectionError,
    QueryError,
    TypeMismatch,
)
from ..schema import DataElement, Implicit, Tar, TarSchema, attribute, dimension, propagate_type
from ..storage import is_integer_type
from . import ast, expr
from .ast import to_text
from .parser import parse_text

AGG_FUNCTIONS = ("avg", "sum", "min", "max", "count")
QUERY_OPS = ("select", "where", "subset", "derive", "cross_join", "dimjoin", "aggregate", "catalyze", "materialize")
ALIASES = {"crossjoin": "cross_join", "dim_join": "dimjoin", "project": "select", "filter": "where"}
DDL_OPS = ("create_type", "create_tar", "create_dataset", "load_subtar", "drop_tar", "drop_dataset", "create_link")

GEOMETRY_TYPE = "cartesian_geometry"
TOPOLOGY_TYPES = ("incident_topology", "adjacency_topology")
FIELD_TYPE = "time_field"

# Single-cell dimension used by grand-total aggregations and summaries.
UNIT_DIM = "i"


def unit_dimension() -> DataElement:
    return dimension(UNIT_DIM, "int32", Implicit(0, 0, 1))


class DuplicateElement(QueryError):
    pass


class UnknownFunction(QueryError):
    pass


@dataclass(eq=False)
class PlanNode:
    id: int
    op: str
    inputs: tuple["PlanNode", ...]
    params: dict[str, Any]
    schema: Tar
    # planner-computed details not visible in the query text (e.g. join renames)
    info: dict[str, Any] = field(default_factory=dict)

    def __repr__(self) -> str:
        return f"PlanNode({self.id}, {self.op}, inputs={[n.id for n in self.inputs]})"

    def structure(self) -> tuple:
        params = tuple(sorted((k, _freeze(v)) for k, v in self.params.items()))
        return (self.op, params, tuple(n.structure() for n in self.inputs))


def _freeze(v):
    if isinstance(v, (list, tuple)):
        return tuple(_freeze(x) for x in v)
    if isinstance(v, dict):
        return tuple(sorted((k, _freeze(x)) for k, x in v.items()))
    return v


@dataclass
class QueryPlan:
    root: PlanNode
    nodes: list[PlanNode]
    text: str = ""

    def __iter__(self) -> Iterator[PlanNode]:
        return iter(self.nodes)

    def consumers(self, node: PlanNode) -> list[tuple[PlanNode, int]]:
        return [(c, slot) for c in self.nodes for slot, i in enumerate(c.inputs) if i is node]

    def consumer_count(self, node: PlanNode) -> int:
        n = len(self.consumers(node))
        return n + (1 if node is self.root else 0)

    def structure(self) -> tuple:
        return self.root.structure()

    def pretty(self) -> str:
        return pretty(self.root)

    def check(self) -> None:
        """Assert the DAG invariants: topological order, acyclic, single root."""
        seen: set[int] = set()
        for n in self.nodes:
            for i in n.inputs:
                if i.id not in seen:
                    raise QueryError(f"node {n.id} consumes {i.id} before it is defined")
            seen.add(n.id)
        sinks = [n for n in self.nodes if not self.consumers(n)]
        if sinks != [self.root]:
            raise QueryError(f"plan must have exactly one root, found {[n.id for n in sinks]}")


# -- pretty printing -------------------------------------------------------------

def _num(v) -> str:
    return to_text(ast.Num(v))


def pretty(node: PlanNode) -> str:
    p = node.params
    ins = [pretty(i) for i in node.inputs]
    if node.op == "scan":
        return p["tar"]
    if node.op == "select":
        args = ins + list(p["elements"])
    elif node.op == "where":
        args = ins + [to_text(p["predicate"])]
    elif node.op == "subset":
        args = ins + [f"{d}, {_num(lo)}, {_num(hi)}" for d, lo, hi in p["bounds"]]
    elif node.op == "derive":
        args = ins + [p["name"], to_text(p["expr"])]
    elif node.op == "cross_join":
        args = ins
    elif node.op == "dimjoin":
        args = ins + [f"{l}, {r}" for l, r in p["pairs"]]
    elif node.op == "aggregate":
        args = ins + [p["fn"], p["target"], p["out"], *p["groups"]]
    elif node.op == "catalyze":
        args = ins + [to_text(ast.Str(p["path"]))] + [f"at({r}, {_num(v)})" for r, v in p["selectors"]]
    elif node.op == "materialize":
        args = ins + [p["name"]]
    else:
        raise QueryError(f"cannot print operator {node.op!r}")
    return f"{node.op}({', '.join(args)})"


# -- planning ---------------------------------------------------------------------

def join_renames(left: Tar, right: Tar, right_drop: set[str] = frozenset()) -> tuple[dict, dict]:
    lnames = [e.name for e in left.elements]
    rnames = [e.name for e in right.elements if e.name not in right_drop]
    clash = set(lnames) & set(rnames)
    lmap = {n: (f"left.{n}" if n in clash else n) for n in lnames}
    rmap = {n: (f"right.{n}" if n in clash else n) for n in rnames}
    return lmap, rmap


class Planner:
    """Turns a syntax tree into a :class:`QueryPlan`, inferring every schema."""

    def __init__(self, schema: TarSchema):
        self.schema = schema
        self.nodes: list[PlanNode] = []
        self.scans: dict[str, PlanNode] = {}
        self._ids = itertools.count()

    def plan(self, tree: ast.Node, text: str = "") -> QueryPlan:
        root = self.query(tree)
        plan = QueryPlan(root, list(self.nodes), text)
        plan.check()
        return plan

    def _node(self, op: str, inputs, params, schema: Tar, **info) -> PlanNode:
        node = PlanNode(next(self._ids), op, tuple(inputs), params, schema, info)
        self.nodes.append(node)
        return node

    def _output(self, name: str, elements, ttype=None, roles=None) -> Tar:
        dims = [e for e in elements if e.is_dimension]
        atts = [e for e in elements if not e.is_dimension]
        names = [e.name for e in dims + atts]
        clash = sorted({n for n in names if names.count(n) > 1})
        if clash:
            raise DuplicateElement(f"output of {name} would repeat elements {clash}")
        return Tar(name, tuple(dims + atts), (), ttype, roles or {})

    # -- argument helpers -------------------------------------------------------

    def query(self, node: ast.Node) -> PlanNode:
        if isinstance(node, ast.Ref):
            if node.name not in self.scans:
                tar = self.schema.tar(node.name)
                self.scans[node.name] = self._node("scan", (), {"tar": node.name}, tar)
            return self.scans[node.name]
        if isinstance(node, ast.Call):
            op = ALIASES.get(node.name, node.name)
            if op in QUERY_OPS:
                return getattr(self, f"op_{op}")(node)
            if op in DDL_OPS:
                raise TypeMismatch(f"DDL statement {op}() cannot be used as a query input")
            raise UnknownFunction(f"unknown operator {node.name!r}")
        raise TypeMismatch(f"expected a TAR or a query, got {to_text(node)}")

    @staticmethod
    def ident(node: ast.Node, what: str) -> str:
        if not isinstance(node, ast.Ref):
            raise TypeMismatch(f"{what} must be an identifier, got {to_text(node)}")
        return node.name

    @staticmethod
    def number(node: ast.Node, what: str):
        if not isinstance(node, ast.Num):
            raise TypeMismatch(f"{what} must be a numeric literal, got {to_text(node)}")
        return node.value

    @staticmethod
    def arity(call: ast.Call, low: int, high: int | None = None) -> None:
        n = len(call.args)
        if n < low or (high is not None and n > high):
            want = f"{low}" if high == low else f"{low}..{high if high is not None else ''}"
            raise ArityError(f"{call.name}() takes {want} arguments, got {n}")

    def _name(self, op: str) -> str:
        return f"_{op}{len(self.nodes)}"

    # -- operators ---------------------------------------------------------------

    def op_select(self, call: ast.Call) -> PlanNode:
        self.arity(call, 2)
        src = self.query(call.args[0])
        tar = src.schema
        wanted = [self.ident(a, "select element") for a in call.args[1:]]
        for w in wanted:
            tar.element(w)
        keep = [e for e in tar.elements if e.name in wanted]
        if not any(e.is_dimension for e in keep):
            raise ProjectionError("select must keep at least one dimension")
        for d in tar.dimensions:
            if d.name not in wanted and d.domain.cardinality != 1:
                raise ProjectionError(
                    f"dropping dimension {d.name!r} could merge cells; only single-valued dimensions can be dropped"
                )
        ttype, roles = propagate_type(tar, {e.name: e.name for e in keep})
        elements = tuple(dict.fromkeys(wanted))
        out = self._output(self._name("select"), keep, ttype, roles)
        return self._node("select", [src], {"elements": elements}, out)

    def op_where(self, call: ast.Call) -> PlanNode:
        self.arity(call, 2, 2)
        src = self.query(call.args[0])
        pred = call.args[1]
        if expr.infer(pred, src.schema) != expr.BOOL:
            raise TypeMismatch("where() needs a boolean predicate")
        tar = src.schema
        out = self._output(self._name("where"), tar.elements, tar.type, tar.roles)
        return self._node("where", [src], {"predicate": pred}, out)

    def op_subset(self, call: ast.Call) -> PlanNode:
        self.arity(call, 4)
        if (len(call.args) - 1) % 3:
            raise ArityError("subset() takes the input followed by (dimension, lower, upper) triples")
        src = self.query(call.args[0])
        tar = src.schema
        bounds = []
        seen = set()
        for k in range(1, len(call.args), 3):
            d = self.ident(call.args[k], "subset dimension")
            if not tar.element(d).is_dimension:
                raise TypeMismatch(f"subset bounds must name dimensions, {d!r} is an attribute")
            if d in seen:
                raise QueryError(f"dimension {d!r} bounded twice")
            seen.add(d)
            lo = self.number(call.args[k + 1], "subset lower bound")
            hi = self.number(call.args[k + 2], "subset upper bound")
            if lo > hi:
                raise BoundsError(f"lower bound {lo} above upper bound {hi} on {d!r}")
            bounds.append((d, lo, hi))
        out = self._output(self._name("subset"), tar.elements, tar.type, tar.roles)
        return self._node("subset", [src], {"bounds": tuple(bounds)}, out)

    def op_derive(self, call: ast.Call) -> PlanNode:
        self.arity(call, 3, 3)
        src = self.query(call.args[0])
        tar = src.schema
        name = self.ident(call.args[1], "derived attribute name")
        if tar.has_element(name):
            raise DuplicateElement(f"{tar.name!r} already has an element {name!r}")
        kind = expr.infer(call.args[2], tar)
        if kind == expr.BOOL:
            raise TypeMismatch("derive() needs an arithmetic expression")
        new = attribute(name, "int64" if kind == expr.INT else "float64")
        out = self._output(self._name("derive"), tar.elements + (new,), tar.type, tar.roles)
        return self._node("derive", [src], {"name": name, "expr": call.args[2]}, out)

    def op_cross_join(self, call: ast.Call) -> PlanNode:
        self.arity(call, 2, 2)
        left, right = self.query(call.args[0]), self.query(call.args[1])
        lmap, rmap = join_renames(left.schema, right.schema)
        elements = [e.renamed(lmap[e.name]) for e in left.schema.dimensions]
        elements += [e.renamed(rmap[e.name]) for e in right.schema.dimensions]
        elements += [e.renamed(lmap[e.name]) for e in left.schema.attributes]
        elements += [e.renamed(rmap[e.name]) for e in right.schema.attributes]
        ttype, roles = propagate_type(left.schema, lmap)
        out = self._output(self._name("cross_join"), elements, ttype, roles)
        return self._node("cross_join", [left, right], {}, out, left_names=lmap, right_names=rmap)

    def op_dimjoin(self, call: ast.Call) -> PlanNode:
        self.arity(call, 4)
        if len(call.args) % 2:
            raise ArityError("dimjoin() takes two inputs followed by (left_dim, right_dim) pairs")
        left, right = self.query(call.args[0]), self.query(call.args[1])
        lt, rt = left.schema, right.schema
        pairs = []
        for k in range(2, len(call.args), 2):
            ld = self.ident(call.args[k], "left join dimension")
            rd = self.ident(call.args[k + 1], "right join dimension")
            le, re_ = lt.element(ld), rt.element(rd)
            if not (le.is_dimension and re_.is_dimension):
                raise TypeMismatch(f"dimjoin pairs must be dimensions: {ld!r}, {rd!r}")
            if le.element_type != re_.element_type:
                raise IncomparableDimensions(
                    f"{ld!r} is {le.element_type} but {rd!r} is {re_.element_type}"
                )
            pairs.append((ld, rd))
        if len({l for l, _ in pairs}) != len(pairs) or len({r for _, r in pairs}) != len(pairs):
            raise QueryError("a dimension may appear in only one dimjoin pair")
        paired_right = {r for _, r in pairs}
        lmap, rmap = join_renames(lt, rt, paired_right)
        elements = [e.renamed(lmap[e.name]) for e in lt.dimensions]
        elements += [e.renamed(rmap[e.name]) for e in rt.dimensions if e.name not in paired_right]
        elements += [e.renamed(lmap[e.name]) for e in lt.attributes]
        elements += [e.renamed(rmap[e.name]) for e in rt.attributes]
        ttype, roles = propagate_type(lt, lmap)
        out = self._output(self._name("dimjoin"), elements, ttype, roles)
        return self._node("dimjoin", [left, right], {"pairs": tuple(pairs)}, out, left_names=lmap, right_names=rmap)

    def op_aggregate(self, call: ast.Call) -> PlanNode:
        self.arity(call, 4)
        src = self.query(call.args[0])
        tar = src.schema
        fn = self.ident(call.args[1], "aggregation function").lower()
        if fn not in AGG_FUNCTIONS:
            raise UnknownFunction(f"unknown aggregation function {fn!r}; expected one of {AGG_FUNCTIONS}")
        target = self.ident(call.args[2], "aggregation target")
        target_type = tar.element(target).element_type
        out_name = self.ident(call.args[3], "aggregate output name")
        groups = tuple(self.ident(a, "group dimension") for a in call.args[4:])
        for g in groups:
            if not tar.element(g).is_dimension:
                raise TypeMismatch(f"aggregate can only group by dimensions, {g!r} is an attribute")
        if len(set(groups)) != len(groups):
            raise QueryError("duplicate group dimension")
        if fn == "count":
            out_type = "int64"
        elif fn == "avg":
            out_type = "float64"
        elif fn == "sum":
            out_type = "int64" if is_integer_type(target_type) else "float64"
        else:
            out_type = target_type
        dims = [tar.element(g) for g in groups] or [unit_dimension()]
        if out_name in {d.name for d in dims}:
            raise DuplicateElement(f"aggregate output {out_name!r} clashes with a dimension")
        ttype, roles = propagate_type(tar, {g: g for g in groups})
        out = self._output(self._name("aggregate"), dims + [attribute(out_name, out_type)], ttype, roles)
        params = {"fn": fn, "target": target, "out": out_name, "groups": groups}
        return self._node("aggregate", [src], params, out)

    def op_catalyze(self, call: ast.Call) -> PlanNode:
        inputs, path, selectors = [], None, []
        for a in call.args:
            if isinstance(a, ast.Str):
                if path is not None:
                    raise ArityError("catalyze() takes a single output path")
                path = a.value
            elif isinstance(a, ast.Call) and a.name == "at":
                self.arity(a, 2, 2)
                selectors.append((self.ident(a.args[0], "selector role"), self.number(a.args[1], "selector value")))
            elif path is None:
                inputs.append(self.query(a))
            else:
                raise ArityError("catalyze() inputs must precede the output path")
        if path is None or len(inputs) < 2:
            raise ArityError("catalyze() takes geometry, topology, fields... and an output path")
        self._require_type(inputs[0], (GEOMETRY_TYPE,))
        self._require_type(inputs[1], TOPOLOGY_TYPES)
        for f in inputs[2:]:
            self._require_type(f, (FIELD_TYPE,))
        out = self._output(
            self._name("catalyze"),
            [unit_dimension(), attribute("points", "int64"), attribute("cells", "int64"), attribute("fields", "int64")],
        )
        return self._node("catalyze", inputs, {"path": path, "selectors": tuple(selectors)}, out)

    @staticmethod
    def _require_type(node: PlanNode, names: tuple[str, ...]) -> None:
        t = node.schema.type
        if t is None or t.name not in names:
            got = t.name if t else "no type"
            raise TypeMismatch(f"{node.schema.name!r} has {got}, catalyze expects {' or '.join(names)}")

    def op_materialize(self, call: ast.Call) -> PlanNode:
        self.arity(call, 2, 2)
        src = self.query(call.args[0])
        name = self.ident(call.args[1], "materialized TAR name")
        if name in self.schema.tars:
            raise DuplicateTar(f"TAR {name!r} already exists")
        tar = src.schema
        out = Tar(name, tar.elements, (), tar.type, tar.roles)
        return self._node("materialize", [src], {"name": name}, out)


def is_ddl(tree: ast.Node) -> bool:
    return isinstance(tree, ast.Call) and tree.name in DDL_OPS


def build_plan(tree: ast.Node, schema: TarSchema, text: str = "") -> QueryPlan:
    return Planner(schema).plan(tree, text)


def optimize(plan: QueryPlan) -> QueryPlan:
    """Plan rewriting hook; plans are currently executed as written."""
    return plan


def parse(text: str, schema: TarSchema) -> QueryPlan:
    tree = parse_text(text)
    if is_ddl(tree):
        raise TypeMismatch(f"{tree.name}() is a DDL statement, not a query")
    return optimize(build_plan(tree, schema, text))


def infer_output_schema(node: PlanNode) -> Tar:
    return node.schema
