import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import gen
from savime.db import Database, DdlResult
from savime.errors import (
    ArityError,
    BoundsError,
    DuplicateTar,
    IncomparableDimensions,
    ProjectionError,
    QuerySyntaxError,
    TypeMismatch,
    UnknownDataset,
    UnknownElement,
    UnknownTar,
)
from savime.layout import ordered
from savime.query import ast, build_plan, parse, parse_script, parse_text, to_text
from savime.query.lexer import EOF, tokenize
from savime.query.plan import DuplicateElement, UnknownFunction
from savime.schema import Implicit, attribute, dimension


@pytest.fixture
def ab(catalog):
    """A(i; v) and B(j; w) with typed A."""
    catalog.define_type("t", ["key", "val"], ["extra"])
    i = dimension("i", "int64", Implicit(0, 9, 1))
    j = dimension("j", "int64", Implicit(0, 9, 1))
    catalog.define_tar("A", "t", [i], [attribute("v", "float64"), attribute("u", "int64")], {"i": "key", "v": "val"})
    catalog.define_tar("B", None, [j], [attribute("w", "float64")])
    catalog.attach_subtar("A", [ordered(i, 0, 9)], {
        "v": catalog.create_dataset_literal("av", "float64", np.arange(10.0) - 3),
        "u": catalog.create_dataset_literal("au", "int64", range(10)),
    })
    catalog.attach_subtar("B", [ordered(j, 0, 9)], {"w": catalog.create_dataset_literal("bw", "float64", np.arange(10.0))})
    return catalog


class TestParser:
    def test_precedence(self):
        tree = parse_text("a + b * c > 1 and not d < 2 or e = 3")
        assert to_text(tree) == "((((a + (b * c)) > 1) and (not (d < 2))) or (e = 3))"

    def test_literals(self):
        tree = parse_text('f(1, 2.5, 1e3, "x\\"y", true, FALSE, -4)')
        assert [type(a).__name__ for a in tree.args] == ["Num", "Num", "Num", "Str", "Bool", "Bool", "Num"]
        assert tree.args[3].value == 'x"y' and tree.args[6].value == -4 and tree.args[2].value == 1000.0

    def test_case_insensitive_keywords_and_names(self):
        assert parse_text("WHERE(A, v > 0 AND NOT u = 1)") == parse_text("where(A, v > 0 and not u = 1)")

    def test_dotted_identifiers(self):
        assert parse_text("left.x").name == "left.x"

    def test_script(self):
        assert len(parse_script("select(A, i); where(A, v > 0);")) == 2
        assert parse_script("# only a comment\n") == []

    @pytest.mark.parametrize("text, pos", [("select(A, v", 11), ("select(A,, v)", 9), ("3x", 0), ("a @ b", 2), ('"abc', 0), ("f(1) g", 5)])
    def test_syntax_error_positions(self, text, pos):
        with pytest.raises(QuerySyntaxError) as info:
            parse_text(text)
        assert info.value.position == pos

    @settings(max_examples=300, deadline=None)
    @given(st.integers(0, 10**6))
    def test_to_text_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        tree = random_expr(rng, 4)
        assert parse_text(to_text(tree)) == tree


def random_expr(rng, depth):
    if depth == 0 or rng.random() < 0.25:
        r = rng.random()
        if r < 0.4:
            return ast.Ref(str(rng.choice(["a", "b", "left.c"])))
        if r < 0.7:
            return ast.Num(int(rng.integers(-50, 50)))
        if r < 0.9:
            return ast.Num(float(rng.normal()))
        return ast.Bool(bool(rng.random() < 0.5))
    r = rng.random()
    if r < 0.15:
        op, operand = str(rng.choice(["not", "-"])), random_expr(rng, depth - 1)
        if op == "-" and isinstance(operand, ast.Num):
            return ast.Num(-operand.value)  # the parser folds negated literals
        return ast.Unary(op, operand)
    if r < 0.3:
        return ast.Call("f", tuple(random_expr(rng, depth - 1) for _ in range(int(rng.integers(0, 3)))))
    op = str(rng.choice(list(ast.COMPARISONS + ast.ARITHMETIC + ast.LOGICAL)))
    return ast.Binary(op, random_expr(rng, depth - 1), random_expr(rng, depth - 1))


VALID = [
    "aggregate(dimjoin(where(A, v > 0), B, i, j), avg, v, m, i)",
    "select(A, i, v)",
    "subset(derive(A, z, v * 2 + u), i, 2, 7)",
    'catalyze(G, T, "out.vtk", at(time, 3))',
    "cross_join(where(A, (u <> 0) and (v / u > 1)), B)",
]


@pytest.mark.parametrize("bad", ["@", "$", "?", "!", "`", "~"])
@pytest.mark.parametrize("text", VALID)
def test_corrupted_token_error_offsets(text, bad):
    tokens = [t for t in tokenize(text) if t.kind != EOF]
    for tok in tokens:
        corrupted = text[:tok.pos] + bad + text[tok.end:]
        with pytest.raises(QuerySyntaxError) as info:
            parse_text(corrupted)
        assert tok.pos <= info.value.position < tok.pos + len(bad)


@pytest.mark.parametrize("text", VALID)
def test_error_never_precedes_corruption(text):
    tokens = [t for t in tokenize(text) if t.kind != EOF]
    replacements = ["(", ")", ",", "1", "x", "and", "<", '"s"', ""]
    for tok in tokens:
        for rep in replacements:
            # padded so the replacement cannot fuse with a neighbouring token
            corrupted = text[:tok.pos] + f" {rep} " + text[tok.end:]
            try:
                parse_text(corrupted)
            except QuerySyntaxError as exc:
                assert exc.position >= tok.pos


class TestPlanning:
    def test_paper_nesting(self, ab):
        plan = parse("aggregate(dimjoin(where(A, v > 0), B, i, j), avg, v, m, i)", ab.schema)
        assert [n.op for n in plan.nodes if n.op != "scan"] == ["where", "dimjoin", "aggregate"]
        assert plan.root.op == "aggregate"
        assert plan.root.schema.dim_names == ["i"] and plan.root.schema.att_names == ["m"]

    def test_single_node(self, ab):
        plan = parse("select(A, i, v)", ab.schema)
        assert plan.root.op == "select" and len(plan.nodes) == 2

    def test_unknown_element(self, ab):
        with pytest.raises(UnknownElement):
            parse("where(A, q > 0)", ab.schema)

    def test_errors(self, ab):
        cases = [
            ("where(Z, v > 0)", UnknownTar),
            ("where(A, v + 1)", TypeMismatch),
            ("where(A)", ArityError),
            ("frobnicate(A)", UnknownFunction),
            ("select(A, v)", ProjectionError),
            ("subset(A, i, 5, 2)", BoundsError),
            ("subset(A, v, 1, 2)", TypeMismatch),
            ("aggregate(A, median, v, m)", UnknownFunction),
            ("aggregate(A, sum, v, m, v)", TypeMismatch),
            ("derive(A, v, u + 1)", DuplicateElement),
            ("materialize(A, B)", DuplicateTar),
            ("create_tar(X, none, dim(x, int64, 0, 1, 1))", TypeMismatch),
        ]
        for text, exc in cases:
            with pytest.raises(exc):
                parse(text, ab.schema)

    def test_dimjoin_types_must_match(self, ab):
        x = dimension("x", "float64", Implicit(0.0, 1.0, 0.5))
        ab.define_tar("C", None, [x], [])
        with pytest.raises(IncomparableDimensions):
            parse("dimjoin(A, C, i, x)", ab.schema)

    def test_shared_input_node(self, ab):
        plan = parse("cross_join(where(A, v > 0), subset(A, i, 1, 3))", ab.schema)
        scans = [n for n in plan.nodes if n.op == "scan"]
        assert len(scans) == 1 and len(plan.consumers(scans[0])) == 2

    def test_type_kept_when_mandatory_roles_survive(self, ab):
        kept = parse("select(A, i, v)", ab.schema).root.schema
        assert kept.type.name == "t" and dict(kept.roles) == {"i": "key", "v": "val"}
        dropped = parse("select(A, i, u)", ab.schema).root.schema
        assert dropped.type is None and dict(dropped.roles) == {"i": "key"}

    @pytest.mark.parametrize("op", ["where(A, v > 0)", "subset(A, i, 0, 3)", "derive(A, z, u * 2)"])
    def test_replicating_operators_keep_type(self, ab, op):
        out = parse(op, ab.schema).root.schema
        assert out.type is ab.tar("A").type
        assert [e for e in out.elements][:3] == list(ab.tar("A").elements)

    def test_join_keeps_left_type_and_renames(self, ab):
        out = parse("cross_join(A, A)", ab.schema).root.schema
        assert out.dim_names == ["left.i", "right.i"]
        assert out.att_names == ["left.v", "left.u", "right.v", "right.u"]
        assert out.type.name == "t" and dict(out.roles) == {"left.i": "key", "left.v": "val"}

    def test_derive_typing(self, ab):
        s = parse("derive(derive(derive(A, a, u + 1), b, u / 2), c, u * v)", ab.schema).root.schema
        assert [s.element(n).element_type for n in "abc"] == ["int64", "float64", "float64"]

    def test_aggregate_output_types(self, ab):
        types = {fn: parse(f"aggregate(A, {fn}, u, m)", ab.schema).root.schema.element("m").element_type
                 for fn in ("avg", "sum", "min", "max", "count")}
        assert types == {"avg": "float64", "sum": "int64", "min": "int64", "max": "int64", "count": "int64"}
        assert parse("aggregate(A, sum, v, m)", ab.schema).root.schema.dim_names == ["i"]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6))
def test_pretty_round_trip(tmp_path_factory, seed):
    from savime.catalog import Catalog
    from savime.storage import DatasetStore, StorageConfig

    root = tmp_path_factory.mktemp("rt")
    cat = Catalog(DatasetStore(StorageConfig(root / "d", root / "t")))
    rng = np.random.default_rng(seed)
    gen.random_catalog(cat, rng, n_tars=2, max_card=4)
    tree, _ = gen.Gen(cat, rng, max_product=400).query(int(rng.integers(1, 4)))
    plan = build_plan(tree, cat.schema)
    again = parse(plan.pretty(), cat.schema)
    assert again.structure() == plan.structure()
    assert [n.schema.elements for n in again.nodes] == [n.schema.elements for n in plan.nodes]


class TestDdl:
    def test_script(self, catalog, tmp_path):
        db = Database(catalog)
        np.arange(10.0).tofile(tmp_path / "vs.bin")
        script = f"""
        create_type(pair, mandatory(k), optional(o));
        create_dataset(ix, float64, values(0.5, 1.5, 4.0));
        create_dataset(vs, float64, "{tmp_path / 'vs.bin'}");
        create_dataset(pr, float64, values(1.5, 4.0));
        create_tar(A, pair, dim(x, int64, 0, 4, 1), dim(y, float64, ix), att(v, float64), role(x, k));
        load_subtar(A, ordered(x, 0, 4), partial(y, 0, 2, py), bind(v, vs));
        """
        results = []
        with pytest.raises(UnknownDataset):
            for r in db.script(script):
                results.append(r)
        assert all(isinstance(r, DdlResult) for r in results) and len(results) == 5
        db.execute("create_dataset(py, int64, values(1, 2))")
        status = db.execute("load_subtar(A, ordered(x, 0, 4), partial(y, 0, 2, py), bind(v, vs))").status
        assert status == "subtar loaded into A with 10 cells"
        table = db.execute("where(A, y > 1)").table()
        assert table["y"].tolist() == [1.5, 4.0] * 5
        assert table["v"].tolist() == list(np.arange(10.0))
        assert db.execute("create_link(A, x, A, x)").status.startswith("link")
        assert db.execute("drop_tar(A)").status == "tar A dropped"
        assert db.execute("drop_dataset(vs)").status == "dataset vs dropped"
