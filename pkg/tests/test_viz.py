import numpy as np
import pytest

from savime.engine import Engine
from savime.errors import AdjacencyNotExportable, DanglingPointId, MissingSelector, TypeMismatch, TypeViolation
from savime.layout import ordered, total
from savime.query import parse
from savime.schema import Implicit, attribute, dimension
from savime.viz import MeshBundle, define_standard_types, export_vtk, parse_vtk

COORDS = [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.1 + 0.2, 1.0 / 3.0, -2.5e-17)]


def lit(catalog, name, etype, values):
    return catalog.create_dataset_literal(name, etype, values)


def triangle(catalog, field_ids=(0, 1, 2), point_ids=(0, 1, 2)):
    """G (3 points), T (1 triangle) and F (one scalar per point)."""
    define_standard_types(catalog)
    p = dimension("p", "int64", Implicit(0, 9, 1))
    catalog.define_tar("G", "cartesian_geometry", [p], [attribute(a, "float64") for a in "xyz"],
                       {"p": "id", "x": "x", "y": "y", "z": "z"})
    catalog.attach_subtar("G", [ordered(p, 0, 2)], {a: lit(catalog, f"g{a}", "float64", [c[k] for c in COORDS]) for k, a in enumerate("xyz")})
    c = dimension("c", "int64", Implicit(0, 9, 1))
    v = dimension("k", "int64", Implicit(0, 3, 1))
    catalog.define_tar("T", "incident_topology", [c, v], [attribute("pt", "int64")], {"c": "cell", "k": "vertex", "pt": "point"})
    catalog.attach_subtar("T", [ordered(c, 0, 0), ordered(v, 0, 2)], {"pt": lit(catalog, "tp", "int64", list(point_ids))})
    f = dimension("q", "int64", Implicit(0, 99, 1))
    catalog.define_tar("F", "time_field", [f], [attribute("pressure", "float64")], {"q": "id", "pressure": "value"})
    catalog.attach_subtar("F", [total(f, 0, 99, lit(catalog, "fi", "int64", list(field_ids)))],
                          {"pressure": lit(catalog, "fv", "float64", [1.5, -2.0, np.pi])})
    return catalog


def bundle(catalog, **selectors):
    return MeshBundle.from_tars(catalog.tar("G"), catalog.tar("T"), [catalog.tar("F")], selectors)


def test_minimal_triangle(catalog, tmp_path):
    triangle(catalog)
    summary = export_vtk(bundle(catalog), tmp_path / "m.vtk")
    assert (summary.points, summary.cells, summary.fields) == (3, 1, 1)
    text = (tmp_path / "m.vtk").read_text()
    lines = text.splitlines()
    assert lines[:5] == ["# vtk DataFile Version 3.0", "savime mesh export", "ASCII", "DATASET UNSTRUCTURED_GRID", "POINTS 3 double"]
    assert "CELLS 1 4" in lines and "3 0 1 2" in lines and "CELL_TYPES 1" in lines
    assert lines.index("POINT_DATA 3") < lines.index("SCALARS pressure double 1") < lines.index("LOOKUP_TABLE default")


def test_export_is_deterministic_and_round_trips(catalog, tmp_path):
    triangle(catalog)
    export_vtk(bundle(catalog), tmp_path / "a.vtk")
    export_vtk(bundle(catalog), tmp_path / "b.vtk")
    raw = (tmp_path / "a.vtk").read_bytes()
    assert raw == (tmp_path / "b.vtk").read_bytes()
    vtk = parse_vtk(raw.decode("ascii"))
    assert vtk.points.tolist() == [list(c) for c in COORDS]
    assert vtk.cells == [[0, 1, 2]] and vtk.cell_types == [5]
    assert vtk.point_data["pressure"].tolist() == [1.5, -2.0, np.pi]


def test_points_in_ascending_id_order(catalog, tmp_path):
    triangle(catalog, field_ids=(2, 0, 1), point_ids=(2, 1, 0))
    export_vtk(bundle(catalog), tmp_path / "m.vtk")
    vtk = parse_vtk((tmp_path / "m.vtk").read_text())
    assert vtk.cells == [[2, 1, 0]]
    assert vtk.point_data["pressure"].tolist() == [-2.0, np.pi, 1.5]


def test_dangling_field_id(catalog, tmp_path):
    triangle(catalog, field_ids=(0, 1, 7))
    with pytest.raises(DanglingPointId):
        export_vtk(bundle(catalog), tmp_path / "m.vtk")
    assert not (tmp_path / "m.vtk").exists()


def test_dangling_topology_id(catalog, tmp_path):
    triangle(catalog, point_ids=(0, 1, 5))
    with pytest.raises(DanglingPointId):
        export_vtk(bundle(catalog), tmp_path / "m.vtk")


def test_time_varying_geometry_needs_selector(catalog, tmp_path):
    define_standard_types(catalog)
    p = dimension("p", "int64", Implicit(0, 2, 1))
    t = dimension("t", "int64", Implicit(0, 1, 1))
    catalog.define_tar("G", "cartesian_geometry", [t, p], [attribute(a, "float64") for a in "xyz"],
                       {"p": "id", "x": "x", "y": "y", "z": "z", "t": "time"})
    xs = [0.0, 1.0, 0.0, 0.0, 2.0, 0.0]
    catalog.attach_subtar("G", [ordered(t, 0, 1), ordered(p, 0, 2)],
                          {"x": lit(catalog, "gx", "float64", xs), "y": lit(catalog, "gy", "float64", [0, 0, 1] * 2),
                           "z": lit(catalog, "gz", "float64", [0.0] * 6)})
    c = dimension("c", "int64", Implicit(0, 0, 1))
    k = dimension("k", "int64", Implicit(0, 2, 1))
    catalog.define_tar("T", "incident_topology", [c, k], [attribute("pt", "int64")], {"c": "cell", "k": "vertex", "pt": "point"})
    catalog.attach_subtar("T", [ordered(c, 0, 0), ordered(k, 0, 2)], {"pt": lit(catalog, "tp", "int64", [0, 1, 2])})
    b = MeshBundle.from_tars(catalog.tar("G"), catalog.tar("T"))
    with pytest.raises(MissingSelector):
        export_vtk(b, tmp_path / "m.vtk")
    b = MeshBundle.from_tars(catalog.tar("G"), catalog.tar("T"), selectors={"time": 1})
    export_vtk(b, tmp_path / "m.vtk")
    assert parse_vtk((tmp_path / "m.vtk").read_text()).points[1].tolist() == [2.0, 0.0, 0.0]


def test_adjacency_not_exportable(catalog, tmp_path):
    triangle(catalog)
    a = dimension("a", "int64", Implicit(0, 2, 1))
    catalog.define_tar("N", "adjacency_topology", [a], [attribute("nb", "int64")], {"a": "point", "nb": "neighbor"})
    b = MeshBundle.from_tars(catalog.tar("G"), catalog.tar("N"))
    with pytest.raises(AdjacencyNotExportable):
        export_vtk(b, tmp_path / "m.vtk")


def test_untyped_tar_rejected(catalog):
    triangle(catalog)
    catalog.define_tar("U", None, [dimension("u", "int64", Implicit(0, 1, 1))], [])
    with pytest.raises(TypeViolation):
        MeshBundle.from_tars(catalog.tar("U"), catalog.tar("T"))


class TestCatalyze:
    def test_matches_direct_export(self, catalog, tmp_path):
        triangle(catalog)
        export_vtk(bundle(catalog), tmp_path / "direct.vtk")
        out = tmp_path / "q.vtk"
        plan = parse(f'catalyze(G, T, F, "{out}")', catalog.schema)
        table = Engine(catalog).run(plan).table()
        assert table["points"].tolist() == [3] and table["cells"].tolist() == [1]
        assert out.read_bytes() == (tmp_path / "direct.vtk").read_bytes()

    def test_type_preserving_where_upstream(self, catalog, tmp_path):
        triangle(catalog)
        out = tmp_path / "q.vtk"
        plan = parse(f'catalyze(where(G, x >= 0), T, where(F, pressure > -10), "{out}")', catalog.schema)
        Engine(catalog).run(plan).table()
        assert parse_vtk(out.read_text()).points.shape == (3, 3)

    def test_untyped_input_rejected_at_plan_time(self, catalog, tmp_path):
        triangle(catalog)
        with pytest.raises(TypeMismatch):
            parse(f'catalyze(select(G, p, x, y), T, "{tmp_path / "q.vtk"}")', catalog.schema)


def test_parser_rejects_inconsistent_files():
    good = "# vtk DataFile Version 3.0\nt\nASCII\nDATASET UNSTRUCTURED_GRID\nPOINTS 1 double\n0 0 0\nCELLS 0 0\nCELL_TYPES 0\n"
    parse_vtk(good)
    for bad in [good.replace("CELLS 0 0", "CELLS 0 1"), good.replace("POINTS 1", "POINTS 2"), good.replace("ASCII", "BINARY")]:
        with pytest.raises(ValueError):
            parse_vtk(bad)
