import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import gen
from savime.errors import LayoutError, LengthMismatch, MixedTotalSpec, NotInDomain, OutOfBounds, OutsideExtent, OverlapViolation
from savime.layout import (
    TOTAL,
    Region,
    VisitCounter,
    clip_offsets,
    enumerate_cells,
    logical_to_real,
    lookup_subtars,
    ordered,
    partial,
    position_of,
    real_to_logical,
    subtar_column,
    total,
    value_at,
)
from savime.schema import Explicit, Implicit, attribute, dimension

PAPER_VALUES = [1.2, 2.3, 4.7, 7.9, 13.2]


def grid(catalog, n=10, name="A"):
    x = dimension("x", "int64", Implicit(0, n - 1, 1))
    y = dimension("y", "int64", Implicit(0, n - 1, 1))
    catalog.define_tar(name, None, [x, y], [attribute("v", "int64")])
    return x, y


def lit(catalog, name, etype, values):
    return catalog.create_dataset_literal(name, etype, values)


class TestIndexMapping:
    def test_implicit(self):
        d = Implicit(0.0, 10.0, 2.0)
        assert logical_to_real(d, 4.0) == 2
        assert real_to_logical(d, 5) == 10.0
        with pytest.raises(NotInDomain):
            logical_to_real(d, 3.0)
        with pytest.raises(OutOfBounds):
            real_to_logical(d, -1)

    def test_explicit(self, store):
        d = Explicit(store.create_dataset_literal("d", "float64", PAPER_VALUES))
        assert logical_to_real(d, 4.7) == 2
        assert real_to_logical(d, 0) == 1.2
        with pytest.raises(OutOfBounds):
            real_to_logical(d, 5)

    def test_float_grid_snapping(self):
        d = Implicit(-1.0, 1.2, 0.2)
        assert d.cardinality == 12
        assert logical_to_real(d, 0.1 + 0.2 - 0.3 - 1.0 + 0.2) == 1

    @settings(max_examples=2000, deadline=None)
    @given(st.integers(-1000, 1000), st.integers(0, 500), st.sampled_from([1, 2, 3, 0.25, 0.5, 0.1, 1e-3]), st.data())
    def test_implicit_round_trip(self, lower, steps, spacing, data):
        d = Implicit(lower, lower + steps * spacing, spacing)
        k = data.draw(st.integers(0, d.cardinality - 1))
        etype = "int64" if isinstance(spacing, int) else "float64"
        assert logical_to_real(d, real_to_logical(d, k, etype)) == k

    @settings(max_examples=500, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=30, unique=True), st.data())
    def test_explicit_round_trip(self, tmp_path_factory, values, data):
        from savime.storage import DatasetStore, StorageConfig

        root = tmp_path_factory.mktemp("ex")
        store = DatasetStore(StorageConfig(root / "d", root / "t"))
        d = Explicit(store.create_dataset_literal("d", "float64", sorted(values)))
        k = data.draw(st.integers(0, d.cardinality - 1))
        assert logical_to_real(d, real_to_logical(d, k)) == k


class TestAttach:
    def test_identical_extent_overlaps(self, catalog):
        x, y = grid(catalog)
        v = lit(catalog, "v", "int64", range(100))
        catalog.attach_subtar("A", [ordered(x, 0, 9), ordered(y, 0, 9)], {"v": v})
        with pytest.raises(OverlapViolation):
            catalog.attach_subtar("A", [ordered(x, 0, 9), ordered(y, 0, 9)], {"v": v})

    def test_adjacent_extents(self, catalog):
        x, y = grid(catalog)
        v = lit(catalog, "v", "int64", range(50))
        catalog.attach_subtar("A", [ordered(x, 0, 4), ordered(y, 0, 9)], {"v": v})
        catalog.attach_subtar("A", [ordered(x, 5, 9), ordered(y, 0, 9)], {"v": v})
        assert len(catalog.tar("A").subtars) == 2

    def test_length_mismatch(self, catalog):
        x, y = grid(catalog)
        with pytest.raises(LengthMismatch):
            catalog.attach_subtar("A", [ordered(x, 0, 9), ordered(y, 0, 9)], {"v": lit(catalog, "v", "int64", range(99))})

    def test_mixed_total(self, catalog):
        x, y = grid(catalog)
        idx = lit(catalog, "i", "int64", [0, 1])
        with pytest.raises(MixedTotalSpec):
            catalog.attach_subtar("A", [ordered(x, 0, 1), total(y, 0, 1, idx)], {"v": lit(catalog, "v", "int64", [1, 2])})

    def test_total_lengths_must_agree(self, catalog):
        x, y = grid(catalog)
        with pytest.raises(LengthMismatch):
            catalog.attach_subtar(
                "A", [total(x, 0, 1, lit(catalog, "a", "int64", [0, 1])), total(y, 0, 1, lit(catalog, "b", "int64", [0]))],
                {"v": lit(catalog, "v", "int64", [1])},
            )

    def test_index_outside_extent(self, catalog):
        x, y = grid(catalog)
        with pytest.raises(OutsideExtent):
            partial(y, 0, 3, lit(catalog, "p", "int64", [2, 6]))

    def test_partial_must_increase(self, catalog):
        x, y = grid(catalog)
        with pytest.raises(LayoutError):
            partial(y, 0, 9, lit(catalog, "p", "int64", [6, 2]))

    def test_every_dimension_needs_a_spec(self, catalog):
        x, y = grid(catalog)
        with pytest.raises(LayoutError):
            catalog.attach_subtar("A", [ordered(x, 0, 9)], {"v": lit(catalog, "v", "int64", range(10))})

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 3), st.integers(0, 9), st.integers(0, 3)), min_size=1, max_size=12))
    def test_disjointness_under_random_attach(self, tmp_path_factory, boxes):
        from savime.catalog import Catalog
        from savime.storage import DatasetStore, StorageConfig

        root = tmp_path_factory.mktemp("dis")
        cat = Catalog(DatasetStore(StorageConfig(root / "d", root / "t")))
        x, y = grid(cat, 13)
        accepted = []
        for k, (x0, w, y0, h) in enumerate(boxes):
            v = lit(cat, f"v{k}", "int64", [k])
            cells = {(i, j) for i in range(x0, x0 + w + 1) for j in range(y0, y0 + h + 1)}
            clash = any(cells & other for other in accepted)
            try:
                cat.attach_subtar("A", [ordered(x, x0, x0 + w), ordered(y, y0, y0 + h)], {"v": v})
            except OverlapViolation:
                assert clash
                continue
            assert not clash
            accepted.append(cells)
        assert len(cat.tar("A").subtars) == len(accepted)


class TestPositions:
    def test_ordered_row_major(self, catalog):
        x, y = grid(catalog)
        s = catalog.attach_subtar("A", [ordered(x, 0, 9), ordered(y, 0, 9)], {"v": lit(catalog, "v", "int64", range(100))})
        assert position_of(s, (3, 7)) == 37
        assert value_at(s, 37, "v") == 37
        assert value_at(s, 37, "x") == 3 and value_at(s, 37, "y") == 7

    def test_partial_implicit_paper_example(self, catalog):
        x, y = grid(catalog)
        present = lit(catalog, "p", "int64", [2, 6])
        catalog.attach_subtar("A", [ordered(x, 0, 9), partial(y, 0, 9, present)], {"v": lit(catalog, "v", "int64", range(20))})
        s = catalog.tar("A").subtars[0]
        assert s.length == 20
        assert position_of(s, (0, 6)) == 1
        assert position_of(s, (0, 3)) is None

    def test_partial_explicit_stores_real_indexes(self, catalog):
        ys = lit(catalog, "ys", "float64", PAPER_VALUES)
        x = dimension("x", "int64", Implicit(0, 9, 1))
        y = dimension("y", "float64", Explicit(ys))
        catalog.define_tar("A", None, [x, y], [attribute("v", "int64")])
        present = lit(catalog, "p", "int64", [1, 2])
        catalog.attach_subtar("A", [ordered(x, 0, 9), partial(y, 0, 4, present)], {"v": lit(catalog, "v", "int64", range(20))})
        s = catalog.tar("A").subtars[0]
        assert sorted(set(subtar_column(s, "y").tolist())) == [2.3, 4.7]
        assert position_of(s, (0, 2)) == 1

    def test_total_linear_scan(self, catalog):
        x, y = grid(catalog)
        catalog.attach_subtar(
            "A", [total(x, 0, 5, lit(catalog, "a", "int64", [0, 0, 5])), total(y, 1, 4, lit(catalog, "b", "int64", [1, 4, 2]))],
            {"v": lit(catalog, "v", "int64", [7, 8, 9])},
        )
        s = catalog.tar("A").subtars[0]
        assert position_of(s, (0, 4)) == 1
        assert position_of(s, (1, 1)) is None
        with pytest.raises(OutsideExtent):
            position_of(s, (6, 1))

    def test_property_constant(self, catalog):
        x, y = grid(catalog)
        catalog.define_tar("B", None, [x], [attribute("g", "float64")])
        catalog.attach_subtar("B", [ordered(x, 0, 9)], {"g": lit(catalog, "g", "float64", [9.81])})
        s = catalog.tar("B").subtars[0]
        assert {value_at(s, k, "g") for k in range(10)} == {9.81}
        with pytest.raises(OutOfBounds):
            value_at(s, 10, "g")


class TestLookupAndScan:
    def test_lookup(self, catalog):
        x = dimension("x", "int64", Implicit(0, 4999, 1))
        catalog.define_tar("A", None, [x], [])
        for t in range(500):
            catalog.attach_subtar("A", [ordered(x, t * 10, t * 10 + 9)], {})
        tar = catalog.tar("A")
        one = lookup_subtars(tar, Region({"x": (70, 79)}))
        assert len(one) == 1 and one[0].extent == Region({"x": (70, 79)})
        assert len(lookup_subtars(tar, Region({"x": (0, 4999)}))) == 500
        assert lookup_subtars(tar, Region({"y": (0, 1)})) == list(tar.subtars)

    def test_region_outside(self, catalog):
        x, y = grid(catalog, 20)
        catalog.attach_subtar("A", [ordered(x, 0, 9), ordered(y, 0, 9)], {"v": lit(catalog, "v", "int64", range(100))})
        assert lookup_subtars(catalog.tar("A"), Region({"x": (15, 19)})) == []

    def test_ordered_clip_visits_only_clipped(self, catalog):
        x, y = grid(catalog)
        catalog.attach_subtar("A", [ordered(x, 0, 9), ordered(y, 0, 9)], {"v": lit(catalog, "v", "int64", range(100))})
        s = catalog.tar("A").subtars[0]
        clip = Region({"x": (3, 4), "y": (5, 6)})
        c = VisitCounter()
        got = list(enumerate_cells(s, clip, c))
        want = [(l, o) for l, o in enumerate_cells(s) if clip.contains(dict(zip("xy", l)))]
        assert got == want and c.cells == 4
        assert list(enumerate_cells(s, Region({"x": (10, 12)}))) == []

    def test_total_scan_visits_everything(self, catalog):
        x, y = grid(catalog)
        idx = lit(catalog, "a", "int64", [k // 10 for k in range(100)])
        idy = lit(catalog, "b", "int64", [k % 10 for k in range(100)])
        catalog.attach_subtar("A", [total(x, 0, 9, idx), total(y, 0, 9, idy)], {"v": lit(catalog, "v", "int64", range(100))})
        s = catalog.tar("A").subtars[0]
        c = VisitCounter()
        assert len(list(enumerate_cells(s, Region({"x": (3, 3)}), c))) == 10
        assert c.cells == 100
        c2 = VisitCounter()
        offsets, _ = clip_offsets(s, Region({"x": (3, 3)}), c2)
        assert offsets.size == 10 and c2.cells == 100


# -- the six layout configurations ---------------------------------------------


def six_configs(seed, tmp_path_factory):
    from savime.catalog import Catalog
    from savime.storage import DatasetStore, StorageConfig

    root = tmp_path_factory.mktemp("six")
    cat = Catalog(DatasetStore(StorageConfig(root / "d", root / "t")))
    rng = np.random.default_rng(seed)
    out = []
    for k, (dom, kind) in enumerate(gen.LAYOUTS):
        etype = "float64" if rng.random() < 0.5 else "int64"
        dims = [gen.make_dim(cat, rng, f"d{j}", dom, int(rng.integers(2, 6)), etype) for j in range(int(rng.integers(1, 4)))]
        gen.make_tar(cat, rng, f"T{k}", dims, [("v", "int64")], [kind], slabs=2)
        out.append((dom, kind, cat.tar(f"T{k}")))
    return out


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_round_trip_in_all_six_configurations(tmp_path_factory, seed):
    for dom, kind, tar in six_configs(seed, tmp_path_factory):
        for s in tar.subtars:
            cells = list(enumerate_cells(s))
            assert len(cells) == s.length
            offsets = [o for _, o in cells]
            if kind != TOTAL:
                assert sorted(offsets) == list(range(s.length))
            assert len(set(offsets)) == len(offsets)
            for loc, off in cells:
                assert position_of(s, loc) == off
                for spec, r in zip(s.specs, loc):
                    assert value_at(s, off, spec.name) == real_to_logical(spec.dim.domain, r, spec.dim.element_type)
            # vectorised and cell-by-cell enumeration agree under random clips
            rng = np.random.default_rng(seed)
            clip = Region({sp.name: tuple(sorted(rng.integers(0, sp.dim.domain.cardinality, 2).tolist())) for sp in s.specs})
            offs, _ = clip_offsets(s, clip)
            assert sorted(offs.tolist()) == sorted(o for _, o in enumerate_cells(s, clip))
