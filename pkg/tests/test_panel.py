import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcredml.errors import ImputationError, IntegrityError, MissingValuesError, NamingError, SchemaError
from pcredml.panel import (
    ColumnSchema,
    PanelDataset,
    add_entity_mean,
    add_lag,
    drop_missing_rows,
    filter_min_periods,
    impute,
    load_csv,
)

nan = np.nan


def panel(entity, time, **cols):
    return PanelDataset.from_arrays(entity, time, cols)


SCHEMA = ColumnSchema(controls=("capital",), proxies=())


def write(tmp_path, text):
    p = tmp_path / "panel.csv"
    p.write_text(text)
    return p


class TestLoadCsv:
    def test_sorts_rows(self, tmp_path):
        p = write(
            tmp_path,
            "country,year,gdp_growth,trust,capital\n"
            "B,2010,1,0.1,5\n"
            "A,2011,2,0.2,6\n"
            "A,2010,3,0.3,7\n",
        )
        ds = load_csv(p, SCHEMA)
        assert len(ds) == 3
        assert list(ds.entity) == ["A", "A", "B"]
        assert list(ds.time) == [2010, 2011, 2010]
        assert list(ds["gdp_growth"]) == [3, 2, 1]

    def test_missing_column(self, tmp_path):
        p = write(tmp_path, "country,year,gdp_growth,capital\nA,2010,1,2\n")
        with pytest.raises(SchemaError, match="trust"):
            load_csv(p, SCHEMA)

    def test_unparseable_cell_is_missing(self, tmp_path):
        p = write(tmp_path, "country,year,gdp_growth,trust,capital\nA,2010,1,0.5,n/a\nA,2011,1,0.5,\n")
        ds = load_csv(p, SCHEMA)
        assert np.isnan(ds["capital"]).all()

    def test_duplicate_key(self, tmp_path):
        p = write(tmp_path, "country,year,gdp_growth,trust,capital\nA,2010,1,2,3\nA,2010,4,5,6\n")
        with pytest.raises(IntegrityError):
            load_csv(p, SCHEMA)

    def test_round_trip(self, tmp_path):
        ds = panel(["A", "A", "B"], [1, 2, 1], gdp_growth=[1.5, nan, 3], trust=[0.1, 0.2, 1 / 3], capital=[1, 2, 3])
        p = tmp_path / "out.csv"
        ds.to_csv(p, "country", "year")
        assert load_csv(p, SCHEMA).equals(ds)


def test_schema_rejects_outcome_equal_treatment():
    with pytest.raises(ValueError):
        ColumnSchema(outcome="y", treatment="y")
    with pytest.raises(ValueError):
        ColumnSchema(controls=("a", "a"))


def test_dataset_is_read_only():
    ds = panel(["A"], [1], x=[1.0])
    with pytest.raises(ValueError):
        ds["x"][0] = 2.0


class TestImpute:
    def test_midpoint(self):
        ds = impute(panel(["A"] * 3, [0, 1, 2], x=[1, nan, 3]), ["x"])
        assert list(ds["x"]) == [1, 2, 3]

    def test_interpolates_against_time_index(self):
        ds = impute(panel(["A"] * 3, [0, 1, 4], x=[0, nan, 8]), ["x"])
        assert ds["x"][1] == pytest.approx(2.0)

    def test_edge_gap_takes_overall_mean(self):
        # observed values 5, 5, 2, 4 -> overall mean 4
        ds = panel(["A", "A", "A", "B", "B"], [0, 1, 2, 0, 1], x=[nan, 5, 5, 2, 4])
        out = impute(ds, ["x"])
        assert list(out["x"][:3]) == [4, 5, 5]

    def test_all_missing_entity(self):
        ds = panel(["A", "A", "B"], [0, 1, 0], x=[nan, nan, 6])
        assert list(impute(ds, ["x"])["x"]) == [6, 6, 6]

    def test_no_missing_unchanged(self):
        ds = panel(["A", "A"], [0, 1], x=[1, 2])
        assert impute(ds, ["x"]).equals(ds)

    def test_all_missing_column(self):
        with pytest.raises(ImputationError):
            impute(panel(["A", "B"], [0, 0], x=[nan, nan]), ["x"])

    def test_unknown_column(self):
        with pytest.raises(SchemaError):
            impute(panel(["A"], [0], x=[1]), ["y"])


class TestLag:
    def test_shift(self):
        ds = add_lag(panel(["A"] * 3, [0, 1, 2], x=[10, 20, 30]), "x", 1, "x_lag")
        np.testing.assert_array_equal(ds["x_lag"], [nan, 10, 20])

    def test_short_entity(self):
        ds = add_lag(panel(["A"] * 2, [0, 1], x=[1, 2]), "x", 2, "x_lag2")
        assert np.isnan(ds["x_lag2"]).all()

    def test_no_leak_across_entities(self):
        ds = add_lag(panel(["A", "A", "B", "B"], [0, 1, 0, 1], x=[1, 2, 3, 4]), "x", 1, "l")
        np.testing.assert_array_equal(ds["l"], [nan, 1, nan, 3])

    def test_name_collision(self):
        with pytest.raises(NamingError):
            add_lag(panel(["A"], [0], x=[1], y=[2]), "x", 1, "y")

    def test_composition(self):
        rng = np.random.default_rng(0)
        ent = np.repeat(list("abcde"), 4)
        ds = panel(ent, np.tile(np.arange(4), 5), x=rng.normal(size=20))
        twice = add_lag(add_lag(ds, "x", 1, "l1"), "l1", 1, "l11")
        direct = add_lag(ds, "x", 2, "l2")
        defined = ~np.isnan(twice["l11"])
        np.testing.assert_array_equal(defined, ~np.isnan(direct["l2"]))
        np.testing.assert_array_equal(twice["l11"][defined], direct["l2"][defined])


class TestEntityMean:
    def test_mean(self):
        assert list(add_entity_mean(panel(["A", "A"], [0, 1], x=[2, 4]), "x", "m")["m"]) == [3, 3]

    def test_singleton(self):
        assert list(add_entity_mean(panel(["A"], [0], x=[7]), "x", "m")["m"]) == [7]

    def test_two_entities(self):
        ds = panel(["A", "A", "B", "B"], [0, 1, 0, 1], x=[1, 1, 5, 9])
        assert list(add_entity_mean(ds, "x", "m")["m"]) == [1, 1, 7, 7]

    def test_requires_complete(self):
        with pytest.raises(MissingValuesError):
            add_entity_mean(panel(["A", "A"], [0, 1], x=[1, nan]), "x", "m")


class TestDropMissing:
    def test_drops_row(self):
        ds = drop_missing_rows(panel(["A", "A", "B"], [0, 1, 0], x=[1, nan, 3], y=[1, 2, 3]), ["x"])
        assert list(ds.entity) == ["A", "B"]
        assert list(ds["y"]) == [1, 3]

    def test_unchanged(self):
        ds = panel(["A"], [0], x=[1])
        assert drop_missing_rows(ds, ["x"]).equals(ds)

    def test_all_rows(self):
        ds = drop_missing_rows(panel(["A", "B"], [0, 0], x=[nan, nan]), ["x"])
        assert len(ds) == 0


def test_filter_min_periods():
    ds = panel(["A", "A", "A", "B", "B", "B"], [0, 1, 2, 0, 1, 2], x=[1, 2, 3, 1, nan, nan])
    assert list(filter_min_periods(ds, "x", 2).entity) == ["A", "A", "A"]


@st.composite
def random_panels(draw):
    n_ent = draw(st.integers(1, 5))
    lengths = draw(st.lists(st.integers(1, 6), min_size=n_ent, max_size=n_ent))
    entity, time = [], []
    for i, T in enumerate(lengths):
        times = sorted(draw(st.sets(st.integers(0, 30), min_size=T, max_size=T)))
        entity += [f"e{i}"] * T
        time += times
    vals = draw(
        st.lists(
            st.one_of(st.none(), st.floats(-100, 100, allow_nan=False)),
            min_size=len(entity),
            max_size=len(entity),
        )
    )
    x = [nan if v is None else v for v in vals]
    perm = draw(st.permutations(range(len(entity))))
    return PanelDataset.from_arrays(
        [entity[i] for i in perm], [time[i] for i in perm], {"x": [x[i] for i in perm]}
    )


def _well_formed(ds):
    for a, b in zip(*ds.groups()):
        assert np.all(np.diff(ds.time[a:b]) > 0)
    starts, _ = ds.groups()
    assert len(set(ds.entity[starts])) == len(starts)


@settings(max_examples=60, deadline=None)
@given(random_panels())
def test_impute_idempotent(ds):
    if np.isnan(ds["x"]).all():
        return
    once = impute(ds, ["x"])
    assert not np.isnan(once["x"]).any()
    assert impute(once, ["x"]).equals(once)
    _well_formed(once)


@settings(max_examples=60, deadline=None)
@given(random_panels(), st.integers(1, 4))
def test_lag_then_drop_row_count(ds, k):
    out = drop_missing_rows(add_lag(ds.with_column("ones", np.ones(len(ds))), "ones", k, "l"), ["l"])
    starts, stops = ds.groups()
    assert len(out) == sum(max(0, (b - a) - k) for a, b in zip(starts, stops))
    _well_formed(out)


@settings(max_examples=40, deadline=None)
@given(random_panels(), st.randoms(use_true_random=False))
def test_entity_mean_permutation_invariant(ds, rnd):
    if np.isnan(ds["x"]).any():
        ds = impute(ds, ["x"]) if not np.isnan(ds["x"]).all() else ds.with_column("x", np.ones(len(ds)), overwrite=True)
    base = add_entity_mean(ds, "x", "m")["m"]
    x = ds["x"].copy()
    for a, b in zip(*ds.groups()):
        seg = list(x[a:b])
        rnd.shuffle(seg)
        x[a:b] = seg
    shuffled = add_entity_mean(ds.with_column("x", x, overwrite=True), "x", "m")["m"]
    np.testing.assert_allclose(shuffled, base, rtol=1e-12, atol=1e-12)
