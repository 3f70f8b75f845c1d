"""Tests for Cramér's V and the proxy feature screen."""

import math

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis.extra.numpy import arrays

from bias_audit.domain import ProtectedAxis
from bias_audit.errors import DegenerateFeature, DegenerateTable, FeatureMissing
from bias_audit.proxy import (
    contingency_table,
    cramers_v,
    proxy_screen,
    quartile_bins,
    screen_feature,
)
from tests.builders import dataset, record

RACE = ProtectedAxis.RACE_ETHNICITY
SEX = ProtectedAxis.SEX


@pytest.mark.parametrize(
    "table, expected",
    [
        ([[50, 0], [0, 50]], 1.0),
        ([[25, 25], [25, 25]], 0.0),
        ([[30, 10], [10, 30]], 0.5),
    ],
)
def test_known_values(table, expected):
    assert abs(cramers_v(table) - expected) < 1e-12


def test_zero_rows_are_dropped():
    assert cramers_v([[50, 0], [0, 0], [0, 50]]) == pytest.approx(1.0)


@pytest.mark.parametrize("table", [[[5, 5]], [[5], [5]], [[5, 0], [0, 0]], [[-1, 2], [2, 1]]])
def test_degenerate_tables(table):
    with pytest.raises(DegenerateTable):
        cramers_v(table)


tables = st.tuples(st.integers(2, 4), st.integers(2, 4)).flatmap(
    lambda shape: arrays(np.int64, shape, elements=st.integers(0, 40))
)


def _usable(arr) -> bool:
    return (arr.sum(axis=1) > 0).sum() >= 2 and (arr.sum(axis=0) > 0).sum() >= 2


@settings(max_examples=1000, deadline=None)
@given(tables)
def test_bounds(arr):
    assume(_usable(arr))
    assert 0.0 <= cramers_v(arr) <= 1.0


@settings(max_examples=1000, deadline=None)
@given(tables)
def test_symmetric_under_transpose(arr):
    assume(_usable(arr))
    assert math.isclose(cramers_v(arr), cramers_v(arr.T), rel_tol=1e-9, abs_tol=1e-12)


@settings(max_examples=300, deadline=None)
@given(tables, st.integers(2, 10))
def test_scale_invariant(arr, factor):
    assume(_usable(arr))
    assert math.isclose(cramers_v(arr), cramers_v(arr * factor), rel_tol=1e-9, abs_tol=1e-12)


@settings(max_examples=300, deadline=None)
@given(tables, st.randoms(use_true_random=False))
def test_row_order_invariant(arr, rnd):
    assume(_usable(arr))
    order = list(range(arr.shape[0]))
    rnd.shuffle(order)
    assert math.isclose(cramers_v(arr), cramers_v(arr[order]), rel_tol=1e-9, abs_tol=1e-12)


# ── Binning ──────────────────────────────────────────────────────────


def test_quartile_bins_of_eight_values():
    assert quartile_bins([8, 1, 7, 2, 6, 3, 5, 4]) == [
        "Q4", "Q1", "Q4", "Q1", "Q3", "Q2", "Q3", "Q2",
    ]


def test_value_on_cut_point_falls_into_lower_bin():
    # cut points are 2, 3 and 4
    assert quartile_bins([1, 2, 3, 4, 5]) == ["Q1", "Q1", "Q2", "Q3", "Q4"]


# ── Screening ────────────────────────────────────────────────────────


LANGUAGE_BY_RACE = {"white": "english", "black_african_american": "french", "asian": "korean"}


def _language_dataset():
    records = []
    for i in range(60):
        race = list(LANGUAGE_BY_RACE)[i % 3]
        records.append(
            record(
                f"L{i}",
                "female" if i % 2 else "male",
                race,
                features={"language": LANGUAGE_BY_RACE[race], "years": float(i % 7)},
            )
        )
    return dataset(records)


def test_language_is_a_perfect_proxy_for_race():
    finding = screen_feature(_language_dataset(), "language", RACE)
    assert finding.value == pytest.approx(1.0)
    assert finding.flagged
    assert finding.sample_size == 60


def test_contingency_table_is_sorted():
    table = contingency_table(_language_dataset(), "language", RACE)
    assert list(table.index) == ["english", "french", "korean"]
    assert list(table.columns) == ["asian", "black_african_american", "white"]
    assert int(table.to_numpy().sum()) == 60


def test_numeric_feature_is_binned():
    finding = screen_feature(_language_dataset(), "years", SEX)
    assert finding.value is not None
    assert "quartiles" in finding.notes[0]


def test_independent_feature_is_weak():
    rng = np.random.default_rng(7)
    races = rng.choice(["white", "asian"], size=10_000)
    levels = rng.choice(["a", "b", "c"], size=10_000)
    ds = dataset(
        [
            record(f"R{i}", "female", str(race), features={"f": str(level)})
            for i, (race, level) in enumerate(zip(races, levels))
        ]
    )
    finding = screen_feature(ds, "f", RACE)
    assert finding.value < 0.05
    assert not finding.flagged


def test_constant_feature_is_degenerate():
    ds = dataset(
        [record(f"R{i}", "female", "white", features={"f": "same"}) for i in range(5)]
    )
    with pytest.raises(DegenerateFeature):
        contingency_table(ds, "f", RACE)
    finding = screen_feature(ds, "f", RACE)
    assert finding.value is None
    assert not finding.flagged


def test_unknown_labels_are_left_out():
    ds = dataset(
        [
            record("R1", "unknown", "white", features={"f": "x"}),
            record("R2", "female", "unknown", features={"f": "y"}),
            record("R3", "unknown", "asian", features={"f": "z"}),
        ]
    )
    with pytest.raises(FeatureMissing):
        contingency_table(ds, "f", SEX)


def test_screen_order_and_missing_features():
    ds = _language_dataset()
    rare = record("X1", "male", "white", features={"rare": "x"})
    ds = dataset(list(ds.records) + [rare])
    findings = proxy_screen(ds, RACE)
    assert findings[0].feature == "language"
    assert findings[-1].feature == "rare"
    assert findings[-1].value is None


def test_no_features():
    ds = dataset([record("R1"), record("R2", race="asian")])
    assert proxy_screen(ds, RACE) == []
