"""Tests for verification samples and dataset fingerprints."""

import random

import pytest

from bias_audit.errors import InvalidFraction
from bias_audit.sampling import dataset_fingerprint, sample_size, verification_sample
from tests.builders import dataset, record


def _hundred(order=None):
    records = [record(f"A{i:03d}", "female" if i % 2 else "male") for i in range(100)]
    if order is not None:
        random.Random(order).shuffle(records)
    return dataset(records)


def test_five_percent_of_hundred():
    manifest = verification_sample(_hundred(), 0.05, 42)
    assert len(manifest.selected_ids) == 5
    assert list(manifest.selected_ids) == sorted(manifest.selected_ids)
    assert set(manifest.selected_ids) <= set(_hundred().ids)
    assert manifest.population == 100


def test_reproducible_across_runs_and_orderings():
    first = verification_sample(_hundred(), 0.05, 42)
    again = verification_sample(_hundred(), 0.05, 42)
    shuffled = verification_sample(_hundred(order=3), 0.05, 42)
    assert first == again == shuffled
    assert first.to_dict() == shuffled.to_dict()


def test_seed_changes_selection():
    a = verification_sample(_hundred(), 0.2, 1)
    b = verification_sample(_hundred(), 0.2, 2)
    assert a.selected_ids != b.selected_ids
    assert a.fingerprint == b.fingerprint


@pytest.mark.parametrize("fraction, expected", [(0, 0), (1, 100), (0.999, 99), (0.07, 7)])
def test_sample_size(fraction, expected):
    assert sample_size(fraction, 100) == expected


def test_edge_fractions():
    assert verification_sample(_hundred(), 0.0, 42).selected_ids == ()
    full = verification_sample(_hundred(), 1.0, 42)
    assert list(full.selected_ids) == sorted(_hundred().ids)


@pytest.mark.parametrize("fraction", [-0.1, 1.5, float("nan")])
def test_invalid_fraction(fraction):
    with pytest.raises(InvalidFraction):
        verification_sample(_hundred(), fraction, 42)


def test_fingerprint_tracks_content():
    base = dataset_fingerprint(_hundred())
    assert base.startswith("sha256:")
    assert dataset_fingerprint(_hundred(order=9)) == base
    changed = dataset([record("A000", "female", score=1.0)] + list(_hundred().records)[1:])
    assert dataset_fingerprint(changed) != base


def test_manifest_dict():
    data = verification_sample(_hundred(), 0.05, 42).to_dict()
    assert data["sample_size"] == 5
    assert data["seed"] == 42
    assert data["dataset_fingerprint"].startswith("sha256:")
    assert "PCG64" in data["algorithm"]
