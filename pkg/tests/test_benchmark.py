"""Tests for census benchmarks, the census API client and representativity."""

import json
from pathlib import Path

import pytest
import requests

from bias_audit import benchmark as benchmark_module
from bias_audit.benchmark import (
    API_KEY_ENV,
    CensusBenchmark,
    BenchmarkEntry,
    CensusQuery,
    coverage_gaps,
    fetch_benchmark,
    load_benchmark,
    load_bundled_benchmark,
    load_census_query,
    parse_census_response,
    representativity,
)
from bias_audit.domain import UNKNOWN, DemographicCategory, GroupingMode
from bias_audit.errors import (
    ConfigError,
    DuplicateCategory,
    EmptyBenchmark,
    MalformedResponse,
    NegativeCount,
    NetworkError,
    UnknownLabel,
    UnmappedVariable,
)
from bias_audit.metrics import CategoryStats, SmallGroupPolicy, StatFlag, apply_small_group_policy

DATA_DIR = Path(__file__).resolve().parent.parent / "data"

FEMALE_HISPANIC = DemographicCategory("female", "hispanic_latino")
MALE_WHITE = DemographicCategory("male", "white")


@pytest.fixture(scope="module")
def nyc() -> CensusBenchmark:
    return load_bundled_benchmark("nyc_2020")


# ── Bundled fixture ──────────────────────────────────────────────────


def test_bundled_total(nyc):
    assert len(nyc.entries) == 16
    assert nyc.total == 7_358_211
    assert (nyc.region, nyc.vintage) == ("New York City", 2020)


def test_derived_share_matches_published(nyc):
    cat = DemographicCategory("female", "american_indian_alaska_native")
    assert nyc.share(cat) == pytest.approx(0.001092, abs=1e-6)
    assert abs(nyc.share(cat) - 0.0011) < 0.0001


def test_cross_check_warnings(nyc):
    flagged = {w.context["category"] for w in nyc.warnings if w.code == "share_cross_check"}
    assert flagged == {"female / white", "male / hispanic_latino"}


def test_cross_check_tolerance_is_configurable():
    loose = load_bundled_benchmark("nyc_2020", tolerance=0.01)
    assert loose.warnings == ()


def test_small_group_policy_flags_eight_categories(nyc):
    flagged = apply_small_group_policy(nyc.as_stats(), SmallGroupPolicy(threshold=0.02))
    small = {
        s.category for s in flagged if s.has(StatFlag.BELOW_REPRESENTATION_THRESHOLD)
    }
    expected_races = {
        "american_indian_alaska_native",
        "native_hawaiian_pacific_islander",
        "some_other_race",
        "two_or_more_races",
    }
    assert len(small) == 8
    assert {c.race_ethnicity for c in small} == expected_races


def test_unknown_bundled_name():
    with pytest.raises(ConfigError):
        load_bundled_benchmark("atlantis")


# ── CSV loading ──────────────────────────────────────────────────────


def test_csv_with_aliases_and_thousands_separators():
    bench = load_benchmark(
        'sex,race_ethnicity,count\nF,Hispanic,"1,481"\nmale,White,8519\n',
        "Test",
        2020,
    )
    assert bench.total == 10_000
    assert bench.share(FEMALE_HISPANIC) == 0.1481


def test_csv_rejects_negative_count():
    with pytest.raises(NegativeCount):
        load_benchmark("sex,race_ethnicity,count\nfemale,white,-3\n", "Test", 2020)


def test_csv_rejects_duplicate_category():
    with pytest.raises(DuplicateCategory):
        load_benchmark(
            "sex,race_ethnicity,count\nfemale,white,3\nF,White,4\n", "Test", 2020
        )


def test_csv_rejects_unknown_label():
    with pytest.raises(UnknownLabel):
        load_benchmark("sex,race_ethnicity,count\nfemale,martian,3\n", "Test", 2020)


def test_zero_population_is_empty():
    with pytest.raises(EmptyBenchmark):
        load_benchmark("sex,race_ethnicity,count\nfemale,white,0\n", "Test", 2020)


def test_collapse_preserves_total(nyc):
    for grouping in GroupingMode:
        assert sum(nyc.collapsed_counts(grouping).values()) == nyc.total
    by_sex = nyc.collapsed_counts(GroupingMode.BY_SEX)
    assert set(by_sex) == {
        DemographicCategory("female", None),
        DemographicCategory("male", None),
    }


def test_scaling_counts_keeps_shares(nyc):
    scaled = CensusBenchmark(
        nyc.region,
        nyc.vintage,
        tuple(BenchmarkEntry(e.category, e.count * 3) for e in nyc.entries),
    )
    for e in nyc.entries:
        assert scaled.share(e.category) == nyc.share(e.category)


# ── Representativity ─────────────────────────────────────────────────


def _bench() -> CensusBenchmark:
    return CensusBenchmark(
        "Test",
        2020,
        (BenchmarkEntry(FEMALE_HISPANIC, 1481), BenchmarkEntry(MALE_WHITE, 8519)),
    )


def _stats(*pairs):
    return [CategoryStats(cat, count=10, share=share) for cat, share in pairs]


def test_representativity_index():
    table = representativity(_stats((FEMALE_HISPANIC, 0.05), (MALE_WHITE, 0.95)), _bench())
    entry = table.entry(FEMALE_HISPANIC)
    assert entry.benchmark_share == pytest.approx(0.1481)
    assert entry.index == pytest.approx(0.3376, abs=1e-4)
    assert table.warnings == ()


def test_representativity_identity():
    table = representativity(_stats((FEMALE_HISPANIC, 0.1481), (MALE_WHITE, 0.8519)), _bench())
    assert table.entry(FEMALE_HISPANIC).index == pytest.approx(1.0)
    assert table.entry(MALE_WHITE).index == pytest.approx(1.0)


def test_unknown_demographics_do_not_dilute_shares():
    unknown = DemographicCategory(UNKNOWN, UNKNOWN)
    table = representativity(
        _stats((FEMALE_HISPANIC, 0.1), (MALE_WHITE, 0.7), (unknown, 0.2)), _bench()
    )
    entry = table.entry(FEMALE_HISPANIC)
    assert entry.observed_share == pytest.approx(0.125)
    assert entry.index == pytest.approx(0.125 / 0.1481)
    assert table.entry(unknown).index is None
    assert [w.code for w in table.warnings] == ["category_not_in_benchmark"]


def test_category_missing_from_benchmark():
    asian = DemographicCategory("female", "asian")
    table = representativity(_stats((asian, 0.2)), _bench())
    assert table.entry(asian).index is None
    assert [w.code for w in table.warnings] == ["category_not_in_benchmark"]


def test_zero_benchmark_share():
    bench = CensusBenchmark(
        "Test", 2020, (BenchmarkEntry(FEMALE_HISPANIC, 0), BenchmarkEntry(MALE_WHITE, 10))
    )
    table = representativity(_stats((FEMALE_HISPANIC, 0.1)), bench)
    assert table.entry(FEMALE_HISPANIC).index is None
    assert [w.code for w in table.warnings] == ["zero_benchmark_share"]


def test_representativity_collapses_benchmark():
    female = DemographicCategory("female", None)
    table = representativity(_stats((female, 0.5), (DemographicCategory("male", None), 0.5)), _bench())
    assert table.grouping is GroupingMode.BY_SEX
    assert table.entry(female).index == pytest.approx(0.5 / 0.1481)


def test_coverage_gaps():
    gaps = coverage_gaps(_stats((MALE_WHITE, 1.0)), _bench())
    assert [w.context["category"] for w in gaps] == ["female / hispanic_latino"]


# ── Census API ───────────────────────────────────────────────────────


def _query(tmp_path) -> CensusQuery:
    return CensusQuery.from_dict(
        {
            "endpoint": "https://api.census.gov/data/2020/dec/dhc",
            "region": "Testville",
            "vintage": 2020,
            "params": {"for": "place:51000", "in": "state:36"},
            "cache_dir": "cache",
            "variables": {
                "V1": {"sex": "female", "race_ethnicity": "hispanic_latino"},
                "V2": {"sex": "male", "race_ethnicity": "white"},
                "V3": {"sex": "male", "race_ethnicity": "white"},
            },
        },
        base_dir=tmp_path,
    )


RESPONSE = [
    ["NAME", "V1", "V2", "V3", "state", "place"],
    ["Testville", "1481", "8000", "519", "36", "51000"],
]


class _FakeResponse:
    def __init__(self, payload, status=200):
        self.content = json.dumps(payload).encode("utf-8")
        self.status_code = status

    def raise_for_status(self):
        if self.status_code >= 400:
            raise requests.HTTPError(f"{self.status_code} Error")


def test_parse_response_sums_variables(tmp_path):
    bench = parse_census_response(json.dumps(RESPONSE), _query(tmp_path))
    assert bench.total == 10_000
    assert bench.share(FEMALE_HISPANIC) == 0.1481
    assert bench.warnings == ()


def test_parse_response_unmapped_variable(tmp_path):
    payload = [["NAME", "V1", "P99"], ["Testville", "1", "2"]]
    with pytest.raises(UnmappedVariable):
        parse_census_response(json.dumps(payload), _query(tmp_path))


def test_parse_response_missing_variable_warns(tmp_path):
    payload = [["NAME", "V1", "V2"], ["Testville", "10", "20"]]
    bench = parse_census_response(json.dumps(payload), _query(tmp_path))
    assert [w.context["variable"] for w in bench.warnings] == ["V3"]


@pytest.mark.parametrize(
    "payload",
    [
        "not json",
        json.dumps([["NAME", "V1"]]),
        json.dumps([["NAME", "V1"], ["a", "1"], ["b", "2"]]),
        json.dumps([["NAME", "V1"], ["a", "many"]]),
    ],
)
def test_parse_response_malformed(tmp_path, payload):
    with pytest.raises(MalformedResponse):
        parse_census_response(payload, _query(tmp_path))


def test_fetch_caches_and_replays_offline(tmp_path, monkeypatch):
    calls = []

    def fake_get(url, params=None, timeout=None):
        calls.append(params)
        return _FakeResponse(RESPONSE)

    monkeypatch.setenv(API_KEY_ENV, "secret")
    monkeypatch.setattr(benchmark_module.requests, "get", fake_get)
    query = _query(tmp_path)

    fetched = fetch_benchmark(query)
    assert calls[0]["key"] == "secret"
    assert calls[0]["get"] == "NAME,V1,V2,V3"
    assert query.cache_path().exists()
    assert "secret" not in query.cache_path().name

    offline = fetch_benchmark(query, offline=True)
    assert len(calls) == 1
    assert offline.entries == fetched.entries


def test_cache_key_ignores_api_key(tmp_path, monkeypatch):
    query = _query(tmp_path)
    before = query.cache_key()
    monkeypatch.setenv(API_KEY_ENV, "another")
    assert query.cache_key() == before


def test_network_error_leaves_cache(tmp_path, monkeypatch):
    query = _query(tmp_path)
    query.cache_dir.mkdir(parents=True)
    query.cache_path().write_text(json.dumps(RESPONSE))

    def failing_get(url, params=None, timeout=None):
        raise requests.ConnectionError("unreachable")

    monkeypatch.setattr(benchmark_module.requests, "get", failing_get)
    with pytest.raises(NetworkError):
        fetch_benchmark(query, api_key="")
    assert json.loads(query.cache_path().read_text()) == RESPONSE


def test_http_error_is_network_error(tmp_path, monkeypatch):
    monkeypatch.setattr(
        benchmark_module.requests,
        "get",
        lambda url, params=None, timeout=None: _FakeResponse([], status=503),
    )
    with pytest.raises(NetworkError):
        fetch_benchmark(_query(tmp_path), api_key="")


def test_bad_payload_is_not_cached(tmp_path, monkeypatch):
    monkeypatch.setattr(
        benchmark_module.requests,
        "get",
        lambda url, params=None, timeout=None: _FakeResponse([["NAME", "X9"], ["a", "1"]]),
    )
    query = _query(tmp_path)
    with pytest.raises(UnmappedVariable):
        fetch_benchmark(query, api_key="")
    assert not query.cache_path().exists()


def test_offline_without_cache(tmp_path):
    with pytest.raises(NetworkError):
        fetch_benchmark(_query(tmp_path), offline=True)


def test_bundled_query_file():
    query = load_census_query(DATA_DIR / "census_query.yaml")
    assert len(query.variables) == 16
    assert query.geography_headers() == {"place", "state"}
    assert query.cache_dir == (DATA_DIR / "../.census_cache")
