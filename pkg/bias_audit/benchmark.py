"""
Census benchmarks and representativity.

A benchmark is a population count per intersectional category for one
region and census vintage. Shares are always derived from counts; a
published percentage column, when present, is only cross-checked.

Sources:
- Bundled fixtures under ``bias_audit/data`` (NYC 2020)
- Local CSV files
- A live census API query, cached on disk by request hash
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import pandas as pd
import requests
import yaml

from bias_audit.domain import (
    AuditWarning,
    DemographicCategory,
    GroupingMode,
    VocabularyConfig,
    canonicalize_category,
    load_vocabulary,
    sort_categories,
)
from bias_audit.errors import (
    ConfigError,
    DuplicateCategory,
    EmptyBenchmark,
    GroupingMismatch,
    MalformedInput,
    MalformedResponse,
    MissingColumn,
    NegativeCount,
    NetworkError,
    UnmappedVariable,
)
from bias_audit.metrics import CategoryStats, RateTable, StatsLike

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 0.005  # 0.5 percentage points
API_KEY_ENV = "AEDT_CENSUS_API_KEY"

# name -> (package data file, region, vintage)
BUNDLED_BENCHMARKS: dict[str, tuple[str, str, int]] = {
    "nyc_2020": ("census_nyc_2020.csv", "New York City", 2020),
}

_IGNORED_HEADERS = frozenset({"NAME", "GEO_ID"})


@dataclass(frozen=True)
class BenchmarkEntry:
    category: DemographicCategory
    count: int
    published_share: Optional[float] = None


@dataclass(frozen=True)
class CensusBenchmark:
    """Immutable benchmark population for one region and vintage."""

    region: str
    vintage: int
    entries: tuple[BenchmarkEntry, ...]
    warnings: tuple[AuditWarning, ...] = ()
    source: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "warnings", tuple(self.warnings))
        seen: set[DemographicCategory] = set()
        for e in self.entries:
            if e.count < 0:
                raise NegativeCount(
                    f"Negative count {e.count} for {e.category.label}",
                    context={"category": e.category.label},
                )
            if e.category in seen:
                raise DuplicateCategory(
                    f"Category {e.category.label} appears more than once",
                    context={"category": e.category.label},
                )
            seen.add(e.category)
        if self.total <= 0:
            raise EmptyBenchmark(f"Benchmark for {self.region or 'region'} has no population")

    @property
    def total(self) -> int:
        return sum(e.count for e in self.entries)

    @property
    def categories(self) -> list[DemographicCategory]:
        return [e.category for e in self.entries]

    def share(self, category: DemographicCategory) -> float:
        for e in self.entries:
            if e.category == category:
                return e.count / self.total
        return 0.0

    def collapsed_counts(self, grouping: GroupingMode) -> dict[DemographicCategory, int]:
        """Counts summed onto the categories of a coarser grouping."""
        counts: dict[DemographicCategory, int] = {}
        for e in self.entries:
            key = e.category.collapse(grouping)
            counts[key] = counts.get(key, 0) + e.count
        return {c: counts[c] for c in sort_categories(counts)}

    def as_stats(self) -> list[CategoryStats]:
        """Entries as CategoryStats, so the small-group policy can run on them."""
        total = self.total
        return [
            CategoryStats(category=e.category, count=e.count, share=e.count / total)
            for e in self.entries
        ]

    def to_dict(self) -> dict[str, object]:
        total = self.total
        return {
            "region": self.region,
            "vintage": self.vintage,
            "source": self.source,
            "total": total,
            "entries": [
                {
                    "category": e.category.to_dict(),
                    "count": e.count,
                    "share": round(e.count / total, 4),
                    "published_share": (
                        None if e.published_share is None else round(e.published_share, 4)
                    ),
                }
                for e in self.entries
            ],
        }


def _build_benchmark(
    rows: Sequence[tuple[DemographicCategory, int, Optional[float]]],
    region: str,
    vintage: int,
    tolerance: float,
    source: str,
    extra_warnings: Sequence[AuditWarning] = (),
) -> CensusBenchmark:
    entries = tuple(
        BenchmarkEntry(cat, count, published)
        for cat, count, published in sorted(rows, key=lambda r: r[0].sort_key())
    )
    benchmark = CensusBenchmark(region, vintage, entries, source=source)

    warnings = list(extra_warnings)
    total = benchmark.total
    for e in entries:
        if e.published_share is None:
            continue
        derived = e.count / total
        if abs(derived - e.published_share) > tolerance:
            warnings.append(
                AuditWarning(
                    code="share_cross_check",
                    message=(
                        f"{e.category.label}: derived share {derived:.2%} differs from "
                        f"published {e.published_share:.2%}"
                    ),
                    context={
                        "category": e.category.label,
                        "derived_share": f"{derived:.6f}",
                        "published_share": f"{e.published_share:.6f}",
                    },
                )
            )
    for w in warnings:
        logger.warning("%s", w.message)
    return CensusBenchmark(region, vintage, entries, tuple(warnings), source)


# -----------------------------------------------------------------------
# CSV benchmarks
# -----------------------------------------------------------------------


def load_benchmark(
    data: Union[bytes, str],
    region: str,
    vintage: int,
    vocabulary: Optional[VocabularyConfig] = None,
    tolerance: float = DEFAULT_TOLERANCE,
    source: str = "",
) -> CensusBenchmark:
    """
    Parse a benchmark CSV: sex, race_ethnicity, count and an optional
    published_share_percent column (percent, e.g. ``14.81``).
    """
    vocabulary = vocabulary or load_vocabulary()
    text = data.decode("utf-8-sig") if isinstance(data, bytes) else data
    try:
        frame = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        raise MalformedInput(f"Unreadable benchmark CSV: {exc}") from exc

    for column in ("sex", "race_ethnicity", "count"):
        if column not in frame.columns:
            raise MissingColumn(f"Benchmark CSV lacks column '{column}'", column=column)
    has_published = "published_share_percent" in frame.columns

    rows: list[tuple[DemographicCategory, int, Optional[float]]] = []
    seen: set[DemographicCategory] = set()
    for i, raw in enumerate(frame.fillna("").to_dict(orient="records"), start=1):
        category = canonicalize_category(raw["sex"], raw["race_ethnicity"], vocabulary, row=i)
        if category in seen:
            raise DuplicateCategory(
                f"Category {category.label} appears more than once",
                row=i,
                context={"category": category.label},
            )
        seen.add(category)
        count = _parse_count(raw["count"], row=i)
        published: Optional[float] = None
        if has_published and str(raw["published_share_percent"]).strip():
            try:
                published = float(raw["published_share_percent"]) / 100.0
            except ValueError as exc:
                raise MalformedInput(
                    f"Invalid published share '{raw['published_share_percent']}'",
                    row=i,
                    column="published_share_percent",
                ) from exc
        rows.append((category, count, published))

    if not rows:
        raise EmptyBenchmark("Benchmark CSV has no rows")
    logger.debug("Parsed %d benchmark rows for %s %d", len(rows), region, vintage)
    return _build_benchmark(rows, region, vintage, tolerance, source)


def _parse_count(raw: object, row: Optional[int] = None, column: str = "count") -> int:
    text = str(raw).strip().replace(",", "")
    try:
        value = int(text)
    except ValueError as exc:
        raise MalformedInput(f"Invalid count '{raw}'", row=row, column=column) from exc
    if value < 0:
        raise NegativeCount(f"Negative count {value}", row=row, column=column)
    return value


def load_benchmark_file(
    path: Path,
    region: str,
    vintage: int,
    vocabulary: Optional[VocabularyConfig] = None,
    tolerance: float = DEFAULT_TOLERANCE,
) -> CensusBenchmark:
    path = Path(path)
    logger.info("Reading benchmark %s", path)
    return load_benchmark(
        path.read_bytes(), region, vintage, vocabulary, tolerance, source=str(path)
    )


def load_bundled_benchmark(
    name: str = "nyc_2020",
    vocabulary: Optional[VocabularyConfig] = None,
    tolerance: float = DEFAULT_TOLERANCE,
) -> CensusBenchmark:
    if name not in BUNDLED_BENCHMARKS:
        raise ConfigError(
            f"Unknown bundled benchmark '{name}'",
            context={"available": ",".join(sorted(BUNDLED_BENCHMARKS))},
        )
    filename, region, vintage = BUNDLED_BENCHMARKS[name]
    data = resources.files("bias_audit").joinpath("data", filename).read_bytes()
    return load_benchmark(data, region, vintage, vocabulary, tolerance, source=f"bundled:{name}")


# -----------------------------------------------------------------------
# Census API
# -----------------------------------------------------------------------


@dataclass(frozen=True)
class CensusQuery:
    """
    A census API request and the mapping of its variables to categories.

    ``params`` are sent verbatim (``for``, ``in``, ...). When ``get`` is
    absent it is built from ``NAME`` and the mapped variables.
    """

    endpoint: str
    variables: dict[str, DemographicCategory]
    region: str
    vintage: int
    params: dict[str, str] = field(default_factory=dict)
    cache_dir: Path = Path(".census_cache")
    timeout: float = 30.0

    @classmethod
    def from_dict(
        cls, data: Mapping[str, object], base_dir: Optional[Path] = None
    ) -> "CensusQuery":
        base_dir = Path(base_dir or ".")
        for key in ("endpoint", "variables", "vintage"):
            if key not in data:
                raise ConfigError(f"Census query lacks '{key}'", context={"key": key})

        raw_vars = data["variables"]
        if not isinstance(raw_vars, Mapping) or not raw_vars:
            raise ConfigError("'variables' must be a non-empty mapping", context={"key": "variables"})
        variables: dict[str, DemographicCategory] = {}
        for name, target in raw_vars.items():
            if not isinstance(target, Mapping):
                raise ConfigError(
                    f"Variable '{name}' must map to {{sex, race_ethnicity}}",
                    context={"key": f"variables.{name}"},
                )
            try:
                variables[str(name)] = DemographicCategory(
                    target.get("sex"), target.get("race_ethnicity")
                )
            except ValueError as exc:
                raise ConfigError(str(exc), context={"key": f"variables.{name}"}) from exc

        params = data.get("params") or {}
        if not isinstance(params, Mapping):
            raise ConfigError("'params' must be a mapping", context={"key": "params"})
        try:
            vintage = int(data["vintage"])  # type: ignore[arg-type]
        except (TypeError, ValueError) as exc:
            raise ConfigError("'vintage' must be a year", context={"key": "vintage"}) from exc

        return cls(
            endpoint=str(data["endpoint"]),
            variables=variables,
            region=str(data.get("region", "")),
            vintage=vintage,
            params={str(k): str(v) for k, v in params.items()},
            cache_dir=base_dir / str(data.get("cache_dir", ".census_cache")),
            timeout=float(data.get("timeout", 30.0)),  # type: ignore[arg-type]
        )

    def request_params(self) -> dict[str, str]:
        params = dict(self.params)
        params.setdefault("get", ",".join(["NAME", *sorted(self.variables)]))
        return params

    def geography_headers(self) -> set[str]:
        """Column names the API appends for the requested geography."""
        names: set[str] = set()
        for key in ("for", "in"):
            for clause in self.params.get(key, "").split():
                name = clause.split(":", 1)[0].strip()
                if name:
                    names.add(name)
        return names

    def cache_key(self) -> str:
        canonical = json.dumps(
            {"endpoint": self.endpoint, "params": self.request_params()},
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def cache_path(self) -> Path:
        return self.cache_dir / f"{self.cache_key()}.json"


def load_census_query(path: Path) -> CensusQuery:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"Invalid YAML in {path}: {exc}") from exc
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path} must contain a mapping")
    return CensusQuery.from_dict(data, base_dir=path.parent)


def parse_census_response(
    payload: Union[bytes, str],
    query: CensusQuery,
    tolerance: float = DEFAULT_TOLERANCE,
    source: str = "",
) -> CensusBenchmark:
    """Turn a census array-of-arrays JSON response into a benchmark."""
    try:
        table = json.loads(payload)
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedResponse(f"Response is not JSON: {exc}") from exc
    if (
        not isinstance(table, list)
        or len(table) < 2
        or not all(isinstance(row, list) for row in table)
    ):
        raise MalformedResponse("Expected a header row followed by data rows")
    header, data_rows = table[0], table[1:]
    if len(data_rows) != 1:
        raise MalformedResponse(
            f"Expected exactly one data row, got {len(data_rows)}",
            context={"rows": str(len(data_rows))},
        )
    row = data_rows[0]
    if len(row) != len(header):
        raise MalformedResponse("Data row width does not match header")

    ignored = _IGNORED_HEADERS | query.geography_headers()
    counts: dict[DemographicCategory, int] = {}
    seen: set[str] = set()
    for name, value in zip(header, row):
        name = str(name)
        if name in ignored:
            continue
        if name not in query.variables:
            raise UnmappedVariable(
                f"Response variable '{name}' has no category mapping",
                column=name,
                context={"variable": name},
            )
        try:
            count = _parse_count(value, column=name)
        except MalformedInput as exc:
            raise MalformedResponse(exc.message, column=name) from exc
        category = query.variables[name]
        counts[category] = counts.get(category, 0) + count
        seen.add(name)

    warnings = [
        AuditWarning(
            code="variable_missing",
            message=f"Mapped variable '{name}' is absent from the response",
            context={"variable": name},
        )
        for name in sorted(set(query.variables) - seen)
    ]
    if not counts:
        raise EmptyBenchmark("Census response contains no mapped variables")
    rows = [(cat, n, None) for cat, n in counts.items()]
    return _build_benchmark(rows, query.region, query.vintage, tolerance, source, warnings)


def fetch_benchmark(
    query: CensusQuery,
    api_key: Optional[str] = None,
    *,
    offline: bool = False,
    tolerance: float = DEFAULT_TOLERANCE,
) -> CensusBenchmark:
    """
    Fetch a benchmark from the census API and cache the raw response.

    With ``offline=True`` the cached response is read instead. The key
    defaults to the ``AEDT_CENSUS_API_KEY`` environment variable and is
    never part of the cache key. Network failures leave the cache as is.
    """
    cache_path = query.cache_path()
    if offline:
        if not cache_path.exists():
            raise NetworkError(
                f"No cached response at {cache_path}",
                context={"cache": str(cache_path)},
            )
        logger.info("Reading cached census response %s", cache_path)
        return parse_census_response(
            cache_path.read_bytes(), query, tolerance, source=str(cache_path)
        )

    params = query.request_params()
    key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
    if key:
        params["key"] = key
    logger.info("GET %s", query.endpoint)
    try:
        response = requests.get(query.endpoint, params=params, timeout=query.timeout)
        response.raise_for_status()
    except requests.RequestException as exc:
        raise NetworkError(
            f"Census request failed: {exc}", context={"endpoint": query.endpoint}
        ) from exc

    payload = response.content
    benchmark = parse_census_response(payload, query, tolerance, source=query.endpoint)

    query.cache_dir.mkdir(parents=True, exist_ok=True)
    tmp = cache_path.with_suffix(".tmp")
    tmp.write_bytes(payload)
    tmp.replace(cache_path)
    logger.info("Cached census response to %s", cache_path)
    return benchmark


# -----------------------------------------------------------------------
# Representativity
# -----------------------------------------------------------------------


@dataclass(frozen=True)
class RepresentativityIndex:
    """Observed share over benchmark share; ``None`` when undefined."""

    category: DemographicCategory
    observed_share: float
    benchmark_share: Optional[float]
    index: Optional[float]


@dataclass(frozen=True)
class RepresentativityTable:
    grouping: GroupingMode
    entries: tuple[RepresentativityIndex, ...]
    warnings: tuple[AuditWarning, ...] = ()

    def entry(self, category: DemographicCategory) -> Optional[RepresentativityIndex]:
        for e in self.entries:
            if e.category == category:
                return e
        return None


def _stats_grouping(stats: Sequence[CategoryStats]) -> GroupingMode:
    groupings = {s.category.grouping for s in stats}
    if len(groupings) > 1:
        raise GroupingMismatch(
            "Statistics mix groupings",
            context={"groupings": ",".join(sorted(g.value for g in groupings))},
        )
    return groupings.pop() if groupings else GroupingMode.INTERSECTIONAL


def representativity(stats: StatsLike, benchmark: CensusBenchmark) -> RepresentativityTable:
    """
    Per-category representativity index against a benchmark.

    Benchmark counts are summed onto the grouping of ``stats``. Observed
    shares are renormalized over the categories the benchmark covers, so
    unknown demographics do not dilute them. The index is undefined, with
    a warning, when the category is absent from the benchmark or has a
    zero benchmark share.
    """
    entries_in = stats.entries if isinstance(stats, RateTable) else list(stats)
    if not benchmark.entries or benchmark.total <= 0:
        raise EmptyBenchmark("Benchmark has no population")
    grouping = _stats_grouping(entries_in)
    counts = benchmark.collapsed_counts(grouping)
    total = benchmark.total
    covered = sum(s.share for s in entries_in if s.category in counts)

    indices: list[RepresentativityIndex] = []
    warnings: list[AuditWarning] = []
    for s in entries_in:
        if s.category not in counts:
            indices.append(RepresentativityIndex(s.category, s.share, None, None))
            warnings.append(
                AuditWarning(
                    code="category_not_in_benchmark",
                    message=f"{s.category.label} has no benchmark counterpart",
                    context={"category": s.category.label},
                )
            )
            continue
        observed = s.share / covered if covered else 0.0
        bench_share = counts[s.category] / total
        if bench_share == 0:
            indices.append(RepresentativityIndex(s.category, observed, 0.0, None))
            warnings.append(
                AuditWarning(
                    code="zero_benchmark_share",
                    message=f"{s.category.label} has zero benchmark population",
                    context={"category": s.category.label},
                )
            )
            continue
        indices.append(
            RepresentativityIndex(s.category, observed, bench_share, observed / bench_share)
        )
    return RepresentativityTable(grouping, tuple(indices), tuple(warnings))


def coverage_gaps(stats: StatsLike, benchmark: CensusBenchmark) -> list[AuditWarning]:
    """Benchmark categories with population but no audited applicants."""
    entries_in = stats.entries if isinstance(stats, RateTable) else list(stats)
    grouping = _stats_grouping(entries_in)
    present = {s.category for s in entries_in if s.count > 0}
    gaps: list[AuditWarning] = []
    for category, count in benchmark.collapsed_counts(grouping).items():
        if count > 0 and category not in present:
            gaps.append(
                AuditWarning(
                    code="benchmark_category_absent",
                    message=(
                        f"{category.label} is {count / benchmark.total:.2%} of the "
                        f"{benchmark.region or 'benchmark'} population but absent from the data"
                    ),
                    context={"category": category.label},
                )
            )
    return gaps
