"""
Audit metrics.

Computes:
- Selection rates per category at a funnel stage
- Scoring rates (share of a category scoring above the pooled median)
- Impact ratios against the best-treated category
- Four-fifths (80%) flags and the small-group (2%) policy
- Stage-by-stage funnel tables
- Impact-ratio change between input data and model outputs

All functions are pure. Tables are emitted in canonical category order,
so results never depend on record order.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from bias_audit.domain import (
    ApplicantRecord,
    AuditDataset,
    AuditWarning,
    DemographicCategory,
    GroupingMode,
    sort_categories,
)
from bias_audit.errors import GroupingMismatch, NoScores

logger = logging.getLogger(__name__)

DEFAULT_FOUR_FIFTHS_THRESHOLD = 0.8
DEFAULT_SMALL_GROUP_THRESHOLD = 0.02


class StatFlag(Enum):
    BELOW_REPRESENTATION_THRESHOLD = "below_representation_threshold"
    FAILS_FOUR_FIFTHS = "fails_four_fifths"
    EXCLUDED_FROM_RATIOS = "excluded_from_ratios"
    ZERO_DENOMINATOR = "zero_denominator"
    UNKNOWN_DEMOGRAPHICS = "unknown_demographics"


class RateBasis(Enum):
    REACHED_STAGE = "reached_stage"  # denominator: applicants reaching the stage
    SCORED = "scored"  # denominator: applicants with a score
    SELECTED = "selected"  # counts are applicants advanced at the stage


class SmallGroupMode(Enum):
    INCLUDE_AND_FLAG = "include_and_flag"
    EXCLUDE = "exclude"
    INCLUDE_SILENT = "include_silent"


@dataclass(frozen=True)
class SmallGroupPolicy:
    """
    Treatment of categories below a representation threshold.

    The default keeps small categories in every computation and flags
    them, rather than dropping them from impact-ratio calculations.
    """

    threshold: float = DEFAULT_SMALL_GROUP_THRESHOLD
    mode: SmallGroupMode = SmallGroupMode.INCLUDE_AND_FLAG

    def __post_init__(self) -> None:
        if not 0.0 <= self.threshold < 1.0:
            raise ValueError(f"Small-group threshold must be in [0, 1): {self.threshold}")

    def to_dict(self) -> dict[str, object]:
        return {"threshold": self.threshold, "mode": self.mode.value}


@dataclass(frozen=True)
class CategoryStats:
    """One row of an audit table."""

    category: DemographicCategory
    count: int
    share: float
    rate: Optional[float] = None
    impact_ratio: Optional[float] = None
    flags: frozenset[StatFlag] = frozenset()
    selected: int = 0  # numerator of ``rate``

    def has(self, flag: StatFlag) -> bool:
        return flag in self.flags

    @property
    def excluded(self) -> bool:
        """Excluded from the reference rate and from impact ratios."""
        return self.has(StatFlag.UNKNOWN_DEMOGRAPHICS) or self.has(
            StatFlag.EXCLUDED_FROM_RATIOS
        )

    def with_flags(
        self,
        add: Iterable[StatFlag] = (),
        remove: Iterable[StatFlag] = (),
    ) -> "CategoryStats":
        flags = (set(self.flags) - set(remove)) | set(add)
        return replace(self, flags=frozenset(flags))

    def sorted_flags(self) -> list[str]:
        return sorted(f.value for f in self.flags)


@dataclass(frozen=True)
class RateTable:
    """
    A per-category table for one basis.

    Stage tables use basis ``reached_stage`` and name their stage;
    scoring tables use basis ``scored`` and have no stage.
    """

    grouping: GroupingMode
    basis: RateBasis
    entries: tuple[CategoryStats, ...]
    stage_name: Optional[str] = None
    warnings: tuple[AuditWarning, ...] = ()
    median_score: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "warnings", tuple(self.warnings))

    @property
    def categories(self) -> list[DemographicCategory]:
        return [e.category for e in self.entries]

    def entry(self, category: DemographicCategory) -> Optional[CategoryStats]:
        for e in self.entries:
            if e.category == category:
                return e
        return None

    def with_entries(
        self,
        entries: Iterable[CategoryStats],
        extra_warnings: Iterable[AuditWarning] = (),
    ) -> "RateTable":
        return replace(
            self,
            entries=tuple(entries),
            warnings=self.warnings + tuple(extra_warnings),
        )


# Funnel tables are rate tables on the reached_stage basis.
StageTable = RateTable


# -----------------------------------------------------------------------
# Table construction
# -----------------------------------------------------------------------


def category_grid(
    records: Sequence[ApplicantRecord], grouping: GroupingMode
) -> list[DemographicCategory]:
    """
    Every category a grouping can produce from the observed labels.

    Intersectional mode is the full cross product of observed sex and
    race/ethnicity labels, including cells no record falls into.
    """
    sexes = sorted({r.category.sex for r in records})
    races = sorted({r.category.race_ethnicity for r in records})
    if grouping is GroupingMode.BY_SEX:
        cells = [DemographicCategory(s, None) for s in sexes]
    elif grouping is GroupingMode.BY_RACE_ETHNICITY:
        cells = [DemographicCategory(None, r) for r in races]
    else:
        cells = [DemographicCategory(s, r) for s, r in itertools.product(sexes, races)]
    return sort_categories(cells)


def _tabulate(
    records: Sequence[ApplicantRecord],
    grid_records: Sequence[ApplicantRecord],
    grouping: GroupingMode,
    counted: Callable[[ApplicantRecord], bool],
    selected: Callable[[ApplicantRecord], bool],
    basis: RateBasis,
    stage_name: Optional[str],
    with_rate: bool = True,
    omit_empty: bool = True,
) -> RateTable:
    counts: dict[DemographicCategory, int] = {}
    hits: dict[DemographicCategory, int] = {}
    for r in records:
        if not counted(r):
            continue
        key = r.category.collapse(grouping)
        counts[key] = counts.get(key, 0) + 1
        if selected(r):
            hits[key] = hits.get(key, 0) + 1

    total = sum(counts.values())
    entries: list[CategoryStats] = []
    warnings: list[AuditWarning] = []
    where = f"stage '{stage_name}'" if stage_name else basis.value
    for category in category_grid(grid_records, grouping):
        n = counts.get(category, 0)
        if n == 0 and omit_empty:
            warnings.append(
                AuditWarning(
                    code="zero_applicants",
                    message=f"No applicants for {category.label} at {where}; omitted",
                    context={
                        "category": category.label,
                        "grouping": grouping.value,
                        "basis": basis.value,
                        "stage": stage_name or "",
                    },
                )
            )
            continue
        k = hits.get(category, 0)
        flags = {StatFlag.UNKNOWN_DEMOGRAPHICS} if category.is_unknown else set()
        entries.append(
            CategoryStats(
                category=category,
                count=n,
                share=n / total if total else 0.0,
                rate=(k / n if n else None) if with_rate else None,
                flags=frozenset(flags),
                selected=k,
            )
        )
    for w in warnings:
        logger.debug("%s", w.message)
    return RateTable(
        grouping=grouping,
        basis=basis,
        entries=tuple(entries),
        stage_name=stage_name,
        warnings=tuple(warnings),
    )


def selection_rate_table(
    dataset: AuditDataset, stage_name: str, grouping: GroupingMode
) -> RateTable:
    """
    Selection rates at a stage: advanced / reached, per category.

    Categories nobody reached are omitted with a warning. Impact ratios
    are not computed here; see ``impact_ratios`` and ``finalize_table``.
    """
    index = dataset.stage_index(stage_name)
    return _tabulate(
        dataset.records,
        dataset.records,
        grouping,
        counted=lambda r: r.reached(index),
        selected=lambda r: r.advanced(index),
        basis=RateBasis.REACHED_STAGE,
        stage_name=stage_name,
    )


def scoring_rate_table(dataset: AuditDataset, grouping: GroupingMode) -> RateTable:
    """
    Scoring rates: share of a category's scored applicants whose score is
    strictly above the median of all scores in the dataset.
    """
    scores = [r.score for r in dataset.records if r.score is not None]
    if not scores:
        raise NoScores("No record carries a score")
    median = float(np.median(np.asarray(scores, dtype=float)))
    table = _tabulate(
        dataset.records,
        dataset.records,
        grouping,
        counted=lambda r: r.score is not None,
        selected=lambda r: r.score is not None and r.score > median,
        basis=RateBasis.SCORED,
        stage_name=None,
    )
    return replace(table, median_score=median)


def selected_population(
    dataset: AuditDataset, stage_name: str, grouping: GroupingMode
) -> RateTable:
    """
    Applicants advanced at a stage, per category.

    Every category that reached the stage is listed, including those
    with zero selections. ``share`` is the category's share of everyone
    selected.
    """
    index = dataset.stage_index(stage_name)
    reached = _tabulate(
        dataset.records,
        dataset.records,
        grouping,
        counted=lambda r: r.reached(index),
        selected=lambda r: r.advanced(index),
        basis=RateBasis.SELECTED,
        stage_name=stage_name,
    )
    total = sum(e.selected for e in reached.entries)
    if total == 0:
        return reached.with_entries(
            [],
            [
                AuditWarning(
                    code="no_selections",
                    message=f"Nobody advanced at stage '{stage_name}'",
                    context={"stage": stage_name},
                )
            ],
        )
    entries = [
        CategoryStats(
            category=e.category,
            count=e.selected,
            share=e.selected / total,
            flags=e.flags,
            selected=e.selected,
        )
        for e in reached.entries
    ]
    return replace(reached, entries=tuple(entries))


# -----------------------------------------------------------------------
# Ratios and flags
# -----------------------------------------------------------------------


def impact_ratios(stats: Sequence[CategoryStats]) -> list[CategoryStats]:
    """
    Divide each rate by the highest rate among non-excluded categories.

    A zero reference rate leaves every ratio undefined and flags every
    entry ``zero_denominator``.
    """
    eligible = [s.rate for s in stats if not s.excluded and s.rate is not None]
    reference = max(eligible) if eligible else None

    result: list[CategoryStats] = []
    for s in stats:
        s = s.with_flags(remove=[StatFlag.ZERO_DENOMINATOR])
        if reference is None:
            result.append(replace(s, impact_ratio=None))
        elif reference == 0:
            result.append(
                replace(s, impact_ratio=None).with_flags(add=[StatFlag.ZERO_DENOMINATOR])
            )
        elif s.excluded or s.rate is None:
            result.append(replace(s, impact_ratio=None))
        else:
            result.append(replace(s, impact_ratio=s.rate / reference))
    return result


def apply_four_fifths(
    stats: Sequence[CategoryStats],
    threshold: float = DEFAULT_FOUR_FIFTHS_THRESHOLD,
) -> list[CategoryStats]:
    """Flag impact ratios strictly below the threshold (0.80 passes)."""
    result: list[CategoryStats] = []
    for s in stats:
        failing = s.impact_ratio is not None and s.impact_ratio < threshold
        if failing:
            result.append(s.with_flags(add=[StatFlag.FAILS_FOUR_FIFTHS]))
        else:
            result.append(s.with_flags(remove=[StatFlag.FAILS_FOUR_FIFTHS]))
    return result


def apply_small_group_policy(
    stats: Sequence[CategoryStats], policy: SmallGroupPolicy
) -> list[CategoryStats]:
    """
    Flag (and optionally exclude) categories whose share is below the
    policy threshold. Under ``exclude`` the caller must recompute ratios.
    """
    managed = [StatFlag.BELOW_REPRESENTATION_THRESHOLD, StatFlag.EXCLUDED_FROM_RATIOS]
    result: list[CategoryStats] = []
    for s in stats:
        s = s.with_flags(remove=managed)
        small = s.share < policy.threshold
        if not small or policy.mode is SmallGroupMode.INCLUDE_SILENT:
            result.append(s)
        elif policy.mode is SmallGroupMode.EXCLUDE:
            result.append(s.with_flags(add=managed))
        else:
            result.append(s.with_flags(add=[StatFlag.BELOW_REPRESENTATION_THRESHOLD]))
    return result


def finalize_table(
    table: RateTable,
    policy: SmallGroupPolicy = SmallGroupPolicy(),
    four_fifths_threshold: float = DEFAULT_FOUR_FIFTHS_THRESHOLD,
) -> RateTable:
    """Small-group policy, then impact ratios, then four-fifths flags."""
    entries = apply_small_group_policy(table.entries, policy)
    entries = impact_ratios(entries)
    entries = apply_four_fifths(entries, four_fifths_threshold)

    extra: list[AuditWarning] = []
    if any(e.has(StatFlag.ZERO_DENOMINATOR) for e in entries):
        extra.append(
            AuditWarning(
                code="zero_reference_rate",
                message=(
                    "Highest rate is zero; impact ratios are undefined for "
                    f"{_describe(table)}"
                ),
                context={"grouping": table.grouping.value, "stage": table.stage_name or ""},
            )
        )
    return replace(table, entries=tuple(entries), warnings=table.warnings + tuple(extra))


def _describe(table: RateTable) -> str:
    if table.stage_name:
        return f"stage '{table.stage_name}' ({table.grouping.value})"
    return f"{table.basis.value} ({table.grouping.value})"


# -----------------------------------------------------------------------
# Funnel
# -----------------------------------------------------------------------


def stage_funnel(
    dataset: AuditDataset,
    grouping: GroupingMode,
    policy: SmallGroupPolicy = SmallGroupPolicy(),
    four_fifths_threshold: float = DEFAULT_FOUR_FIFTHS_THRESHOLD,
) -> list[RateTable]:
    """
    One finalized selection table per stage, in funnel order.

    Each stage's denominator is the population reaching that stage. A
    category whose count at stage k+1 exceeds its advanced count at
    stage k is reported as a ``funnel_not_monotone`` warning.
    """
    tables: list[RateTable] = []
    previous: Optional[RateTable] = None
    for stage_name in dataset.stage_names:
        table = finalize_table(
            selection_rate_table(dataset, stage_name, grouping),
            policy,
            four_fifths_threshold,
        )
        if previous is not None:
            table = table.with_entries(table.entries, _monotone_violations(previous, table))
        tables.append(table)
        previous = table
    return tables


def _monotone_violations(previous: RateTable, current: RateTable) -> list[AuditWarning]:
    found: list[AuditWarning] = []
    for e in current.entries:
        before = previous.entry(e.category)
        allowed = before.selected if before is not None else 0
        if e.count > allowed:
            found.append(
                AuditWarning(
                    code="funnel_not_monotone",
                    message=(
                        f"{e.category.label}: {e.count} reached '{current.stage_name}' "
                        f"but only {allowed} advanced at '{previous.stage_name}'"
                    ),
                    context={"category": e.category.label, "stage": current.stage_name or ""},
                )
            )
    return found


# -----------------------------------------------------------------------
# Input vs output
# -----------------------------------------------------------------------


class DeltaDirection(Enum):
    IMPROVED = "improved"
    WORSENED = "worsened"
    UNCHANGED = "unchanged"
    UNDEFINED = "undefined"


@dataclass(frozen=True)
class BiasDelta:
    """Change in a category's impact ratio from input data to model output."""

    category: DemographicCategory
    input_impact_ratio: Optional[float]
    output_impact_ratio: Optional[float]
    delta: Optional[float]
    direction: DeltaDirection
    notes: tuple[str, ...] = field(default=())
    input_flags: frozenset[StatFlag] = frozenset()
    output_flags: frozenset[StatFlag] = frozenset()


StatsLike = Union[RateTable, Sequence[CategoryStats]]


def _entries(stats: StatsLike) -> Sequence[CategoryStats]:
    return stats.entries if isinstance(stats, RateTable) else stats


def bias_delta(input_stats: StatsLike, output_stats: StatsLike) -> list[BiasDelta]:
    """
    Per-category impact-ratio change: output minus input.

    Categories present in only one list, or with an undefined ratio on
    either side, are reported with direction ``undefined``.
    """
    before = {s.category: s for s in _entries(input_stats)}
    after = {s.category: s for s in _entries(output_stats)}

    groupings = {c.grouping for c in itertools.chain(before, after)}
    if len(groupings) > 1:
        raise GroupingMismatch(
            "Input and output statistics use different groupings",
            context={"groupings": ",".join(sorted(g.value for g in groupings))},
        )

    deltas: list[BiasDelta] = []
    for category in sort_categories(set(before) | set(after)):
        b = before.get(category)
        a = after.get(category)
        ir_in = b.impact_ratio if b else None
        ir_out = a.impact_ratio if a else None
        flags = dict(
            input_flags=b.flags if b else frozenset(),
            output_flags=a.flags if a else frozenset(),
        )
        if b is None or a is None:
            side = "input" if b is None else "output"
            deltas.append(
                BiasDelta(
                    category, ir_in, ir_out, None, DeltaDirection.UNDEFINED,
                    notes=(f"absent from {side} data",), **flags,
                )
            )
            continue
        if ir_in is None or ir_out is None:
            deltas.append(
                BiasDelta(
                    category, ir_in, ir_out, None, DeltaDirection.UNDEFINED,
                    notes=("impact ratio undefined",), **flags,
                )
            )
            continue
        delta = ir_out - ir_in
        if delta > 0:
            direction = DeltaDirection.IMPROVED
        elif delta < 0:
            direction = DeltaDirection.WORSENED
        else:
            direction = DeltaDirection.UNCHANGED
        deltas.append(BiasDelta(category, ir_in, ir_out, delta, direction, **flags))
    return deltas
