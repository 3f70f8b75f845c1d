"""
Audit orchestration.

Runs every configured computation over a parsed dataset and collects the
results and warnings in one place:

- data-window and jurisdiction checks (optionally filtering)
- stage funnels and scoring tables per grouping
- representativity of the applicant pool and the selected population
- input-vs-output bias deltas when both phases are present
- proxy screening per protected axis
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

from bias_audit.benchmark import (
    CensusBenchmark,
    RepresentativityTable,
    coverage_gaps,
    representativity,
)
from bias_audit.config import RunConfig
from bias_audit.domain import AuditDataset, AuditWarning, GroupingMode, Phase
from bias_audit.errors import NoScores
from bias_audit.ingestion import (
    JurisdictionCheckResult,
    WindowCheckResult,
    check_data_window,
    check_jurisdiction,
    filter_to_jurisdiction,
    filter_to_window,
)
from bias_audit.metrics import (
    BiasDelta,
    RateTable,
    bias_delta,
    finalize_table,
    scoring_rate_table,
    selected_population,
    selection_rate_table,
    stage_funnel,
)
from bias_audit.proxy import AssociationFinding, proxy_screen

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RepresentativitySection:
    name: str  # applicant_pool | selected_population
    stage_name: str
    table: RepresentativityTable


@dataclass
class AuditResults:
    dataset: AuditDataset  # every record audited, both phases, after filters
    audited: AuditDataset  # the records the rate tables are built from
    window: WindowCheckResult
    jurisdiction: JurisdictionCheckResult
    funnels: dict[GroupingMode, list[RateTable]] = field(default_factory=dict)
    scoring: dict[GroupingMode, RateTable] = field(default_factory=dict)
    scoring_unavailable: Optional[str] = None
    benchmark: Optional[CensusBenchmark] = None
    representativity: list[RepresentativitySection] = field(default_factory=list)
    delta_stage: Optional[str] = None
    delta_tables: dict[GroupingMode, tuple[RateTable, RateTable]] = field(default_factory=dict)
    bias_deltas: dict[GroupingMode, list[BiasDelta]] = field(default_factory=dict)
    delta_unavailable: Optional[str] = None
    proxy_findings: list[AssociationFinding] = field(default_factory=list)
    warnings: list[AuditWarning] = field(default_factory=list)


@dataclass(frozen=True)
class PreparedDataset:
    """A dataset after the data requirement checks and any opt-in filters."""

    dataset: AuditDataset
    window: WindowCheckResult
    jurisdiction: JurisdictionCheckResult
    warnings: tuple[AuditWarning, ...]


def prepare_dataset(dataset: AuditDataset, config: RunConfig) -> PreparedDataset:
    """
    Run the window and jurisdiction checks, then apply the filters the
    config asks for. Checks always describe the data before filtering.
    """
    window = check_data_window(dataset)
    jurisdiction = check_jurisdiction(dataset, config.jurisdiction)
    warnings: list[AuditWarning] = window.warnings() + jurisdiction.warnings()

    if config.filter_window and not window.clean:
        dataset = filter_to_window(dataset)
        warnings.append(
            AuditWarning(
                code="records_filtered",
                message=f"Dropped {window.out_of_window} out-of-window record(s) before auditing",
                context={"filter": "window"},
            )
        )
    if config.filter_jurisdiction:
        kept = filter_to_jurisdiction(dataset, config.jurisdiction)
        if len(kept) != len(dataset):
            warnings.append(
                AuditWarning(
                    code="records_filtered",
                    message=(
                        f"Dropped {len(dataset) - len(kept)} record(s) not tagged "
                        f"'{config.jurisdiction}' before auditing"
                    ),
                    context={"filter": "jurisdiction"},
                )
            )
        dataset = kept
    return PreparedDataset(dataset, window, jurisdiction, tuple(warnings))


def _audited_population(dataset: AuditDataset) -> tuple[AuditDataset, Optional[AuditDataset]]:
    """Output-phase records are audited; input-phase records only feed deltas."""
    phases = dataset.phases
    if Phase.OUTPUT in phases and Phase.INPUT in phases:
        return dataset.subset(Phase.OUTPUT), dataset.subset(Phase.INPUT)
    if Phase.OUTPUT in phases:
        return dataset, None
    return dataset, dataset


def _input_phase(warning: AuditWarning) -> AuditWarning:
    return AuditWarning(
        code=warning.code,
        message=f"Input phase: {warning.message}",
        context={**warning.context, "phase": Phase.INPUT.value},
    )


def _dedupe(warnings: list[AuditWarning]) -> list[AuditWarning]:
    """First occurrence of each (code, message), in order."""
    seen: set[tuple[str, str]] = set()
    kept: list[AuditWarning] = []
    for w in warnings:
        if (w.code, w.message) not in seen:
            seen.add((w.code, w.message))
            kept.append(w)
    return kept


def run_audit(
    dataset: AuditDataset,
    config: RunConfig,
    benchmark: Optional[CensusBenchmark] = None,
) -> AuditResults:
    prepared = prepare_dataset(dataset, config)
    warnings = list(prepared.warnings)

    audited, input_phase = _audited_population(prepared.dataset)
    results = AuditResults(
        dataset=prepared.dataset,
        audited=audited,
        window=prepared.window,
        jurisdiction=prepared.jurisdiction,
        benchmark=benchmark,
    )
    policy = config.small_group
    threshold = config.four_fifths_threshold

    for grouping in config.groupings:
        funnel = stage_funnel(audited, grouping, policy, threshold)
        results.funnels[grouping] = funnel
        for table in funnel:
            warnings.extend(table.warnings)

    try:
        for grouping in config.groupings:
            table = finalize_table(scoring_rate_table(audited, grouping), policy, threshold)
            results.scoring[grouping] = table
            warnings.extend(table.warnings)
    except NoScores as exc:
        results.scoring = {}
        results.scoring_unavailable = exc.message
        logger.info("Scoring tables not applicable: %s", exc.message)

    if benchmark is not None:
        warnings.extend(benchmark.warnings)
        first, last = audited.stage_names[0], audited.stage_names[-1]
        pool = selection_rate_table(audited, first, GroupingMode.INTERSECTIONAL)
        hired = selected_population(audited, last, GroupingMode.INTERSECTIONAL)
        for name, stage, stats in (
            ("applicant_pool", first, pool),
            ("selected_population", last, hired),
        ):
            table = representativity(stats, benchmark)
            results.representativity.append(RepresentativitySection(name, stage, table))
            warnings.extend(table.warnings)
        warnings.extend(w for w in hired.warnings if w.code == "no_selections")
        warnings.extend(coverage_gaps(pool, benchmark))

    if input_phase is None:
        results.delta_unavailable = "No input-phase records; bias delta needs both phases"
    elif input_phase is audited:
        results.delta_unavailable = "No output-phase records; bias delta needs both phases"
    else:
        stage = config.delta_stage or audited.stage_names[0]
        results.delta_stage = stage
        for grouping in config.groupings:
            before = finalize_table(
                selection_rate_table(input_phase, stage, grouping), policy, threshold
            )
            after = finalize_table(
                selection_rate_table(audited, stage, grouping), policy, threshold
            )
            results.delta_tables[grouping] = (before, after)
            results.bias_deltas[grouping] = bias_delta(before, after)
            warnings.extend(_input_phase(w) for w in before.warnings)
            warnings.extend(after.warnings)

    for axis in config.proxy_axes:
        results.proxy_findings.extend(proxy_screen(audited, axis, config.proxy_threshold))

    results.warnings = _dedupe(warnings)
    logger.info(
        "Audited %d record(s) over %d stage(s); %d warning(s)",
        len(audited),
        len(audited.stage_names),
        len(results.warnings),
    )
    return results
