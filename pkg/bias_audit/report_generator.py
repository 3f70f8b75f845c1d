"""
Audit report generator.

Produces:
- The assembled AuditReport (metadata, tables, funnel, benchmarks,
  deltas, proxy findings, warnings)
- Canonical JSON (sorted keys, 4-decimal rounding, byte-deterministic)
- Markdown and static, print-friendly HTML projections of the JSON
- A machine-readable findings summary
- Report, findings and sample-manifest files in an output directory

Rendering works on the report's dict form only and never recomputes a
metric, so a saved JSON report can be re-rendered later.
"""

from __future__ import annotations

import html
import json
import logging
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any, Iterable, Optional, Union

from bias_audit.audit import AuditResults
from bias_audit.config import RunConfig
from bias_audit.domain import AuditWarning, GroupingMode
from bias_audit.metrics import BiasDelta, CategoryStats, RateTable, StatFlag
from bias_audit.sampling import SampleManifest, dataset_fingerprint

logger = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = "1"
DEFAULT_TOOL_DESCRIPTION = "Automated employment decision tool (not described)"
NOT_APPLICABLE = "Not applicable"
NONE_SCREENED = "None screened"
UNAVAILABLE = "Unavailable"

METRIC_LABELS = {
    "impact_ratio": (
        "Impact ratios compare proportional outcomes between categories; "
        "they say nothing about absolute performance."
    ),
    "four_fifths": "An impact ratio below the threshold is a finding, not a legal determination.",
    "bias_delta": (
        "Bias delta approximates the change in outlier treatment between "
        "input data and model outputs."
    ),
    "proxy_screening": "Proxy screening is a statistical heuristic, not a legal finding.",
    "representativity": (
        "Observed shares count only categories the census benchmark covers; "
        "an index of 1 means the category is represented as in the benchmark."
    ),
}


def _r(value: Optional[float]) -> Optional[float]:
    return None if value is None else round(value, 4)


def _grouping_order(report_tables: dict[str, Any]) -> list[str]:
    return [g.value for g in GroupingMode if g.value in report_tables]


# -----------------------------------------------------------------------
# Report model
# -----------------------------------------------------------------------


@dataclass(frozen=True)
class ReportMetadata:
    tool_description: str
    audit_date: date
    source_description: str
    as_of_date: date
    record_count: int
    dataset_record_count: int
    dataset_fingerprint: str
    data_window: dict[str, Any]
    jurisdiction_check: dict[str, Any]
    policy: dict[str, Any]
    config: dict[str, Any]
    labels: dict[str, str] = field(default_factory=lambda: dict(METRIC_LABELS))

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "tool_description": self.tool_description,
            "audit_date": self.audit_date.isoformat(),
            "source_description": self.source_description,
            "as_of_date": self.as_of_date.isoformat(),
            "record_count": self.record_count,
            "dataset_record_count": self.dataset_record_count,
            "dataset_fingerprint": self.dataset_fingerprint,
            "data_window": self.data_window,
            "jurisdiction_check": self.jurisdiction_check,
            "policy": self.policy,
            "config": self.config,
            "labels": {**self.labels, "data_window": self.data_window.get("convention", "")},
        }


@dataclass(frozen=True)
class AuditReport:
    metadata: ReportMetadata
    results: AuditResults

    @property
    def warnings(self) -> list[AuditWarning]:
        return list(self.results.warnings)

    def to_dict(self) -> dict[str, Any]:
        res = self.results
        tables: dict[str, Any] = {}
        for grouping, funnel in res.funnels.items():
            scoring = res.scoring.get(grouping)
            tables[grouping.value] = {
                "selection": [_table_dict(t) for t in funnel],
                "scoring": (
                    _table_dict(scoring)
                    if scoring is not None
                    else {"not_applicable": res.scoring_unavailable or NOT_APPLICABLE}
                ),
            }

        benchmark = res.benchmark
        representativity: dict[str, Any] = {
            "benchmark": (
                None
                if benchmark is None
                else {
                    "region": benchmark.region,
                    "vintage": benchmark.vintage,
                    "total": benchmark.total,
                    "source": benchmark.source,
                }
            ),
            "sections": [
                {
                    "name": s.name,
                    "stage": s.stage_name,
                    "grouping": s.table.grouping.value,
                    "entries": [
                        {
                            "category": e.category.to_dict(),
                            "label": e.category.label,
                            "observed_share": _r(e.observed_share),
                            "benchmark_share": _r(e.benchmark_share),
                            "index": _r(e.index),
                        }
                        for e in s.table.entries
                    ],
                }
                for s in res.representativity
            ],
        }

        return {
            "metadata": self.metadata.to_dict(),
            "tables": tables,
            "stage_funnel": _funnel_dict(res.funnels),
            "representativity": representativity,
            "bias_deltas": {
                "available": res.delta_unavailable is None,
                "reason": res.delta_unavailable,
                "stage": res.delta_stage,
                "groupings": {
                    g.value: [_delta_dict(d) for d in deltas]
                    for g, deltas in res.bias_deltas.items()
                },
            },
            "proxy_findings": [f.to_dict() for f in res.proxy_findings],
            "warnings": [w.to_dict() for w in res.warnings],
        }


def _stats_dict(s: CategoryStats) -> dict[str, Any]:
    return {
        "category": s.category.to_dict(),
        "label": s.category.label,
        "count": s.count,
        "selected": s.selected,
        "share": _r(s.share),
        "rate": _r(s.rate),
        "impact_ratio": _r(s.impact_ratio),
        "flags": s.sorted_flags(),
    }


def _table_dict(table: RateTable) -> dict[str, Any]:
    return {
        "grouping": table.grouping.value,
        "basis": table.basis.value,
        "stage": table.stage_name,
        "median_score": _r(table.median_score),
        "entries": [_stats_dict(e) for e in table.entries],
    }


def _funnel_dict(funnels: dict[GroupingMode, list[RateTable]]) -> list[dict[str, Any]]:
    """Per grouping and stage: who reached, who advanced, lowest ratio and failures."""
    rows: list[dict[str, Any]] = []
    for grouping, funnel in funnels.items():
        for table in funnel:
            ratios = [e.impact_ratio for e in table.entries if e.impact_ratio is not None]
            rows.append(
                {
                    "grouping": grouping.value,
                    "stage": table.stage_name,
                    "reached": sum(e.count for e in table.entries),
                    "advanced": sum(e.selected for e in table.entries),
                    "min_impact_ratio": _r(min(ratios)) if ratios else None,
                    "failing_four_fifths": [
                        e.category.label
                        for e in table.entries
                        if e.has(StatFlag.FAILS_FOUR_FIFTHS)
                    ],
                }
            )
    return rows


def _delta_dict(d: BiasDelta) -> dict[str, Any]:
    return {
        "category": d.category.to_dict(),
        "label": d.category.label,
        "input_impact_ratio": _r(d.input_impact_ratio),
        "output_impact_ratio": _r(d.output_impact_ratio),
        "delta": _r(d.delta),
        "direction": d.direction.value,
        "notes": list(d.notes),
        "input_flags": sorted(f.value for f in d.input_flags),
        "output_flags": sorted(f.value for f in d.output_flags),
    }


def assemble_report(results: AuditResults, config: RunConfig) -> AuditReport:
    """
    Wrap computed results with metadata.

    The audit date comes from the config, falling back to the dataset's
    as-of date, so identical inputs give identical reports.
    """
    audited = results.audited
    dataset = results.dataset
    metadata = ReportMetadata(
        tool_description=config.tool_description or DEFAULT_TOOL_DESCRIPTION,
        audit_date=config.audit_date or dataset.as_of_date,
        source_description=config.source_description or dataset.source_description,
        as_of_date=dataset.as_of_date,
        record_count=len(audited),
        dataset_record_count=len(dataset),
        dataset_fingerprint=dataset_fingerprint(dataset),
        data_window=results.window.to_dict(),
        jurisdiction_check=results.jurisdiction.to_dict(),
        policy={
            "small_group": config.small_group.to_dict(),
            "four_fifths_threshold": config.four_fifths_threshold,
            "proxy_threshold": config.proxy_threshold,
            "benchmark_tolerance": config.benchmark_tolerance,
        },
        config=config.to_dict(),
    )
    return AuditReport(metadata=metadata, results=results)


ReportLike = Union[AuditReport, dict[str, Any]]


def _as_dict(report: ReportLike) -> dict[str, Any]:
    return report.to_dict() if isinstance(report, AuditReport) else report


# -----------------------------------------------------------------------
# Findings summary
# -----------------------------------------------------------------------


def findings_summary(report: ReportLike) -> dict[str, Any]:
    """Four-fifths failures, small-group flags, proxy flags and warning counts."""
    data = _as_dict(report)
    failures: list[dict[str, Any]] = []
    small: list[dict[str, Any]] = []
    for grouping in _grouping_order(data["tables"]):
        group = data["tables"][grouping]
        scoring = group["scoring"]
        tables = list(group["selection"])
        if "entries" in scoring:
            tables.append(scoring)
        for t in tables:
            for e in t["entries"]:
                where = {
                    "grouping": grouping,
                    "basis": t["basis"],
                    "stage": t["stage"],
                    "category": e["label"],
                }
                if StatFlag.FAILS_FOUR_FIFTHS.value in e["flags"]:
                    failures.append({**where, "impact_ratio": e["impact_ratio"]})
                if StatFlag.BELOW_REPRESENTATION_THRESHOLD.value in e["flags"]:
                    small.append({**where, "share": e["share"]})

    counts: dict[str, int] = {}
    for w in data["warnings"]:
        counts[w["code"]] = counts.get(w["code"], 0) + 1

    return {
        "audit_date": data["metadata"]["audit_date"],
        "dataset_fingerprint": data["metadata"]["dataset_fingerprint"],
        "four_fifths_failures": failures,
        "small_group_flags": small,
        "proxy_flags": [
            {"feature": f["feature"], "protected_axis": f["protected_axis"], "value": f["value"]}
            for f in data["proxy_findings"]
            if f["flagged"]
        ],
        "warning_counts": dict(sorted(counts.items())),
    }


# -----------------------------------------------------------------------
# Rendering
# -----------------------------------------------------------------------


def canonical_json(data: Any) -> bytes:
    text = json.dumps(
        data, sort_keys=True, indent=2, separators=(",", ": "), ensure_ascii=True
    )
    return (text + "\n").encode("ascii")


def _num(value: Optional[float]) -> str:
    return "n/a" if value is None else str(value)


def _flags(flags: list[str]) -> str:
    return ", ".join(flags) if flags else ""


def _table_rows(table: dict[str, Any]) -> tuple[list[str], list[list[str]]]:
    header = ["Category", "Count", "Selected", "Share", "Rate", "Impact ratio", "Flags"]
    rows = [
        [
            e["label"],
            str(e["count"]),
            str(e["selected"]),
            _num(e["share"]),
            _num(e["rate"]),
            _num(e["impact_ratio"]),
            _flags(e["flags"]),
        ]
        for e in table["entries"]
    ]
    return header, rows


def _md_table(header: list[str], rows: list[list[str]]) -> list[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for row in rows:
        lines.append("| " + " | ".join(c.replace("|", "\\|") for c in row) + " |")
    return lines


def _sections(data: dict[str, Any]) -> list[tuple[str, list[tuple[str, Any]]]]:
    """
    Report content as (section title, blocks). A block is ("p", text),
    ("table", (header, rows)) or ("h3", text). Markdown and HTML both
    render from this list.
    """
    meta = data["metadata"]
    window = meta["data_window"]
    juris = meta["jurisdiction_check"]
    sections: list[tuple[str, list[tuple[str, Any]]]] = []

    overview: list[tuple[str, Any]] = [
        (
            "table",
            (
                ["Field", "Value"],
                [
                    ["Tool", meta["tool_description"]],
                    ["Audit date", meta["audit_date"]],
                    ["Data source", meta["source_description"] or "n/a"],
                    ["As-of date", meta["as_of_date"]],
                    ["Records audited", str(meta["record_count"])],
                    ["Records fingerprinted", str(meta["dataset_record_count"])],
                    ["Dataset fingerprint", meta["dataset_fingerprint"]],
                    [
                        "Data window",
                        f"{window['window_start']} to {window['window_end']} "
                        f"({window['in_window']} in, {window['out_of_window']} out)",
                    ],
                    [
                        "Jurisdiction",
                        f"{juris['expected_tag']} ({juris['matching']} matching, "
                        f"{juris['non_matching']} not)",
                    ],
                    [
                        "Small-group policy",
                        f"{meta['policy']['small_group']['mode']} below "
                        f"{meta['policy']['small_group']['threshold']}",
                    ],
                    ["Four-fifths threshold", str(meta["policy"]["four_fifths_threshold"])],
                    ["Proxy threshold", str(meta["policy"]["proxy_threshold"])],
                ],
            ),
        )
    ]
    for key in sorted(meta["labels"]):
        overview.append(("p", f"{key.replace('_', ' ').capitalize()}: {meta['labels'][key]}"))
    sections.append(("Audit overview", overview))

    funnel_rows = [
        [
            f["grouping"],
            f["stage"],
            str(f["reached"]),
            str(f["advanced"]),
            _num(f["min_impact_ratio"]),
            ", ".join(f["failing_four_fifths"]) or "none",
        ]
        for f in data["stage_funnel"]
    ]
    sections.append(
        (
            "Stage funnel",
            [
                (
                    "table",
                    (
                        ["Grouping", "Stage", "Reached", "Advanced", "Lowest impact ratio", "Fails four-fifths"],
                        funnel_rows,
                    ),
                )
            ],
        )
    )

    for grouping in _grouping_order(data["tables"]):
        group = data["tables"][grouping]
        blocks: list[tuple[str, Any]] = []
        for t in group["selection"]:
            blocks.append(("h3", f"Selection rates at stage '{t['stage']}'"))
            blocks.append(("table", _table_rows(t)))
        blocks.append(("h3", "Scoring rates"))
        scoring = group["scoring"]
        if "entries" in scoring:
            blocks.append(("p", f"Median score: {_num(scoring['median_score'])}"))
            blocks.append(("table", _table_rows(scoring)))
        else:
            blocks.append(("p", f"{NOT_APPLICABLE}: {scoring['not_applicable']}"))
        sections.append((f"Tables: {grouping}", blocks))

    rep = data["representativity"]
    rep_blocks: list[tuple[str, Any]] = []
    if rep["benchmark"] is None:
        rep_blocks.append(("p", f"{UNAVAILABLE}: no census benchmark configured"))
    else:
        b = rep["benchmark"]
        rep_blocks.append(
            ("p", f"Benchmark: {b['region']} {b['vintage']}, population {b['total']} ({b['source']})")
        )
        for s in rep["sections"]:
            rep_blocks.append(("h3", f"{s['name'].replace('_', ' ').capitalize()} (stage '{s['stage']}')"))
            rep_blocks.append(
                (
                    "table",
                    (
                        ["Category", "Observed share", "Benchmark share", "Index"],
                        [
                            [e["label"], _num(e["observed_share"]), _num(e["benchmark_share"]), _num(e["index"])]
                            for e in s["entries"]
                        ],
                    ),
                )
            )
    sections.append(("Representativity", rep_blocks))

    deltas = data["bias_deltas"]
    delta_blocks: list[tuple[str, Any]] = []
    if not deltas["available"]:
        delta_blocks.append(("p", f"{UNAVAILABLE}: {deltas['reason']}"))
    else:
        delta_blocks.append(("p", f"Compared at stage '{deltas['stage']}'."))
        for grouping in _grouping_order(deltas["groupings"]):
            delta_blocks.append(("h3", grouping))
            delta_blocks.append(
                (
                    "table",
                    (
                        ["Category", "Input ratio", "Output ratio", "Delta", "Direction", "Input flags", "Output flags"],
                        [
                            [
                                d["label"],
                                _num(d["input_impact_ratio"]),
                                _num(d["output_impact_ratio"]),
                                _num(d["delta"]),
                                d["direction"],
                                _flags(d["input_flags"]),
                                _flags(d["output_flags"]),
                            ]
                            for d in deltas["groupings"][grouping]
                        ],
                    ),
                )
            )
    sections.append(("Bias delta (input vs output)", delta_blocks))

    findings = data["proxy_findings"]
    if findings:
        proxy_blocks: list[tuple[str, Any]] = [
            (
                "table",
                (
                    ["Feature", "Protected axis", "Cramer's V", "Sample size", "Flagged", "Notes"],
                    [
                        [
                            f["feature"],
                            f["protected_axis"],
                            _num(f["value"]),
                            str(f["sample_size"]),
                            "yes" if f["flagged"] else "no",
                            "; ".join(f["notes"]),
                        ]
                        for f in findings
                    ],
                ),
            )
        ]
    else:
        proxy_blocks = [("p", f"{NONE_SCREENED}: the data carries no auxiliary features.")]
    sections.append(("Proxy feature screening", proxy_blocks))

    warnings = data["warnings"]
    if warnings:
        warning_blocks: list[tuple[str, Any]] = [
            ("table", (["Code", "Message"], [[w["code"], w["message"]] for w in warnings]))
        ]
    else:
        warning_blocks = [("p", "No warnings.")]
    sections.append(("Warnings", warning_blocks))
    return sections


def render_markdown(data: dict[str, Any]) -> str:
    lines: list[str] = ["# Bias audit report", ""]
    for title, blocks in _sections(data):
        lines.append(f"## {title}")
        lines.append("")
        for kind, content in blocks:
            if kind == "table":
                lines.extend(_md_table(*content))
            elif kind == "h3":
                lines.append(f"### {content}")
            else:
                lines.append(content)
            lines.append("")
    return "\n".join(lines).rstrip("\n") + "\n"


_HTML_STYLE = """
body { font-family: Georgia, serif; margin: 2em; color: #111; }
table { border-collapse: collapse; margin: 0.5em 0 1.5em; }
th, td { border: 1px solid #999; padding: 0.25em 0.6em; text-align: left; }
th { background: #eee; }
@media print { body { margin: 0; } h2 { page-break-before: auto; } }
""".strip()


def render_html(data: dict[str, Any]) -> str:
    e = html.escape
    out: list[str] = [
        "<!DOCTYPE html>",
        '<html lang="en">',
        "<head>",
        '<meta charset="utf-8">',
        "<title>Bias audit report</title>",
        f"<style>\n{_HTML_STYLE}\n</style>",
        "</head>",
        "<body>",
        "<h1>Bias audit report</h1>",
    ]
    for title, blocks in _sections(data):
        out.append(f"<h2>{e(title)}</h2>")
        for kind, content in blocks:
            if kind == "table":
                header, rows = content
                out.append("<table>")
                out.append("<tr>" + "".join(f"<th>{e(h)}</th>" for h in header) + "</tr>")
                for row in rows:
                    out.append("<tr>" + "".join(f"<td>{e(c)}</td>" for c in row) + "</tr>")
                out.append("</table>")
            elif kind == "h3":
                out.append(f"<h3>{e(content)}</h3>")
            else:
                out.append(f"<p>{e(content)}</p>")
    out.extend(["</body>", "</html>"])
    return "\n".join(out) + "\n"


def render_report(report: ReportLike, fmt: str) -> bytes:
    """Render to ``json``, ``markdown`` or ``html`` bytes."""
    data = _as_dict(report)
    if fmt == "json":
        return canonical_json(data)
    if fmt == "markdown":
        return render_markdown(data).encode("utf-8")
    if fmt == "html":
        return render_html(data).encode("utf-8")
    raise ValueError(f"Unknown report format: {fmt}")


REPORT_FILENAMES = {"json": "report.json", "markdown": "report.md", "html": "report.html"}


# -----------------------------------------------------------------------
# Export
# -----------------------------------------------------------------------


class ReportGenerator:
    """
    Writes an audit's report files into one output directory.

    Every file is rendered from the report's canonical dict, so the
    Markdown and HTML always agree with the JSON written beside them.
    """

    def __init__(self, output_dir: Path) -> None:
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def write_reports(self, report: ReportLike, formats: Iterable[str]) -> list[Path]:
        data = _as_dict(report)
        written: list[Path] = []
        for fmt in formats:
            path = self.output_dir / REPORT_FILENAMES[fmt]
            path.write_bytes(render_report(data, fmt))
            logger.info("Wrote %s", path)
            written.append(path)
        return written

    def write_findings(self, report: ReportLike) -> Path:
        path = self.output_dir / "findings.json"
        path.write_bytes(canonical_json(findings_summary(report)))
        return path

    def write_manifest(self, manifest: SampleManifest, path: Optional[Path] = None) -> Path:
        target = path or self.output_dir / "sample_manifest.json"
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(canonical_json(manifest.to_dict()))
        return target
