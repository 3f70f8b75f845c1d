"""
Command-line interface for the Bias Audit Engine.

Subcommands: validate, audit, benchmark (show|fetch), sample and render.

Exit codes: 0 success, 1 findings under ``--strict``, 2 operational
errors. Four-fifths failures never change the exit code; they are
listed in findings.json.
"""

from __future__ import annotations

import argparse
import json
import logging
from datetime import date
from pathlib import Path
from typing import Optional

from rich import box
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table

from bias_audit.audit import prepare_dataset, run_audit
from bias_audit.benchmark import (
    CensusBenchmark,
    fetch_benchmark,
    load_benchmark_file,
    load_bundled_benchmark,
    load_census_query,
)
from bias_audit.config import (
    RENDER_FORMATS,
    BenchmarkKind,
    BenchmarkSource,
    RunConfig,
    load_run_config,
)
from bias_audit.domain import AuditDataset, GroupingMode, ProtectedAxis, load_vocabulary
from bias_audit.errors import AuditError, ConfigError, DatasetErrors
from bias_audit.ingestion import (
    InputFormat,
    check_data_window,
    check_jurisdiction,
    load_binding,
    merge_datasets,
    parse_file,
)
from bias_audit.metrics import (
    SmallGroupMode,
    SmallGroupPolicy,
    StatFlag,
    apply_small_group_policy,
)
from bias_audit.report_generator import (
    REPORT_FILENAMES,
    ReportGenerator,
    assemble_report,
    findings_summary,
    render_report,
)
from bias_audit.sampling import verification_sample

logger = logging.getLogger(__name__)

console = Console()

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_ERROR = 2


def _configure_logging(verbosity: int) -> None:
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG)
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


# -----------------------------------------------------------------------
# Config assembly
# -----------------------------------------------------------------------


def _date(value: str) -> date:
    try:
        return date.fromisoformat(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {value}") from None


def _build_config(args: argparse.Namespace) -> RunConfig:
    """Config file values, then command-line overrides."""
    config = load_run_config(Path(args.config)) if args.config else RunConfig()

    overrides: dict[str, object] = {
        "inputs": tuple(Path(p) for p in args.input) if args.input else None,
        "input_format": InputFormat(args.input_format) if args.input_format else None,
        "binding": Path(args.binding) if args.binding else None,
        "vocabulary": Path(args.vocabulary) if args.vocabulary else None,
        "as_of_date": args.as_of,
        "jurisdiction": args.jurisdiction,
        "output_dir": Path(args.output_dir) if args.output_dir else None,
        "strict": True if args.strict else None,
    }
    if getattr(args, "command", "") == "audit":
        overrides.update(
            audit_date=args.audit_date,
            groupings=tuple(GroupingMode(g) for g in args.grouping) if args.grouping else None,
            proxy_axes=tuple(ProtectedAxis(a) for a in args.proxy_axis) if args.proxy_axis else None,
            four_fifths_threshold=args.four_fifths_threshold,
            proxy_threshold=args.proxy_threshold,
            delta_stage=args.delta_stage,
            formats=tuple(args.formats.split(",")) if args.formats else None,
            sample_fraction=args.sample_fraction,
            sample_seed=args.sample_seed,
        )
        if args.small_group_threshold is not None or args.small_group_mode:
            try:
                overrides["small_group"] = SmallGroupPolicy(
                    args.small_group_threshold
                    if args.small_group_threshold is not None
                    else config.small_group.threshold,
                    SmallGroupMode(args.small_group_mode)
                    if args.small_group_mode
                    else config.small_group.mode,
                )
            except ValueError as exc:
                raise ConfigError(str(exc), context={"key": "small_group_threshold"}) from exc
    if getattr(args, "command", "") in ("audit", "sample"):
        overrides.update(
            filter_window=True if args.filter_window else None,
            filter_jurisdiction=True if args.filter_jurisdiction else None,
        )
    if getattr(args, "command", "") in ("audit", "benchmark"):
        source = _benchmark_override(args)
        if source is not None:
            overrides["benchmark"] = source
    return config.with_overrides(**overrides)


def _benchmark_override(args: argparse.Namespace) -> Optional[BenchmarkSource]:
    if getattr(args, "no_benchmark", False):
        return BenchmarkSource(kind=BenchmarkKind.NONE, name="")
    if getattr(args, "census_query", None):
        return BenchmarkSource(
            kind=BenchmarkKind.FETCH,
            name="",
            path=Path(args.census_query),
            offline=bool(getattr(args, "offline", False)),
        )
    if getattr(args, "benchmark_file", None):
        return BenchmarkSource(
            kind=BenchmarkKind.FILE,
            name="",
            path=Path(args.benchmark_file),
            region=args.region or "",
            vintage=args.vintage or 0,
        )
    if getattr(args, "benchmark", None):
        return BenchmarkSource.from_value(args.benchmark, Path("."))
    return None


def _load_dataset(config: RunConfig) -> AuditDataset:
    config.check_paths()
    if config.binding is None:
        raise ConfigError("No schema binding configured", context={"key": "binding"})
    binding = load_binding(config.binding)
    vocabulary = load_vocabulary(config.vocabulary)
    datasets = [
        parse_file(
            path,
            binding,
            vocabulary,
            fmt=config.input_format,
            as_of_date=config.as_of_date,
            source_description=config.source_description,
        )
        for path in config.inputs
    ]
    return merge_datasets(datasets)


def _load_benchmark(config: RunConfig, fetch: bool = False) -> Optional[CensusBenchmark]:
    source = config.benchmark
    vocabulary = load_vocabulary(config.vocabulary)
    if source.kind is BenchmarkKind.NONE:
        return None
    if source.kind is BenchmarkKind.BUNDLED:
        return load_bundled_benchmark(source.name, vocabulary, config.benchmark_tolerance)
    if source.kind is BenchmarkKind.FILE:
        return load_benchmark_file(
            source.path, source.region, source.vintage, vocabulary, config.benchmark_tolerance
        )
    query = load_census_query(source.path)
    return fetch_benchmark(
        query,
        offline=source.offline and not fetch,
        tolerance=config.benchmark_tolerance,
    )


# -----------------------------------------------------------------------
# Console views
# -----------------------------------------------------------------------


def _print_issues(exc: AuditError) -> None:
    issues = exc.issues if isinstance(exc, DatasetErrors) else [exc]
    table = Table(title=f"{len(issues)} problem(s) found", box=box.ROUNDED, border_style="red")
    table.add_column("Row", justify="right")
    table.add_column("Column")
    table.add_column("Code", style="bold")
    table.add_column("Message")
    for issue in issues:
        table.add_row(
            "" if issue.row is None else str(issue.row),
            issue.column or "",
            issue.code,
            issue.message,
        )
    console.print(table)


def _print_checks(dataset: AuditDataset, config: RunConfig) -> list[str]:
    """Print window and jurisdiction results; returns warning lines."""
    window = check_data_window(dataset)
    juris = check_jurisdiction(dataset, config.jurisdiction)
    console.print(
        Panel(
            f"[bold]Records:[/bold] {len(dataset)}\n"
            f"[bold]Stages:[/bold] {', '.join(dataset.stage_names)}\n"
            f"[bold]As-of date:[/bold] {dataset.as_of_date}\n"
            f"[bold]Window:[/bold] {window.window_start} to {window.window_end} "
            f"({window.in_window} in, {window.out_of_window} out)\n"
            f"[bold]Jurisdiction '{juris.expected_tag}':[/bold] "
            f"{juris.matching} matching, {juris.non_matching} not",
            title="Dataset Summary",
            border_style="green" if window.clean and juris.clean else "yellow",
        )
    )
    lines: list[str] = []
    for label, ids in (
        ("Outside data window", window.offending_ids),
        ("Jurisdiction mismatch", juris.offending_ids),
    ):
        if ids:
            table = Table(title=label, box=box.ROUNDED, border_style="yellow")
            table.add_column("Record id", style="dim")
            for rid in ids:
                table.add_row(rid)
            console.print(table)
            lines.append(f"{label}: {len(ids)}")
    return lines


def _print_funnel(report_dict: dict) -> None:
    table = Table(title="Stage Funnel", box=box.ROUNDED, show_lines=True)
    table.add_column("Grouping")
    table.add_column("Stage", style="bold")
    table.add_column("Reached", justify="right")
    table.add_column("Advanced", justify="right")
    table.add_column("Lowest IR", justify="right")
    table.add_column("Fails 4/5")
    for row in report_dict["stage_funnel"]:
        low = row["min_impact_ratio"]
        failing = ", ".join(row["failing_four_fifths"])
        table.add_row(
            row["grouping"],
            row["stage"],
            str(row["reached"]),
            str(row["advanced"]),
            "-" if low is None else f"{low:.4f}",
            f"[red]{failing}[/red]" if failing else "",
        )
    console.print(table)


def _print_benchmark(benchmark: CensusBenchmark, small_group: SmallGroupPolicy) -> None:
    flagged = {s.category for s in _small_group_flags(benchmark, small_group)}
    table = Table(
        title=f"Census Benchmark: {benchmark.region} {benchmark.vintage}",
        box=box.ROUNDED,
    )
    table.add_column("Sex")
    table.add_column("Race/Ethnicity")
    table.add_column("Count", justify="right")
    table.add_column("Share", justify="right", style="bold")
    table.add_column("Published", justify="right")
    table.add_column(f"< {small_group.threshold:.0%}", justify="center")
    total = benchmark.total
    for e in benchmark.entries:
        table.add_row(
            e.category.sex or "",
            e.category.race_ethnicity or "",
            f"{e.count:,}",
            f"{e.count / total:.2%}",
            "-" if e.published_share is None else f"{e.published_share:.2%}",
            "Y" if e.category in flagged else "",
        )
    console.print(table)
    console.print(f"\n[bold]Total population: {total:,}[/bold]")
    for w in benchmark.warnings:
        console.print(f"[yellow]{w.code}:[/yellow] {w.message}")


def _small_group_flags(benchmark: CensusBenchmark, policy: SmallGroupPolicy) -> list:
    return [
        s
        for s in apply_small_group_policy(benchmark.as_stats(), policy)
        if s.has(StatFlag.BELOW_REPRESENTATION_THRESHOLD)
    ]


# -----------------------------------------------------------------------
# Subcommands
# -----------------------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    """Parse inputs and run the data-window and jurisdiction checks."""
    config = _build_config(args)
    try:
        dataset = _load_dataset(config)
    except DatasetErrors as exc:
        _print_issues(exc)
        return EXIT_ERROR
    findings = _print_checks(dataset, config)
    if findings and config.strict:
        console.print("[red]Validation findings under --strict[/red]")
        return EXIT_FINDINGS
    console.print("[green]Dataset is valid.[/green]")
    return EXIT_OK


def cmd_audit(args: argparse.Namespace) -> int:
    """Run the full audit and write the rendered reports."""
    config = _build_config(args)
    try:
        dataset = _load_dataset(config)
    except DatasetErrors as exc:
        _print_issues(exc)
        return EXIT_ERROR
    benchmark = _load_benchmark(config)

    results = run_audit(dataset, config, benchmark)
    report = assemble_report(results, config)
    data = report.to_dict()

    generator = ReportGenerator(config.output_dir)
    generator.write_reports(data, config.formats)
    generator.write_findings(data)
    if config.sample_fraction is not None:
        manifest = verification_sample(results.dataset, config.sample_fraction, config.sample_seed)
        generator.write_manifest(manifest)

    _print_funnel(data)
    summary = findings_summary(data)
    console.print(
        Panel(
            f"[bold]Four-fifths failures:[/bold] {len(summary['four_fifths_failures'])}\n"
            f"[bold]Small-group flags:[/bold] {len(summary['small_group_flags'])}\n"
            f"[bold]Proxy flags:[/bold] {len(summary['proxy_flags'])}\n"
            f"[bold]Warnings:[/bold] {sum(summary['warning_counts'].values())}",
            title="Audit Summary",
            border_style="green",
        )
    )
    console.print(f"[green]Reports written to {generator.output_dir}[/green]")

    if config.strict and not (results.window.clean and results.jurisdiction.clean):
        return EXIT_FINDINGS
    return EXIT_OK


def cmd_benchmark(args: argparse.Namespace) -> int:
    """Show a benchmark, or fetch one from the census API into the cache."""
    config = _build_config(args)
    if args.action == "fetch":
        if config.benchmark.kind is not BenchmarkKind.FETCH:
            raise ConfigError("benchmark fetch needs --census-query", context={"key": "census_query"})
        benchmark = _load_benchmark(config, fetch=True)
    else:
        benchmark = _load_benchmark(config)
    if benchmark is None:
        console.print("[yellow]No benchmark configured[/yellow]")
        return EXIT_OK
    _print_benchmark(benchmark, config.small_group)
    return EXIT_OK


def cmd_sample(args: argparse.Namespace) -> int:
    """Write a seeded verification-sample manifest."""
    config = _build_config(args)
    fraction = args.fraction if args.fraction is not None else config.sample_fraction
    if fraction is None:
        raise ConfigError("No sample fraction given", context={"key": "sample_fraction"})
    seed = args.seed if args.seed is not None else config.sample_seed
    try:
        dataset = _load_dataset(config)
    except DatasetErrors as exc:
        _print_issues(exc)
        return EXIT_ERROR
    # Same records an audit with this config would fingerprint
    prepared = prepare_dataset(dataset, config)
    manifest = verification_sample(prepared.dataset, fraction, seed)
    target = Path(args.output) if args.output else None
    generator = ReportGenerator(target.parent if target else config.output_dir)
    path = generator.write_manifest(manifest, target)
    console.print(
        Panel(
            f"[bold]Population:[/bold] {manifest.population}\n"
            f"[bold]Selected:[/bold] {len(manifest.selected_ids)}\n"
            f"[bold]Seed:[/bold] {manifest.seed}\n"
            f"[bold]Fingerprint:[/bold] {manifest.fingerprint}",
            title="Verification Sample",
            border_style="green",
        )
    )
    console.print(f"[green]Manifest written to {path}[/green]")
    return EXIT_OK


def cmd_render(args: argparse.Namespace) -> int:
    """Re-render a saved JSON report without recomputing anything."""
    source = Path(args.report)
    try:
        data = json.loads(source.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"Cannot read report {source}: {exc}") from exc
    output = Path(args.output) if args.output else source.with_name(REPORT_FILENAMES[args.to])
    output.write_bytes(render_report(data, args.to))
    console.print(f"[green]Rendered {args.to} to {output}[/green]")
    return EXIT_OK


# -----------------------------------------------------------------------
# Parser
# -----------------------------------------------------------------------


def _data_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", "-c", help="YAML run config")
    p.add_argument("--input", "-i", action="append", help="Dataset file (repeatable)")
    p.add_argument("--input-format", choices=[f.value for f in InputFormat])
    p.add_argument("--binding", "-b", help="YAML schema binding")
    p.add_argument("--vocabulary", help="YAML label vocabulary (default: bundled)")
    p.add_argument("--as-of", type=_date, help="As-of date for the 12-month window")
    p.add_argument("--jurisdiction", help="Expected jurisdiction tag (default: NYC)")
    p.add_argument("--output-dir", "-o", help="Output directory")
    p.add_argument("--strict", action="store_true", help="Exit 1 on validation findings")
    return p


def _filter_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--filter-window", action="store_true", help="Drop out-of-window records")
    p.add_argument(
        "--filter-jurisdiction", action="store_true", help="Drop records from other jurisdictions"
    )


def _benchmark_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--benchmark", help="Bundled benchmark name (default: nyc_2020)")
    p.add_argument("--benchmark-file", help="Benchmark CSV file")
    p.add_argument("--region", help="Region label for --benchmark-file")
    p.add_argument("--vintage", type=int, help="Census year for --benchmark-file")
    p.add_argument("--census-query", help="YAML census API query")
    p.add_argument("--offline", action="store_true", help="Use the cached census response")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bias-audit",
        description="Bias Audit Engine - selection rates, impact ratios and census benchmarks for hiring data",
    )
    parser.add_argument(
        "--verbose", "-v", action="count", default=0, help="-v for info, -vv for debug logs"
    )
    subparsers = parser.add_subparsers(dest="command", help="Available commands")
    data = _data_options()

    # validate
    val_p = subparsers.add_parser("validate", parents=[data], help="Validate a dataset")
    val_p.set_defaults(func=cmd_validate)

    # audit
    audit_p = subparsers.add_parser("audit", parents=[data], help="Run a bias audit")
    audit_p.add_argument("--audit-date", type=_date, help="Date printed on the report")
    audit_p.add_argument(
        "--grouping", action="append", choices=[g.value for g in GroupingMode],
        help="Grouping to compute (repeatable; default: all)",
    )
    audit_p.add_argument(
        "--small-group-threshold", type=float, help="Representation threshold (default: 0.02)"
    )
    audit_p.add_argument("--small-group-mode", choices=[m.value for m in SmallGroupMode])
    audit_p.add_argument("--four-fifths-threshold", type=float, help="Default: 0.8")
    audit_p.add_argument("--proxy-threshold", type=float, help="Cramer's V flag level (default: 0.3)")
    audit_p.add_argument(
        "--proxy-axis", action="append", choices=[a.value for a in ProtectedAxis],
        help="Protected axis to screen (repeatable; default: both)",
    )
    audit_p.add_argument("--delta-stage", help="Stage compared between input and output data")
    audit_p.add_argument("--formats", help=f"Comma-separated: {','.join(RENDER_FORMATS)}")
    _filter_options(audit_p)
    audit_p.add_argument("--no-benchmark", action="store_true", help="Skip representativity")
    audit_p.add_argument("--sample-fraction", type=float, help="Also write a verification sample")
    audit_p.add_argument("--sample-seed", type=int)
    _benchmark_options(audit_p)
    audit_p.set_defaults(func=cmd_audit)

    # benchmark
    bench_p = subparsers.add_parser("benchmark", parents=[data], help="Show or fetch census benchmarks")
    bench_p.add_argument("action", choices=["show", "fetch"])
    _benchmark_options(bench_p)
    bench_p.set_defaults(func=cmd_benchmark)

    # sample
    sample_p = subparsers.add_parser("sample", parents=[data], help="Draw a verification sample")
    sample_p.add_argument("--fraction", type=float, help="Fraction of records, 0..1")
    sample_p.add_argument("--seed", type=int, help="Generator seed")
    sample_p.add_argument("--output", help="Manifest path (default: <output-dir>/sample_manifest.json)")
    _filter_options(sample_p)
    sample_p.set_defaults(func=cmd_sample)

    # render
    render_p = subparsers.add_parser("render", help="Re-render a saved JSON report")
    render_p.add_argument("report", help="report.json written by 'audit'")
    render_p.add_argument("--to", choices=list(RENDER_FORMATS), default="markdown")
    render_p.add_argument("--output", help="Output file")
    render_p.set_defaults(func=cmd_render)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)

    if not args.command:
        parser.print_help()
        return EXIT_OK

    try:
        return args.func(args)
    except AuditError as exc:
        _print_issues(exc)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001
        logger.error("Unexpected failure: %s", exc, exc_info=args.verbose >= 2)
        return EXIT_ERROR
