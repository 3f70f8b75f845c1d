"""
Dataset ingestion and data-requirement checks.

Handles:
- Schema bindings from YAML (field -> source column, ordered stage columns)
- CSV and JSON parsing into validated AuditDatasets, reporting every
  failure in one pass rather than stopping at the first
- The 12-month data-window check and the jurisdiction check
- Explicit window/jurisdiction filtering (a caller choice, never implicit)
- Canonical CSV serialization, used for round-trips and fingerprints
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass
from datetime import date, datetime
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional

import pandas as pd
import yaml

from bias_audit.domain import (
    ApplicantRecord,
    AuditDataset,
    AuditWarning,
    FeatureValue,
    Phase,
    StageOutcome,
    VocabularyConfig,
    canonicalize_category,
    normalize_label,
    validate_record,
)
from bias_audit.errors import (
    AuditError,
    ConfigError,
    DatasetErrors,
    DuplicateId,
    EmptyDataset,
    InvalidDate,
    InvalidRecord,
    MalformedInput,
    MissingColumn,
    UnknownLabel,
)

logger = logging.getLogger(__name__)


class InputFormat(Enum):
    CSV = "csv"
    JSON = "json"


REQUIRED_FIELDS: tuple[str, ...] = ("id", "event_date", "sex", "race_ethnicity")
OPTIONAL_FIELDS: tuple[str, ...] = ("jurisdiction", "score", "phase")

_PHASE_ALIASES: dict[str, Phase] = {
    "": Phase.OUTPUT,
    "output": Phase.OUTPUT,
    "model_output": Phase.OUTPUT,
    "input": Phase.INPUT,
    "training": Phase.INPUT,
    "train": Phase.INPUT,
}

WINDOW_MONTHS = 12


@dataclass(frozen=True)
class SchemaBinding:
    """
    Binds source columns to record fields.

    Stage order in ``stages`` defines the funnel order for the dataset.
    """

    columns: dict[str, str]
    stages: tuple[tuple[str, str], ...]
    features: tuple[str, ...] = ()
    categorical_features: frozenset[str] = frozenset()
    date_format: str = "%Y-%m-%d"

    def __post_init__(self) -> None:
        object.__setattr__(self, "stages", tuple(tuple(s) for s in self.stages))
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(
            self, "categorical_features", frozenset(self.categorical_features)
        )
        missing = [f for f in REQUIRED_FIELDS if not self.columns.get(f)]
        if missing:
            raise ConfigError(
                f"Schema binding lacks required field(s): {', '.join(missing)}"
            )
        unknown = set(self.columns) - set(REQUIRED_FIELDS) - set(OPTIONAL_FIELDS)
        if unknown:
            raise ConfigError(
                f"Schema binding has unknown field(s): {', '.join(sorted(unknown))}"
            )
        if not self.stages:
            raise ConfigError("Schema binding needs at least one stage column")
        names = [name for name, _ in self.stages]
        if len(set(names)) != len(names):
            raise ConfigError("Schema binding repeats a stage name")

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> "SchemaBinding":
        columns = data.get("columns") or {}
        if not isinstance(columns, Mapping):
            raise ConfigError("'columns' must map field names to column names")

        stages: list[tuple[str, str]] = []
        for entry in data.get("stages") or []:
            if isinstance(entry, Mapping):
                name = str(entry.get("name", "")).strip()
                column = str(entry.get("column", name)).strip()
            else:
                name = column = str(entry).strip()
            if not name:
                raise ConfigError("Stage entries need a 'name'")
            stages.append((name, column))

        features = [str(f) for f in data.get("features") or []]
        categorical = [str(f) for f in data.get("categorical_features") or []]
        return cls(
            columns={str(k): str(v) for k, v in columns.items()},
            stages=tuple(stages),
            features=tuple(features),
            categorical_features=frozenset(categorical),
            date_format=str(data.get("date_format", "%Y-%m-%d")),
        )

    def bound_columns(self) -> list[str]:
        cols = list(self.columns.values())
        cols.extend(column for _, column in self.stages)
        cols.extend(self.features)
        return cols


def load_binding(path: Path) -> SchemaBinding:
    """Load a schema binding from a YAML file."""
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except OSError as e:
        raise ConfigError(f"Cannot read binding file: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in binding file {path}: {e}") from e
    if not isinstance(data, Mapping):
        raise ConfigError(f"Binding file {path} must contain a mapping")
    return SchemaBinding.from_dict(data)


def canonical_binding(dataset: AuditDataset) -> SchemaBinding:
    """A binding whose column names equal the field, stage and feature names."""
    fields = REQUIRED_FIELDS + OPTIONAL_FIELDS
    features = dataset.feature_names
    categorical = {
        name
        for name in features
        if any(isinstance(r.features.get(name), str) for r in dataset.records)
    }
    return SchemaBinding(
        columns={f: f for f in fields},
        stages=tuple((name, name) for name in dataset.stage_names),
        features=tuple(features),
        categorical_features=frozenset(categorical),
    )


# -----------------------------------------------------------------------
# Parsing
# -----------------------------------------------------------------------


def _read_table(text: str, fmt: InputFormat) -> tuple[pd.DataFrame, dict[int, int]]:
    """
    Tabulate raw text into a DataFrame of strings.

    Also returns the CSV rows with fewer fields than the header, keyed by
    1-based row number, with the number of fields each one carried.
    """
    if fmt is InputFormat.CSV:
        try:
            frame = pd.read_csv(
                io.StringIO(text),
                dtype=str,
                keep_default_na=False,
                na_filter=False,
            )
        except pd.errors.EmptyDataError:
            raise MalformedInput("CSV input is empty") from None
        except pd.errors.ParserError as e:
            raise MalformedInput(f"CSV syntax error: {e}") from None
        # na_filter=False keeps empty cells as ""; only missing fields are NaN
        fields = frame.notna().sum(axis=1)
        short = {
            i: int(n)
            for i, n in enumerate(fields.tolist(), start=1)
            if n < len(frame.columns)
        }
        return frame.fillna(""), short

    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedInput(
            f"JSON syntax error: {e.msg}", context={"line": str(e.lineno)}
        ) from None
    if not isinstance(payload, dict) or not isinstance(payload.get("records"), list):
        raise MalformedInput("JSON input must be an object with a 'records' array")

    rows: list[dict[str, str]] = []
    for i, item in enumerate(payload["records"], start=1):
        if not isinstance(item, dict):
            raise MalformedInput("Each record must be a flat object", row=i)
        row: dict[str, str] = {}
        for key, value in item.items():
            if isinstance(value, (dict, list)):
                raise MalformedInput(
                    "Nested values are not supported", row=i, column=str(key)
                )
            row[str(key)] = "" if value is None else str(value)
        rows.append(row)
    frame = pd.DataFrame.from_records(rows)
    return frame.fillna(""), {}


def parse_dataset(
    data: bytes,
    fmt: InputFormat | str,
    binding: SchemaBinding,
    vocabulary: VocabularyConfig,
    as_of_date: Optional[date] = None,
    source_description: str = "",
) -> AuditDataset:
    """
    Parse CSV or JSON bytes into a validated AuditDataset.

    Raises MalformedInput for syntax failures. Every row-level problem
    (unknown labels, bad dates, duplicate ids, invariant violations) is
    collected and raised together as DatasetErrors.
    """
    fmt = InputFormat(fmt) if isinstance(fmt, str) else fmt
    try:
        text = data.decode("utf-8-sig")
    except UnicodeDecodeError as e:
        raise MalformedInput(f"Input is not valid UTF-8: {e.reason}") from None

    frame, short_rows = _read_table(text, fmt)
    present = set(frame.columns)
    missing = [c for c in binding.bound_columns() if c not in present]
    if missing:
        raise DatasetErrors(
            [
                MissingColumn(f"Column '{c}' not found in input", column=c)
                for c in missing
            ]
        )

    issues: list[AuditError] = []
    records: list[ApplicantRecord] = []
    id_rows: dict[str, list[int]] = {}

    for i, row in enumerate(frame.to_dict("records"), start=1):
        if i in short_rows:
            issues.append(
                MalformedInput(
                    f"Row has {short_rows[i]} of {len(frame.columns)} fields",
                    row=i,
                    context={"fields": str(short_rows[i])},
                )
            )
            continue
        record, row_issues = _build_record(row, i, binding, vocabulary)
        issues.extend(row_issues)
        if record is None:
            continue
        id_rows.setdefault(record.id, []).append(i)
        records.append(record)

    for record_id, rows in id_rows.items():
        if len(rows) > 1:
            issues.append(
                DuplicateId(
                    f"Duplicate id '{record_id}' on rows "
                    + ", ".join(str(r) for r in rows),
                    row=rows[1],
                    column=binding.columns["id"],
                    context={"id": record_id, "rows": ",".join(str(r) for r in rows)},
                )
            )

    if issues:
        issues.sort(key=lambda e: (e.row or 0, e.column or ""))
        raise DatasetErrors(issues)
    if not records:
        raise EmptyDataset("Input contains no records")

    logger.info("Parsed %d records (%s)", len(records), fmt.value)
    return AuditDataset(
        records=tuple(records),
        source_description=source_description,
        as_of_date=as_of_date,
    )


def _build_record(
    row: Mapping[str, str],
    row_number: int,
    binding: SchemaBinding,
    vocabulary: VocabularyConfig,
) -> tuple[Optional[ApplicantRecord], list[AuditError]]:
    issues: list[AuditError] = []
    cols = binding.columns

    def cell(column: Optional[str]) -> str:
        if column is None:
            return ""
        return str(row.get(column, "")).strip()

    record_id = cell(cols["id"])
    if not record_id:
        issues.append(
            MalformedInput("Empty id", row=row_number, column=cols["id"])
        )

    event_date: Optional[date] = None
    raw_date = cell(cols["event_date"])
    try:
        event_date = datetime.strptime(raw_date, binding.date_format).date()
    except ValueError:
        issues.append(
            InvalidDate(
                f"Cannot parse date '{raw_date}' with format '{binding.date_format}'",
                row=row_number,
                column=cols["event_date"],
                context={"value": raw_date},
            )
        )

    category = None
    try:
        category = canonicalize_category(
            cell(cols["sex"]), cell(cols["race_ethnicity"]), vocabulary, row=row_number
        )
    except UnknownLabel as e:
        # Report both columns if both are bad.
        e.column = cols[e.column] if e.column in cols else e.column
        issues.append(e)
        if e.column == cols["sex"]:
            try:
                canonicalize_category(
                    "", cell(cols["race_ethnicity"]), vocabulary, row=row_number
                )
            except UnknownLabel as e2:
                e2.column = cols["race_ethnicity"]
                issues.append(e2)

    outcomes: list[tuple[str, StageOutcome]] = []
    for stage_name, column in binding.stages:
        raw = cell(column)
        outcome = vocabulary.outcome(raw)
        if outcome is None:
            issues.append(
                UnknownLabel(
                    f"Unrecognized stage outcome '{raw}'",
                    row=row_number,
                    column=column,
                    context={"value": raw, "stage": stage_name},
                )
            )
            continue
        outcomes.append((stage_name, outcome))

    score: Optional[float] = None
    raw_score = cell(cols.get("score"))
    if raw_score:
        try:
            score = float(raw_score)
        except ValueError:
            issues.append(
                MalformedInput(
                    f"Score '{raw_score}' is not a number",
                    row=row_number,
                    column=cols["score"],
                )
            )

    phase = _PHASE_ALIASES.get(normalize_label(cell(cols.get("phase"))))
    if phase is None:
        issues.append(
            UnknownLabel(
                f"Unrecognized phase '{cell(cols.get('phase'))}'",
                row=row_number,
                column=cols.get("phase"),
            )
        )

    features: dict[str, FeatureValue] = {}
    for name in binding.features:
        raw = cell(name)
        if raw == "":
            continue
        features[name] = (
            raw if name in binding.categorical_features else _feature_value(raw)
        )

    if issues:
        return None, issues

    record = ApplicantRecord(
        id=record_id,
        event_date=event_date,
        jurisdiction=cell(cols.get("jurisdiction")),
        category=category,
        stage_outcomes=tuple(outcomes),
        score=score,
        features=features,
        phase=phase,
    )
    for v in validate_record(record).violations:
        issues.append(
            InvalidRecord(
                v.message,
                row=row_number,
                column=dict(binding.stages).get(v.stage) if v.stage else None,
                context={"id": record_id, "violation": v.code},
            )
        )
    return (None, issues) if issues else (record, [])


def _feature_value(raw: str) -> FeatureValue:
    try:
        return float(raw)
    except ValueError:
        return raw


def parse_file(
    path: Path,
    binding: SchemaBinding,
    vocabulary: VocabularyConfig,
    fmt: Optional[InputFormat] = None,
    as_of_date: Optional[date] = None,
    source_description: str = "",
) -> AuditDataset:
    """Parse a dataset file; the format defaults to the file extension."""
    path = Path(path)
    if fmt is None:
        fmt = InputFormat.JSON if path.suffix.lower() == ".json" else InputFormat.CSV
    try:
        data = path.read_bytes()
    except OSError as e:
        raise MalformedInput(f"Cannot read {path}: {e}") from e
    logger.info("Reading %s", path)
    return parse_dataset(
        data,
        fmt,
        binding,
        vocabulary,
        as_of_date=as_of_date,
        source_description=source_description or path.name,
    )


def merge_datasets(datasets: Iterable[AuditDataset]) -> AuditDataset:
    """Concatenate datasets; ids must stay unique across inputs."""
    datasets = list(datasets)
    if not datasets:
        raise EmptyDataset("No datasets to merge")
    if len(datasets) == 1:
        return datasets[0]
    records = [r for ds in datasets for r in ds.records]
    descriptions = [ds.source_description for ds in datasets if ds.source_description]
    return AuditDataset(
        records=tuple(records),
        source_description="; ".join(descriptions),
        as_of_date=max(ds.as_of_date for ds in datasets),
    )


# -----------------------------------------------------------------------
# Data requirement checks
# -----------------------------------------------------------------------


@dataclass(frozen=True)
class WindowCheckResult:
    """Outcome of the 12-month data-window check."""

    in_window: int
    out_of_window: int
    window_start: date
    window_end: date
    offending_ids: tuple[str, ...] = ()

    @property
    def total(self) -> int:
        return self.in_window + self.out_of_window

    @property
    def clean(self) -> bool:
        return self.out_of_window == 0

    def to_dict(self) -> dict[str, object]:
        return {
            "in_window": self.in_window,
            "out_of_window": self.out_of_window,
            "window_start": self.window_start.isoformat(),
            "window_end": self.window_end.isoformat(),
            "offending_ids": list(self.offending_ids),
            "convention": "window_start <= event_date <= window_end",
        }

    def warnings(self) -> list[AuditWarning]:
        if self.clean:
            return []
        return [
            AuditWarning(
                code="out_of_window",
                message=(
                    f"{self.out_of_window} record(s) fall outside the "
                    f"{WINDOW_MONTHS}-month window {self.window_start} to "
                    f"{self.window_end}"
                ),
                context={"ids": ",".join(self.offending_ids)},
            )
        ]


def window_bounds(as_of: date) -> tuple[date, date]:
    start = (pd.Timestamp(as_of) - pd.DateOffset(months=WINDOW_MONTHS)).date()
    return start, as_of


def check_data_window(dataset: AuditDataset) -> WindowCheckResult:
    """
    Partition records by the 12-month window ending at ``as_of_date``.

    Calendar-month arithmetic clamps to month end (2024-02-29 minus 12
    months is 2023-02-28). Both bounds are inclusive. The dataset is not
    modified.
    """
    start, end = window_bounds(dataset.as_of_date)
    offending = [r.id for r in dataset.records if not start <= r.event_date <= end]
    result = WindowCheckResult(
        in_window=len(dataset) - len(offending),
        out_of_window=len(offending),
        window_start=start,
        window_end=end,
        offending_ids=tuple(offending),
    )
    if offending:
        logger.warning(
            "%d record(s) outside data window %s..%s", len(offending), start, end
        )
    return result


def filter_to_window(dataset: AuditDataset) -> AuditDataset:
    start, end = window_bounds(dataset.as_of_date)
    kept = [r for r in dataset.records if start <= r.event_date <= end]
    if not kept:
        raise EmptyDataset("No records remain inside the data window")
    return dataset.with_records(kept)


@dataclass(frozen=True)
class JurisdictionCheckResult:
    expected_tag: str
    matching: int
    non_matching: int
    offending_ids: tuple[str, ...] = ()

    @property
    def clean(self) -> bool:
        return self.non_matching == 0

    def to_dict(self) -> dict[str, object]:
        return {
            "expected_tag": self.expected_tag,
            "matching": self.matching,
            "non_matching": self.non_matching,
            "offending_ids": list(self.offending_ids),
        }

    def warnings(self) -> list[AuditWarning]:
        if self.clean:
            return []
        return [
            AuditWarning(
                code="jurisdiction_mismatch",
                message=(
                    f"{self.non_matching} record(s) are not tagged "
                    f"'{self.expected_tag}'"
                ),
                context={"ids": ",".join(self.offending_ids)},
            )
        ]


def _tag_matches(tag: str, expected: str) -> bool:
    return bool(tag) and tag.casefold() == expected.casefold()


def check_jurisdiction(
    dataset: AuditDataset, expected_tag: str
) -> JurisdictionCheckResult:
    """Case-insensitive exact tag match; empty tags never match."""
    offending = [
        r.id for r in dataset.records if not _tag_matches(r.jurisdiction, expected_tag)
    ]
    if offending:
        logger.warning(
            "%d record(s) not tagged with jurisdiction %s", len(offending), expected_tag
        )
    return JurisdictionCheckResult(
        expected_tag=expected_tag,
        matching=len(dataset) - len(offending),
        non_matching=len(offending),
        offending_ids=tuple(offending),
    )


def filter_to_jurisdiction(dataset: AuditDataset, expected_tag: str) -> AuditDataset:
    kept = [r for r in dataset.records if _tag_matches(r.jurisdiction, expected_tag)]
    if not kept:
        raise EmptyDataset(f"No records tagged '{expected_tag}'")
    return dataset.with_records(kept)


# -----------------------------------------------------------------------
# Serialization
# -----------------------------------------------------------------------


def _format_feature(value: FeatureValue) -> str:
    if isinstance(value, float):
        return repr(value)
    return value


def dataset_to_csv(
    dataset: AuditDataset,
    binding: Optional[SchemaBinding] = None,
    sort_by_id: bool = False,
) -> str:
    """
    Serialize a dataset to CSV under a binding.

    Re-parsing the output with the same binding yields an identical
    dataset. With ``sort_by_id`` the output is canonical and independent
    of record order.
    """
    binding = binding or canonical_binding(dataset)
    cols = binding.columns
    header: list[str] = []
    for f in REQUIRED_FIELDS + OPTIONAL_FIELDS:
        if f in cols:
            header.append(cols[f])
    header.extend(column for _, column in binding.stages)
    header.extend(binding.features)

    records = list(dataset.records)
    if sort_by_id:
        records.sort(key=lambda r: r.id)

    output = io.StringIO()
    writer = csv.DictWriter(output, fieldnames=header, lineterminator="\n")
    writer.writeheader()
    for r in records:
        row: dict[str, str] = {
            cols["id"]: r.id,
            cols["event_date"]: r.event_date.strftime(binding.date_format),
            cols["sex"]: r.category.sex or "",
            cols["race_ethnicity"]: r.category.race_ethnicity or "",
        }
        if "jurisdiction" in cols:
            row[cols["jurisdiction"]] = r.jurisdiction
        if "score" in cols:
            row[cols["score"]] = "" if r.score is None else repr(r.score)
        if "phase" in cols:
            row[cols["phase"]] = r.phase.value
        outcomes = dict(r.stage_outcomes)
        for stage_name, column in binding.stages:
            outcome = outcomes.get(stage_name, StageOutcome.NOT_REACHED)
            row[column] = outcome.value
        for name in binding.features:
            value = r.features.get(name)
            row[name] = "" if value is None else _format_feature(value)
        writer.writerow(row)
    return output.getvalue()
