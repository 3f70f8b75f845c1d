"""
Core vocabulary for bias audits.

Defines:
- Demographic categories (sex x race/ethnicity cells) and grouping modes
- Applicant records moving through an ordered hiring funnel
- Audit datasets and their structural invariants
- Label canonicalization against a configurable alias vocabulary
- Record-level validation with machine-readable violation codes
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

import yaml

from bias_audit.errors import (
    AuditError,
    ConfigError,
    DatasetErrors,
    DuplicateId,
    EmptyDataset,
    InvalidRecord,
    UnknownLabel,
    UnknownStage,
)

logger = logging.getLogger(__name__)

UNKNOWN = "unknown"

# Table 1 race/ethnicity categories. Fixed: aliases are configured, labels are not.
RACE_ETHNICITY_LABELS: tuple[str, ...] = (
    "american_indian_alaska_native",
    "asian",
    "black_african_american",
    "hispanic_latino",
    "native_hawaiian_pacific_islander",
    "some_other_race",
    "two_or_more_races",
    "white",
)

DEFAULT_SEX_LABELS: tuple[str, ...] = ("female", "male")

_CANONICAL_LABEL = re.compile(r"^[a-z0-9]+(?:_[a-z0-9]+)*$")

FeatureValue = Union[str, float]


class GroupingMode(Enum):
    BY_SEX = "by_sex"
    BY_RACE_ETHNICITY = "by_race_ethnicity"
    INTERSECTIONAL = "intersectional"


class StageOutcome(Enum):
    ADVANCED = "advanced"
    NOT_ADVANCED = "not_advanced"
    NOT_REACHED = "not_reached"


class Phase(Enum):
    INPUT = "input"  # training / input data
    OUTPUT = "output"  # model outputs


class ProtectedAxis(Enum):
    SEX = "sex"
    RACE_ETHNICITY = "race_ethnicity"


@dataclass(frozen=True)
class DemographicCategory:
    """
    A (sex, race/ethnicity) cell.

    A coordinate set to None has been collapsed by a grouping mode:
    ``DemographicCategory("female", None)`` is "all females" under by_sex.
    """

    sex: Optional[str]
    race_ethnicity: Optional[str]

    def __post_init__(self) -> None:
        for name in ("sex", "race_ethnicity"):
            value = getattr(self, name)
            if value is not None and not _CANONICAL_LABEL.match(value):
                raise ValueError(f"Non-canonical {name} label: {value!r}")
        if self.sex is None and self.race_ethnicity is None:
            raise ValueError("A category needs at least one coordinate")

    @property
    def grouping(self) -> GroupingMode:
        if self.race_ethnicity is None:
            return GroupingMode.BY_SEX
        if self.sex is None:
            return GroupingMode.BY_RACE_ETHNICITY
        return GroupingMode.INTERSECTIONAL

    @property
    def is_unknown(self) -> bool:
        """True if any non-collapsed coordinate is unknown."""
        return UNKNOWN in (self.sex, self.race_ethnicity)

    @property
    def label(self) -> str:
        parts = [p for p in (self.sex, self.race_ethnicity) if p is not None]
        return " / ".join(parts)

    def sort_key(self) -> tuple[str, str]:
        """Canonical order: race label, then sex label, alphabetical."""
        return (self.race_ethnicity or "", self.sex or "")

    def collapse(self, grouping: GroupingMode) -> "DemographicCategory":
        if grouping is GroupingMode.BY_SEX:
            return DemographicCategory(self.sex, None)
        if grouping is GroupingMode.BY_RACE_ETHNICITY:
            return DemographicCategory(None, self.race_ethnicity)
        return self

    def covers(self, other: "DemographicCategory") -> bool:
        """True if ``other`` falls inside this (possibly collapsed) cell."""
        if self.sex is not None and self.sex != other.sex:
            return False
        if (
            self.race_ethnicity is not None
            and self.race_ethnicity != other.race_ethnicity
        ):
            return False
        return True

    def to_dict(self) -> dict[str, Optional[str]]:
        return {"sex": self.sex, "race_ethnicity": self.race_ethnicity}


def sort_categories(
    categories: Iterable[DemographicCategory],
) -> list[DemographicCategory]:
    return sorted(categories, key=lambda c: c.sort_key())


@dataclass(frozen=True)
class AuditWarning:
    """A non-fatal finding carried into the report."""

    code: str
    message: str
    context: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, object]:
        return {
            "code": self.code,
            "message": self.message,
            "context": dict(sorted(self.context.items())),
        }


# -----------------------------------------------------------------------
# Vocabulary and canonicalization
# -----------------------------------------------------------------------


def normalize_label(raw: Optional[str]) -> str:
    """Case- and whitespace-insensitive lookup key for an alias."""
    if raw is None:
        return ""
    return " ".join(str(raw).split()).lower()


@dataclass(frozen=True)
class VocabularyConfig:
    """
    Alias map from raw source values to canonical labels.

    Canonical labels are always accepted as their own alias, which makes
    canonicalization idempotent.
    """

    sex_aliases: dict[str, str]
    race_aliases: dict[str, str]
    outcome_aliases: dict[str, StageOutcome]
    sex_labels: tuple[str, ...] = DEFAULT_SEX_LABELS

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> "VocabularyConfig":
        sex_section = _mapping(data.get("sex", {}), "sex")
        race_section = _mapping(data.get("race_ethnicity", {}), "race_ethnicity")
        outcome_section = _mapping(data.get("stage_outcome", {}), "stage_outcome")

        sex_labels = tuple(sorted(set(DEFAULT_SEX_LABELS) | set(sex_section)))
        sex_aliases = _alias_table(sex_section, sex_labels, "sex")
        race_aliases = _alias_table(race_section, RACE_ETHNICITY_LABELS, "race_ethnicity")

        outcome_labels = tuple(o.value for o in StageOutcome)
        outcome_table = _alias_table(outcome_section, outcome_labels, "stage_outcome")
        outcome_aliases = {
            k: StageOutcome(v) for k, v in outcome_table.items() if v != UNKNOWN
        }
        # An empty stage cell means the applicant never got there.
        outcome_aliases.setdefault("", StageOutcome.NOT_REACHED)

        return cls(
            sex_aliases=sex_aliases,
            race_aliases=race_aliases,
            outcome_aliases=outcome_aliases,
            sex_labels=sex_labels,
        )

    def outcome(self, raw: Optional[str]) -> Optional[StageOutcome]:
        return self.outcome_aliases.get(normalize_label(raw))


def _mapping(value: object, key: str) -> Mapping[str, object]:
    if value is None:
        return {}
    if not isinstance(value, Mapping):
        raise ConfigError(f"Vocabulary section '{key}' must be a mapping")
    return value


def _alias_table(
    section: Mapping[str, object],
    canonical_labels: tuple[str, ...],
    key: str,
) -> dict[str, str]:
    table: dict[str, str] = {label: label for label in canonical_labels}
    table[UNKNOWN] = UNKNOWN
    for canonical, aliases in section.items():
        if canonical not in canonical_labels and canonical != UNKNOWN:
            raise ConfigError(
                f"'{canonical}' is not a canonical {key} label",
                context={"section": key},
            )
        if isinstance(aliases, str):
            aliases = [aliases]
        for alias in aliases or []:
            norm = normalize_label(str(alias))
            previous = table.get(norm)
            if previous is not None and previous != canonical:
                raise ConfigError(
                    f"Alias '{alias}' maps to both '{previous}' and '{canonical}'",
                    context={"section": key},
                )
            table[norm] = canonical
    return table


def load_vocabulary(path: Optional[Path] = None) -> VocabularyConfig:
    """Load a vocabulary YAML file, or the bundled default when path is None."""
    if path is None:
        text = (
            resources.files("bias_audit")
            .joinpath("data/vocabulary.yaml")
            .read_text(encoding="utf-8")
        )
        source = "bundled vocabulary"
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"Cannot read vocabulary file: {e}") from e
        source = str(path)

    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in {source}: {e}") from e
    if not isinstance(data, Mapping):
        raise ConfigError(f"{source} must contain a mapping")
    logger.debug("Loaded vocabulary from %s", source)
    return VocabularyConfig.from_dict(data)


def canonicalize_category(
    raw_sex: Optional[str],
    raw_race: Optional[str],
    vocabulary: VocabularyConfig,
    row: Optional[int] = None,
) -> DemographicCategory:
    """
    Map raw sex and race/ethnicity values to a canonical category.

    Empty or missing values map to ``unknown``; non-empty values absent
    from the vocabulary raise UnknownLabel.
    """
    sex = _canonical(raw_sex, vocabulary.sex_aliases, "sex", row)
    race = _canonical(raw_race, vocabulary.race_aliases, "race_ethnicity", row)
    return DemographicCategory(sex, race)


def _canonical(
    raw: Optional[str], table: Mapping[str, str], column: str, row: Optional[int]
) -> str:
    key = normalize_label(raw)
    if key == "":
        return UNKNOWN
    canonical = table.get(key)
    if canonical is None:
        raise UnknownLabel(
            f"Unrecognized {column} value '{raw}'",
            row=row,
            column=column,
            context={"value": str(raw)},
        )
    return canonical


# -----------------------------------------------------------------------
# Records
# -----------------------------------------------------------------------


@dataclass(frozen=True)
class ApplicantRecord:
    """One applicant's journey through the hiring funnel."""

    id: str
    event_date: date
    jurisdiction: str
    category: DemographicCategory
    stage_outcomes: tuple[tuple[str, StageOutcome], ...]
    score: Optional[float] = None
    features: dict[str, FeatureValue] = field(default_factory=dict)
    phase: Phase = Phase.OUTPUT

    def __post_init__(self) -> None:
        object.__setattr__(self, "stage_outcomes", tuple(self.stage_outcomes))

    @property
    def stage_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.stage_outcomes)

    def outcome_at(self, index: int) -> StageOutcome:
        return self.stage_outcomes[index][1]

    def reached(self, index: int) -> bool:
        return self.outcome_at(index) is not StageOutcome.NOT_REACHED

    def advanced(self, index: int) -> bool:
        return self.outcome_at(index) is StageOutcome.ADVANCED


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    stage: Optional[str] = None


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def codes(self) -> list[str]:
        return [v.code for v in self.violations]


def validate_record(record: ApplicantRecord) -> ValidationResult:
    """
    Check a record against every record invariant.

    Violations are returned as data; this never raises.
    """
    violations: list[Violation] = []

    if not record.id or not record.id.strip():
        violations.append(Violation("empty_id", "Record id is empty"))

    if not record.stage_outcomes:
        violations.append(Violation("no_stages", "Record has no stage outcomes"))

    names = record.stage_names
    if len(set(names)) != len(names):
        violations.append(
            Violation("duplicate_stage_name", "A stage name appears more than once")
        )

    rejected_at: Optional[str] = None
    truncated_at: Optional[str] = None
    for name, outcome in record.stage_outcomes:
        if outcome is StageOutcome.NOT_REACHED:
            if truncated_at is None:
                truncated_at = name
            continue
        if rejected_at is not None:
            if outcome is StageOutcome.ADVANCED:
                violations.append(
                    Violation(
                        "advanced_after_rejection",
                        f"Advanced at '{name}' after rejection at '{rejected_at}'",
                        stage=name,
                    )
                )
            else:
                violations.append(
                    Violation(
                        "rejected_after_rejection",
                        f"Reached '{name}' after rejection at '{rejected_at}'",
                        stage=name,
                    )
                )
        elif truncated_at is not None:
            violations.append(
                Violation(
                    "reached_after_truncation",
                    f"Reached '{name}' after not reaching '{truncated_at}'",
                    stage=name,
                )
            )
        if outcome is StageOutcome.NOT_ADVANCED and rejected_at is None:
            rejected_at = name

    if record.score is not None and not math.isfinite(record.score):
        violations.append(Violation("non_finite_score", "Score is not finite"))

    for key, value in record.features.items():
        if isinstance(value, float) and not math.isfinite(value):
            violations.append(
                Violation("non_finite_feature", f"Feature '{key}' is not finite")
            )

    return ValidationResult(tuple(violations))


# -----------------------------------------------------------------------
# Datasets
# -----------------------------------------------------------------------


@dataclass(frozen=True)
class AuditDataset:
    """An immutable, validated collection of applicant records."""

    records: tuple[ApplicantRecord, ...]
    source_description: str = ""
    as_of_date: Optional[date] = None

    def __post_init__(self) -> None:
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        if not records:
            raise EmptyDataset("Dataset contains no records")

        issues: list[AuditError] = []
        seen: dict[str, int] = {}
        expected = records[0].stage_names
        for i, record in enumerate(records, start=1):
            if record.id in seen:
                issues.append(
                    DuplicateId(
                        f"Duplicate id '{record.id}' (first seen at row {seen[record.id]})",
                        row=i,
                        column="id",
                        context={"id": record.id, "first_row": str(seen[record.id])},
                    )
                )
            else:
                seen[record.id] = i
            if record.stage_names != expected:
                issues.append(
                    InvalidRecord(
                        "Stage sequence differs from the dataset funnel",
                        row=i,
                        context={"id": record.id},
                    )
                )
            for v in validate_record(record).violations:
                issues.append(
                    InvalidRecord(
                        v.message, row=i, context={"id": record.id, "violation": v.code}
                    )
                )
        if issues:
            raise DatasetErrors(issues)

        if self.as_of_date is None:
            latest = max(r.event_date for r in records)
            object.__setattr__(self, "as_of_date", latest)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def stage_names(self) -> tuple[str, ...]:
        return self.records[0].stage_names

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    @property
    def phases(self) -> frozenset[Phase]:
        return frozenset(r.phase for r in self.records)

    @property
    def feature_names(self) -> list[str]:
        names: set[str] = set()
        for r in self.records:
            names.update(r.features)
        return sorted(names)

    def stage_index(self, stage_name: str) -> int:
        try:
            return self.stage_names.index(stage_name)
        except ValueError:
            raise UnknownStage(
                f"Stage '{stage_name}' is not in the funnel",
                context={"stage": stage_name, "funnel": ",".join(self.stage_names)},
            ) from None

    def with_records(self, records: Iterable[ApplicantRecord]) -> "AuditDataset":
        return AuditDataset(
            records=tuple(records),
            source_description=self.source_description,
            as_of_date=self.as_of_date,
        )

    def subset(self, phase: Phase) -> "AuditDataset":
        """Records of a single phase; raises EmptyDataset if there are none."""
        chosen = [r for r in self.records if r.phase is phase]
        if not chosen:
            raise EmptyDataset(f"No {phase.value}-phase records in dataset")
        return self.with_records(chosen)
