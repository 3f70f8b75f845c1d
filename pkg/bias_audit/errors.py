"""
Error types raised by the bias audit engine.

Every error carries a machine-readable ``code`` and optional row/column
context so that findings can be listed without a stack trace.
"""

from __future__ import annotations

from typing import Optional


class AuditError(Exception):
    """Base class for all audit engine failures."""

    code = "audit_error"

    def __init__(
        self,
        message: str,
        *,
        row: Optional[int] = None,
        column: Optional[str] = None,
        context: Optional[dict[str, str]] = None,
    ) -> None:
        super().__init__(message)
        self.message = message
        self.row = row
        self.column = column
        self.context = dict(context or {})

    def location(self) -> str:
        """Human-readable 'row N, column X' fragment (empty if unknown)."""
        parts: list[str] = []
        if self.row is not None:
            parts.append(f"row {self.row}")
        if self.column:
            parts.append(f"column '{self.column}'")
        return ", ".join(parts)

    def to_dict(self) -> dict[str, object]:
        return {
            "code": self.code,
            "message": self.message,
            "row": self.row,
            "column": self.column,
            "context": dict(sorted(self.context.items())),
        }

    def __str__(self) -> str:
        where = self.location()
        return f"{self.message} ({where})" if where else self.message


# -----------------------------------------------------------------------
# Dataset parsing
# -----------------------------------------------------------------------


class UnknownLabel(AuditError):
    code = "unknown_label"


class MalformedInput(AuditError):
    code = "malformed_input"


class MissingColumn(AuditError):
    code = "missing_column"


class DuplicateId(AuditError):
    code = "duplicate_id"


class InvalidDate(AuditError):
    code = "invalid_date"


class InvalidRecord(AuditError):
    code = "invalid_record"


class EmptyDataset(AuditError):
    code = "empty_dataset"


class DatasetErrors(AuditError):
    """All hard failures found in one parse pass."""

    code = "dataset_errors"

    def __init__(self, issues: list[AuditError]) -> None:
        super().__init__(f"{len(issues)} problem(s) found in dataset")
        self.issues = list(issues)


# -----------------------------------------------------------------------
# Metrics
# -----------------------------------------------------------------------


class UnknownStage(AuditError):
    code = "unknown_stage"


class NoScores(AuditError):
    code = "no_scores"


class GroupingMismatch(AuditError):
    code = "grouping_mismatch"


# -----------------------------------------------------------------------
# Benchmarks
# -----------------------------------------------------------------------


class NegativeCount(AuditError):
    code = "negative_count"


class DuplicateCategory(AuditError):
    code = "duplicate_category"


class EmptyBenchmark(AuditError):
    code = "empty_benchmark"


class NetworkError(AuditError):
    code = "network_error"


class MalformedResponse(AuditError):
    code = "malformed_response"


class UnmappedVariable(AuditError):
    code = "unmapped_variable"


# -----------------------------------------------------------------------
# Proxy screening
# -----------------------------------------------------------------------


class FeatureMissing(AuditError):
    code = "feature_missing"


class DegenerateFeature(AuditError):
    code = "degenerate_feature"


class DegenerateTable(AuditError):
    code = "degenerate_table"


# -----------------------------------------------------------------------
# Reporting / configuration
# -----------------------------------------------------------------------


class InvalidFraction(AuditError):
    code = "invalid_fraction"


class ConfigError(AuditError):
    code = "config_error"
