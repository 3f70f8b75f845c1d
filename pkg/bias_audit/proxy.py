"""
Proxy feature screening.

Measures how strongly each auxiliary feature (spoken language, zip code,
years of experience, ...) is associated with a protected attribute, using
plain Cramér's V over a feature-by-category contingency table. A high
value means the feature could stand in for the protected attribute. The
screen is a heuristic, not a legal finding.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.stats import chi2_contingency

from bias_audit.domain import UNKNOWN, AuditDataset, ProtectedAxis
from bias_audit.errors import DegenerateFeature, DegenerateTable, FeatureMissing

logger = logging.getLogger(__name__)

DEFAULT_PROXY_THRESHOLD = 0.3
QUARTILE_LABELS = ("Q1", "Q2", "Q3", "Q4")


@dataclass(frozen=True)
class AssociationFinding:
    feature: str
    axis: ProtectedAxis
    value: Optional[float]  # None when the feature could not be screened
    sample_size: int
    flagged: bool
    statistic: str = "cramers_v"
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, object]:
        return {
            "feature": self.feature,
            "protected_axis": self.axis.value,
            "statistic": self.statistic,
            "value": None if self.value is None else round(self.value, 4),
            "sample_size": self.sample_size,
            "flagged": self.flagged,
            "notes": list(self.notes),
        }


def _is_numeric(values: Sequence[object]) -> bool:
    return all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values)


def quartile_bins(values: Sequence[float]) -> list[str]:
    """
    Assign each value to a sample quartile, Q1..Q4.

    Cut points are the 25th/50th/75th percentiles; a value equal to a cut
    point falls into the lower bin.
    """
    arr = np.asarray(values, dtype=float)
    edges = np.quantile(arr, [0.25, 0.5, 0.75])
    idx = np.searchsorted(edges, arr, side="left")
    return [QUARTILE_LABELS[i] for i in idx]


def _feature_observations(
    dataset: AuditDataset, feature: str, axis: ProtectedAxis
) -> tuple[list[object], list[str]]:
    levels: list[object] = []
    groups: list[str] = []
    for r in dataset.records:
        value = r.features.get(feature)
        if value is None or value == "":
            continue
        group = r.category.sex if axis is ProtectedAxis.SEX else r.category.race_ethnicity
        if group is None or group == UNKNOWN:
            continue
        levels.append(value)
        groups.append(group)
    return levels, groups


def contingency_table(
    dataset: AuditDataset, feature: str, axis: ProtectedAxis
) -> pd.DataFrame:
    """
    Counts of feature level (rows) by protected label (columns).

    Numeric features are binned into sample quartiles. Records with an
    unknown label on ``axis`` or no value for ``feature`` are left out.
    """
    levels, groups = _feature_observations(dataset, feature, axis)
    if len(levels) < 2:
        raise FeatureMissing(
            f"Feature '{feature}' is present on fewer than 2 usable records",
            column=feature,
            context={"feature": feature, "records": str(len(levels))},
        )
    if _is_numeric(levels):
        rows = quartile_bins([float(v) for v in levels])  # type: ignore[arg-type]
    else:
        rows = [str(v) for v in levels]

    table = pd.crosstab(
        pd.Series(rows, name=feature),
        pd.Series(groups, name=axis.value),
    )
    table = table.loc[table.sum(axis=1) > 0, table.sum(axis=0) > 0]
    if table.shape[0] < 2:
        raise DegenerateFeature(
            f"Feature '{feature}' has a single level",
            column=feature,
            context={"feature": feature},
        )
    return table.sort_index(axis=0).sort_index(axis=1)


def cramers_v(table: Union[pd.DataFrame, np.ndarray, Sequence[Sequence[int]]]) -> float:
    """Plain (uncorrected) Cramér's V, clamped to [0, 1]."""
    arr = np.asarray(table, dtype=float)
    if arr.ndim != 2:
        raise DegenerateTable("Contingency table must be two-dimensional")
    if (arr < 0).any() or not np.isfinite(arr).all():
        raise DegenerateTable("Contingency table cells must be finite and non-negative")
    arr = arr[arr.sum(axis=1) > 0][:, arr.sum(axis=0) > 0]
    r, c = arr.shape
    n = arr.sum()
    if r < 2 or c < 2 or n <= 0:
        raise DegenerateTable(
            f"Need at least 2 non-zero rows and columns, got {r}x{c}",
            context={"shape": f"{r}x{c}"},
        )
    chi2 = chi2_contingency(arr, correction=False)[0]
    v = math.sqrt(chi2 / (n * min(r - 1, c - 1)))
    return min(1.0, max(0.0, v))


def screen_feature(
    dataset: AuditDataset,
    feature: str,
    axis: ProtectedAxis,
    threshold: float = DEFAULT_PROXY_THRESHOLD,
) -> AssociationFinding:
    levels, _ = _feature_observations(dataset, feature, axis)
    notes: list[str] = []
    if levels and _is_numeric(levels):
        notes.append("numeric feature binned into sample quartiles")
    try:
        table = contingency_table(dataset, feature, axis)
        value = cramers_v(table)
    except (FeatureMissing, DegenerateFeature, DegenerateTable) as exc:
        logger.debug("Feature %s not screened: %s", feature, exc.message)
        return AssociationFinding(
            feature, axis, None, len(levels), False, notes=tuple(notes + [exc.message])
        )
    return AssociationFinding(
        feature=feature,
        axis=axis,
        value=value,
        sample_size=int(table.to_numpy().sum()),
        flagged=value >= threshold,
        notes=tuple(notes),
    )


def proxy_screen(
    dataset: AuditDataset,
    axis: ProtectedAxis,
    threshold: float = DEFAULT_PROXY_THRESHOLD,
) -> list[AssociationFinding]:
    """
    One finding per feature, strongest association first.

    Features that cannot be screened come last with ``value=None`` and a
    note saying why.
    """
    findings = [screen_feature(dataset, f, axis, threshold) for f in dataset.feature_names]
    findings.sort(
        key=lambda f: (f.value is None, -(f.value or 0.0), f.feature)
    )
    flagged = [f.feature for f in findings if f.flagged]
    if flagged:
        logger.info("Possible proxies for %s: %s", axis.value, ", ".join(flagged))
    return findings
