"""
Verification samples for third-party re-checking.

A manifest is a seeded draw without replacement over the dataset's ids,
bound to the exact data by a fingerprint of its canonical CSV. Ids are
sorted before drawing, so neither the selection nor the fingerprint
depends on record order.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation

import numpy as np

from bias_audit.domain import AuditDataset
from bias_audit.errors import InvalidFraction
from bias_audit.ingestion import dataset_to_csv

logger = logging.getLogger(__name__)

SAMPLING_ALGORITHM = "numpy.random.Generator(PCG64(seed)).choice(n, k, replace=False) over ids sorted ascending"
FINGERPRINT_ALGORITHM = "sha256 of canonical CSV sorted by id"


@dataclass(frozen=True)
class SampleManifest:
    seed: int
    fraction: float
    population: int
    selected_ids: tuple[str, ...]
    fingerprint: str

    def to_dict(self) -> dict[str, object]:
        return {
            "seed": self.seed,
            "fraction": self.fraction,
            "population": self.population,
            "sample_size": len(self.selected_ids),
            "selected_ids": list(self.selected_ids),
            "dataset_fingerprint": self.fingerprint,
            "algorithm": SAMPLING_ALGORITHM,
            "fingerprint_algorithm": FINGERPRINT_ALGORITHM,
        }


def dataset_fingerprint(dataset: AuditDataset) -> str:
    canonical = dataset_to_csv(dataset, sort_by_id=True)
    return "sha256:" + hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def sample_size(fraction: float, population: int) -> int:
    """floor(fraction x population), computed on the decimal value of ``fraction``."""
    try:
        exact = Decimal(str(fraction))
    except InvalidOperation as exc:
        raise InvalidFraction(f"Invalid fraction {fraction!r}") from exc
    if not exact.is_finite() or exact < 0 or exact > 1:
        raise InvalidFraction(
            f"Fraction must be within [0, 1], got {fraction}",
            context={"fraction": str(fraction)},
        )
    return math.floor(exact * population)


def verification_sample(dataset: AuditDataset, fraction: float, seed: int) -> SampleManifest:
    """Draw floor(fraction x n) ids with a seeded PCG64 generator."""
    ids = sorted(dataset.ids)
    k = sample_size(fraction, len(ids))
    if k:
        rng = np.random.Generator(np.random.PCG64(seed))
        picks = rng.choice(len(ids), size=k, replace=False)
        selected = tuple(sorted(ids[i] for i in picks))
    else:
        selected = ()
    logger.info("Selected %d of %d records for verification (seed %d)", k, len(ids), seed)
    return SampleManifest(
        seed=seed,
        fraction=fraction,
        population=len(ids),
        selected_ids=selected,
        fingerprint=dataset_fingerprint(dataset),
    )
