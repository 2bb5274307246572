"""Hybrid rewards from the sign of centered cosine similarity.

Both reward paths compare two stance or veracity distributions and collapse
the comparison to -1, 0, or +1: claims with a trusted label compare the
predicted distribution against the label's one-hot; unlabeled claims compare
the mean stance of the selected posts against reference stance statistics
accumulated from labeled claims. Centering subtracts the uniform distribution
first so that "uniform" means "no information" rather than "weak agreement".
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import RewardError
from .labels import VERACITIES, one_hot

_EPS = 1e-12
_UNIFORM = 0.25


def _check_distribution(vec, name: str) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64)
    if arr.shape != (4,):
        raise RewardError(f"{name} must have 4 entries, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise RewardError(f"{name} contains non-finite values")
    if (arr < -1e-9).any():
        raise RewardError(f"{name} has negative mass")
    if abs(float(arr.sum()) - 1.0) > 1e-6:
        raise RewardError(f"{name} does not sum to 1")
    return arr


def centered_cosine(p, q, centered: bool = True) -> float:
    """Cosine similarity after subtracting the uniform distribution.

    Returns 0.0 when either centered vector has (near-)zero norm. With
    centered=False this is the raw cosine of the distributions themselves,
    kept as an ablation knob.
    """
    a = _check_distribution(p, "p")
    b = _check_distribution(q, "q")
    if centered:
        a = a - _UNIFORM
        b = b - _UNIFORM
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < _EPS or nb < _EPS:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def sign_similarity(p, q, centered: bool = True) -> int:
    """Sign of the (centered) cosine: -1, 0, or +1, with a 1e-12 dead zone."""
    cos = centered_cosine(p, q, centered=centered)
    if abs(cos) < _EPS:
        return 0
    return 1 if cos > 0.0 else -1


@dataclass(frozen=True)
class RewardOutcome:
    """A unit reward plus diagnostics about how it was produced."""

    value: int
    cosine: float
    branch: str  # "labeled", "unlabeled", "cold", or "empty"


def labeled_claim_reward(
    predicted_distribution, truth_label: str, centered: bool = True
) -> RewardOutcome:
    """Reward for a claim with a trusted label: prediction vs one-hot truth."""
    if truth_label not in VERACITIES:
        raise RewardError(f"unknown veracity label {truth_label!r}")
    target = one_hot(truth_label, "veracity")
    cos = centered_cosine(predicted_distribution, target, centered=centered)
    value = 0 if abs(cos) < _EPS else (1 if cos > 0.0 else -1)
    return RewardOutcome(value=value, cosine=cos, branch="labeled")


class ReferenceStanceStats:
    """Per-veracity running mean of stance distributions from labeled claims.

    A class with no observations yet is cold: rewards that would consult it
    come out 0 rather than guessing.
    """

    def __init__(self):
        self._sums = {v: np.zeros(4, dtype=np.float64) for v in VERACITIES}
        self._counts = {v: 0 for v in VERACITIES}

    def update(self, veracity: str, stance_distribution) -> None:
        if veracity not in VERACITIES:
            raise RewardError(f"unknown veracity label {veracity!r}")
        arr = _check_distribution(stance_distribution, "stance distribution")
        self._sums[veracity] += arr
        self._counts[veracity] += 1

    def count(self, veracity: str) -> int:
        return self._counts[veracity]

    def mean(self, veracity: str) -> np.ndarray | None:
        if veracity not in VERACITIES:
            raise RewardError(f"unknown veracity label {veracity!r}")
        n = self._counts[veracity]
        if n == 0:
            return None
        return self._sums[veracity] / n

    def snapshot(self) -> dict:
        return {v: self._counts[v] for v in VERACITIES}


def unlabeled_claim_reward(
    selected_stance_distributions: Sequence[np.ndarray],
    predicted_veracity: str,
    references: ReferenceStanceStats,
    centered: bool = True,
) -> RewardOutcome:
    """Reward for an unlabeled claim.

    Compares the mean stance distribution of the selected posts against the
    reference mean for the predicted veracity class. No selected posts or a
    cold reference class produce a 0 reward with an explanatory branch tag.
    """
    if not selected_stance_distributions:
        return RewardOutcome(value=0, cosine=0.0, branch="empty")
    reference = references.mean(predicted_veracity)
    if reference is None:
        return RewardOutcome(value=0, cosine=0.0, branch="cold")
    stacked = np.stack(
        [_check_distribution(d, "stance distribution") for d in
         selected_stance_distributions]
    )
    mean = stacked.mean(axis=0)
    cos = centered_cosine(mean, reference, centered=centered)
    value = 0 if abs(cos) < _EPS else (1 if cos > 0.0 else -1)
    return RewardOutcome(value=value, cosine=cos, branch="unlabeled")
