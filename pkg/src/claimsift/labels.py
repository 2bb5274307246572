"""Canonical label inventories for the stance and veracity tasks.

Label order is load-bearing: distributions, confusion matrices, and one-hot
targets all index into these tuples, so the order must never change.
"""

from __future__ import annotations

import numpy as np

# Post stance toward a claim.
STANCES = ("S", "D", "Q", "C")
STANCE_NAMES = {"S": "Support", "D": "Deny", "Q": "Question", "C": "Comment"}

# Claim veracity.
VERACITIES = ("N", "T", "F", "U")
VERACITY_NAMES = {
    "N": "Non-Rumor",
    "T": "True Rumor",
    "F": "False Rumor",
    "U": "Unverified Rumor",
}

STANCE_INDEX = {lab: i for i, lab in enumerate(STANCES)}
VERACITY_INDEX = {lab: i for i, lab in enumerate(VERACITIES)}

# Lowercased surface forms accepted when normalizing model output.
_STANCE_SYNONYMS = {
    "s": "S", "support": "S", "supports": "S", "supporting": "S",
    "d": "D", "deny": "D", "denies": "D", "denying": "D",
    "q": "Q", "question": "Q", "questions": "Q", "questioning": "Q", "query": "Q",
    "c": "C", "comment": "C", "comments": "C", "commenting": "C",
}

_VERACITY_SYNONYMS = {
    "n": "N", "non-rumor": "N", "non rumor": "N", "nonrumor": "N", "non-rumour": "N",
    "t": "T", "true rumor": "T", "true-rumor": "T", "true rumour": "T", "true": "T",
    "f": "F", "false rumor": "F", "false-rumor": "F", "false rumour": "F", "false": "F",
    "u": "U", "unverified rumor": "U", "unverified-rumor": "U",
    "unverified rumour": "U", "unverified": "U",
}


def normalize_stance(token: str) -> str | None:
    """Map a surface form to a canonical stance label, or None."""
    return _STANCE_SYNONYMS.get(token.strip().strip("'\".,").lower())


def normalize_veracity(token: str) -> str | None:
    """Map a surface form to a canonical veracity label, or None."""
    return _VERACITY_SYNONYMS.get(token.strip().strip("'\".,").lower())


def one_hot(label: str, kind: str) -> np.ndarray:
    """One-hot vector over the canonical order for ``kind`` in {stance, veracity}."""
    order = STANCES if kind == "stance" else VERACITIES
    if label not in order:
        raise ValueError(f"unknown {kind} label: {label!r}")
    vec = np.zeros(len(order), dtype=np.float64)
    vec[order.index(label)] = 1.0
    return vec


def canonical_argmax(distribution: np.ndarray, kind: str) -> str:
    """Label at the argmax, ties broken by canonical order (first index wins)."""
    order = STANCES if kind == "stance" else VERACITIES
    return order[int(np.argmax(distribution))]
