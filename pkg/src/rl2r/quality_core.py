"""Grouped quality scores and MOS-derived ground-truth preferences."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np


class InvalidGroupError(ValueError):
    """A score group is too small or holds non-finite scores."""


@dataclass(frozen=True)
class ScoreGroup:
    """The K sampled quality scores for one image."""

    image_id: Hashable
    scores: tuple[float, ...]

    def __post_init__(self):
        scores = tuple(float(s) for s in self.scores)
        if len(scores) < 2:
            raise InvalidGroupError(
                f"group {self.image_id!r} needs at least 2 scores, got {len(scores)}")
        if not all(math.isfinite(s) for s in scores):
            raise InvalidGroupError(f"group {self.image_id!r} has non-finite scores")
        object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return len(self.scores)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.scores, dtype=float)


@dataclass(frozen=True)
class GroupStats:
    mean: float
    variance: float


@dataclass(frozen=True)
class MosRecord:
    image_id: str
    mos: float
    dataset_id: str = "default"
    features: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if not math.isfinite(self.mos):
            raise ValueError(f"MOS for {self.image_id!r} is not finite")
        feats = tuple(float(f) for f in self.features)
        if not all(math.isfinite(f) for f in feats):
            raise ValueError(f"features for {self.image_id!r} are not finite")
        object.__setattr__(self, "features", feats)


@dataclass(frozen=True)
class PairPreference:
    i: Hashable
    j: Hashable
    p_true: float

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("a preference needs two distinct images")
        if self.p_true not in (0.0, 0.5, 1.0):
            raise ValueError(f"p_true must be 0, 0.5 or 1, got {self.p_true}")


def group_stats(group: ScoreGroup | Sequence[float], ddof: int = 0) -> GroupStats:
    """Mean and variance of a score group.

    ``ddof=0`` (the default) divides by K; ``ddof=1`` gives the unbiased
    estimator.
    """
    scores = group.as_array() if isinstance(group, ScoreGroup) else np.asarray(group, float)
    if scores.size < 2:
        raise InvalidGroupError(f"need at least 2 scores, got {scores.size}")
    if ddof not in (0, 1):
        raise ValueError("ddof must be 0 or 1")
    mean = float(np.mean(scores))
    variance = float(np.sum((scores - mean) ** 2) / (scores.size - ddof))
    return GroupStats(mean=mean, variance=variance)


def true_preference(mos_i: float, mos_j: float, tie_tol: float = 0.0) -> float:
    """1 if image i has the higher MOS, 0.5 on a tie (within ``tie_tol``), else 0."""
    if not (math.isfinite(mos_i) and math.isfinite(mos_j)):
        raise ValueError("MOS values must be finite")
    if not tie_tol >= 0:
        raise ValueError("tie_tol must be non-negative")
    diff = mos_i - mos_j
    if abs(diff) <= tie_tol:
        return 0.5
    return 1.0 if diff > 0 else 0.0


def preference_matrix(mos: Sequence[float], tie_tol: float = 0.0) -> np.ndarray:
    """All B*(B-1) ordered-pair preferences; entry ``[i, j]`` is p(x_i, x_j).

    The diagonal is NaN since an image is never compared with itself.
    """
    mos = np.asarray(mos, dtype=float)
    if mos.ndim != 1:
        raise ValueError("mos must be one-dimensional")
    if not np.all(np.isfinite(mos)):
        raise ValueError("MOS values must be finite")
    if not tie_tol >= 0:
        raise ValueError("tie_tol must be non-negative")
    diff = mos[:, None] - mos[None, :]
    prefs = np.where(diff > 0, 1.0, 0.0)
    prefs[np.abs(diff) <= tie_tol] = 0.5
    np.fill_diagonal(prefs, np.nan)
    return prefs


def pair_preferences(records: Sequence[MosRecord], tie_tol: float = 0.0) -> list[PairPreference]:
    """Ordered-pair preferences for a batch of MOS records."""
    out = []
    for a in records:
        for b in records:
            if a.image_id != b.image_id:
                out.append(PairPreference(a.image_id, b.image_id,
                                          true_preference(a.mos, b.mos, tie_tol)))
    return out
