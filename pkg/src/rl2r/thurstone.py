"""Thurstone comparative probabilities between two groups of sampled scores.

Three variants are provided:

* ``mean-anchored``: the k-th score of image i is compared with the mean
  score of image j, standardized by both groups' sample variances.
* ``prob-average``: the k-th score of image i is compared with every score of
  image j and the resulting probabilities are averaged.
* ``case-v``: as ``prob-average`` but with both variances fixed to one.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy import special

from .quality_core import ScoreGroup

GroupLike = Union[ScoreGroup, Sequence[float], np.ndarray]

SQRT2 = math.sqrt(2.0)


class Variant(str, enum.Enum):
    MEAN_ANCHORED = "mean-anchored"
    PROB_AVERAGE = "prob-average"
    CASE_V = "case-v"


@dataclass(frozen=True)
class ThurstoneConfig:
    gamma: float = 1e-8
    variant: Variant = Variant.MEAN_ANCHORED
    ddof: int = 0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.ddof not in (0, 1):
            raise ValueError("ddof must be 0 or 1")


def std_normal_cdf(z):
    """Standard Gaussian CDF via the complementary error function.

    ``0.5 * erfc(-z / sqrt(2))`` keeps full relative precision in the lower
    tail, unlike ``0.5 * (1 + erf(z / sqrt(2)))``.
    """
    out = 0.5 * special.erfc(-np.asarray(z, dtype=float) / SQRT2)
    return float(out) if np.ndim(out) == 0 else out


def _as_scores(g: GroupLike) -> np.ndarray:
    arr = g.as_array() if isinstance(g, ScoreGroup) else np.asarray(g, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("a score group must be a non-empty 1-D sequence")
    return arr


def _var(scores: np.ndarray, ddof: int) -> float:
    # a single draw carries no spread information
    if scores.size - ddof <= 0:
        return 0.0
    return float(np.sum((scores - scores.mean()) ** 2) / (scores.size - ddof))


def _check_index(k: int, scores: np.ndarray) -> None:
    if not 0 <= k < scores.size:
        raise IndexError(f"response index {k} out of range for group of size {scores.size}")


def comparative_prob_mean_anchored(k: int, g_i: GroupLike, g_j: GroupLike,
                                   gamma: float = 1e-8, ddof: int = 0) -> float:
    """Probability that the k-th (0-based) score of image i beats image j's mean."""
    qi, qj = _as_scores(g_i), _as_scores(g_j)
    _check_index(k, qi)
    denom = math.sqrt(_var(qi, ddof) + _var(qj, ddof) + gamma)
    return std_normal_cdf((qi[k] - qj.mean()) / denom)


def comparative_prob_average(k: int, g_i: GroupLike, g_j: GroupLike,
                             gamma: float = 1e-8, ddof: int = 0) -> float:
    """Average of the probabilities that score k of image i beats each score of j."""
    qi, qj = _as_scores(g_i), _as_scores(g_j)
    _check_index(k, qi)
    denom = math.sqrt(_var(qi, ddof) + _var(qj, ddof) + gamma)
    return float(np.mean(std_normal_cdf((qi[k] - qj) / denom)))


def comparative_prob_case_v(k: int, g_i: GroupLike, g_j: GroupLike) -> float:
    """Probability-average form with unit variances (denominator sqrt(2))."""
    qi, qj = _as_scores(g_i), _as_scores(g_j)
    _check_index(k, qi)
    return float(np.mean(std_normal_cdf((qi[k] - qj) / SQRT2)))


def comparative_prob(k: int, g_i: GroupLike, g_j: GroupLike,
                     cfg: ThurstoneConfig | None = None) -> float:
    cfg = cfg or ThurstoneConfig()
    if cfg.variant is Variant.MEAN_ANCHORED:
        return comparative_prob_mean_anchored(k, g_i, g_j, cfg.gamma, cfg.ddof)
    if cfg.variant is Variant.PROB_AVERAGE:
        return comparative_prob_average(k, g_i, g_j, cfg.gamma, cfg.ddof)
    return comparative_prob_case_v(k, g_i, g_j)


def comparative_prob_matrix(scores, cfg: ThurstoneConfig | None = None) -> np.ndarray:
    """Vectorized probabilities for a whole batch.

    ``scores`` has shape (B, K). Returns an array of shape (B, K, B) whose
    entry ``[i, k, j]`` is p_k(x_i, x_j); entries with ``i == j`` are NaN.
    """
    cfg = cfg or ThurstoneConfig()
    q = np.asarray(scores, dtype=float)
    if q.ndim != 2 or q.shape[1] < 1:
        raise ValueError("scores must have shape (B, K)")
    B, K = q.shape
    if cfg.variant is Variant.CASE_V:
        denom = np.full((B, B), SQRT2)
    else:
        if K - cfg.ddof > 0:
            var = np.sum((q - q.mean(axis=1, keepdims=True)) ** 2, axis=1) / (K - cfg.ddof)
        else:
            var = np.zeros(B)
        denom = np.sqrt(var[:, None] + var[None, :] + cfg.gamma)

    if cfg.variant is Variant.MEAN_ANCHORED:
        mu = q.mean(axis=1)
        z = (q[:, :, None] - mu[None, None, :]) / denom[:, None, :]
        probs = std_normal_cdf(z)
    else:
        # (B, K, B, K): score k of image i against score k' of image j
        z = (q[:, :, None, None] - q[None, None, :, :]) / denom[:, None, :, None]
        probs = std_normal_cdf(z).mean(axis=3)

    idx = np.arange(B)
    probs[idx, :, idx] = np.nan
    return probs
