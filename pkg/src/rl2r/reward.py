"""Per-response rewards from predicted comparative probabilities.

The default is the continuous fidelity reward; a discretized binary reward
and an absolute-error regression reward are kept for ablations and baselines.
"""

from __future__ import annotations

import enum
import math
from typing import Hashable, Mapping, Sequence

import numpy as np

from .quality_core import ScoreGroup
from .thurstone import ThurstoneConfig, comparative_prob, comparative_prob_matrix


class RewardKind(str, enum.Enum):
    FIDELITY = "fidelity"
    BINARY = "binary"
    REGRESSION = "regression"


class MissingPreferenceError(KeyError):
    pass


def fidelity_term(p_true: float, p_pred: float) -> float:
    """sqrt(p * p_hat) + sqrt((1 - p) * (1 - p_hat))."""
    if p_true not in (0.0, 0.5, 1.0):
        raise ValueError(f"p_true must be 0, 0.5 or 1, got {p_true}")
    if not 0.0 <= p_pred <= 1.0:
        raise ValueError(f"p_pred must lie in [0, 1], got {p_pred}")
    return math.sqrt(p_true * p_pred) + math.sqrt((1.0 - p_true) * (1.0 - p_pred))


def binary_agrees(p_true: float, p_pred: float, tie_band: float = 0.1) -> float:
    if p_true == 1.0:
        return float(p_pred > 0.5)
    if p_true == 0.0:
        return float(p_pred < 0.5)
    if p_true == 0.5:
        return float(abs(p_pred - 0.5) <= tie_band)
    raise ValueError(f"p_true must be 0, 0.5 or 1, got {p_true}")


def _partner_probs(i: Hashable, k: int, batch: Sequence[ScoreGroup],
                   prefs: Mapping, cfg: ThurstoneConfig | None):
    if len(batch) < 2:
        raise ValueError("a batch needs at least two images")
    by_id = {g.image_id: g for g in batch}
    if i not in by_id:
        raise KeyError(f"image {i!r} is not in the batch")
    g_i = by_id[i]
    for g_j in batch:
        if g_j.image_id == i:
            continue
        try:
            p = prefs[(i, g_j.image_id)]
        except KeyError:
            raise MissingPreferenceError((i, g_j.image_id)) from None
        yield p, comparative_prob(k, g_i, g_j, cfg)


def fidelity_reward(i: Hashable, k: int, batch: Sequence[ScoreGroup], prefs: Mapping,
                    cfg: ThurstoneConfig | None = None) -> float:
    """Fidelity of response k of image i, averaged over the other B-1 images.

    ``prefs`` maps ordered id pairs ``(i, j)`` to the true preference.
    """
    terms = [fidelity_term(p, pk) for p, pk in _partner_probs(i, k, batch, prefs, cfg)]
    return float(np.mean(terms))


def binary_reward(i: Hashable, k: int, batch: Sequence[ScoreGroup], prefs: Mapping,
                  cfg: ThurstoneConfig | None = None, tie_band: float = 0.1) -> float:
    """Fraction of partners on which response k of image i gets the order right."""
    hits = [binary_agrees(p, pk, tie_band) for p, pk in _partner_probs(i, k, batch, prefs, cfg)]
    return float(np.mean(hits))


def batch_rewards(scores, prefs, kind: RewardKind | str = RewardKind.FIDELITY,
                  cfg: ThurstoneConfig | None = None, tie_band: float = 0.1) -> np.ndarray:
    """Rewards for every response of every image in a batch.

    ``scores`` is (B, K) and ``prefs`` the (B, B) matrix from
    :func:`rl2r.quality_core.preference_matrix`. Returns a (B, K) array.
    """
    kind = RewardKind(kind)
    if kind is RewardKind.REGRESSION:
        raise ValueError("regression rewards need targets; use regression_rewards")
    q = np.asarray(scores, dtype=float)
    prefs = np.asarray(prefs, dtype=float)
    B = q.shape[0]
    if B < 2:
        raise ValueError("a batch needs at least two images")
    if prefs.shape != (B, B):
        raise ValueError(f"preference matrix must be {(B, B)}, got {prefs.shape}")
    off = ~np.eye(B, dtype=bool)
    if np.isnan(prefs[off]).any():
        raise MissingPreferenceError("preference matrix has missing off-diagonal entries")

    probs = comparative_prob_matrix(q, cfg)              # (B, K, B)
    p = np.broadcast_to(prefs[:, None, :], probs.shape)
    mask = np.broadcast_to(off[:, None, :], probs.shape)
    if kind is RewardKind.FIDELITY:
        with np.errstate(invalid="ignore"):
            terms = np.sqrt(p * probs) + np.sqrt((1.0 - p) * (1.0 - probs))
    else:
        terms = np.where(p == 1.0, probs > 0.5,
                         np.where(p == 0.0, probs < 0.5,
                                  np.abs(probs - 0.5) <= tie_band)).astype(float)
    terms = np.where(mask, terms, 0.0)
    return terms.sum(axis=2) / (B - 1)


def regression_rewards(scores, targets, score_range: tuple[float, float] = (1.0, 5.0)) -> np.ndarray:
    """Absolute-error reward ``1 - |q - t| / (high - low)`` against per-image targets.

    Targets must already live on the score scale; this reward is not invariant
    to how they were put there.
    """
    q = np.asarray(scores, dtype=float)
    t = np.asarray(targets, dtype=float)
    if t.shape != q.shape[:1]:
        raise ValueError("need one target per image")
    low, high = score_range
    return 1.0 - np.abs(q - t[:, None]) / (high - low)
