"""Rank-correlation metrics, score-spread curves and gMAD pair selection."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata


class UndefinedMetricError(ValueError):
    """Correlation is undefined (constant input or too few points)."""


@dataclass(frozen=True)
class MetricReport:
    srcc: float
    plcc: float
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("a metric report needs n >= 2")
        for name in ("srcc", "plcc"):
            v = getattr(self, name)
            if not -1.0 - 1e-12 <= v <= 1.0 + 1e-12:
                raise ValueError(f"{name}={v} outside [-1, 1]")


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise UndefinedMetricError("need at least 2 points")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("inputs must be finite")
    return x, y


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedMetricError("correlation undefined for a constant vector")
    r = float(xc @ yc) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def plcc(x, y) -> float:
    """Pearson linear correlation, no nonlinear pre-mapping."""
    return _pearson(*_pair(x, y))


def srcc(x, y) -> float:
    """Spearman correlation: Pearson correlation of average-tie ranks."""
    x, y = _pair(x, y)
    return _pearson(rankdata(x, method="average"), rankdata(y, method="average"))


def metric_report(pred, target) -> MetricReport:
    pred, target = _pair(pred, target)
    return MetricReport(srcc=srcc(pred, target), plcc=plcc(pred, target), n=pred.size)


def score_std_curve(run_log) -> list[tuple[int, float]]:
    """``(step, mean per-image sampled-score std)`` for every logged step."""
    records = list(run_log)
    if not records:
        raise ValueError("run log is empty")
    return [(int(r.step), float(r.mean_score_std)) for r in records]


def write_std_curve_csv(curve: Sequence[tuple[int, float]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "mean_std"])
        for s, v in curve:
            w.writerow([s, repr(v)])


def quartile_means(curve: Sequence[tuple[int, float]]) -> tuple[float, float]:
    """Mean of the first and of the last 25% of a curve (at least one point each)."""
    vals = np.array([v for _, v in curve], dtype=float)
    q = max(1, len(vals) // 4)
    return float(vals[:q].mean()), float(vals[-q:].mean())


# --- gMAD -------------------------------------------------------------------

@dataclass(frozen=True)
class GmadPair:
    defender_level: int
    image_a: str
    image_b: str
    defender_gap: float
    attacker_gap: float


@dataclass(frozen=True)
class GmadWarning:
    defender_level: int
    message: str


@dataclass
class GmadResult:
    pairs: list[GmadPair]
    warnings: list[GmadWarning]


def quantile_bins(scores: Mapping[str, float], n_levels: int) -> list[list[str]]:
    """Split ids into ``n_levels`` equal-count bins ordered by score.

    Images are sorted by ``(score, image_id)``; the image at rank ``r`` of
    ``n`` goes to bin ``floor((r + 1/2) * n_levels / n)``. Using the rank
    midpoint makes the binning mirror exactly when the order is reversed,
    unless some midpoint lands on a bin boundary (only possible when
    ``n_levels`` does not divide ``n``).
    """
    if n_levels < 1:
        raise ValueError("n_levels must be at least 1")
    order = sorted(scores, key=lambda iid: (scores[iid], iid))
    n = len(order)
    bins: list[list[str]] = [[] for _ in range(n_levels)]
    for r, iid in enumerate(order):
        bins[(2 * r + 1) * n_levels // (2 * n)].append(iid)
    return bins


def default_tolerance(defender: Mapping[str, float], fraction: float = 0.02) -> float:
    vals = list(defender.values())
    span = max(vals) - min(vals)
    return fraction * span if span > 0 else fraction


def gmad_pairs(defender: Mapping[str, float], attacker: Mapping[str, float],
               n_levels: int, tolerance: float | None = None) -> GmadResult:
    """Per defender-quantile bin, the pair the defender scores alike and the attacker most apart.

    A pair qualifies when its defender gap is at most ``tolerance``; among
    qualifying pairs the largest attacker gap wins, ties going to the
    lexicographically smallest ``(image_a, image_b)`` with ``image_a < image_b``.
    Bins with fewer than two images or no qualifying pair yield a warning.
    Swap the arguments for the reverse attack.
    """
    if set(defender) != set(attacker):
        raise KeyError("defender and attacker must score the same images")
    if tolerance is None:
        tolerance = default_tolerance(defender)
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    pairs, warnings = [], []
    for level, members in enumerate(quantile_bins(defender, n_levels)):
        if len(members) < 2:
            warnings.append(GmadWarning(level, f"bin has {len(members)} image(s); skipped"))
            continue
        ids = sorted(members)
        d = np.array([defender[i] for i in ids])
        a = np.array([attacker[i] for i in ids])
        dgap = np.abs(d[:, None] - d[None, :])
        agap = np.abs(a[:, None] - a[None, :])
        ok = np.triu(dgap <= tolerance, k=1)
        if not ok.any():
            warnings.append(GmadWarning(level, "no pair within the defender tolerance"))
            continue
        masked = np.where(ok, agap, -np.inf)
        # argmax on the row-major flattening returns the smallest (a, b) among ties
        ia, ib = np.unravel_index(int(np.argmax(masked)), masked.shape)
        pairs.append(GmadPair(level, ids[ia], ids[ib], float(dgap[ia, ib]), float(agap[ia, ib])))
    return GmadResult(pairs=pairs, warnings=warnings)


def adjudicate(pairs: Iterable[GmadPair], attacker: Mapping[str, float],
               truth: Mapping[str, float]) -> float:
    """Fraction of pairs on which the attacker's ordering matches ground truth.

    High values mean the attacker exposed real defender failures.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no pairs to adjudicate")
    wins = 0
    for p in pairs:
        att = np.sign(attacker[p.image_a] - attacker[p.image_b])
        tru = np.sign(truth[p.image_a] - truth[p.image_b])
        wins += int(att == tru)
    return wins / len(pairs)


def write_records_csv(rows: Sequence, path, fieldnames: Sequence[str] | None = None) -> None:
    rows = [asdict(r) for r in rows]
    if fieldnames is None:
        if not rows:
            raise ValueError("fieldnames are required for an empty table")
        fieldnames = list(rows[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fieldnames), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def write_records_json(rows: Sequence, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([asdict(r) for r in rows], fh, indent=2)
        fh.write("\n")
