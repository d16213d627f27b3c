"""Synthetic observer worlds, MOS tables and VLM response logs.

Images are represented by feature vectors; a hidden latent quality is a
monotone function of the features and MOS is a noisy, affinely scaled copy of
it. The latent quality is kept separately as evaluation ground truth.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import re
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .policy import SCORE_HIGH, SCORE_LOW
from .quality_core import MosRecord, ScoreGroup


# keeps world draws independent of estimators seeded with the same integer
_WORLD_STREAM = 0x51A7


class DataError(ValueError):
    """Malformed input data (CSV, JSONL or response text)."""


class ResponseParseError(DataError):
    pass


class ClampPolicy(str, enum.Enum):
    CLAMP = "clamp"
    REJECT = "reject"


@dataclass(frozen=True)
class SyntheticWorldConfig:
    n_images: int = 200
    feature_dim: int = 8
    latent_weights: Optional[tuple[float, ...]] = None
    mos_noise_std: float = 0.1
    mos_scale: tuple[float, float] = (1.0, 5.0)
    seed: int = 0
    compress: bool = False
    dataset_id: str = "synthetic"
    id_prefix: str = "img"

    def __post_init__(self):
        if self.n_images < 2:
            raise ValueError("n_images must be at least 2")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be positive")
        if self.latent_weights is not None:
            lw = tuple(float(w) for w in self.latent_weights)
            if len(lw) != self.feature_dim:
                raise ValueError("latent_weights length must equal feature_dim")
            if not any(lw):
                raise ValueError("latent_weights must not be all zero")
            object.__setattr__(self, "latent_weights", lw)
        if not self.mos_noise_std >= 0:
            raise ValueError("mos_noise_std must be non-negative")
        low, high = (float(v) for v in self.mos_scale)
        if not (math.isfinite(low) and math.isfinite(high)) or high <= low:
            raise ValueError(f"mos_scale needs high > low, got {self.mos_scale}")
        object.__setattr__(self, "mos_scale", (low, high))


@dataclass
class World:
    records: list[MosRecord]
    latent: dict[str, float]

    @property
    def image_ids(self) -> list[str]:
        return [r.image_id for r in self.records]

    def features(self) -> np.ndarray:
        return np.array([r.features for r in self.records], dtype=float)

    def mos(self) -> np.ndarray:
        return np.array([r.mos for r in self.records], dtype=float)

    def latent_array(self) -> np.ndarray:
        return np.array([self.latent[r.image_id] for r in self.records], dtype=float)


def generate_world(cfg: SyntheticWorldConfig) -> World:
    """Draw features, a latent quality per image, and noisy MOS on ``cfg.mos_scale``.

    Random draws depend only on the seed, sizes and weights, never on
    ``mos_scale``, so two worlds differing only in scale are affine copies of
    each other.
    """
    rng = np.random.default_rng([_WORLD_STREAM, cfg.seed])
    if cfg.latent_weights is None:
        w = rng.normal(size=cfg.feature_dim)
    else:
        w = np.asarray(cfg.latent_weights, dtype=float)
    w = w / np.linalg.norm(w)
    feats = rng.normal(size=(cfg.n_images, cfg.feature_dim))
    latent = feats @ w
    noise = rng.normal(size=cfg.n_images) * cfg.mos_noise_std
    observed = latent + noise
    if cfg.compress:
        observed = 1.0 / (1.0 + np.exp(-observed))
    lo, hi = observed.min(), observed.max()
    if hi <= lo:
        raise ValueError("degenerate world: all observations are equal")
    unit = (observed - lo) / (hi - lo)
    low, high = cfg.mos_scale
    mos = low + (high - low) * unit

    width = max(4, len(str(cfg.n_images - 1)))
    ids = [f"{cfg.id_prefix}{i:0{width}d}" for i in range(cfg.n_images)]
    records = [MosRecord(image_id=iid, mos=float(m), dataset_id=cfg.dataset_id,
                         features=tuple(f)) for iid, m, f in zip(ids, mos, feats)]
    return World(records=records, latent={iid: float(z) for iid, z in zip(ids, latent)})


def linear_rescale(values, low: float = SCORE_LOW, high: float = SCORE_HIGH,
                   source_range: tuple[float, float] | None = None) -> np.ndarray:
    """Map ``values`` linearly onto [low, high].

    The source range defaults to the observed min/max. This is the naive
    realignment a regression objective needs before pooling datasets.
    """
    v = np.asarray(values, dtype=float)
    src_lo, src_hi = source_range if source_range is not None else (v.min(), v.max())
    if src_hi <= src_lo:
        raise ValueError("cannot rescale a constant range")
    return low + (high - low) * (v - src_lo) / (src_hi - src_lo)


# --- MOS CSV -----------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_mos_csv(records: Sequence[MosRecord], path) -> None:
    if not records:
        raise ValueError("no records to write")
    dim = len(records[0].features)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "mos", "dataset_id"] + [f"f{i}" for i in range(dim)])
        for r in records:
            if len(r.features) != dim:
                raise ValueError("all records must share one feature dimension")
            w.writerow([r.image_id, _fmt(r.mos), r.dataset_id] + [_fmt(f) for f in r.features])


def _parse_float(cell: str, line: int, column: str) -> float:
    try:
        x = float(cell)
    except ValueError:
        raise DataError(f"line {line}: column {column!r} is not numeric: {cell!r}") from None
    if not math.isfinite(x):
        raise DataError(f"line {line}: column {column!r} is not finite: {cell!r}")
    return x


def load_mos_csv(path) -> list[MosRecord]:
    """Read ``image_id,mos,dataset_id,f0,f1,...``. Line numbers in errors count the header as 1."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        required = ["image_id", "mos", "dataset_id"]
        missing = [c for c in required if c not in header]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        feat_cols = [h for h in header if re.fullmatch(r"f\d+", h)]
        feat_cols.sort(key=lambda h: int(h[1:]))
        if feat_cols != [f"f{i}" for i in range(len(feat_cols))]:
            raise DataError(f"{path}: feature columns must be f0..f{len(feat_cols) - 1}")
        col = {h: i for i, h in enumerate(header)}
        records, seen = [], set()
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"line {line}: expected {len(header)} cells, got {len(row)}")
            iid = row[col["image_id"]].strip()
            if not iid:
                raise DataError(f"line {line}: empty image_id")
            if iid in seen:
                raise DataError(f"line {line}: duplicate image_id {iid!r}")
            seen.add(iid)
            mos = _parse_float(row[col["mos"]], line, "mos")
            feats = tuple(_parse_float(row[col[c]], line, c) for c in feat_cols)
            records.append(MosRecord(image_id=iid, mos=mos,
                                     dataset_id=row[col["dataset_id"]].strip(), features=feats))
    if not records:
        raise DataError(f"{path}: no data rows")
    return records


def write_latent_csv(latent: dict[str, float], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "latent"])
        for iid, z in latent.items():
            w.writerow([iid, _fmt(z)])


def load_score_csv(path, value_column: str | None = None) -> dict[str, float]:
    """Two-column ``image_id,<value>`` table (latent sidecars, model scores)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if "image_id" not in header or len(header) < 2:
            raise DataError(f"{path}: need an image_id column and a value column")
        id_col = header.index("image_id")
        if value_column is None:
            val_col = next(i for i in range(len(header)) if i != id_col)
        elif value_column in header:
            val_col = header.index(value_column)
        else:
            raise DataError(f"{path}: missing column {value_column!r}")
        out = {}
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            out[row[id_col]] = _parse_float(row[val_col], line, header[val_col])
    return out


# --- response logs ------------------------------------------------------------

_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL | re.IGNORECASE)
_NUMBER_RE = re.compile(r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?")


def compose_response(score: float, reasoning: str = "") -> str:
    """Render a score in the ``<think>``/``<answer>`` response format."""
    return f"<think>{reasoning}</think> <answer>{score:.2f}</answer>"


def parse_response(raw: str, clamp_policy: ClampPolicy | str = ClampPolicy.CLAMP) -> float:
    """Score from the last ``<answer>`` span of a response.

    Out-of-range scores are clamped to [1, 5] or rejected, per ``clamp_policy``.
    Use :func:`parse_response_detail` to learn whether clamping happened.
    """
    return parse_response_detail(raw, clamp_policy)[0]


def parse_response_detail(raw: str, clamp_policy: ClampPolicy | str = ClampPolicy.CLAMP):
    """Like :func:`parse_response` but returns ``(score, was_clamped)``."""
    policy = ClampPolicy(clamp_policy)
    spans = _ANSWER_RE.findall(raw or "")
    if not spans:
        raise ResponseParseError("no <answer></answer> span")
    answer = spans[-1].strip()
    if not answer:
        raise ResponseParseError("empty <answer> span")
    m = _NUMBER_RE.search(answer)
    if m is None:
        raise ResponseParseError(f"no numeric token in answer {answer!r}")
    value = float(m.group())
    if not math.isfinite(value):
        raise ResponseParseError(f"non-finite score {m.group()!r}")
    if SCORE_LOW <= value <= SCORE_HIGH:
        return value, False
    if policy is ClampPolicy.REJECT:
        raise ResponseParseError(f"score {value} outside [{SCORE_LOW:g}, {SCORE_HIGH:g}]")
    return min(max(value, SCORE_LOW), SCORE_HIGH), True


@dataclass(frozen=True)
class ResponseRecord:
    image_id: str
    raw_text: str
    parsed_score: Optional[float]
    error: Optional[str] = None


@dataclass
class ResponseLog:
    groups: list[ScoreGroup]
    records: list[ResponseRecord] = field(default_factory=list)
    clamped: int = 0
    failed: int = 0


def load_response_groups(path, k: int, clamp_policy: ClampPolicy | str = ClampPolicy.CLAMP) -> ResponseLog:
    """Group parsed scores by image from a JSONL log of ``{"image_id", "text"}`` lines.

    Every image needs at least ``k`` valid responses; only the first ``k`` are
    kept. Nothing is imputed.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    per_image: "OrderedDict[str, list[float]]" = OrderedDict()
    log = ResponseLog(groups=[])
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            iid, text = str(obj["image_id"]), obj["text"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"line {n}: bad response record ({exc})") from None
        per_image.setdefault(iid, [])
        try:
            score, clamped = parse_response_detail(text, clamp_policy)
        except ResponseParseError as exc:
            log.failed += 1
            log.records.append(ResponseRecord(iid, text, None, str(exc)))
            continue
        log.clamped += int(clamped)
        log.records.append(ResponseRecord(iid, text, score))
        per_image[iid].append(score)
    if not per_image:
        raise DataError(f"{path}: no response records")
    for iid, scores in per_image.items():
        if len(scores) < k:
            raise DataError(f"image {iid!r} has {len(scores)} valid responses, need {k}")
        log.groups.append(ScoreGroup(iid, tuple(scores[:k])))
    return log


def split_ids(image_ids: Sequence[str], rng: np.random.Generator,
              fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)) -> dict[str, list[str]]:
    """Random train/val/test split by image id."""
    ids = list(image_ids)
    order = rng.permutation(len(ids))
    n_train = int(round(fractions[0] * len(ids)))
    n_val = int(round(fractions[1] * len(ids)))
    shuffled = [ids[i] for i in order]
    return {
        "train": sorted(shuffled[:n_train]),
        "val": sorted(shuffled[n_train:n_train + n_val]),
        "test": sorted(shuffled[n_train + n_val:]),
    }

