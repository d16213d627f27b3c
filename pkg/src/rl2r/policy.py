"""Stochastic scoring policies.

A policy maps an image's feature vector to a distribution over quality
scores in [1, 5]. The trainer only needs ``sample``, ``logprob`` and
``logprob_grad`` plus a way to flatten parameters into a vector, so any
object implementing :class:`ScoringPolicy` can be trained.
"""

from __future__ import annotations

import abc
import json
import math
from dataclasses import dataclass
from typing import Any

import numpy as np

SCORE_LOW = 1.0
SCORE_HIGH = 5.0
CHECKPOINT_VERSION = 1
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SampledScore:
    value: float
    logprob: float


class ScoringPolicy(abc.ABC):
    """Interface shared by all scoring policies."""

    @abc.abstractmethod
    def init_params(self, n_features: int, rng: np.random.Generator) -> Any: ...

    @abc.abstractmethod
    def to_vector(self, params) -> np.ndarray: ...

    @abc.abstractmethod
    def from_vector(self, vector: np.ndarray, like) -> Any: ...

    @abc.abstractmethod
    def mean_score(self, params, features) -> np.ndarray:
        """Deterministic score used for prediction."""

    @abc.abstractmethod
    def sample(self, params, features, rng: np.random.Generator) -> SampledScore: ...

    @abc.abstractmethod
    def logprob(self, params, features, value): ...

    @abc.abstractmethod
    def logprob_grad(self, params, features, value) -> np.ndarray:
        """Gradient of ``logprob`` w.r.t. the flat parameter vector."""

    def sample_group(self, params, features, k: int, rng: np.random.Generator) -> np.ndarray:
        return np.array([self.sample(params, features, rng).value for _ in range(k)])

    def logprob_batch(self, params, features, values) -> np.ndarray:
        """``values`` (B, K) against ``features`` (B, D)."""
        features = np.asarray(features, dtype=float)
        values = np.asarray(values, dtype=float)
        return np.array([[self.logprob(params, f, v) for v in row]
                         for f, row in zip(features, values)])

    def logprob_grad_batch(self, params, features, values) -> np.ndarray:
        """Per-response gradients, shape (B, K, P)."""
        features = np.asarray(features, dtype=float)
        values = np.asarray(values, dtype=float)
        return np.array([[self.logprob_grad(params, f, v) for v in row]
                         for f, row in zip(features, values)])


@dataclass(frozen=True)
class PolicyParams:
    weights: np.ndarray
    bias: float
    log_std: float

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))
        object.__setattr__(self, "log_std", float(self.log_std))
        if not (np.all(np.isfinite(w)) and math.isfinite(self.bias)
                and math.isfinite(self.log_std)):
            raise ValueError("policy parameters must be finite")

    @property
    def feature_dim(self) -> int:
        return self.weights.size

    @property
    def std(self) -> float:
        return math.exp(self.log_std)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.weights, [self.bias, self.log_std]])

    @classmethod
    def from_vector(cls, vector) -> "PolicyParams":
        v = np.asarray(vector, dtype=float)
        return cls(weights=v[:-2], bias=v[-2], log_std=v[-1])

    def to_json(self) -> str:
        return json.dumps({
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "log_std": self.log_std,
            "feature_dim": self.feature_dim,
            "version": CHECKPOINT_VERSION,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PolicyParams":
        d = json.loads(text)
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
        params = cls(weights=d["weights"], bias=d["bias"], log_std=d["log_std"])
        if params.feature_dim != d["feature_dim"]:
            raise ValueError("checkpoint feature_dim does not match its weights")
        return params

    def __eq__(self, other):
        if not isinstance(other, PolicyParams):
            return NotImplemented
        return np.array_equal(self.to_vector(), other.to_vector())

    __hash__ = None


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class GaussianScorePolicy(ScoringPolicy):
    """Feature-linear Gaussian score head squashed into [1, 5].

    The mean is ``1 + 4 * sigmoid(w @ f + b)`` and the spread is a single
    learned ``log_std``. Samples falling outside [1, 5] are redrawn (up to
    ``max_resample`` times, then clamped). ``logprob`` is the untruncated
    Gaussian density; with ``strict_truncation`` the out-of-range draws are
    redrawn until they land inside, with no clamp fallback.
    """

    def __init__(self, init_log_std: float = math.log(0.5), init_weight_scale: float = 0.01,
                 max_resample: int = 100, strict_truncation: bool = False):
        self.init_log_std = init_log_std
        self.init_weight_scale = init_weight_scale
        self.max_resample = max_resample
        self.strict_truncation = strict_truncation

    def init_params(self, n_features, rng):
        w = rng.normal(0.0, self.init_weight_scale, size=n_features)
        return PolicyParams(weights=w, bias=0.0, log_std=self.init_log_std)

    def to_vector(self, params):
        return params.to_vector()

    def from_vector(self, vector, like=None):
        return PolicyParams.from_vector(vector)

    @staticmethod
    def _linear(params: PolicyParams, features) -> np.ndarray:
        f = np.asarray(features, dtype=float)
        if f.shape[-1] != params.feature_dim:
            raise ValueError(
                f"expected {params.feature_dim} features, got {f.shape[-1]}")
        return f @ params.weights + params.bias

    def mean_score(self, params, features):
        z = self._linear(params, features)
        out = SCORE_LOW + (SCORE_HIGH - SCORE_LOW) * _sigmoid(z)
        return float(out) if np.ndim(out) == 0 else out

    def _draw(self, mean: float, std: float, rng: np.random.Generator) -> float:
        if std == 0.0:
            return mean
        attempts = 0
        while True:
            v = rng.normal(mean, std)
            if SCORE_LOW <= v <= SCORE_HIGH:
                return float(v)
            attempts += 1
            if attempts >= self.max_resample and not self.strict_truncation:
                return float(min(max(v, SCORE_LOW), SCORE_HIGH))

    def sample(self, params, features, rng):
        mean = self.mean_score(params, features)
        value = self._draw(mean, params.std, rng)
        if params.std == 0.0:
            # point mass at the mean
            return SampledScore(value=value, logprob=math.inf)
        return SampledScore(value=value, logprob=float(self.logprob(params, features, value)))

    def sample_group(self, params, features, k, rng):
        mean = self.mean_score(params, features)
        return np.array([self._draw(mean, params.std, rng) for _ in range(k)])

    def logprob(self, params, features, value):
        mean = self.mean_score(params, features)
        z = (np.asarray(value, dtype=float) - mean) / params.std
        out = -0.5 * z * z - params.log_std - 0.5 * _LOG_2PI
        return float(out) if np.ndim(out) == 0 else out

    def logprob_grad(self, params, features, value):
        f = np.asarray(features, dtype=float)
        s = _sigmoid(self._linear(params, f))
        mean = SCORE_LOW + (SCORE_HIGH - SCORE_LOW) * s
        var = params.std ** 2
        resid = float(value) - float(mean)
        dmean_dz = (SCORE_HIGH - SCORE_LOW) * s * (1.0 - s)
        dz = resid / var * dmean_dz
        dlog_std = resid * resid / var - 1.0
        return np.concatenate([dz * f, [dz, dlog_std]])

    def logprob_batch(self, params, features, values):
        mean = np.asarray(self.mean_score(params, features))
        z = (np.asarray(values, dtype=float) - mean[:, None]) / params.std
        return -0.5 * z * z - params.log_std - 0.5 * _LOG_2PI

    def logprob_grad_batch(self, params, features, values):
        f = np.asarray(features, dtype=float)
        v = np.asarray(values, dtype=float)
        s = _sigmoid(self._linear(params, f))                      # (B,)
        mean = SCORE_LOW + (SCORE_HIGH - SCORE_LOW) * s
        var = params.std ** 2
        resid = v - mean[:, None]                                   # (B, K)
        dz = resid / var * ((SCORE_HIGH - SCORE_LOW) * s * (1.0 - s))[:, None]
        dw = dz[:, :, None] * f[:, None, :]
        return np.concatenate([dw, dz[:, :, None], (resid ** 2 / var - 1.0)[:, :, None]], axis=2)


class CategoricalScorePolicy(ScoringPolicy):
    """Feature-blind categorical policy over the integer scores 1..5.

    Parameters are five logits. Useful as a second, structurally different
    policy for checking that the trainer only relies on the interface.
    """

    support = np.arange(1.0, 6.0)

    def init_params(self, n_features, rng):
        return np.zeros(self.support.size)

    def to_vector(self, params):
        return np.asarray(params, dtype=float).copy()

    def from_vector(self, vector, like=None):
        return np.asarray(vector, dtype=float).copy()

    def _probs(self, logits):
        e = np.exp(logits - np.max(logits))
        return e / e.sum()

    def _index(self, value) -> int:
        idx = int(round(float(value))) - 1
        if not 0 <= idx < self.support.size or self.support[idx] != float(value):
            raise ValueError(f"{value!r} is not in the categorical support")
        return idx

    def mean_score(self, params, features):
        f = np.asarray(features, dtype=float)
        m = float(self._probs(params) @ self.support)
        return m if f.ndim == 1 else np.full(f.shape[0], m)

    def sample(self, params, features, rng):
        idx = int(rng.choice(self.support.size, p=self._probs(params)))
        value = float(self.support[idx])
        return SampledScore(value=value, logprob=self.logprob(params, features, value))

    def logprob(self, params, features, value):
        logits = np.asarray(params, dtype=float)
        shifted = logits - np.max(logits)
        return float(shifted[self._index(value)] - np.log(np.exp(shifted).sum()))

    def logprob_grad(self, params, features, value):
        grad = -self._probs(params)
        grad[self._index(value)] += 1.0
        return grad
