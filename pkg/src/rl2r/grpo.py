"""Group relative policy optimization on scalar quality scores.

Each image in a batch gets K sampled scores from the old policy. Rewards are
standardized within the group to form advantages, and the policy ascends a
clipped-ratio surrogate with a KL penalty towards a frozen reference policy.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .policy import ScoringPolicy
from .quality_core import preference_matrix
from .reward import RewardKind, batch_rewards, regression_rewards
from .thurstone import ThurstoneConfig

ADV_EPS = 1e-12
RHO_MIN, RHO_MAX = 1e-6, 1e6


@dataclass(frozen=True)
class GrpoConfig:
    """GRPO hyper-parameters.

    ``learning_rate`` defaults to a value suited to the small Gaussian policy;
    fine-tuning a large vision-language model would use something like 1e-6.
    """

    epsilon: float = 0.2
    beta: float = 0.04
    learning_rate: float = 1e-2
    k_responses: int = 6

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.k_responses < 2:
            raise ValueError("k_responses must be at least 2")


def advantages(rewards) -> np.ndarray:
    """Standardize rewards within each group (last axis).

    Groups whose population std is below 1e-12 get all-zero advantages.
    """
    r = np.asarray(rewards, dtype=float)
    if r.shape[-1] < 2:
        raise ValueError("need at least 2 rewards per group")
    mu = r.mean(axis=-1, keepdims=True)
    sd = r.std(axis=-1, keepdims=True)
    degenerate = sd < ADV_EPS
    safe = np.where(degenerate, 1.0, sd)
    return np.where(degenerate, 0.0, (r - mu) / safe)


def _clamped_rho(logprob_new, logprob_ref):
    log_rho = np.asarray(logprob_ref, dtype=float) - np.asarray(logprob_new, dtype=float)
    log_rho_c = np.clip(log_rho, math.log(RHO_MIN), math.log(RHO_MAX))
    return np.exp(log_rho_c), log_rho_c, log_rho != log_rho_c


def kl_approx(logprob_new, logprob_ref):
    """Non-negative KL estimate ``rho - ln(rho) - 1`` with ``rho = pi_ref / pi``.

    ``rho`` is clamped to [1e-6, 1e6].
    """
    _, log_rho, _ = _clamped_rho(logprob_new, logprob_ref)
    # expm1 keeps precision when rho is close to 1
    out = np.expm1(log_rho) - log_rho
    return float(out) if np.ndim(out) == 0 else out


def clipped_term(ratio, advantage, epsilon: float):
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    out = np.minimum(ratio * advantage, np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * advantage)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class ObjectiveResult:
    value: float
    kl_mean: float
    clip_fraction: float
    kl_clamped: int
    # d(value) / d(logprob_new) per response, shape (B, K)
    dlogprob: np.ndarray = field(repr=False)


def objective_terms(logprob_new, logprob_old, logprob_ref, adv, cfg: GrpoConfig) -> ObjectiveResult:
    """Clipped, KL-regularized surrogate averaged over all B*K responses.

    All inputs are (B, K) arrays. Besides the value, returns the derivative of
    the objective w.r.t. each new log-probability; the advantage is treated as
    a constant and, where the clipped branch of the min is active, the
    derivative of that branch (zero) is used.
    """
    new, old, ref, a = (np.asarray(x, dtype=float) for x in (logprob_new, logprob_old, logprob_ref, adv))
    if not (new.shape == old.shape == ref.shape == a.shape) or new.ndim != 2:
        raise ValueError("logprobs and advantages must share one (B, K) shape")
    n = new.size
    ratio = np.exp(new - old)
    unclipped = ratio * a
    clipped = np.clip(ratio, 1.0 - cfg.epsilon, 1.0 + cfg.epsilon) * a
    surrogate = np.minimum(unclipped, clipped)
    _, log_rho, clamped = _clamped_rho(new, ref)
    kl = np.expm1(log_rho) - log_rho
    value = float(np.sum(surrogate - cfg.beta * kl) / n)

    use_unclipped = unclipped <= clipped
    d_surrogate = np.where(use_unclipped, unclipped, 0.0)
    # d kl / d new = (1 - rho), zero where rho was clamped
    d_kl = np.where(clamped, 0.0, -np.expm1(log_rho))
    dlogprob = (d_surrogate - cfg.beta * d_kl) / n
    return ObjectiveResult(
        value=value,
        kl_mean=float(kl.mean()),
        clip_fraction=float(np.mean(~use_unclipped)),
        kl_clamped=int(clamped.sum()),
        dlogprob=dlogprob,
    )


def objective(logprob_new, logprob_old, logprob_ref, adv, cfg: GrpoConfig) -> float:
    return objective_terms(logprob_new, logprob_old, logprob_ref, adv, cfg).value


def objective_and_grad(policy: ScoringPolicy, params, features, values,
                       logprob_old, logprob_ref, adv, cfg: GrpoConfig):
    """Objective value and its gradient w.r.t. the flat parameter vector."""
    new = policy.logprob_batch(params, features, values)
    res = objective_terms(new, logprob_old, logprob_ref, adv, cfg)
    grads = policy.logprob_grad_batch(params, features, values)     # (B, K, P)
    grad = np.einsum("bk,bkp->p", res.dlogprob, grads)
    return res, grad


@dataclass
class StepRecord:
    step: int
    epoch: int
    objective: float
    mean_reward: float
    mean_score_std: float
    kl_mean: float
    clip_fraction: float
    kl_clamped: int = 0
    rewards: Optional[np.ndarray] = field(default=None, repr=False)
    image_ids: Optional[list] = field(default=None, repr=False)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d.pop("rewards")
        d.pop("image_ids")
        return d


@dataclass
class TrainRunLog:
    records: list[StepRecord] = field(default_factory=list)

    def append(self, rec: StepRecord) -> None:
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


@dataclass
class StepInputs:
    """Everything ``step`` needs about one minibatch."""

    features: np.ndarray            # (B, D)
    targets: np.ndarray             # (B,) MOS, or rescaled MOS for regression rewards
    image_ids: Optional[Sequence] = None


def compute_rewards(scores: np.ndarray, targets: np.ndarray, reward: RewardKind,
                    thurstone: ThurstoneConfig, tie_tol: float = 0.0,
                    tie_band: float = 0.1) -> np.ndarray:
    reward = RewardKind(reward)
    if reward is RewardKind.REGRESSION:
        return regression_rewards(scores, targets)
    prefs = preference_matrix(targets, tie_tol)
    return batch_rewards(scores, prefs, reward, thurstone, tie_band)


def step(policy: ScoringPolicy, params, params_old, params_ref, batch: StepInputs,
         rng: np.random.Generator, cfg: GrpoConfig,
         thurstone: ThurstoneConfig | None = None,
         reward: RewardKind | str = RewardKind.FIDELITY,
         tie_tol: float = 0.0, tie_band: float = 0.1,
         step_index: int = 0, epoch: int = 0,
         reward_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None):
    """One GRPO update. Returns ``(new_params, StepRecord)``.

    Scores are sampled from ``params_old``; the ratio is taken between
    ``params`` and ``params_old`` and the KL penalty towards ``params_ref``.
    ``reward_fn(scores, targets)`` overrides the built-in reward choice.
    """
    thurstone = thurstone or ThurstoneConfig()
    feats = np.asarray(batch.features, dtype=float)
    targets = np.asarray(batch.targets, dtype=float)
    B = feats.shape[0]
    if B < 2:
        raise ValueError("a GRPO batch needs at least two images")
    if targets.shape != (B,):
        raise ValueError("need one target per image")
    K = cfg.k_responses

    scores = np.stack([policy.sample_group(params_old, f, K, rng) for f in feats])
    if reward_fn is not None:
        rewards = np.asarray(reward_fn(scores, targets), dtype=float)
    else:
        rewards = compute_rewards(scores, targets, reward, thurstone, tie_tol, tie_band)
    adv = advantages(rewards)
    lp_old = policy.logprob_batch(params_old, feats, scores)
    lp_ref = policy.logprob_batch(params_ref, feats, scores)
    res, grad = objective_and_grad(policy, params, feats, scores, lp_old, lp_ref, adv, cfg)
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite policy gradient")

    theta = policy.to_vector(params) + cfg.learning_rate * grad
    new_params = policy.from_vector(theta, params)
    rec = StepRecord(
        step=step_index,
        epoch=epoch,
        objective=res.value,
        mean_reward=float(rewards.mean()),
        mean_score_std=float(scores.std(axis=1).mean()),
        kl_mean=res.kl_mean,
        clip_fraction=res.clip_fraction,
        kl_clamped=res.kl_clamped,
        rewards=rewards,
        image_ids=list(batch.image_ids) if batch.image_ids is not None else None,
    )
    return new_params, rec
