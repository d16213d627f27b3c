"""scikit-learn compatible wrapper around the RL2R training loop."""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import linear_rescale
from .evaluation import srcc
from .grpo import GrpoConfig, StepInputs, TrainRunLog, step
from .policy import GaussianScorePolicy, ScoringPolicy
from .reward import RewardKind
from .thurstone import ThurstoneConfig, Variant


def make_batches(groups: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle indices within each group, cut them into batches, shuffle the batches.

    Every batch draws from a single group (dataset), so preferences are never
    taken between MOS values on different scales. Trailing batches with a
    single image are dropped. The result depends only on the group labels and
    the RNG state.
    """
    batches = []
    for g in sorted(np.unique(groups).tolist(), key=str):
        idx = np.flatnonzero(groups == g)
        idx = idx[rng.permutation(idx.size)]
        for start in range(0, idx.size, batch_size):
            chunk = idx[start:start + batch_size]
            if chunk.size >= 2:
                batches.append(chunk)
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


class RL2RRegressor(RegressorMixin, BaseEstimator):
    """No-reference quality scorer trained by reinforcement learning to rank.

    ``fit`` takes feature vectors ``X`` and mean opinion scores ``y`` and
    trains a stochastic scoring policy with GRPO, rewarding each sampled score
    by how well its Thurstone comparative probabilities agree with the MOS
    ordering of the other images in its minibatch. Only the ordering of ``y``
    within a dataset matters (except for ``reward="regression"``), so
    datasets on different MOS scales can be pooled via ``groups``.

    ``predict`` returns the policy's mean score in [1, 5]; ``score`` reports
    SRCC against the given targets.

    Parameters
    ----------
    k_responses, batch_size, epochs : int
        Responses sampled per image, images per minibatch, passes over the data.
    learning_rate, epsilon, beta : float
        Gradient-ascent step, ratio clip threshold, KL coefficient.
    variant : {"mean-anchored", "prob-average", "case-v"}
    reward : {"fidelity", "binary", "regression"}
        ``"regression"`` is the absolute-error baseline against MOS linearly
        rescaled to [1, 5] over the pooled training set.
    gamma : float
        Variance floor inside the Thurstone denominator.
    tie_tol : float
        MOS differences up to this count as ties.
    variance_ddof : {0, 1}
    binary_tie_band : float
    old_refresh : {"epoch", "step"}
        When the sampling (old) policy is re-synchronized.
    init_log_std : float
    policy : ScoringPolicy or None
        Defaults to :class:`GaussianScorePolicy`.
    random_state : int, Generator or None
    """

    def __init__(self, k_responses=6, batch_size=8, epochs=10, learning_rate=1e-2,
                 epsilon=0.2, beta=0.04, variant="mean-anchored", reward="fidelity",
                 gamma=1e-8, tie_tol=0.0, variance_ddof=0, binary_tie_band=0.1,
                 old_refresh="epoch", init_log_std=math.log(0.5), policy=None,
                 random_state=None):
        self.k_responses = k_responses
        self.batch_size = batch_size
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.epsilon = epsilon
        self.beta = beta
        self.variant = variant
        self.reward = reward
        self.gamma = gamma
        self.tie_tol = tie_tol
        self.variance_ddof = variance_ddof
        self.binary_tie_band = binary_tie_band
        self.old_refresh = old_refresh
        self.init_log_std = init_log_std
        self.policy = policy
        self.random_state = random_state

    def _configs(self):
        grpo_cfg = GrpoConfig(epsilon=self.epsilon, beta=self.beta,
                              learning_rate=self.learning_rate, k_responses=self.k_responses)
        th_cfg = ThurstoneConfig(gamma=self.gamma, variant=Variant(self.variant),
                                 ddof=self.variance_ddof)
        return grpo_cfg, th_cfg

    def fit(self, X, y, groups=None, init_params=None):
        """Train on features ``X`` (n, d) and MOS ``y`` (n,).

        ``groups`` labels each row with its dataset; minibatches never mix
        datasets. ``init_params`` overrides the policy's random initialization.
        """
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        groups = np.zeros(len(y), dtype=int) if groups is None else np.asarray(groups)
        if groups.shape != y.shape:
            raise ValueError("groups must have one label per sample")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.old_refresh not in ("epoch", "step"):
            raise ValueError("old_refresh must be 'epoch' or 'step'")
        reward = RewardKind(self.reward)
        grpo_cfg, th_cfg = self._configs()

        rng = np.random.default_rng(self.random_state)
        policy = self.policy if self.policy is not None else GaussianScorePolicy(self.init_log_std)
        params = policy.init_params(X.shape[1], rng) if init_params is None else init_params
        if reward is RewardKind.REGRESSION:
            # one dataset-agnostic map for the pooled targets
            targets = linear_rescale(y)
        else:
            targets = y

        self.policy_ = policy
        self.params_init_ = params
        self.n_features_in_ = X.shape[1]
        self.run_log_ = TrainRunLog()
        params_ref = params
        n_step = 0
        for epoch in range(self.epochs):
            params_old = params
            for idx in make_batches(groups, self.batch_size, rng):
                if self.old_refresh == "step":
                    params_old = params
                batch = StepInputs(features=X[idx], targets=targets[idx], image_ids=idx.tolist())
                params, rec = step(policy, params, params_old, params_ref, batch, rng, grpo_cfg,
                                   thurstone=th_cfg, reward=reward, tie_tol=self.tie_tol,
                                   tie_band=self.binary_tie_band, step_index=n_step, epoch=epoch)
                self.run_log_.append(rec)
                n_step += 1
        self.params_ = params
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return np.asarray(self.policy_.mean_score(self.params_, X), dtype=float)

    def sample_scores(self, X, k=None, random_state=None):
        """Draw ``k`` scores per row from the trained policy, shape (n, k)."""
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=float)
        rng = np.random.default_rng(random_state)
        k = self.k_responses if k is None else k
        return np.stack([self.policy_.sample_group(self.params_, f, k, rng) for f in X])

    def score(self, X, y, sample_weight=None):
        """SRCC between predictions and ``y``."""
        if sample_weight is not None:
            raise ValueError("sample weights are not supported")
        return srcc(self.predict(X), y)
