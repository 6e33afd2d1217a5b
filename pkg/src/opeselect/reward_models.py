"""Cross-fitted reward models q-hat(x, a) for hybrid estimators.

Each model is a binary-outcome learner on the representation
[context || one-hot(action)]. Fitting is 3-fold cross-fitted: the prediction
for a round comes from a model that never saw that round, which is what the
doubly-robust family expects. Three learner kinds are provided:

* ``forest``: bagged trees, 100 trees of depth 10 with bootstrap sampling and
  sqrt-feature splits. On 0/1 targets the Gini criterion is proportional to
  the variance criterion, so the shared regression kernel applies unchanged
  and leaf means are class probabilities.
* ``logistic``: logistic regression by full-batch gradient descent
  (500 iterations, step 0.1, L2 penalty 1e-4 on the weights, not the bias).
* ``boosted``: gradient-boosted trees on the logistic loss, 100 trees of
  depth 3, learning rate 0.1, with Newton leaf updates.

A training split containing a single reward class degenerates to a constant
model predicting that split's mean reward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .bandit import OpeTask
from .forest import (
    Tree,
    _build_tree,
    _leaf_ids_binned,
    bin_matrix,
    build_forest_trees,
    resolve_thresholds,
)
from .util import child_rng

REWARD_MODEL_KINDS = ("forest", "logistic", "boosted")
_KIND_INDEX = {k: i for i, k in enumerate(REWARD_MODEL_KINDS)}


@dataclass(frozen=True)
class RewardModelConfig:
    n_folds: int = 3
    forest_trees: int = 100
    forest_depth: int = 10
    boosted_trees: int = 100
    boosted_depth: int = 3
    boosted_lr: float = 0.1
    logistic_iters: int = 500
    logistic_step: float = 0.1
    logistic_l2: float = 1e-4

    def __post_init__(self):
        if self.n_folds < 2:
            raise ValueError("cross-fitting needs at least two folds")


DEFAULT_REWARD_CONFIG = RewardModelConfig()


class ConstantModel:
    """Fallback model: predicts one number everywhere."""

    def __init__(self, value: float):
        self.value = float(value)

    def predict_mean(self, Z: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.full(Z.shape[0], self.value)


def _sigmoid(z: NDArray[np.float64]) -> NDArray[np.float64]:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class LogisticModel:
    """Binary logistic regression via full-batch gradient descent."""

    def __init__(self, n_iters: int = 500, step: float = 0.1, l2: float = 1e-4):
        self.n_iters = n_iters
        self.step = step
        self.l2 = l2
        self.weights: NDArray[np.float64] | None = None
        self.bias: float = 0.0

    def fit(self, Z: NDArray[np.float64], y: NDArray[np.float64]) -> "LogisticModel":
        n, d = Z.shape
        w = np.zeros(d)
        b = 0.0
        for _ in range(self.n_iters):
            g = _sigmoid(Z @ w + b) - y
            w -= self.step * (Z.T @ g / n + self.l2 * w)
            b -= self.step * float(g.mean())
        self.weights = w
        self.bias = b
        return self

    def predict_mean(self, Z: NDArray[np.float64]) -> NDArray[np.float64]:
        return _sigmoid(Z @ self.weights + self.bias)


class ForestClassifierModel:
    """Bagged depth-capped trees; predicted mean = average leaf frequency."""

    def __init__(self, n_trees: int = 100, max_depth: int = 10, seed: int = 0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.seed = seed
        self.trees: list[Tree] = []

    def fit(self, Z: NDArray[np.float64], y: NDArray[np.float64]) -> "ForestClassifierModel":
        Z = np.ascontiguousarray(Z, dtype=np.float64)
        binned, cuts, n_bins = bin_matrix(Z)
        rows = np.arange(Z.shape[0], dtype=np.int64)
        return self.fit_binned(binned, cuts, n_bins, rows, y)

    def fit_binned(
        self,
        binned: NDArray[np.uint8],
        cuts: list[NDArray[np.float64]],
        n_bins: NDArray[np.int64],
        rows: NDArray[np.int64],
        y: NDArray[np.float64],
    ) -> "ForestClassifierModel":
        """Fit on pre-binned columns, bootstrapping from ``rows`` only.

        ``y`` is indexed by original row id, so it must span the full binned
        matrix, not just ``rows``.
        """
        d, m = binned.shape[0], rows.size
        k = int(np.ceil(np.sqrt(d)))
        rng = child_rng(self.seed)
        boots = rows[rng.integers(0, m, size=(self.n_trees, m))]
        states = rng.integers(1, np.iinfo(np.uint64).max, size=self.n_trees, dtype=np.uint64)
        self.trees, _ = build_forest_trees(
            binned, np.ascontiguousarray(y, dtype=np.float64), boots, states,
            cuts, n_bins, self.max_depth, 2, 1, k,
        )
        return self

    def predict_mean(self, Z: NDArray[np.float64]) -> NDArray[np.float64]:
        Z = np.ascontiguousarray(Z, dtype=np.float64)
        out = np.zeros(Z.shape[0])
        for tree in self.trees:
            out += tree.predict(Z)
        return out / len(self.trees)


class BoostedClassifierModel:
    """Gradient boosting on the logistic loss with Newton leaf values."""

    def __init__(self, n_trees: int = 100, max_depth: int = 3, learning_rate: float = 0.1):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.trees: list[Tree] = []
        self.base_score: float = 0.0

    def fit(self, Z: NDArray[np.float64], y: NDArray[np.float64]) -> "BoostedClassifierModel":
        Z = np.ascontiguousarray(Z, dtype=np.float64)
        binned, cuts, n_bins = bin_matrix(Z)
        rows = np.arange(Z.shape[0], dtype=np.int64)
        return self.fit_binned(binned, cuts, n_bins, rows, y)

    def fit_binned(
        self,
        binned: NDArray[np.uint8],
        cuts: list[NDArray[np.float64]],
        n_bins: NDArray[np.int64],
        rows: NDArray[np.int64],
        y: NDArray[np.float64],
    ) -> "BoostedClassifierModel":
        """Fit on pre-binned columns using only ``rows``; ``y`` spans all rows."""
        d = binned.shape[0]
        rows = np.ascontiguousarray(rows, dtype=np.int64)
        y_tr = y[rows]
        p0 = float(np.clip(y_tr.mean(), 1e-12, 1.0 - 1e-12))
        self.base_score = float(np.log(p0 / (1.0 - p0)))
        F = np.full(rows.size, self.base_score)
        residual_full = np.zeros(binned.shape[1])
        stages = []
        for _ in range(self.n_trees):
            p = _sigmoid(F)
            residual_full[rows] = y_tr - p
            hessian = p * (1.0 - p)
            feat, cutbin, left, right, _val, n_node, _imp = _build_tree(
                binned, residual_full, rows, self.max_depth, 2, 1, d, np.uint64(1), n_bins
            )
            ids = _leaf_ids_binned(feat, cutbin, left, right, binned, rows)
            num = np.bincount(ids, weights=y_tr - p, minlength=feat.size)
            den = np.bincount(ids, weights=hessian, minlength=feat.size)
            newton = np.divide(num, den, out=np.zeros_like(num), where=den > 1e-12)
            stages.append((feat, cutbin, left, right, newton, n_node))
            F += self.learning_rate * newton[ids]
        # One vectorized bin-to-threshold pass over every stage at once.
        feat_all = np.concatenate([s[0] for s in stages])
        thr_all = resolve_thresholds(feat_all, np.concatenate([s[1] for s in stages]), cuts)
        self.trees = []
        pos = 0
        for feat, _cutbin, left, right, newton, n_node in stages:
            self.trees.append(Tree(feat, thr_all[pos:pos + feat.size], left, right, newton, n_node))
            pos += feat.size
        return self

    def predict_mean(self, Z: NDArray[np.float64]) -> NDArray[np.float64]:
        Z = np.ascontiguousarray(Z, dtype=np.float64)
        F = np.full(Z.shape[0], self.base_score)
        for tree in self.trees:
            F += self.learning_rate * tree.predict(Z)
        return _sigmoid(F)


def _fit_model(kind: str, Z, y, seed: int, config: RewardModelConfig):
    if np.all(y == y[0]):
        return ConstantModel(float(y[0]))
    if kind == "forest":
        return ForestClassifierModel(config.forest_trees, config.forest_depth, seed).fit(Z, y)
    if kind == "logistic":
        return LogisticModel(config.logistic_iters, config.logistic_step, config.logistic_l2).fit(Z, y)
    if kind == "boosted":
        return BoostedClassifierModel(config.boosted_trees, config.boosted_depth, config.boosted_lr).fit(Z, y)
    raise ValueError(f"unknown reward model kind {kind!r}")


def _pair_features(contexts: NDArray[np.float64], actions: NDArray[np.int64], n_actions: int) -> NDArray[np.float64]:
    onehot = np.eye(n_actions)[actions]
    return np.hstack([contexts, onehot])


def predict_q(model, contexts: NDArray[np.float64], n_actions: int) -> NDArray[np.float64]:
    """Predicted expected reward for every action at every context, (n, n_actions)."""
    n = contexts.shape[0]
    ctx = np.repeat(contexts, n_actions, axis=0)
    acts = np.tile(np.arange(n_actions), n)
    Z = _pair_features(ctx, acts, n_actions)
    return model.predict_mean(Z).reshape(n, n_actions)


def fold_assignment(n: int, n_folds: int, rng: np.random.Generator) -> NDArray[np.int64]:
    """Random fold ids with sizes differing by at most one."""
    fold = np.empty(n, dtype=np.int64)
    fold[rng.permutation(n)] = np.arange(n) % n_folds
    return fold


def cross_fitted_q(
    task: OpeTask,
    kind: str,
    seed: int = 0,
    config: RewardModelConfig = DEFAULT_REWARD_CONFIG,
) -> NDArray[np.float64]:
    """Cross-fitted q-hat matrix for the task's own logging rounds.

    Round t's row is predicted by a model trained on the folds that do not
    contain t. Returns shape (n_rounds, n_actions).
    """
    if kind not in REWARD_MODEL_KINDS:
        raise ValueError(f"unknown reward model kind {kind!r}")
    log = task.logging
    n, n_a = log.n_rounds, log.n_actions
    fold = fold_assignment(n, config.n_folds, child_rng(seed, _KIND_INDEX[kind], 0))
    Z_full = _pair_features(log.contexts, log.actions, n_a)
    binned = cuts = n_bins = None
    if kind in ("forest", "boosted"):
        # Bin once per task. Cuts are a function of features alone, never of
        # rewards, so a fold's model still carries no information about its
        # own fold's rewards and cross-fitting stays honest.
        binned, cuts, n_bins = bin_matrix(Z_full)
    q_hat = np.zeros((n, n_a))
    for k in range(config.n_folds):
        test = fold == k
        if not test.any():
            continue
        train = ~test
        if not train.any():
            raise ValueError("a cross-fitting fold has an empty training split")
        rows = np.flatnonzero(train)
        y_tr = log.rewards[rows]
        fold_seed = int(child_rng(seed, _KIND_INDEX[kind], 1 + k).integers(np.iinfo(np.int64).max))
        if np.all(y_tr == y_tr[0]):
            model = ConstantModel(float(y_tr[0]))
        elif kind == "forest":
            model = ForestClassifierModel(
                config.forest_trees, config.forest_depth, fold_seed
            ).fit_binned(binned, cuts, n_bins, rows, log.rewards)
        elif kind == "boosted":
            model = BoostedClassifierModel(
                config.boosted_trees, config.boosted_depth, config.boosted_lr
            ).fit_binned(binned, cuts, n_bins, rows, log.rewards)
        else:
            model = LogisticModel(
                config.logistic_iters, config.logistic_step, config.logistic_l2
            ).fit(Z_full[rows], y_tr)
        q_hat[test] = predict_q(model, log.contexts[test], n_a)
    return q_hat


def fit_all_reward_matrices(
    task: OpeTask,
    seed: int = 0,
    config: RewardModelConfig = DEFAULT_REWARD_CONFIG,
) -> dict[str, NDArray[np.float64]]:
    """Cross-fitted q-hat for every model kind, keyed by kind name."""
    return {kind: cross_fitted_q(task, kind, seed, config) for kind in REWARD_MODEL_KINDS}
