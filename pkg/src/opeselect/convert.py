"""Turn a labeled classification dataset into a bandit evaluation task.

Features become contexts and class labels become actions; an action earns
reward 1 exactly when it matches the true label. One part of the data is the
logging set; the rest trains two multinomial logistic classifiers whose
argmax predictions define deterministic policies. Each policy is blended
with the uniform policy,

    pi(a|x) = alpha * pi_det(a|x) + (1 - alpha) / n_classes,

one blend for logging and one for evaluation. Because the full reward matrix
is known, the evaluation policy's exact value is available without any
estimation.

Input CSVs are taken as-is (no normalization or imputation); rows must be
numeric apart from an optional header line.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .bandit import LoggingDataset, OpeTask
from .util import child_rng


@dataclass(frozen=True)
class ClassificationDataset:
    """A plain supervised dataset: real-valued features, dense integer labels."""

    features: NDArray[np.float64]
    labels: NDArray[np.int64]

    def __post_init__(self):
        n = self.features.shape[0]
        if self.features.ndim != 2 or n < 2:
            raise ValueError("features must be a matrix with at least two rows")
        if self.labels.shape != (n,):
            raise ValueError("labels must have one entry per row")
        if self.labels.min() < 0:
            raise ValueError("labels must be nonnegative integers")
        present = np.unique(self.labels)
        expected = np.arange(self.labels.max() + 1)
        if present.size != expected.size:
            missing = sorted(set(expected.tolist()) - set(present.tolist()))
            raise ValueError(f"labels must cover every class in range; missing {missing}")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1


def load_classification_csv(path, label_column: int = -1) -> ClassificationDataset:
    """Read a numeric CSV; one column holds integer labels, the rest features.

    A single leading header line is skipped when it does not parse as numbers.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"{path} holds no data rows")
    start = 0
    try:
        [float(tok) for tok in lines[0].split(",")]
    except ValueError:
        start = 1
    raw = np.array([[float(tok) for tok in ln.split(",")] for ln in lines[start:]])
    labels_f = raw[:, label_column]
    labels = labels_f.astype(np.int64)
    if np.any(labels_f != labels):
        raise ValueError("the label column must hold integers")
    features = np.delete(raw, label_column % raw.shape[1], axis=1)
    return ClassificationDataset(features, labels)


class SoftmaxClassifier:
    """Multinomial logistic regression by full-batch gradient descent.

    Same training knobs as the package's logistic reward model: 500 steps at
    rate 0.1 with L2 1e-4 on the weights (intercepts excluded). The objective
    is convex, so zero initialization makes the fit deterministic.
    """

    def __init__(self, epochs: int = 500, step: float = 0.1, l2: float = 1e-4):
        self.epochs = epochs
        self.step = step
        self.l2 = l2
        self.W: NDArray[np.float64] | None = None

    def fit(self, X: NDArray[np.float64], y: NDArray[np.int64], n_classes: int) -> "SoftmaxClassifier":
        n, d = X.shape
        Xb = np.hstack([np.ones((n, 1)), X])
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), y] = 1.0
        W = np.zeros((d + 1, n_classes))
        for _ in range(self.epochs):
            logits = Xb @ W
            logits -= logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            grad = Xb.T @ (p - onehot) / n
            grad[1:] += self.l2 * W[1:]
            W -= self.step * grad
        self.W = W
        return self

    def predict(self, X: NDArray[np.float64]) -> NDArray[np.int64]:
        if self.W is None:
            raise RuntimeError("classifier is not fitted")
        logits = np.hstack([np.ones((X.shape[0], 1)), X]) @ self.W
        return logits.argmax(axis=1).astype(np.int64)


def _blend(predictions: NDArray[np.int64], n_classes: int, alpha: float) -> NDArray[np.float64]:
    probs = np.full((predictions.size, n_classes), (1.0 - alpha) / n_classes)
    probs[np.arange(predictions.size), predictions] += alpha
    return probs


@dataclass(frozen=True)
class ConvertedBandit:
    """A conversion result: the task plus everything needed for exact checks.

    ``rewards`` is the full deterministic reward matrix on the logging rows
    (1 at the true label, 0 elsewhere). The two prediction vectors are the
    deterministic policies' choices on those same rows, so classifier
    accuracy and prediction frequencies can be recomputed exactly.
    """

    task: OpeTask
    rewards: NDArray[np.float64] = field(repr=False)
    predictions_b: NDArray[np.int64] = field(repr=False)
    predictions_e: NDArray[np.int64] = field(repr=False)
    alpha_b: float
    alpha_e: float


def convert_classification_to_bandit(
    data: ClassificationDataset,
    alpha_b: float = 0.2,
    alpha_e: float = 0.5,
    split_fraction: float = 0.5,
    seed: int = 0,
) -> ConvertedBandit:
    """Build an evaluation task whose ground-truth value is exactly known.

    The data is shuffled once; the first ``split_fraction`` of rows becomes
    logging data and the remainder is halved to train the two classifiers
    (one per policy, on disjoint rows, so the policies genuinely differ).
    Logged actions are drawn from the blended logging policy. A class the
    classifier never predicts simply keeps its uniform share of the blend.
    """
    if not (0.0 <= alpha_b <= 1.0 and 0.0 <= alpha_e <= 1.0):
        raise ValueError("alpha_b and alpha_e must lie in [0, 1]")
    n, k = data.n_samples, data.n_classes
    n_log = int(round(split_fraction * n))
    if n_log < 1 or n - n_log < 2:
        raise ValueError(
            f"split_fraction={split_fraction} leaves {n_log} logging rows and "
            f"{n - n_log} classifier rows; need at least 1 and 2"
        )
    perm = child_rng(seed, 0).permutation(n)
    log_rows = perm[:n_log]
    clf_rows = perm[n_log:]
    half = clf_rows.size // 2
    rows_b, rows_e = clf_rows[:half], clf_rows[half:]

    clf_b = SoftmaxClassifier().fit(data.features[rows_b], data.labels[rows_b], k)
    clf_e = SoftmaxClassifier().fit(data.features[rows_e], data.labels[rows_e], k)

    contexts = data.features[log_rows]
    labels = data.labels[log_rows]
    pred_b = clf_b.predict(contexts)
    pred_e = clf_e.predict(contexts)
    pi_b = _blend(pred_b, k, alpha_b)
    pi_e = _blend(pred_e, k, alpha_e)

    u = child_rng(seed, 1).random(n_log)
    actions = (u[:, None] > np.cumsum(pi_b, axis=1)).sum(axis=1)
    actions = np.minimum(actions, k - 1).astype(np.int64)
    logged_rewards = (actions == labels).astype(np.float64)

    rewards = np.zeros((n_log, k))
    rewards[np.arange(n_log), labels] = 1.0
    task = OpeTask(LoggingDataset(contexts, actions, logged_rewards, pi_b), pi_e)
    return ConvertedBandit(task, rewards, pred_b, pred_e, float(alpha_b), float(alpha_e))
