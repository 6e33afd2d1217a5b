"""Zero-shot estimator selection and the yardsticks used to judge it.

Selection is one forward pass: extract the 43 features for every candidate on
the new task, predict each candidate's MSE with the trained meta-model, take
the argmin. No logged data from the new task is used for fitting anything.

The rest of the module computes what selections are scored against: synthetic
ground-truth MSE by regenerating logging realizations (the environment and its
ground-truth sample stay fixed, only the logging draw varies), exact policy
values for classification-derived tasks, on-policy MSE for bandit feedback
data, relative regret, Spearman rank correlation, and stratified bootstrap
resampling of logging data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from numpy.typing import NDArray
from scipy.stats import rankdata

from .bandit import (
    LoggingDataset,
    OpeTask,
    TaskGenParams,
    generate_ground_truth,
    generate_logging,
    make_environment,
    true_policy_value,
)
from .estimators import (
    EstimatorSpec,
    candidate_seed,
    enumerate_candidates,
    estimate_candidate,
)
from .features import feature_matrix
from .meta_model import TrainedMetaModel, predict_mse
from .reward_models import DEFAULT_REWARD_CONFIG, RewardModelConfig, cross_fitted_q
from .util import child_rng

# Stream tags on a task's seed, continuing the generator's 0..2 namespace:
# reward-model fits and estimation bootstraps for realization s.
_TAG_MODELS = 3
_TAG_ESTIMATE = 4

PREDICTED = "predicted"
GROUND_TRUTH = "ground-truth"


def model_fit_seed(task_seed: int, realization: int) -> int:
    """Seed for the cross-fitted reward models of one logging realization."""
    return int(child_rng(task_seed, _TAG_MODELS, realization).integers(np.iinfo(np.int64).max))


def estimate_stream_seed(task_seed: int, realization: int) -> int:
    """Seed for the candidate-estimation bootstraps of one realization."""
    return int(child_rng(task_seed, _TAG_ESTIMATE, realization).integers(np.iinfo(np.int64).max))


# ---------------------------------------------------------------------------
# metric primitives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegretResult:
    """Relative regret; ``value`` is the absolute gap when flagged degenerate."""

    value: float
    degenerate: bool = False


def relative_regret(selected_mse: float, best_mse: float) -> RegretResult:
    """(selected - best) / best; with best = 0 the absolute gap, flagged."""
    if selected_mse < 0.0 or best_mse < 0.0:
        raise ValueError("MSE values cannot be negative")
    if best_mse == 0.0:
        return RegretResult(float(selected_mse), degenerate=True)
    return RegretResult(float((selected_mse - best_mse) / best_mse))


@dataclass(frozen=True)
class SpearmanResult:
    """Rank correlation; NaN and flagged when either ranking is constant."""

    value: float
    degenerate: bool = False


def spearman_rank(predicted: NDArray[np.float64], truth: NDArray[np.float64]) -> SpearmanResult:
    """Spearman rho with average ranks for ties."""
    a = np.asarray(predicted, dtype=np.float64)
    b = np.asarray(truth, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("both rankings must be one vector of equal length")
    if a.size < 2:
        raise ValueError("rank correlation needs at least two entries")
    ra = rankdata(a)
    rb = rankdata(b)
    va = ra.var()
    vb = rb.var()
    if va == 0.0 or vb == 0.0:
        return SpearmanResult(float("nan"), degenerate=True)
    cov = ((ra - ra.mean()) * (rb - rb.mean())).mean()
    return SpearmanResult(float(cov / np.sqrt(va * vb)))


@dataclass(frozen=True)
class MseTable:
    """Per-candidate, per-task MSE matrix with a provenance tag on each cell."""

    estimator_ids: tuple[str, ...]
    values: NDArray[np.float64]
    provenance: NDArray[np.str_]

    def __post_init__(self):
        if self.values.shape != self.provenance.shape:
            raise ValueError("values and provenance must align cell by cell")
        if self.values.shape[0] != len(self.estimator_ids):
            raise ValueError("one row per candidate estimator is required")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0.0):
            raise ValueError("MSE entries must be finite and nonnegative")
        bad = set(np.unique(self.provenance)) - {PREDICTED, GROUND_TRUTH}
        if bad:
            raise ValueError(f"unknown provenance tags: {sorted(bad)}")


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of one zero-shot selection, optionally scored against truth."""

    estimator_ids: tuple[str, ...]
    predicted_mse: NDArray[np.float64]
    selected_index: int
    selected_id: str
    true_mse: NDArray[np.float64] | None = None
    regret: RegretResult | None = None
    spearman: SpearmanResult | None = None


def autoope_select(
    model: TrainedMetaModel,
    task: OpeTask,
    true_mse: NDArray[np.float64] | None = None,
) -> SelectionResult:
    """Pick the candidate with the lowest predicted MSE for this task.

    Ties keep the earliest candidate in enumeration order. When ``true_mse``
    is supplied (one value per candidate, same order), the result also carries
    the relative regret of the pick and the Spearman correlation between the
    predicted and true MSE rankings.
    """
    specs = enumerate_candidates()
    ids = tuple(s.estimator_id for s in specs)
    pred = np.asarray(predict_mse(model, feature_matrix(task, specs)), dtype=np.float64)
    idx = int(np.argmin(pred))
    regret = rho = None
    if true_mse is not None:
        true_mse = np.asarray(true_mse, dtype=np.float64)
        if true_mse.shape != pred.shape:
            raise ValueError("true_mse must carry one value per candidate")
        regret = relative_regret(float(true_mse[idx]), float(true_mse.min()))
        rho = spearman_rank(pred, true_mse)
    return SelectionResult(ids, pred, idx, ids[idx], true_mse, regret, rho)


# ---------------------------------------------------------------------------
# ground-truth MSE
# ---------------------------------------------------------------------------


def ground_truth_mse_synthetic(
    params: TaskGenParams,
    estimator: Union[EstimatorSpec, Callable[[OpeTask], float]],
    n_e: int,
    reward_config: RewardModelConfig = DEFAULT_REWARD_CONFIG,
) -> float:
    """Monte-Carlo MSE of one estimator over regenerated logging realizations.

    The environment (reward function, policies, ground-truth sample) is fixed
    by ``params``; realization s redraws only the logging data from its own
    stream. ``estimator`` is either a candidate spec, whose reward model is
    cross-fitted per realization with the canonical seeds, or any callable
    mapping a task to a value (used for oracle and stub baselines).
    """
    if n_e < 1:
        raise ValueError("need at least one realization")
    env = make_environment(params)
    v_true = true_policy_value(generate_ground_truth(env))
    errors = np.empty(n_e)
    if callable(estimator):
        for s in range(n_e):
            errors[s] = (float(estimator(generate_logging(env, s))) - v_true) ** 2
        return float(errors.mean())

    positions = {spec.estimator_id: pos for pos, spec in enumerate(enumerate_candidates())}
    pos = positions.get(estimator.estimator_id, 0)
    for s in range(n_e):
        task = generate_logging(env, s)
        q_by_kind = None
        if estimator.needs_reward_model:
            q_by_kind = {
                estimator.reward_model: cross_fitted_q(
                    task, estimator.reward_model, seed=model_fit_seed(params.seed, s), config=reward_config
                )
            }
        est = estimate_candidate(
            task, estimator, q_by_kind, seed=candidate_seed(estimate_stream_seed(params.seed, s), pos)
        )
        errors[s] = (est - v_true) ** 2
    return float(errors.mean())


def ground_truth_value_classification(task: OpeTask, rewards: NDArray[np.float64] | None) -> float:
    """Exact target-policy value when the full per-action reward table is known."""
    if rewards is None:
        raise ValueError("the full reward matrix is required for an exact value")
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.shape != task.eval_propensities.shape:
        raise ValueError("reward matrix must be (n_rounds, n_actions) for this task")
    return float((task.eval_propensities * rewards).sum(axis=1).mean())


def ground_truth_mse_onpolicy(estimate: float, onpolicy_rewards: NDArray[np.float64]) -> float:
    """Squared gap between an estimate and the on-policy reward mean."""
    r = np.asarray(onpolicy_rewards, dtype=np.float64)
    if r.size == 0:
        raise ValueError("the on-policy reward vector is empty")
    return float((float(estimate) - r.mean()) ** 2)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------


def stratified_bootstrap(task: OpeTask, fraction: float, seed: int) -> OpeTask:
    """Resample ceil(fraction * n) rounds with replacement, stratified by action.

    Per-action quotas follow the original proportions by largest remainder, so
    realized counts stay within one round of proportional. Draws happen within
    each observed action's rows only; actions absent from the log contribute
    nothing, so no stratum can come up empty.
    """
    if not (0.0 < fraction <= 1.0):
        raise ValueError("fraction must lie in (0, 1]")
    log = task.logging
    n = log.n_rounds
    m = int(np.ceil(fraction * n))
    observed, counts = np.unique(log.actions, return_counts=True)
    exact = counts * (m / n)
    quota = np.floor(exact).astype(np.int64)
    leftover = m - int(quota.sum())
    if leftover > 0:
        order = np.lexsort((observed, -(exact - quota)))
        quota[order[:leftover]] += 1

    rng = child_rng(seed)
    picked = []
    for a, k in zip(observed, quota):
        rows = np.flatnonzero(log.actions == a)
        if k > 0:
            picked.append(rows[rng.integers(0, rows.size, size=k)])
    rows = np.concatenate(picked)
    resampled = LoggingDataset(
        log.contexts[rows], log.actions[rows], log.rewards[rows], log.propensities[rows]
    )
    return OpeTask(resampled, task.eval_propensities[rows])
