"""Task descriptors used by the selector: 43 features per (task, estimator).

The first 10 summarize the logging data alone, the next 24 compare the
logging and target policies (weight statistics plus a battery of per-context
distribution distances averaged over rounds), and the last 9 are the
candidate estimator's capability flags. Ratio features are guarded: a zero
denominator with a zero numerator contributes 0, with a positive numerator it
contributes the ceiling 1e10, so extraction never produces NaN or infinity.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

from .bandit import OpeTask
from .estimators import FLAG_NAMES, EstimatorSpec

FEATURE_SCHEMA_VERSION = 1
RATIO_CEILING = 1e10
HEAVY_WEIGHT_THRESHOLD = 10.0

POLICY_INDEPENDENT_NAMES = (
    "n_rounds",
    "n_actions",
    "n_deficient_actions",
    "context_dim",
    "action_variance",
    "reward_mean",
    "reward_std",
    "reward_skewness",
    "reward_kurtosis",
    "context_variance_sum",
)

POLICY_DEPENDENT_NAMES = (
    "max_mean_logging_prop",
    "min_mean_logging_prop",
    "max_mean_eval_prop",
    "min_mean_eval_prop",
    "max_inverse_weight",
    "mean_weight",
    "n_heavy_weights",
    "total_variation",
    "neyman_chi2",
    "pearson_chi2",
    "inner_product",
    "chebyshev",
    "divergence_sq",
    "canberra",
    "k_div_logging_eval",
    "k_div_eval_logging",
    "jensen_shannon",
    "kl_logging_eval",
    "kl_eval_logging",
    "kumar_johnson",
    "additive_chi2",
    "euclidean",
    "kulczynski",
    "cityblock",
)

FLAG_FEATURE_NAMES = tuple(f"flag_{name}" for name in FLAG_NAMES)

FEATURE_NAMES: tuple[str, ...] = POLICY_INDEPENDENT_NAMES + POLICY_DEPENDENT_NAMES + FLAG_FEATURE_NAMES
N_TASK_FEATURES = len(POLICY_INDEPENDENT_NAMES) + len(POLICY_DEPENDENT_NAMES)
N_FEATURES = len(FEATURE_NAMES)
# The capability flags are the categorical block; everything before it is numeric.
FLAG_COLUMNS = tuple(range(N_TASK_FEATURES, N_FEATURES))


def _guarded_ratio(num: NDArray[np.float64], den: NDArray[np.float64]) -> NDArray[np.float64]:
    """num/den elementwise; 0/0 -> 0, x/0 -> RATIO_CEILING for x > 0."""
    out = np.full(num.shape, RATIO_CEILING)
    ok = den > 0.0
    with np.errstate(over="ignore"):  # denormal den can overflow before the clip
        np.divide(num, den, out=out, where=ok)
    out[(~ok) & (num == 0.0)] = 0.0
    return np.minimum(out, RATIO_CEILING)


def _xlogx_ratio(p: NDArray[np.float64], ratio_num: NDArray[np.float64], ratio_den: NDArray[np.float64]) -> NDArray[np.float64]:
    """p * log(ratio_num/ratio_den) with the convention 0 * log(.) = 0."""
    out = np.zeros(p.shape)
    active = p > 0.0
    ratio = _guarded_ratio(ratio_num, ratio_den)
    np.log(ratio, out=ratio, where=ratio > 0.0)
    out[active] = p[active] * ratio[active]
    return np.minimum(out, RATIO_CEILING)


def extract_policy_independent(task: OpeTask) -> NDArray[np.float64]:
    """The 10 logging-only features, population-moment conventions throughout."""
    log = task.logging
    r = log.rewards
    mean_r = r.mean()
    var_r = ((r - mean_r) ** 2).mean()
    std_r = np.sqrt(var_r)
    if std_r > 0.0:
        z = (r - mean_r) / std_r
        skew, kurt = (z**3).mean(), (z**4).mean()
    else:
        skew, kurt = 0.0, 0.0
    actions = log.actions.astype(np.float64)
    return np.array(
        [
            float(log.n_rounds),
            float(log.n_actions),
            float(log.n_actions - np.unique(log.actions).size),
            float(log.d_x),
            float(((actions - actions.mean()) ** 2).mean()),
            float(mean_r),
            float(std_r),
            float(skew),
            float(kurt),
            float(log.contexts.var(axis=0).sum()),
        ]
    )


def extract_policy_dependent(task: OpeTask) -> NDArray[np.float64]:
    """The 24 features comparing logging and target propensities."""
    pb = task.logging.propensities
    pe = task.eval_propensities
    idx = np.arange(task.n_rounds)
    pb_at = pb[idx, task.logging.actions]
    pe_at = pe[idx, task.logging.actions]

    mean_pb = pb.mean(axis=0)
    mean_pe = pe.mean(axis=0)
    max_inv_w = float(_guarded_ratio(pb_at, pe_at).max())
    weights = pe_at / pb_at
    diff = pb - pe
    absdiff = np.abs(diff)
    sq = diff**2
    both = pb + pe

    k_be = _xlogx_ratio(pb, 2.0 * pb, both).sum(axis=1)
    k_eb = _xlogx_ratio(pe, 2.0 * pe, both).sum(axis=1)
    kj_den = 2.0 * np.sqrt((pb * pe) ** 3)
    kulczynski_rows = _guarded_ratio(absdiff.sum(axis=1), np.minimum(pb, pe).sum(axis=1))

    return np.array(
        [
            float(mean_pb.max()),
            float(mean_pb.min()),
            float(mean_pe.max()),
            float(mean_pe.min()),
            max_inv_w,
            float(weights.mean()),
            float((weights > HEAVY_WEIGHT_THRESHOLD).sum()),
            float((0.5 * absdiff.sum(axis=1)).mean()),
            float(_guarded_ratio(sq, pb).sum(axis=1).mean()),
            float(_guarded_ratio(sq, pe).sum(axis=1).mean()),
            float((pb * pe).sum(axis=1).mean()),
            float(absdiff.max(axis=1).mean()),
            float((2.0 * _guarded_ratio(sq, both**2).sum(axis=1)).mean()),
            float(_guarded_ratio(absdiff, both).sum(axis=1).mean()),
            float(k_be.mean()),
            float(k_eb.mean()),
            float((0.5 * (k_be + k_eb)).mean()),
            float(_xlogx_ratio(pb, pb, pe).sum(axis=1).mean()),
            float(_xlogx_ratio(pe, pe, pb).sum(axis=1).mean()),
            float(_guarded_ratio((pb**2 - pe**2) ** 2, kj_den).sum(axis=1).mean()),
            float(_guarded_ratio(sq * both, pb * pe).sum(axis=1).mean()),
            float(np.sqrt(sq.sum(axis=1)).mean()),
            float(kulczynski_rows.mean()),
            float(absdiff.sum(axis=1).mean()),
        ]
    )


def extract_task_features(task: OpeTask) -> NDArray[np.float64]:
    """The 34 estimator-independent features of a task."""
    return np.concatenate([extract_policy_independent(task), extract_policy_dependent(task)])


def extract_all(task: OpeTask, spec: EstimatorSpec) -> NDArray[np.float64]:
    """Full 43-entry vector for one (task, candidate estimator) pair."""
    return np.concatenate([extract_task_features(task), spec.flags()])


def feature_matrix(task: OpeTask, specs: list[EstimatorSpec]) -> NDArray[np.float64]:
    """Stack feature vectors for many candidates; task features computed once."""
    base = extract_task_features(task)
    return np.vstack([np.concatenate([base, spec.flags()]) for spec in specs])
