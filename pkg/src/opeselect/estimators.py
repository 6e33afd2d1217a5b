"""Off-policy value estimators for logged bandit feedback.

Model-free estimators (IPS, SNIPS, subgaussian-shrunk IPS) reweight logged
rewards by importance weights w = pi_e/pi_b. Hybrid estimators combine a
reward model q-hat with importance weighting (DR, SNDR, and DR variants whose
residual weights are shrunk, optimistically shrunk, or switched off above a
threshold). The weight-shrinkage knobs are tuned by an adaptive
interval-intersection rule over a shrinkage-ordered grid (``slope_select``),
using a bootstrap of per-round terms for width estimates.

21 candidate estimators are enumerated for selection: 3 model-free plus the
6 hybrid families crossed with 3 reward-model kinds, each tagged with the 9
boolean capability flags the selector uses as features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .bandit import OpeTask
from .reward_models import REWARD_MODEL_KINDS
from .util import child_rng

HYBRID_FAMILIES = ("dm", "dr", "sndr", "dr_lambda", "dr_shrink", "switch_dr")
MODEL_FREE_FAMILIES = ("ips", "snips", "ips_lambda")
TUNED_FAMILIES = ("ips_lambda", "dr_lambda", "dr_shrink", "switch_dr")

#: Grids are listed from most-shrunk (lowest variance) to least-shrunk.
DEFAULT_SUBGAUSSIAN_GRID = tuple(np.round(np.linspace(1.0, 0.0, 11), 10))
DEFAULT_SHRINK_GRID = (1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, np.inf)


# ---------------------------------------------------------------------------
# weight transforms
# ---------------------------------------------------------------------------


def subgaussian_weights(w: NDArray[np.float64], lam: float, gamma: float = 1.0) -> NDArray[np.float64]:
    """Shrunk weights ((1-lam) w^gamma + lam)^(1/gamma); lam=0 keeps w, lam=1 flattens to 1."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    if gamma > 1.0 or gamma == 0.0:
        raise ValueError("gamma must be nonzero and at most 1")
    if gamma == 1.0:
        return (1.0 - lam) * w + lam
    return ((1.0 - lam) * np.power(w, gamma) + lam) ** (1.0 / gamma)


def optimistic_shrink_weights(w: NDArray[np.float64], lam: float) -> NDArray[np.float64]:
    """Shrunk weights lam*w / (w^2 + lam); lam=0 gives 0, lam=inf recovers w."""
    if lam < 0.0:
        raise ValueError("lambda must be nonnegative")
    if lam == 0.0:
        return np.zeros_like(w)
    if np.isinf(lam):
        return w.copy()
    return lam * w / (w**2 + lam)


def switch_weights(w: NDArray[np.float64], lam: float) -> NDArray[np.float64]:
    """w where w <= lam, else 0 (switch to the reward model above the threshold)."""
    if lam < 0.0:
        raise ValueError("lambda must be nonnegative")
    return np.where(w <= lam, w, 0.0)


# ---------------------------------------------------------------------------
# point estimators
# ---------------------------------------------------------------------------


def _check_q(task: OpeTask, q_hat: NDArray[np.float64]) -> NDArray[np.float64]:
    q_hat = np.asarray(q_hat, dtype=np.float64)
    expected = (task.n_rounds, task.n_actions)
    if q_hat.shape != expected:
        raise ValueError(f"q_hat must have shape {expected}, got {q_hat.shape}")
    return q_hat


def _dm_terms(task: OpeTask, q_hat: NDArray[np.float64]) -> NDArray[np.float64]:
    return (task.eval_propensities * q_hat).sum(axis=1)


def _residuals(task: OpeTask, q_hat: NDArray[np.float64]) -> NDArray[np.float64]:
    idx = np.arange(task.n_rounds)
    return task.logging.rewards - q_hat[idx, task.logging.actions]


def direct_method(task: OpeTask, q_hat) -> float:
    """Average over rounds of the model value sum_a pi_e(a|x) q_hat(x, a)."""
    return float(_dm_terms(task, _check_q(task, q_hat)).mean())


def ips(task: OpeTask) -> float:
    """Inverse propensity scoring: mean of w * r."""
    return float((task.importance_weights() * task.logging.rewards).mean())


def snips(task: OpeTask) -> float:
    """Self-normalized IPS: sum(w r) / sum(w)."""
    w = task.importance_weights()
    return float((w * task.logging.rewards).sum() / w.sum())


def ips_lambda(task: OpeTask, lam: float, gamma: float = 1.0) -> float:
    """IPS with subgaussian weight shrinkage."""
    w = subgaussian_weights(task.importance_weights(), lam, gamma)
    return float((w * task.logging.rewards).mean())


def doubly_robust(task: OpeTask, q_hat) -> float:
    """DM baseline plus importance-weighted model residuals."""
    q_hat = _check_q(task, q_hat)
    terms = task.importance_weights() * _residuals(task, q_hat) + _dm_terms(task, q_hat)
    return float(terms.mean())


def self_normalized_dr(task: OpeTask, q_hat) -> float:
    """DR with residual weights w_t / sum_j w_j; the baseline term keeps 1/n weighting."""
    q_hat = _check_q(task, q_hat)
    w = task.importance_weights()
    resid_part = float((w / w.sum() * _residuals(task, q_hat)).sum())
    return resid_part + float(_dm_terms(task, q_hat).mean())


def dr_lambda(task: OpeTask, q_hat, lam: float, gamma: float = 1.0) -> float:
    """DR with subgaussian-shrunk residual weights."""
    q_hat = _check_q(task, q_hat)
    w = subgaussian_weights(task.importance_weights(), lam, gamma)
    return float((w * _residuals(task, q_hat) + _dm_terms(task, q_hat)).mean())


def dr_optimistic_shrink(task: OpeTask, q_hat, lam: float) -> float:
    """DR with residual weights lam*w/(w^2+lam); lam=0 is DM, lam=inf is DR."""
    q_hat = _check_q(task, q_hat)
    w = optimistic_shrink_weights(task.importance_weights(), lam)
    return float((w * _residuals(task, q_hat) + _dm_terms(task, q_hat)).mean())


def switch_dr(task: OpeTask, q_hat, lam: float) -> float:
    """DR whose residual term is dropped on rounds with w above the threshold."""
    q_hat = _check_q(task, q_hat)
    w = switch_weights(task.importance_weights(), lam)
    return float((w * _residuals(task, q_hat) + _dm_terms(task, q_hat)).mean())


# ---------------------------------------------------------------------------
# adaptive hyperparameter selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SlopeResult:
    """Outcome of the interval-intersection tuner."""

    selected: float
    index: int
    grid: NDArray[np.float64]
    estimates: NDArray[np.float64]
    sigmas: NDArray[np.float64]

    @property
    def value(self) -> float:
        return float(self.estimates[self.index])


def _grid_terms(task: OpeTask, family: str, grid, q_hat, gamma: float) -> NDArray[np.float64]:
    """Per-round estimator terms for every grid point; shape (len(grid), n_rounds)."""
    w = task.importance_weights()
    r = task.logging.rewards
    if family == "ips_lambda":
        shrunk = np.stack([subgaussian_weights(w, lam, gamma) for lam in grid])
        return shrunk * r
    q_hat = _check_q(task, q_hat)
    if family == "dr_lambda":
        shrunk = np.stack([subgaussian_weights(w, lam, gamma) for lam in grid])
    elif family == "dr_shrink":
        shrunk = np.stack([optimistic_shrink_weights(w, lam) for lam in grid])
    elif family == "switch_dr":
        shrunk = np.stack([switch_weights(w, lam) for lam in grid])
    else:
        raise ValueError(f"family {family!r} has no tunable weight")
    return shrunk * _residuals(task, q_hat) + _dm_terms(task, q_hat)


def _ordered_grid(family: str, grid) -> NDArray[np.float64]:
    g = np.asarray(grid, dtype=np.float64)
    if g.size == 0:
        raise ValueError("hyperparameter grid must not be empty")
    if family in ("ips_lambda", "dr_lambda"):
        return np.sort(g)[::-1]  # lam=1 flattens weights entirely: most shrunk first
    return np.sort(g)  # shrink/switch: small lam is closest to DM


def default_grid(family: str) -> NDArray[np.float64]:
    if family in ("ips_lambda", "dr_lambda"):
        return np.asarray(DEFAULT_SUBGAUSSIAN_GRID)
    if family in ("dr_shrink", "switch_dr"):
        return np.asarray(DEFAULT_SHRINK_GRID)
    raise ValueError(f"family {family!r} has no tunable weight")


def slope_select(
    task: OpeTask,
    family: str,
    grid=None,
    q_hat=None,
    seed: int = 0,
    gamma: float = 1.0,
    n_resamples: int = 100,
    width: float = 2.0,
) -> SlopeResult:
    """Pick the least-shrunk grid point whose interval overlaps all earlier ones.

    The grid is ordered from most-shrunk to least-shrunk. Each point gets the
    interval [V_j - width*sigma_j, V_j + width*sigma_j] with sigma_j estimated
    by a bootstrap of the per-round terms (one shared set of resample indices,
    so neighboring points are compared on the same resamples). The selected
    index is the largest j whose interval intersects every earlier interval;
    with identical zero-width intervals this is the least-shrunk point.
    """
    g = _ordered_grid(family, default_grid(family) if grid is None else grid)
    terms = _grid_terms(task, family, g, q_hat, gamma)
    estimates = terms.mean(axis=1)
    n = terms.shape[1]
    idx = child_rng(seed, 0).integers(0, n, size=(n_resamples, n))
    boot = terms[:, idx].mean(axis=2)  # (grid, resamples)
    sigmas = boot.std(axis=1, ddof=1)
    lo = estimates - width * sigmas
    hi = estimates + width * sigmas
    selected = largest_overlapping_index(lo, hi)
    return SlopeResult(float(g[selected]), selected, g, estimates, sigmas)


def largest_overlapping_index(lo: NDArray[np.float64], hi: NDArray[np.float64]) -> int:
    """Largest j whose [lo_j, hi_j] intersects every earlier interval.

    Index 0 trivially qualifies. Intervals that themselves failed the test
    still constrain later candidates.
    """
    selected = 0
    min_hi = hi[0]
    max_lo = lo[0]
    for j in range(1, lo.size):
        if lo[j] <= min_hi and hi[j] >= max_lo:
            selected = j
        min_hi = min(min_hi, hi[j])
        max_lo = max(max_lo, lo[j])
    return selected


# ---------------------------------------------------------------------------
# candidate enumeration
# ---------------------------------------------------------------------------

FLAG_NAMES = (
    "self_normalized",
    "importance_sampling",
    "reward_model",
    "subgaussian",
    "shrinkage",
    "switch",
    "forest_rm",
    "boosted_rm",
    "logistic_rm",
)

_FAMILY_FLAGS = {
    "ips": ("importance_sampling",),
    "snips": ("self_normalized", "importance_sampling"),
    "ips_lambda": ("importance_sampling", "subgaussian"),
    "dm": ("reward_model",),
    "dr": ("importance_sampling", "reward_model"),
    "sndr": ("self_normalized", "importance_sampling", "reward_model"),
    "dr_lambda": ("importance_sampling", "reward_model", "subgaussian"),
    "dr_shrink": ("importance_sampling", "reward_model", "shrinkage"),
    "switch_dr": ("importance_sampling", "reward_model", "switch"),
}

_RM_FLAG = {"forest": "forest_rm", "boosted": "boosted_rm", "logistic": "logistic_rm"}


@dataclass(frozen=True)
class EstimatorSpec:
    """One candidate estimator: family, optional reward model, capability flags."""

    estimator_id: str
    family: str
    reward_model: str | None

    def flags(self) -> NDArray[np.float64]:
        """The 9 capability indicators, in the order of ``FLAG_NAMES``."""
        on = set(_FAMILY_FLAGS[self.family])
        if self.reward_model is not None:
            on.add(_RM_FLAG[self.reward_model])
        return np.array([1.0 if name in on else 0.0 for name in FLAG_NAMES])

    @property
    def needs_reward_model(self) -> bool:
        return self.reward_model is not None

    @property
    def tuned(self) -> bool:
        return self.family in TUNED_FAMILIES


def enumerate_candidates() -> list[EstimatorSpec]:
    """The 21 candidates in stable order: model-free first, then family x model."""
    specs = [EstimatorSpec(fam, fam, None) for fam in MODEL_FREE_FAMILIES]
    for family in HYBRID_FAMILIES:
        for model in REWARD_MODEL_KINDS:
            specs.append(EstimatorSpec(f"{family}[{model}]", family, model))
    return specs


def estimate_candidate(
    task: OpeTask,
    spec: EstimatorSpec,
    q_by_kind: dict[str, NDArray[np.float64]] | None = None,
    seed: int = 0,
) -> float:
    """Point estimate for one candidate, tuning its knob when it has one."""
    q_hat = None
    if spec.needs_reward_model:
        if q_by_kind is None or spec.reward_model not in q_by_kind:
            raise ValueError(f"candidate {spec.estimator_id} needs a {spec.reward_model} reward matrix")
        q_hat = q_by_kind[spec.reward_model]
    if spec.family == "ips":
        return ips(task)
    if spec.family == "snips":
        return snips(task)
    if spec.family == "dm":
        return direct_method(task, q_hat)
    if spec.family == "dr":
        return doubly_robust(task, q_hat)
    if spec.family == "sndr":
        return self_normalized_dr(task, q_hat)
    return slope_select(task, spec.family, q_hat=q_hat, seed=seed).value


def candidate_seed(seed: int, position: int) -> int:
    """Bootstrap-stream seed for the candidate at ``position`` in the enumeration."""
    return int(child_rng(seed, position).integers(np.iinfo(np.int64).max))


def evaluate_all_candidates(
    task: OpeTask,
    q_by_kind: dict[str, NDArray[np.float64]],
    seed: int = 0,
) -> dict[str, float]:
    """Point estimates for all 21 candidates, keyed by estimator id.

    Tuned candidates get independent bootstrap streams derived from ``seed``
    and their position in the enumeration, so results are reproducible and
    independent of evaluation order.
    """
    out: dict[str, float] = {}
    for pos, spec in enumerate(enumerate_candidates()):
        out[spec.estimator_id] = estimate_candidate(task, spec, q_by_kind, seed=candidate_seed(seed, pos))
    return out
