"""Learned-subsampling baseline: split logging data into pseudo datasets.

A small network rho(x, a) in (0, 1) is trained so that the importance ratios
induced by a rho-split of the logging data match the task's actual ratios
("importance fitting"). Each round then goes to the pseudo-evaluation side
with probability rho at its logged pair; the pseudo-logging side keeps
renormalized propensities. A candidate's MSE is approximated by the squared
gap between its estimate on the pseudo-logging data and the on-policy reward
mean of the pseudo-evaluation data.

The pseudo-policy induction, the regularizer, and the network size are
reconstructions of an external method (see the repository decision notes);
the formulas here are:

    pi~_e(a|x) prop. pi_b(a|x) * rho(x,a)       (normalized per context)
    pi~_b(a|x) prop. pi_b(a|x) * (1 - rho(x,a))
    loss = mean_t (w~_t - w_t)^2 + lambda * (mean_t rho_t - 0.5)^2

with w~ the chosen-pair ratio of the pseudo policies. Training is full-batch
gradient descent with handwritten backpropagation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .bandit import LoggingDataset, OpeTask
from .errors import DegenerateSplitError, TrainingDivergedError
from .estimators import (
    EstimatorSpec,
    candidate_seed,
    enumerate_candidates,
    estimate_candidate,
)
from .reward_models import DEFAULT_REWARD_CONFIG, REWARD_MODEL_KINDS, RewardModelConfig, cross_fitted_q
from .util import child_rng, child_seed


@dataclass(frozen=True)
class PasifConfig:
    hidden: tuple[int, int] = (32, 32)
    step: float = 0.05
    epochs: int = 200
    lambda_grid: tuple[float, ...] = (1e-3, 1e-2, 1e-1, 1.0, 10.0)
    target_split: float = 0.5
    max_retries: int = 10
    # The ratio gradient carries a 1/(1-rho)^2 factor, so a fixed step can
    # overshoot into saturation on heavy-weight rounds; capping the global
    # gradient norm keeps the descent direction while bounding the move.
    clip_norm: float = 10.0

    def __post_init__(self):
        if self.step <= 0 or self.epochs < 1 or self.max_retries < 1:
            raise ValueError("step, epochs and max_retries must be positive")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if not (0.0 < self.target_split < 1.0):
            raise ValueError("target_split must lie strictly inside (0, 1)")


DEFAULT_PASIF_CONFIG = PasifConfig()


def _sigmoid(z: NDArray[np.float64]) -> NDArray[np.float64]:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class SamplingRuleNet:
    """Two hidden tanh layers, scalar sigmoid head; weights in plain arrays."""

    def __init__(self, n_inputs: int, hidden: tuple[int, int] = (32, 32), seed: int = 0):
        h1, h2 = hidden
        rng = child_rng(seed)
        self.W1 = rng.normal(0.0, 1.0 / np.sqrt(n_inputs), (n_inputs, h1))
        self.b1 = np.zeros(h1)
        self.W2 = rng.normal(0.0, 1.0 / np.sqrt(h1), (h1, h2))
        self.b2 = np.zeros(h2)
        self.w3 = rng.normal(0.0, 1.0 / np.sqrt(h2), h2)
        self.b3 = 0.0

    def forward(self, Z: NDArray[np.float64]) -> NDArray[np.float64]:
        return self._forward_cached(Z)[0]

    def _forward_cached(self, Z):
        h1 = np.tanh(Z @ self.W1 + self.b1)
        h2 = np.tanh(h1 @ self.W2 + self.b2)
        rho = _sigmoid(h2 @ self.w3 + self.b3)
        return rho, (Z, h1, h2, rho)

    def _backward(self, cache, grad_rho):
        Z, h1, h2, rho = cache
        d3 = grad_rho * rho * (1.0 - rho)
        gw3 = h2.T @ d3
        gb3 = float(d3.sum())
        d2 = np.outer(d3, self.w3) * (1.0 - h2**2)
        gW2 = h1.T @ d2
        gb2 = d2.sum(axis=0)
        d1 = (d2 @ self.W2.T) * (1.0 - h1**2)
        gW1 = Z.T @ d1
        gb1 = d1.sum(axis=0)
        return gW1, gb1, gW2, gb2, gw3, gb3

    def _apply(self, grads, step: float, clip_norm: float | None = None):
        gW1, gb1, gW2, gb2, gw3, gb3 = grads
        if clip_norm is not None:
            total = np.sqrt(
                (gW1**2).sum() + (gb1**2).sum() + (gW2**2).sum()
                + (gb2**2).sum() + (gw3**2).sum() + gb3**2
            )
            if total > clip_norm:
                step = step * clip_norm / total
        self.W1 -= step * gW1
        self.b1 -= step * gb1
        self.W2 -= step * gW2
        self.b2 -= step * gb2
        self.w3 -= step * gw3
        self.b3 -= step * gb3

    # flat views for finite-difference checks
    def get_flat(self) -> NDArray[np.float64]:
        return np.concatenate(
            [self.W1.ravel(), self.b1, self.W2.ravel(), self.b2, self.w3, [self.b3]]
        )

    def set_flat(self, vec: NDArray[np.float64]) -> None:
        shapes = [self.W1.shape, self.b1.shape, self.W2.shape, self.b2.shape, self.w3.shape, (1,)]
        pos = 0
        parts = []
        for sh in shapes:
            size = int(np.prod(sh))
            parts.append(vec[pos : pos + size].reshape(sh))
            pos += size
        self.W1, self.b1, self.W2, self.b2, self.w3 = (
            parts[0].copy(), parts[1].copy(), parts[2].copy(), parts[3].copy(), parts[4].copy(),
        )
        self.b3 = float(parts[5][0])


def pair_design(task: OpeTask) -> NDArray[np.float64]:
    """[context ‖ one-hot action] rows for every (round, action), round-major."""
    n, n_a = task.n_rounds, task.n_actions
    ctx = np.repeat(task.logging.contexts, n_a, axis=0)
    onehot = np.tile(np.eye(n_a), (n, 1))
    return np.hstack([ctx, onehot])


def _pseudo_quantities(task: OpeTask, rho: NDArray[np.float64]):
    """Pseudo propensity matrices and chosen-pair ratios for a rho grid (n, n_a)."""
    pb = task.logging.propensities
    z_e = (pb * rho).sum(axis=1, keepdims=True)
    z_b = (pb * (1.0 - rho)).sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        pe_tilde = pb * rho / z_e
        pb_tilde = pb * (1.0 - rho) / z_b
    idx = np.arange(task.n_rounds)
    a = task.logging.actions
    with np.errstate(divide="ignore", invalid="ignore"):
        w_tilde = pe_tilde[idx, a] / pb_tilde[idx, a]
    return pe_tilde, pb_tilde, w_tilde, z_e.ravel(), z_b.ravel()


@dataclass(frozen=True)
class FitResult:
    net: SamplingRuleNet
    loss: float
    fit_term: float
    reg_term: float
    history: NDArray[np.float64] = field(repr=False)


def importance_fit(
    task: OpeTask,
    lambda_reg: float,
    epochs: int | None = None,
    seed: int = 0,
    config: PasifConfig = DEFAULT_PASIF_CONFIG,
    net: SamplingRuleNet | None = None,
) -> FitResult:
    """Train rho by gradient descent on the importance-fitting objective.

    The recorded history holds the loss before every update plus the final
    value, so ``history[-1]`` is the trained loss. Training that produces a
    non-finite loss stops immediately with a diagnostic error.
    """
    if lambda_reg < 0:
        raise ValueError("the regularization weight cannot be negative")
    epochs = config.epochs if epochs is None else epochs
    n, n_a = task.n_rounds, task.n_actions
    if net is None:
        net = SamplingRuleNet(task.logging.contexts.shape[1] + n_a, config.hidden, seed)
    Z = pair_design(task)
    pb = task.logging.propensities
    w = task.importance_weights()
    a = task.logging.actions
    idx = np.arange(n)
    k = config.target_split

    history = np.empty(epochs + 1)
    for epoch in range(epochs + 1):
        rho_flat, cache = net._forward_cached(Z)
        rho = rho_flat.reshape(n, n_a)
        z_e = (pb * rho).sum(axis=1)
        r = rho[idx, a]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            w_tilde = r * (1.0 - z_e) / ((1.0 - r) * z_e)
        resid = w_tilde - w
        fit_term = float((resid**2).mean())
        mean_r = float(r.mean())
        reg_term = (mean_r - k) ** 2
        loss = fit_term + lambda_reg * reg_term
        history[epoch] = loss
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"importance fitting diverged at epoch {epoch} "
                f"(loss {loss}, last finite {history[max(epoch - 1, 0)]:.6g}, lambda {lambda_reg})"
            )
        if epoch == epochs:
            break

        d_wt = 2.0 * resid / n
        d_r = d_wt * (1.0 - z_e) / (z_e * (1.0 - r) ** 2)
        d_ze = d_wt * r / (1.0 - r) * (-1.0 / z_e**2)
        grad_rho = d_ze[:, None] * pb
        grad_rho[idx, a] += d_r + 2.0 * lambda_reg * (mean_r - k) / n
        net._apply(net._backward(cache, grad_rho.ravel()), config.step, config.clip_norm)

    return FitResult(net, float(history[-1]), fit_term, float(reg_term), history)


def tune_lambda(
    task: OpeTask,
    grid: tuple[float, ...] | None = None,
    seed: int = 0,
    config: PasifConfig = DEFAULT_PASIF_CONFIG,
) -> float:
    """Grid-search the regularization weight; every point trains from the same
    initialization, and the winner has the lowest final importance-fitting
    term (the squared-error part, not the regularized total). Ties keep the
    smallest weight; if every point diverges the last error is re-raised."""
    grid = config.lambda_grid if grid is None else tuple(grid)
    if not grid:
        raise ValueError("the lambda grid is empty")
    best_lambda = None
    best_fit = np.inf
    failure: TrainingDivergedError | None = None
    for lam in sorted(grid):
        try:
            result = importance_fit(task, lam, seed=seed, config=config)
        except TrainingDivergedError as err:
            failure = err
            continue
        if result.fit_term < best_fit:
            best_fit = result.fit_term
            best_lambda = lam
    if best_lambda is None:
        raise TrainingDivergedError(f"every grid point diverged; last: {failure}")
    return float(best_lambda)


@dataclass(frozen=True)
class PseudoSplit:
    """A realized rho-split: assignments, pseudo propensities, chosen ratios."""

    to_eval: NDArray[np.bool_]
    pseudo_eval_prop: NDArray[np.float64]
    pseudo_logging_prop: NDArray[np.float64]
    ratios: NDArray[np.float64]

    def __post_init__(self):
        if not self.to_eval.any() or self.to_eval.all():
            raise DegenerateSplitError("both pseudo datasets must be nonempty")
        if not np.all(np.isfinite(self.ratios)):
            raise DegenerateSplitError("pseudo importance ratios are not finite")


def subsample_pseudo(
    task: OpeTask,
    net: SamplingRuleNet,
    seed: int = 0,
    config: PasifConfig = DEFAULT_PASIF_CONFIG,
) -> PseudoSplit:
    """Assign each round to the pseudo-evaluation side with probability rho.

    Empty sides are retried with fresh draws up to ``config.max_retries``
    times before giving up.
    """
    n, n_a = task.n_rounds, task.n_actions
    rho = net.forward(pair_design(task)).reshape(n, n_a)
    pe_tilde, pb_tilde, w_tilde, z_e, z_b = _pseudo_quantities(task, rho)
    if not (np.all(np.isfinite(w_tilde)) and np.all(z_e > 0.0) and np.all(z_b > 0.0)):
        raise DegenerateSplitError("the trained rule pushes all mass to one side")
    r = rho[np.arange(n), task.logging.actions]
    for attempt in range(config.max_retries):
        to_eval = child_rng(seed, attempt).random(n) < r
        if to_eval.any() and not to_eval.all():
            return PseudoSplit(to_eval, pe_tilde, pb_tilde, w_tilde)
    raise DegenerateSplitError(
        f"no non-degenerate split after {config.max_retries} draws "
        f"(mean rho {r.mean():.3f} over {n} rounds)"
    )


def pseudo_logging_task(task: OpeTask, split: PseudoSplit) -> OpeTask:
    """The pseudo-logging rounds as a task targeting the pseudo-evaluation policy."""
    rows = np.flatnonzero(~split.to_eval)
    log = task.logging
    pseudo = LoggingDataset(
        log.contexts[rows], log.actions[rows], log.rewards[rows], split.pseudo_logging_prop[rows]
    )
    return OpeTask(pseudo, split.pseudo_eval_prop[rows])


def pasif_mse(
    task: OpeTask,
    split: PseudoSplit,
    estimator,
    q_by_kind: dict[str, NDArray[np.float64]] | None = None,
    seed: int = 0,
) -> float:
    """Squared gap between the pseudo on-policy mean and the candidate's estimate.

    ``estimator`` is an EstimatorSpec or any callable mapping the pseudo
    logging task to a value. ``q_by_kind`` holds full-task reward matrices;
    the pseudo-logging rows are sliced out of them, so reward models are fit
    once per task rather than once per split.
    """
    v_on = float(task.logging.rewards[split.to_eval].mean())
    pseudo = pseudo_logging_task(task, split)
    if callable(estimator):
        return (float(estimator(pseudo)) - v_on) ** 2
    q_sliced = None
    if estimator.needs_reward_model:
        if q_by_kind is None or estimator.reward_model not in q_by_kind:
            raise ValueError(f"candidate {estimator.estimator_id} needs a {estimator.reward_model} reward matrix")
        q_sliced = {estimator.reward_model: q_by_kind[estimator.reward_model][~split.to_eval]}
    est = estimate_candidate(pseudo, estimator, q_sliced, seed=seed)
    return (est - v_on) ** 2


def pasif_mse_all(
    task: OpeTask,
    seed: int = 0,
    config: PasifConfig = DEFAULT_PASIF_CONFIG,
    reward_config: RewardModelConfig = DEFAULT_REWARD_CONFIG,
) -> dict[str, float]:
    """Tune, train, split once, then score all 21 candidates on the split."""
    lam = tune_lambda(task, seed=seed, config=config)
    fitted = importance_fit(task, lam, seed=seed, config=config)
    split = subsample_pseudo(task, fitted.net, seed=child_seed(seed, 1), config=config)
    q_by_kind = {
        kind: cross_fitted_q(task, kind, seed=child_seed(seed, 2), config=reward_config)
        for kind in REWARD_MODEL_KINDS
    }
    out = {}
    est_seed = child_seed(seed, 3)
    for pos, spec in enumerate(enumerate_candidates()):
        out[spec.estimator_id] = pasif_mse(task, split, spec, q_by_kind, seed=candidate_seed(est_seed, pos))
    return out


def pasif_stream_seed(task_seed: int, realization: int) -> int:
    """Seed for this baseline's training and split draws on one realization.

    Tags 0 through 4 on a task seed belong to the generator and the
    ground-truth pipeline; tag 5 keeps these draws out of their streams.
    """
    return child_seed(task_seed, 5, realization)
