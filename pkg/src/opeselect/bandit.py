"""Contextual-bandit data types and the synthetic task generator.

A logged bandit feedback set consists of rounds (x_t, a_t, r_t) collected under
a known logging policy pi_b, together with the target policy pi_e evaluated on
the same contexts. The synthetic generator draws random environments (expected
reward functions plus logging/target policies) from a configurable space and
produces any number of logging realizations per environment, plus a large
on-policy ground-truth set used to compute the true value of pi_e.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import combinations_with_replacement

import numpy as np
from numpy.typing import NDArray

from .errors import FullSupportError
from .util import child_rng

REWARD_KINDS = ("logistic", "logistic_poly", "logistic_sparse", "uniform")
POLICY_KINDS = ("linear", "polynomial", "reward_prop")

# RNG stream tags. Every random draw in this module comes from
# child_rng(seed, TAG, ...), so streams never collide.
_TAG_ENV = 0
_TAG_GT = 1
_TAG_LOG = 2
_SUB_CONTEXT, _SUB_REWARD_TABLE, _SUB_SAMPLE = 0, 1, 2

_CHUNK = 16384  # row-chunk size for polynomial score evaluation


# ---------------------------------------------------------------------------
# data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LoggingDataset:
    """Logged rounds (contexts, actions, rewards) with full logging propensities.

    Attributes:
        contexts: float array of shape (n_rounds, d_x).
        actions: int array of shape (n_rounds,), values in [0, n_actions).
        rewards: float array of shape (n_rounds,).
        propensities: float array of shape (n_rounds, n_actions); row t is the
            logging policy's distribution over actions at context x_t.
    """

    contexts: NDArray[np.float64]
    actions: NDArray[np.int64]
    rewards: NDArray[np.float64]
    propensities: NDArray[np.float64]

    def __post_init__(self):
        n = self.contexts.shape[0]
        if self.actions.shape != (n,) or self.rewards.shape != (n,):
            raise ValueError("actions/rewards must have one entry per round")
        if self.propensities.shape[0] != n:
            raise ValueError("propensities must have one row per round")
        if n == 0:
            raise ValueError("a logging dataset needs at least one round")
        row_sums = self.propensities.sum(axis=1)
        if not np.all(np.abs(row_sums - 1.0) <= 1e-9):
            raise ValueError("logging propensity rows must sum to 1 within 1e-9")
        chosen = self.propensities[np.arange(n), self.actions]
        if np.any(chosen <= 0.0):
            raise FullSupportError("logging policy assigns zero probability to a logged action")

    @property
    def n_rounds(self) -> int:
        return self.contexts.shape[0]

    @property
    def n_actions(self) -> int:
        return self.propensities.shape[1]

    @property
    def d_x(self) -> int:
        return self.contexts.shape[1]

    def chosen_propensities(self) -> NDArray[np.float64]:
        return self.propensities[np.arange(self.n_rounds), self.actions]


@dataclass(frozen=True)
class OpeTask:
    """A logging dataset paired with the target policy on the same contexts.

    Attributes:
        logging: the logged rounds.
        eval_propensities: (n_rounds, n_actions) distribution of the policy
            being evaluated, row-aligned with ``logging.contexts``.
    """

    logging: LoggingDataset
    eval_propensities: NDArray[np.float64]

    def __post_init__(self):
        if self.eval_propensities.shape != self.logging.propensities.shape:
            raise ValueError("evaluation propensities must match the logging shape")
        row_sums = self.eval_propensities.sum(axis=1)
        if not np.all(np.abs(row_sums - 1.0) <= 1e-9):
            raise ValueError("evaluation propensity rows must sum to 1 within 1e-9")

    @property
    def n_rounds(self) -> int:
        return self.logging.n_rounds

    @property
    def n_actions(self) -> int:
        return self.logging.n_actions

    def importance_weights(self) -> NDArray[np.float64]:
        """pi_e / pi_b on the logged (context, action) pairs."""
        idx = np.arange(self.n_rounds)
        return self.eval_propensities[idx, self.logging.actions] / self.logging.chosen_propensities()


@dataclass(frozen=True)
class GroundTruthDataset:
    """Large on-policy sample from the target policy with known expected rewards.

    Attributes:
        contexts: (n, d_x) contexts.
        expected_rewards: (n, n_actions) true expected reward per action.
        eval_propensities: (n, n_actions) target policy rows.
        actions: actions sampled from the target policy.
        rewards: Bernoulli draws with mean expected_rewards[t, actions[t]].
    """

    contexts: NDArray[np.float64]
    expected_rewards: NDArray[np.float64]
    eval_propensities: NDArray[np.float64]
    actions: NDArray[np.int64]
    rewards: NDArray[np.float64]


@dataclass(frozen=True)
class TaskGenParams:
    """Everything needed to regenerate a synthetic task family deterministically."""

    n_actions: int
    n_rounds: int
    d_x: int
    reward_kind: str
    policy_kind_b: str
    policy_kind_e: str
    beta_b: tuple[float, ...]
    beta_e: float
    n_gen: int = 10
    n_ground_truth: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.n_actions < 2:
            raise ValueError("need at least two actions")
        if self.n_rounds < 1 or self.n_ground_truth < 1 or self.n_gen < 1:
            raise ValueError("sizes must be positive")
        if self.d_x < 1:
            raise ValueError("contexts need at least one dimension")
        if self.reward_kind not in REWARD_KINDS:
            raise ValueError(f"unknown reward kind {self.reward_kind!r}")
        for kind in (self.policy_kind_b, self.policy_kind_e):
            if kind not in POLICY_KINDS:
                raise ValueError(f"unknown policy kind {kind!r}")
        if len(self.beta_b) not in (1, 2):
            raise ValueError("beta_b holds one or two inverse temperatures")


@dataclass(frozen=True)
class GeneratorSpace:
    """Ranges the task sampler draws from. Integer ranges are inclusive."""

    n_actions: tuple[int, int] = (2, 20)
    n_rounds: tuple[int, int] = (100, 8000)
    d_x: tuple[int, int] = (1, 10)
    beta: tuple[float, float] = (-10.0, 10.0)
    dual_logging_prob: float = 0.5
    n_gen: int = 10
    n_ground_truth: int = 100_000
    reward_kinds: tuple[str, ...] = REWARD_KINDS
    policy_kinds: tuple[str, ...] = POLICY_KINDS


DEFAULT_SPACE = GeneratorSpace()

#: Reduced space for laptop-scale end-to-end runs: smaller logging sets and a
#: cheaper ground-truth sample, same environment variety.
DESK_SPACE = GeneratorSpace(
    n_actions=(2, 10), n_rounds=(100, 500), n_gen=3, n_ground_truth=5000
)


def sample_task_params(seed: int, space: GeneratorSpace = DEFAULT_SPACE) -> TaskGenParams:
    """Draw one task configuration from ``space``, deterministically in ``seed``.

    With probability ``space.dual_logging_prob`` the logging side gets two
    inverse temperatures (two logging policies, each covering half the rounds).
    """
    rng = child_rng(seed, _TAG_ENV, 0)
    n_actions = int(rng.integers(space.n_actions[0], space.n_actions[1] + 1))
    n_rounds = int(rng.integers(space.n_rounds[0], space.n_rounds[1] + 1))
    d_x = int(rng.integers(space.d_x[0], space.d_x[1] + 1))
    reward_kind = str(rng.choice(np.asarray(space.reward_kinds, dtype=object)))
    policy_kind_b = str(rng.choice(np.asarray(space.policy_kinds, dtype=object)))
    policy_kind_e = str(rng.choice(np.asarray(space.policy_kinds, dtype=object)))
    lo, hi = space.beta
    dual = bool(rng.random() < space.dual_logging_prob)
    n_betas = 2 if dual else 1
    beta_b = tuple(float(b) for b in rng.uniform(lo, hi, size=n_betas))
    beta_e = float(rng.uniform(lo, hi))
    return TaskGenParams(
        n_actions=n_actions,
        n_rounds=n_rounds,
        d_x=d_x,
        reward_kind=reward_kind,
        policy_kind_b=policy_kind_b,
        policy_kind_e=policy_kind_e,
        beta_b=beta_b,
        beta_e=beta_e,
        n_gen=space.n_gen,
        n_ground_truth=space.n_ground_truth,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# polynomial score functions
# ---------------------------------------------------------------------------


def poly_expand(X: NDArray[np.float64], degree: int) -> NDArray[np.float64]:
    """All monomials of the columns of X up to ``degree``, graded lexicographic.

    The constant term comes first, then degree-1 terms in column order, then
    degree-2 products, and so on. Shape (n, n_terms(d, degree)).
    """
    n, d = X.shape
    cols = [np.ones(n)]
    for deg in range(1, degree + 1):
        for combo in combinations_with_replacement(range(d), deg):
            col = X[:, combo[0]].copy()
            for j in combo[1:]:
                col *= X[:, j]
            cols.append(col)
    return np.column_stack(cols)


def n_poly_terms(d: int, degree: int) -> int:
    total = 1
    for deg in range(1, degree + 1):
        num, den = 1, 1
        for i in range(deg):
            num *= d + i
            den *= i + 1
        total += num // den
    return total


@dataclass(frozen=True)
class ScoreFn:
    """Bilinear score s(x, a) = phi(x)' M psi(a) [+ theta_x' phi(x)] + theta_a' psi(a).

    phi/psi are polynomial expansions of the context and of the action's
    one-hot encoding. ``keep_x``/``keep_a`` optionally restrict the expansions
    to a subset of terms (the sparse reward variant). ``theta_x`` is absent for
    policy scores: a purely context-dependent shift cancels in the softmax.
    """

    degree: int
    M: NDArray[np.float64]
    theta_a: NDArray[np.float64]
    theta_x: NDArray[np.float64] | None = None
    keep_x: NDArray[np.int64] | None = None
    keep_a: NDArray[np.int64] | None = None

    def action_expansion(self, n_actions: int) -> NDArray[np.float64]:
        psi = poly_expand(np.eye(n_actions), self.degree)
        if self.keep_a is not None:
            psi = psi[:, self.keep_a]
        return psi

    def matrix(self, X: NDArray[np.float64], n_actions: int) -> NDArray[np.float64]:
        """Scores for every (row of X, action), shape (n, n_actions)."""
        psi = self.action_expansion(n_actions)
        right = self.M @ psi.T                      # (p_x, n_actions)
        action_shift = self.theta_a @ psi.T         # (n_actions,)
        n = X.shape[0]
        out = np.empty((n, n_actions))
        for start in range(0, n, _CHUNK):
            chunk = X[start : start + _CHUNK]
            phi = poly_expand(chunk, self.degree)
            if self.keep_x is not None:
                phi = phi[:, self.keep_x]
            block = phi @ right + action_shift
            if self.theta_x is not None:
                block += (phi @ self.theta_x)[:, None]
            out[start : start + chunk.shape[0]] = block
        return out


def _draw_score_fn(
    rng: np.random.Generator,
    d_x: int,
    n_actions: int,
    degree: int,
    with_theta_x: bool,
    sparse: bool,
) -> ScoreFn:
    """Sample score-function coefficients i.i.d. U(-1, 1); masks first if sparse."""
    p_x = n_poly_terms(d_x, degree)
    p_a = n_poly_terms(n_actions, degree)
    keep_x = keep_a = None
    if sparse:
        k_x = int(np.ceil(0.1 * p_x))
        k_a = int(np.ceil(0.1 * p_a))
        keep_x = np.sort(rng.choice(p_x, size=k_x, replace=False)).astype(np.int64)
        keep_a = np.sort(rng.choice(p_a, size=k_a, replace=False)).astype(np.int64)
        p_x, p_a = k_x, k_a
    M = rng.uniform(-1.0, 1.0, size=(p_x, p_a))
    theta_x = rng.uniform(-1.0, 1.0, size=p_x) if with_theta_x else None
    theta_a = rng.uniform(-1.0, 1.0, size=p_a)
    return ScoreFn(degree=degree, M=M, theta_a=theta_a, theta_x=theta_x, keep_x=keep_x, keep_a=keep_a)


# ---------------------------------------------------------------------------
# environments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticEnvironment:
    """A drawn environment: reward score plus one score per policy side.

    ``reward_score`` is None for the tabular-uniform reward kind and
    ``policy_score_*`` is None when that policy ranks actions by the expected
    reward itself.
    """

    params: TaskGenParams
    reward_score: ScoreFn | None
    policy_score_b: ScoreFn | None
    policy_score_e: ScoreFn | None


_REWARD_DEGREE = {"logistic": 1, "logistic_poly": 3, "logistic_sparse": 1}
_POLICY_DEGREE = {"linear": 1, "polynomial": 3}


def make_environment(params: TaskGenParams) -> SyntheticEnvironment:
    """Instantiate the environment's coefficient tensors from the task seed.

    Draw order is fixed (reward function, logging policy, target policy) so
    the environment is a pure function of ``params``.
    """
    rng = child_rng(params.seed, _TAG_ENV, 1)
    reward_score = None
    if params.reward_kind != "uniform":
        reward_score = _draw_score_fn(
            rng,
            params.d_x,
            params.n_actions,
            degree=_REWARD_DEGREE[params.reward_kind],
            with_theta_x=True,
            sparse=params.reward_kind == "logistic_sparse",
        )
    scores = []
    for kind in (params.policy_kind_b, params.policy_kind_e):
        if kind == "reward_prop":
            scores.append(None)
        else:
            scores.append(
                _draw_score_fn(
                    rng, params.d_x, params.n_actions,
                    degree=_POLICY_DEGREE[kind], with_theta_x=False, sparse=False,
                )
            )
    return SyntheticEnvironment(params, reward_score, scores[0], scores[1])


def _sigmoid(z: NDArray[np.float64]) -> NDArray[np.float64]:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def expected_reward_matrix(
    env: SyntheticEnvironment,
    X: NDArray[np.float64],
    stream: tuple[int, ...] = (_TAG_GT,),
) -> NDArray[np.float64]:
    """True expected reward q(x, a) for every row of X and every action.

    For the logistic kinds this is sigmoid of the reward score. The "uniform"
    kind has no functional form: each generated dataset gets one U(0,1) value
    per (row, action) from a stream keyed by (task seed, ``stream``), making
    the dataset's reward table fixed and regeneration reproducible.
    """
    if env.reward_score is None:
        rng = child_rng(env.params.seed, *stream, _SUB_REWARD_TABLE)
        return rng.random((X.shape[0], env.params.n_actions))
    return _sigmoid(env.reward_score.matrix(X, env.params.n_actions))


def softmax_policy(scores: NDArray[np.float64], beta: float) -> NDArray[np.float64]:
    """Row-wise softmax(beta * scores), stabilized by max subtraction."""
    z = beta * scores
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _policy_matrix(
    env: SyntheticEnvironment,
    side: str,
    X: NDArray[np.float64],
    q: NDArray[np.float64],
    beta: float,
) -> NDArray[np.float64]:
    score = env.policy_score_b if side == "b" else env.policy_score_e
    base = q if score is None else score.matrix(X, env.params.n_actions)
    return softmax_policy(base, beta)


def _sample_categorical(rng: np.random.Generator, probs: NDArray[np.float64]) -> NDArray[np.int64]:
    cum = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])
    idx = (u[:, None] > cum).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1).astype(np.int64)


def generate_ground_truth(env: SyntheticEnvironment) -> GroundTruthDataset:
    """On-policy sample of size ``n_ground_truth`` from the target policy."""
    p = env.params
    ctx_rng = child_rng(p.seed, _TAG_GT, _SUB_CONTEXT)
    X = ctx_rng.standard_normal((p.n_ground_truth, p.d_x))
    q = expected_reward_matrix(env, X, stream=(_TAG_GT,))
    pe = _policy_matrix(env, "e", X, q, p.beta_e)
    sample_rng = child_rng(p.seed, _TAG_GT, _SUB_SAMPLE)
    actions = _sample_categorical(sample_rng, pe)
    rewards = (sample_rng.random(p.n_ground_truth) < q[np.arange(p.n_ground_truth), actions]).astype(np.float64)
    return GroundTruthDataset(X, q, pe, actions, rewards)


def generate_logging(env: SyntheticEnvironment, realization: int) -> OpeTask:
    """One logging realization: contexts, logged rounds under pi_b, pi_e rows.

    With two logging temperatures the first ceil(n/2) rounds follow the first
    policy and the rest the second; the stored propensity rows reflect which
    policy produced each round.
    """
    p = env.params
    ctx_rng = child_rng(p.seed, _TAG_LOG, realization, _SUB_CONTEXT)
    X = ctx_rng.standard_normal((p.n_rounds, p.d_x))
    q = expected_reward_matrix(env, X, stream=(_TAG_LOG, realization))
    if len(p.beta_b) == 1:
        pb = _policy_matrix(env, "b", X, q, p.beta_b[0])
    else:
        head = int(np.ceil(p.n_rounds / 2))
        pb = np.vstack(
            [
                _policy_matrix(env, "b", X[:head], q[:head], p.beta_b[0]),
                _policy_matrix(env, "b", X[head:], q[head:], p.beta_b[1]),
            ]
        )
    pe = _policy_matrix(env, "e", X, q, p.beta_e)
    sample_rng = child_rng(p.seed, _TAG_LOG, realization, _SUB_SAMPLE)
    actions = _sample_categorical(sample_rng, pb)
    rewards = (sample_rng.random(p.n_rounds) < q[np.arange(p.n_rounds), actions]).astype(np.float64)
    logging = LoggingDataset(X, actions, rewards, pb)
    return OpeTask(logging, pe)


def generate_ope_task(params: TaskGenParams, realization: int = 0) -> tuple[OpeTask, GroundTruthDataset]:
    """Convenience wrapper: environment + one realization + ground truth."""
    env = make_environment(params)
    return generate_logging(env, realization), generate_ground_truth(env)


def true_policy_value(gt: GroundTruthDataset) -> float:
    """Expected-reward form of the target policy's value on the ground-truth sample."""
    return float((gt.eval_propensities * gt.expected_rewards).sum(axis=1).mean())


def is_trivial_task(task: OpeTask) -> bool:
    """True when every logged reward is identical (nothing to estimate)."""
    r = task.logging.rewards
    return bool(np.all(r == r[0]))
