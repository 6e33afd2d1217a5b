import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_task
from opeselect.estimators import (
    DEFAULT_SHRINK_GRID,
    DEFAULT_SUBGAUSSIAN_GRID,
    EstimatorSpec,
    candidate_seed,
    default_grid,
    direct_method,
    doubly_robust,
    dr_lambda,
    dr_optimistic_shrink,
    enumerate_candidates,
    estimate_candidate,
    evaluate_all_candidates,
    ips,
    ips_lambda,
    largest_overlapping_index,
    optimistic_shrink_weights,
    self_normalized_dr,
    slope_select,
    snips,
    subgaussian_weights,
    switch_dr,
    switch_weights,
)

EXACT = 1e-12


# ---------------------------------------------------------------------------
# hand-computed two-round values
# ---------------------------------------------------------------------------


def test_two_round_point_estimates(two_round_task, two_round_q):
    task, q = two_round_task, two_round_q
    assert abs(ips(task) - 1.0) <= EXACT
    assert abs(snips(task) - 0.8) <= EXACT
    assert abs(direct_method(task, q) - 0.48) <= EXACT
    assert abs(doubly_robust(task, q) - 0.805) <= EXACT
    assert abs(self_normalized_dr(task, q) - 0.74) <= EXACT


def test_two_round_shrunk_estimates(two_round_task, two_round_q):
    task, q = two_round_task, two_round_q
    assert abs(ips_lambda(task, 0.5) - 0.75) <= EXACT
    assert abs(ips_lambda(task, 0.0) - 1.0) <= EXACT
    assert abs(ips_lambda(task, 1.0) - 0.5) <= EXACT
    assert abs(dr_lambda(task, q, 0.5) - 0.5925) <= EXACT
    assert abs(dr_lambda(task, q, 1.0) - 0.38) <= EXACT
    assert abs(dr_optimistic_shrink(task, q, 1.0) - 0.44) <= EXACT
    assert abs(dr_optimistic_shrink(task, q, 0.0) - 0.48) <= EXACT
    assert abs(dr_optimistic_shrink(task, q, np.inf) - 0.805) <= EXACT
    assert abs(dr_optimistic_shrink(task, q, 1e12) - 0.805) <= 1e-6
    assert abs(switch_dr(task, q, 1.0) - 0.305) <= EXACT
    assert abs(switch_dr(task, q, 0.0) - 0.48) <= EXACT
    assert abs(switch_dr(task, q, 2.0) - 0.805) <= EXACT


# ---------------------------------------------------------------------------
# estimator identities on random tasks
# ---------------------------------------------------------------------------


def _random_q(task, seed):
    rng = np.random.default_rng(seed)
    return rng.uniform(size=(task.n_rounds, task.n_actions))


@given(st.integers(0, 10_000))
def test_zero_shrinkage_recovers_the_base_estimators(seed):
    task = make_task(seed)
    q = _random_q(task, seed)
    assert abs(ips_lambda(task, 0.0) - ips(task)) <= EXACT
    assert abs(dr_lambda(task, q, 0.0) - doubly_robust(task, q)) <= EXACT


@given(st.integers(0, 10_000), st.sampled_from([1.0, 0.5, -1.0, -2.0]))
def test_full_shrinkage_flattens_weights_for_any_exponent(seed, gamma):
    task = make_task(seed)
    assert abs(ips_lambda(task, 1.0, gamma) - task.logging.rewards.mean()) <= EXACT


@given(st.integers(0, 10_000))
def test_shrink_and_switch_endpoints_bracket_dm_and_dr(seed):
    task = make_task(seed)
    q = _random_q(task, seed)
    dm = direct_method(task, q)
    dr = doubly_robust(task, q)
    assert abs(dr_optimistic_shrink(task, q, 0.0) - dm) <= EXACT
    assert abs(switch_dr(task, q, 0.0) - dm) <= EXACT  # weights are strictly positive
    assert abs(switch_dr(task, q, task.importance_weights().max()) - dr) <= EXACT
    assert abs(dr_optimistic_shrink(task, q, 1e12) - dr) <= 1e-6


@given(st.integers(0, 10_000))
def test_identical_policies_collapse_self_normalization(seed):
    task = make_task(seed, equal_policies=True)
    q = _random_q(task, seed)
    assert np.allclose(task.importance_weights(), 1.0, atol=1e-12)
    assert abs(snips(task) - ips(task)) <= EXACT
    assert abs(self_normalized_dr(task, q) - doubly_robust(task, q)) <= EXACT


@given(st.integers(0, 10_000))
def test_self_normalized_estimate_stays_in_reward_range(seed):
    task = make_task(seed)
    r = task.logging.rewards
    assert r.min() - EXACT <= snips(task) <= r.max() + EXACT


# ---------------------------------------------------------------------------
# weight transforms and input validation
# ---------------------------------------------------------------------------


def test_weight_transform_domains():
    w = np.array([0.5, 2.0])
    with pytest.raises(ValueError):
        subgaussian_weights(w, -0.1)
    with pytest.raises(ValueError):
        subgaussian_weights(w, 1.1)
    with pytest.raises(ValueError):
        subgaussian_weights(w, 0.5, gamma=0.0)
    with pytest.raises(ValueError):
        subgaussian_weights(w, 0.5, gamma=1.5)
    with pytest.raises(ValueError):
        optimistic_shrink_weights(w, -1.0)
    with pytest.raises(ValueError):
        switch_weights(w, -1.0)


def test_weight_transform_values():
    w = np.array([0.0, 1.0, 3.0])
    assert np.array_equal(optimistic_shrink_weights(w, 0.0), np.zeros(3))
    assert np.array_equal(optimistic_shrink_weights(w, np.inf), w)
    assert np.array_equal(switch_weights(w, 1.0), [0.0, 1.0, 0.0])
    got = subgaussian_weights(np.array([4.0]), 0.5, gamma=0.5)
    assert abs(got[0] - (0.5 * 2.0 + 0.5) ** 2) <= EXACT  # ((1-l)sqrt(w)+l)^2


def test_reward_matrix_shape_is_checked(two_round_task):
    with pytest.raises(ValueError, match="shape"):
        direct_method(two_round_task, np.zeros((3, 2)))
    with pytest.raises(ValueError, match="shape"):
        doubly_robust(two_round_task, np.zeros((2, 3)))


# ---------------------------------------------------------------------------
# knob tuning
# ---------------------------------------------------------------------------


def test_interval_intersection_rule_examples():
    assert largest_overlapping_index(np.array([0.0, 0.0, 0.0]), np.array([1.0, 1.0, 1.0])) == 2
    assert largest_overlapping_index(np.array([0.0, 10.0]), np.array([1.0, 11.0])) == 0
    # the middle interval misses the first, but the last must still clear it
    lo = np.array([0.0, 5.0, 0.5])
    hi = np.array([1.0, 6.0, 2.0])
    assert largest_overlapping_index(lo, hi) == 0
    lo = np.array([0.0, 5.0, 0.5])
    hi = np.array([1.0, 6.0, 5.5])
    assert largest_overlapping_index(lo, hi) == 2
    # overlap with the immediate predecessor alone is not enough
    lo = np.array([0.0, 0.5, 1.2])
    hi = np.array([1.0, 1.5, 2.0])
    assert largest_overlapping_index(lo, hi) == 1


def test_grid_ordering_by_family():
    subg = slope_select(make_task(0), "ips_lambda").grid
    assert subg[0] == 1.0 and subg[-1] == 0.0
    assert np.all(np.diff(subg) < 0)
    task = make_task(1)
    shr = slope_select(task, "dr_shrink", q_hat=_random_q(task, 1)).grid
    assert shr[0] == 1e-3 and np.isinf(shr[-1])
    assert np.all(np.diff(shr) > 0)


def test_default_grids():
    assert np.array_equal(default_grid("ips_lambda"), DEFAULT_SUBGAUSSIAN_GRID)
    assert np.array_equal(default_grid("dr_lambda"), DEFAULT_SUBGAUSSIAN_GRID)
    assert tuple(default_grid("switch_dr")) == DEFAULT_SHRINK_GRID
    with pytest.raises(ValueError, match="no tunable weight"):
        default_grid("dr")
    with pytest.raises(ValueError, match="must not be empty"):
        slope_select(make_task(0), "ips_lambda", grid=[])


def test_single_point_grid_is_selected_outright(two_round_task):
    res = slope_select(two_round_task, "ips_lambda", grid=[0.3])
    assert res.index == 0 and res.selected == 0.3
    assert abs(res.value - ips_lambda(two_round_task, 0.3)) <= EXACT


def test_degenerate_intervals_select_the_least_shrunk_point():
    task = make_task(17)
    task = type(task)(
        logging=type(task.logging)(
            contexts=task.logging.contexts,
            actions=task.logging.actions,
            rewards=np.zeros_like(task.logging.rewards),
            propensities=task.logging.propensities,
        ),
        eval_propensities=task.eval_propensities,
    )
    res = slope_select(task, "ips_lambda")
    assert res.index == len(res.grid) - 1
    assert res.selected == 0.0


def test_knob_tuning_is_deterministic_in_seed():
    task = make_task(23, n_rounds=60)
    q = _random_q(task, 23)
    a = slope_select(task, "switch_dr", q_hat=q, seed=9)
    b = slope_select(task, "switch_dr", q_hat=q, seed=9)
    c = slope_select(task, "switch_dr", q_hat=q, seed=10)
    assert a.index == b.index and np.array_equal(a.sigmas, b.sigmas)
    assert np.array_equal(a.estimates, c.estimates)  # point estimates ignore the seed
    assert abs(a.value - a.estimates[a.index]) <= EXACT


def test_grid_estimates_match_the_point_estimators(two_round_task, two_round_q):
    res = slope_select(two_round_task, "dr_lambda", grid=[0.0, 0.5, 1.0], q_hat=two_round_q)
    by_lam = dict(zip(res.grid, res.estimates))
    assert abs(by_lam[1.0] - 0.38) <= EXACT
    assert abs(by_lam[0.5] - 0.5925) <= EXACT
    assert abs(by_lam[0.0] - 0.805) <= EXACT
    with pytest.raises(ValueError, match="no tunable weight"):
        slope_select(two_round_task, "dr", q_hat=two_round_q)


# ---------------------------------------------------------------------------
# the candidate set
# ---------------------------------------------------------------------------


def test_candidate_enumeration_is_stable():
    specs = enumerate_candidates()
    ids = [s.estimator_id for s in specs]
    assert len(ids) == 21 and len(set(ids)) == 21
    assert ids[:3] == ["ips", "snips", "ips_lambda"]
    assert ids[3:6] == ["dm[forest]", "dm[logistic]", "dm[boosted]"]
    assert ids[-1] == "switch_dr[boosted]"
    assert all(s.needs_reward_model == ("[" in s.estimator_id) for s in specs)
    assert [s.estimator_id for s in specs if s.tuned] == [
        "ips_lambda",
        "dr_lambda[forest]", "dr_lambda[logistic]", "dr_lambda[boosted]",
        "dr_shrink[forest]", "dr_shrink[logistic]", "dr_shrink[boosted]",
        "switch_dr[forest]", "switch_dr[logistic]", "switch_dr[boosted]",
    ]


def test_capability_flags_are_distinct_and_consistent():
    specs = enumerate_candidates()
    rows = [tuple(s.flags()) for s in specs]
    assert len(set(rows)) == 21
    assert all(len(r) == 9 for r in rows)
    by_id = {s.estimator_id: s.flags() for s in specs}
    assert np.array_equal(by_id["ips"], [0, 1, 0, 0, 0, 0, 0, 0, 0])
    assert np.array_equal(by_id["snips"], [1, 1, 0, 0, 0, 0, 0, 0, 0])
    assert np.array_equal(by_id["dr[forest]"], [0, 1, 1, 0, 0, 0, 1, 0, 0])
    assert np.array_equal(by_id["dm[logistic]"], [0, 0, 1, 0, 0, 0, 0, 0, 1])
    assert np.array_equal(by_id["switch_dr[boosted]"], [0, 1, 1, 0, 0, 1, 0, 1, 0])


def test_estimating_every_candidate_matches_single_calls(two_round_task, two_round_q):
    q_by_kind = {k: two_round_q for k in ("forest", "logistic", "boosted")}
    table = evaluate_all_candidates(two_round_task, q_by_kind, seed=5)
    assert set(table) == {s.estimator_id for s in enumerate_candidates()}
    for pos, spec in enumerate(enumerate_candidates()):
        one = estimate_candidate(two_round_task, spec, q_by_kind, seed=candidate_seed(5, pos))
        assert table[spec.estimator_id] == one
    assert table["ips"] == 1.0 and abs(table["dr[forest]"] - 0.805) <= EXACT
    assert table["dr[forest]"] == table["dr[logistic]"] == table["dr[boosted]"]


def test_model_candidates_insist_on_their_reward_matrix(two_round_task, two_round_q):
    spec = EstimatorSpec("dr[forest]", "dr", "forest")
    with pytest.raises(ValueError, match="forest"):
        estimate_candidate(two_round_task, spec, None)
    with pytest.raises(ValueError, match="forest"):
        estimate_candidate(two_round_task, spec, {"logistic": two_round_q})
