"""Acceptance checks for the package's headline promises.

Every test here measures one promise end to end at its stated tolerance and
prints a single PASS or FAIL line with the measured numbers, so running this
module with ``-s`` reads as a checklist. The desk-scale meta-dataset and the
model trained on it are module fixtures shared by the tests that need them;
everything is seeded, so a green run is reproducible bit for bit.
"""

import time
from dataclasses import dataclass

import numpy as np
import pytest
from scipy import stats

from conftest import make_task
from test_convert import _blobs

from opeselect.bandit import (
    DESK_SPACE,
    TaskGenParams,
    expected_reward_matrix,
    generate_ground_truth,
    generate_logging,
    make_environment,
    true_policy_value,
)
from opeselect.convert import convert_classification_to_bandit
from opeselect.estimators import (
    direct_method,
    doubly_robust,
    dr_lambda,
    dr_optimistic_shrink,
    enumerate_candidates,
    ips,
    ips_lambda,
    self_normalized_dr,
    snips,
    switch_dr,
)
from opeselect.features import FEATURE_NAMES, FLAG_COLUMNS, N_FEATURES, extract_all
from opeselect.forest import RegressionForest
from opeselect.meta_model import (
    DESK_SEARCH_SPACE,
    BoundInputs,
    ValidationGroup,
    domain_shift_bound,
    erm_bound,
    hyperparam_search,
    load_meta_model,
    predict_mse,
    preprocess_fit,
    save_meta_model,
    train_meta_model,
)
from opeselect.metadataset import build_meta_dataset, evaluate_task, read_meta_dataset
from opeselect.pasif import (
    PasifConfig,
    SamplingRuleNet,
    importance_fit,
    pair_design,
    pasif_mse_all,
    pasif_stream_seed,
)
from opeselect.presets import _fit_power_law
from opeselect.selection import (
    ground_truth_value_classification,
    relative_regret,
    spearman_rank,
)

RUN_SEED = 20
N_POOL_TASKS = 2000  # task indices below this train the model, the rest are held out
N_TOTAL_TASKS = 2200
TRAIN_BUDGET = 20


def _check(ok: bool, label: str) -> None:
    print(("PASS: " if ok else "FAIL: ") + label, flush=True)
    assert ok, label


# ---------------------------------------------------------------------------
# shared desk-scale artifacts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeskCorpus:
    X: np.ndarray
    y: np.ndarray
    task_ids: np.ndarray
    realization_ids: np.ndarray
    build_seconds: float


@dataclass(frozen=True)
class FittedSelector:
    model: object
    train_seconds: float


@pytest.fixture(scope="module")
def desk_corpus(tmp_path_factory) -> DeskCorpus:
    path = tmp_path_factory.mktemp("desk") / "meta.csv"
    start = time.perf_counter()
    build_meta_dataset(path, N_TOTAL_TASKS, seed=RUN_SEED, space=DESK_SPACE)
    X, y, task_ids, realization_ids, _ = read_meta_dataset(path)
    return DeskCorpus(X, y, task_ids, realization_ids, time.perf_counter() - start)


@pytest.fixture(scope="module")
def selector(desk_corpus) -> FittedSelector:
    c = desk_corpus
    train = c.task_ids < N_POOL_TASKS
    start = time.perf_counter()
    model = train_meta_model(
        c.X[train],
        c.y[train],
        c.task_ids[train],
        c.realization_ids[train],
        budget=TRAIN_BUDGET,
        seed=21,
        space=DESK_SEARCH_SPACE,
    )
    return FittedSelector(model, time.perf_counter() - start)


@pytest.fixture(scope="module")
def held_out_groups(desk_corpus) -> list:
    """Row-index groups, one per held-out (task, realization) snapshot."""
    c = desk_corpus
    rows = np.flatnonzero(c.task_ids >= N_POOL_TASKS)
    key = c.task_ids[rows] * 8 + c.realization_ids[rows]
    return [rows[key == k] for k in np.unique(key)]


def _held_out_scores(corpus, groups, predict):
    """Per-group selection regret, exact uniform-choice regret, and rank rho.

    ``predict`` maps a feature matrix to predicted MSE; it is called once on
    the stacked held-out rows. The uniform column is the exact expectation of
    relative regret under a uniformly random pick, not a sampled one.
    """
    rows = np.concatenate(groups)
    pred_all = np.full(corpus.y.size, np.nan)
    pred_all[rows] = predict(corpus.X[rows])
    picked, uniform, rho = [], [], []
    for sel in groups:
        yg = corpus.y[sel]
        best = float(yg.min())
        reg = relative_regret(float(yg[int(np.argmin(pred_all[sel]))]), best)
        if reg.degenerate:
            continue
        picked.append(reg.value)
        uniform.append(float(np.mean((yg - best) / best)))
        s = spearman_rank(pred_all[sel], yg)
        if not s.degenerate:
            rho.append(s.value)
    return np.asarray(picked), np.asarray(uniform), np.asarray(rho)


# ---------------------------------------------------------------------------
# estimator arithmetic
# ---------------------------------------------------------------------------


def test_shrinkage_and_switch_estimators_collapse_to_their_parents():
    start = time.perf_counter()
    worst_exact = 0.0
    worst_limit = 0.0
    for seed in range(100):
        task = make_task(seed)
        n, k = task.logging.propensities.shape
        q = np.random.default_rng(10_000 + seed).uniform(size=(n, k))
        w = task.importance_weights()
        mean_reward = float(task.logging.rewards.mean())
        gaps = [
            abs(ips_lambda(task, 0.0) - ips(task)),
            abs(dr_lambda(task, q, 0.0) - doubly_robust(task, q)),
            abs(dr_optimistic_shrink(task, q, 0.0) - direct_method(task, q)),
            abs(switch_dr(task, q, 0.0) - direct_method(task, q)),
            abs(switch_dr(task, q, float(w.max())) - doubly_robust(task, q)),
        ]
        gaps += [abs(ips_lambda(task, 1.0, g) - mean_reward) for g in (1.0, 0.5, -1.0)]
        matched = make_task(seed, equal_policies=True)
        gaps.append(abs(snips(matched) - ips(matched)))
        gaps.append(abs(self_normalized_dr(matched, q[: matched.n_rounds, : matched.n_actions])
                        - doubly_robust(matched, q[: matched.n_rounds, : matched.n_actions])))
        worst_exact = max(worst_exact, max(gaps))
        worst_limit = max(worst_limit, abs(dr_optimistic_shrink(task, q, 1e12) - doubly_robust(task, q)))
    elapsed = time.perf_counter() - start
    _check(
        worst_exact <= 1e-12 and worst_limit <= 1e-6 and elapsed < 30.0,
        "estimator reductions on 100 random tasks: worst exact gap "
        f"{worst_exact:.2e} <= 1e-12, worst large-threshold gap {worst_limit:.2e} <= 1e-6, "
        f"{elapsed:.1f}s < 30s",
    )


def test_two_round_example_reproduces_hand_arithmetic(two_round_task, two_round_q):
    t, q = two_round_task, two_round_q
    expected = [
        (ips(t), 1.0),
        (snips(t), 0.8),
        (direct_method(t, q), 0.48),
        (doubly_robust(t, q), 0.805),
        (self_normalized_dr(t, q), 0.74),
        (ips_lambda(t, 0.5), 0.75),
        (dr_lambda(t, q, 0.5), 0.5925),
        (dr_optimistic_shrink(t, q, 1.0), 0.44),
        (switch_dr(t, q, 1.0), 0.305),
    ]
    worst = max(abs(got - want) for got, want in expected)
    _check(
        worst <= 1e-12,
        f"nine hand-computed two-round values reproduced, worst gap {worst:.2e} <= 1e-12",
    )


def test_ips_and_dr_are_unbiased_over_regenerated_logging_sets():
    start = time.perf_counter()
    params = TaskGenParams(
        n_actions=5,
        n_rounds=2000,
        d_x=5,
        reward_kind="logistic",
        policy_kind_b="linear",
        policy_kind_e="linear",
        beta_b=(1.0,),
        beta_e=-1.0,
        n_gen=500,
        n_ground_truth=1_000_000,
        seed=33,
    )
    env = make_environment(params)
    v_true = true_policy_value(generate_ground_truth(env))
    ips_vals = np.empty(500)
    dr_vals = np.empty(500)
    for s in range(500):
        task = generate_logging(env, s)
        q_true = expected_reward_matrix(env, task.logging.contexts)
        ips_vals[s] = ips(task)
        dr_vals[s] = doubly_robust(task, q_true)
    ips_gap = abs(ips_vals.mean() - v_true)
    dr_gap = abs(dr_vals.mean() - v_true)
    ips_bound = 3.0 * ips_vals.std(ddof=1) / np.sqrt(500.0)
    dr_bound = 3.0 * dr_vals.std(ddof=1) / np.sqrt(500.0)
    elapsed = time.perf_counter() - start
    _check(
        ips_gap <= ips_bound and dr_gap <= dr_bound and elapsed < 120.0,
        "mean over 500 regenerated logging sets sits within three standard errors "
        f"of the true value: IPS gap {ips_gap:.2e} <= {ips_bound:.2e}, "
        f"DR gap {dr_gap:.2e} <= {dr_bound:.2e}, {elapsed:.1f}s < 120s",
    )


# ---------------------------------------------------------------------------
# feature map
# ---------------------------------------------------------------------------


def test_feature_identities_hold_across_random_policy_pairs():
    start = time.perf_counter()
    spec = enumerate_candidates()[0]
    idx = {name: i for i, name in enumerate(FEATURE_NAMES)}
    neyman_i = idx["neyman_chi2"]

    worst_moment = 0.0
    for seed in range(1000):
        task = make_task(30_000 + seed)
        feats = extract_all(task, spec)
        assert feats.shape == (N_FEATURES,)
        pe = task.eval_propensities
        pb = task.logging.propensities
        second_moment = (pe**2 / pb).sum(axis=1)
        independent = float(np.exp(np.log(second_moment)).mean() - 1.0)
        scale = max(1.0, abs(independent))
        worst_moment = max(worst_moment, abs(feats[neyman_i] - independent) / scale)

    zero_names = (
        "total_variation", "neyman_chi2", "pearson_chi2", "chebyshev",
        "divergence_sq", "canberra", "k_div_logging_eval", "k_div_eval_logging",
        "jensen_shannon", "kl_logging_eval", "kl_eval_logging", "kumar_johnson",
        "additive_chi2", "euclidean", "kulczynski", "cityblock", "n_heavy_weights",
    )
    worst_zero = 0.0
    worst_unit = 0.0
    inner_ok = True
    for seed in range(1000):
        matched = make_task(60_000 + seed, equal_policies=True)
        feats = extract_all(matched, spec)
        worst_zero = max(worst_zero, max(abs(feats[idx[name]]) for name in zero_names))
        worst_unit = max(
            worst_unit,
            abs(feats[idx["mean_weight"]] - 1.0),
            abs(feats[idx["max_inverse_weight"]] - 1.0),
        )
        inner_ok = inner_ok and 0.0 < feats[idx["inner_product"]] <= 1.0
    elapsed = time.perf_counter() - start
    _check(
        worst_moment <= 1e-9
        and worst_zero <= 1e-12
        and worst_unit == 0.0
        and inner_ok
        and len(FEATURE_NAMES) == 43
        and elapsed < 10.0,
        "second-weight-moment feature matches its exponential form on 1000 pairs "
        f"(worst gap {worst_moment:.2e} <= 1e-9); with matched policies the 17 "
        f"divergence features vanish (worst {worst_zero:.2e}), mean weight and max "
        f"inverse weight equal one, inner product stays in (0, 1]; vector length 43; "
        f"{elapsed:.1f}s < 10s",
    )


# ---------------------------------------------------------------------------
# closed-form references
# ---------------------------------------------------------------------------


def test_generalization_bound_matches_its_closed_form():
    base = BoundInputs(sigma2=1.0, hyp_class_size=2, delta=0.05, n_samples=1000)
    got = erm_bound(base)
    reference = float(np.sqrt(8.0 * np.log(80.0) / 1000.0))
    quadrupled = erm_bound(BoundInputs(sigma2=1.0, hyp_class_size=2, delta=0.05, n_samples=4000))
    shifted = BoundInputs(sigma2=1.0, hyp_class_size=2, delta=0.05, n_samples=1000,
                          K=3.0, chi2_divergence=0.0)
    _check(
        abs(got - 0.1872) <= 1e-3
        and abs(got - reference) <= 1e-15
        and abs(quadrupled - got / 2.0) <= 1e-12
        and domain_shift_bound(shifted) == erm_bound(shifted),
        f"excess-risk bound at (1, 2, 0.05, 1000) is {got:.6f} (0.1872 within 1e-3), "
        "quadrupling the sample halves it within 1e-12, and zero divergence adds nothing",
    )


def test_selection_metrics_match_hand_examples():
    a = np.array([1.0, 2.0, 3.0])
    checks = [
        spearman_rank(a, a).value == 1.0,
        spearman_rank(a, a[::-1]).value == -1.0,
        spearman_rank(a, np.array([2.0, 1.0, 3.0])).value == 0.5,
        relative_regret(2.0, 2.0).value == 0.0,
        relative_regret(3.0, 1.0).value == 2.0,
    ]
    _check(
        all(checks),
        "rank correlation hits 1, -1, and 0.5 on the three-point examples; "
        "relative regret is 0 at the optimum and 2.0 for (3, 1)",
    )


def test_converted_task_value_blends_accuracy_with_chance():
    separable = _blobs(n_per=40, k=3, d=2, spread=0.02, seed=3)
    conv = convert_classification_to_bandit(separable, alpha_b=0.3, alpha_e=0.7,
                                            split_fraction=0.5, seed=5)
    labels = conv.rewards.argmax(axis=1)
    accuracy = float((conv.predictions_e == labels).mean())
    assert accuracy == 1.0  # the blobs are far apart, so the target classifier is perfect
    value = ground_truth_value_classification(conv.task, conv.rewards)
    gap_perfect = abs(value - (0.7 * 1.0 + 0.3 / 3.0))

    overlapping = _blobs(n_per=50, k=4, d=2, spread=1.6, seed=8)
    conv2 = convert_classification_to_bandit(overlapping, alpha_b=0.2, alpha_e=0.4,
                                             split_fraction=0.5, seed=9)
    acc2 = float((conv2.predictions_e == conv2.rewards.argmax(axis=1)).mean())
    value2 = ground_truth_value_classification(conv2.task, conv2.rewards)
    gap_measured = abs(value2 - (0.4 * acc2 + 0.6 / 4.0))
    _check(
        gap_perfect <= 1e-12 and gap_measured <= 1e-12,
        "converted-task value equals alpha * accuracy + (1 - alpha) / n_classes: "
        f"gap {gap_perfect:.2e} with a perfect classifier, {gap_measured:.2e} with a "
        f"measured accuracy of {acc2:.3f}",
    )


# ---------------------------------------------------------------------------
# surrogate baseline
# ---------------------------------------------------------------------------


def test_importance_fitting_baseline_behaves_sanely():
    start = time.perf_counter()

    matched = make_task(3, n_rounds=50, equal_policies=True)
    loss = importance_fit(matched, 1.0, seed=0).loss

    # analytic gradient against central differences on a tiny network
    task = make_task(7, n_rounds=6, n_actions=2, d_x=1)
    config = PasifConfig(hidden=(8, 8), epochs=1, step=1e-3, clip_norm=1e9)
    lam = 0.3
    net = SamplingRuleNet(3, (8, 8), seed=5)
    theta0 = net.get_flat().copy()
    importance_fit(task, lam, epochs=1, config=config, net=net)
    analytic = (theta0 - net.get_flat()) / config.step
    w = task.importance_weights()
    pb = task.logging.propensities
    acts = task.logging.actions
    rounds = np.arange(task.n_rounds)
    probe = SamplingRuleNet(3, (8, 8), seed=5)

    def loss_at(flat):
        probe.set_flat(flat)
        rho = probe.forward(pair_design(task)).reshape(task.n_rounds, task.n_actions)
        z_e = (pb * rho).sum(axis=1)
        r = rho[rounds, acts]
        w_tilde = r * (1.0 - z_e) / ((1.0 - r) * z_e)
        return ((w_tilde - w) ** 2).mean() + lam * (r.mean() - 0.5) ** 2

    h = 1e-5
    numeric = np.empty_like(theta0)
    for j in range(theta0.size):
        up, down = theta0.copy(), theta0.copy()
        up[j] += h
        down[j] -= h
        numeric[j] = (loss_at(up) - loss_at(down)) / (2.0 * h)
    rel = float(np.max(np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-8)))

    rhos = []
    for i in range(10):
        ev = evaluate_task(277, i, DESK_SPACE)
        if ev.trivial:
            continue
        first = generate_logging(make_environment(ev.params), 0)
        table = pasif_mse_all(first, seed=pasif_stream_seed(ev.params.seed, 0))
        surrogate = np.array([table[name] for name in ev.estimator_ids])
        s = spearman_rank(surrogate, ev.mse)
        if not s.degenerate:
            rhos.append(s.value)
    mean_rho = float(np.mean(rhos))
    elapsed = time.perf_counter() - start
    _check(
        loss <= 1e-3 and rel <= 1e-4 and mean_rho > 0.0 and elapsed < 300.0,
        f"matched policies train to loss {loss:.2e} <= 1e-3, backpropagation matches "
        f"finite differences within {rel:.2e} relative, and the surrogate ranking "
        f"correlates with true MSE on a ten-task suite (mean rho {mean_rho:.3f} > 0); "
        f"{elapsed:.0f}s < 300s",
    )


# ---------------------------------------------------------------------------
# persistence and determinism
# ---------------------------------------------------------------------------


def test_build_and_model_artifacts_are_reproducible(tmp_path):
    paths = [tmp_path / name for name in ("a.csv", "b.csv", "c.csv")]
    build_meta_dataset(paths[0], 6, seed=5, space=DESK_SPACE)
    build_meta_dataset(paths[1], 6, seed=5, space=DESK_SPACE)
    build_meta_dataset(paths[2], 6, seed=5, space=DESK_SPACE, workers=2)
    blobs = [p.read_bytes() for p in paths]
    builds_identical = blobs[0] == blobs[1] == blobs[2]

    X, y, task_ids, realization_ids, _ = read_meta_dataset(paths[0])
    model = train_meta_model(X, y, task_ids, realization_ids,
                             budget=2, seed=4, space=DESK_SEARCH_SPACE)
    first, second = tmp_path / "m1.bin", tmp_path / "m2.bin"
    save_meta_model(model, first)
    save_meta_model(model, second)
    restored = load_meta_model(first)
    round_trip_exact = np.array_equal(predict_mse(model, X), predict_mse(restored, X))
    files_identical = first.read_bytes() == second.read_bytes()
    _check(
        builds_identical and round_trip_exact and files_identical,
        "six-task meta-dataset builds are byte-identical across reruns and worker "
        "counts; a saved model predicts bit-exactly after reloading and serializes "
        "to identical bytes twice",
    )


# ---------------------------------------------------------------------------
# desk-scale selection quality
# ---------------------------------------------------------------------------


def test_learned_selection_beats_uniform_choice_on_held_out_tasks(
    desk_corpus, selector, held_out_groups
):
    start = time.perf_counter()
    picked, uniform, rhos = _held_out_scores(
        desk_corpus, held_out_groups, lambda G: predict_mse(selector.model, G)
    )
    test = stats.ttest_rel(uniform, picked, alternative="greater")
    total = desk_corpus.build_seconds + selector.train_seconds + (time.perf_counter() - start)
    n_tasks = np.unique(desk_corpus.task_ids[desk_corpus.task_ids >= N_POOL_TASKS]).size
    _check(
        picked.mean() < uniform.mean()
        and test.pvalue < 0.05
        and rhos.mean() > 0.2
        and total < 3600.0,
        f"on {n_tasks} held-out tasks ({len(held_out_groups)} logging snapshots) the "
        f"learned selector's mean relative regret {picked.mean():.3f} beats uniform "
        f"random choice {uniform.mean():.3f} (paired one-sided p {test.pvalue:.1e} < 0.05) "
        f"and mean rank correlation {rhos.mean():.3f} > 0.2; "
        f"{total / 60.0:.1f} min < 60 min end to end",
    )


def test_held_out_regret_shrinks_as_training_tasks_grow(
    desk_corpus, selector, held_out_groups
):
    c = desk_corpus
    pool = np.unique(c.task_ids[c.task_ids < N_POOL_TASKS])
    assert pool.size >= 1900  # sampling drops only degenerate tasks, so nearly all survive
    order = np.random.default_rng(6).permutation(pool)
    sizes = [125, 250, 500, 1000, int(pool.size)]
    best_hp = min(selector.model.search_record, key=lambda t: t.mean_regret).hyperparams

    regrets = []
    for size in sizes:
        chosen = order[:size]
        mask = np.isin(c.task_ids, chosen)
        pre = preprocess_fit(c.X[mask], c.y[mask], FLAG_COLUMNS)
        forest = RegressionForest(best_hp, seed=7).fit(
            pre.transform(c.X[mask]), pre.transform_target(c.y[mask])
        )
        picked, _, _ = _held_out_scores(
            c, held_out_groups,
            lambda G: pre.inverse_target(forest.predict(pre.transform(G))),
        )
        regrets.append(float(picked.mean()))

    inversions = int(np.sum(np.diff(regrets) > 0))
    fit = _fit_power_law(np.asarray(sizes, dtype=float), np.asarray(regrets))
    trace = ", ".join(f"{size}: {reg:.3f}" for size, reg in zip(sizes, regrets))
    _check(
        inversions <= 1 and fit["alpha"] > 0.0 and fit["B"] > 0.0,
        f"held-out regret by training-set size ({trace}) has {inversions} inversion(s) "
        f"<= 1 and fits a decaying power law (alpha {fit['alpha']:.2f} > 0 with a "
        f"positive decay amplitude {fit['B']:.2f})",
    )


def test_pair_flags_alone_underperform_the_full_feature_set(
    desk_corpus, selector, held_out_groups
):
    c = desk_corpus
    full_mean = _held_out_scores(
        c, held_out_groups, lambda G: predict_mse(selector.model, G)
    )[0].mean()

    cols = np.asarray(FLAG_COLUMNS)
    flags_all = tuple(range(cols.size))
    train_rows = np.flatnonzero(c.task_ids < N_POOL_TASKS)
    tasks = np.unique(c.task_ids[train_rows])
    shuffled = np.random.default_rng(8).permutation(tasks)
    val_tasks = shuffled[: tasks.size // 5]
    val_rows = train_rows[np.isin(c.task_ids[train_rows], val_tasks)]
    fit_rows = train_rows[~np.isin(c.task_ids[train_rows], val_tasks)]

    key = c.task_ids[val_rows] * 8 + c.realization_ids[val_rows]
    groups = [
        ValidationGroup(c.X[val_rows[key == k]][:, cols], c.y[val_rows[key == k]])
        for k in np.unique(key)
    ]
    best, _ = hyperparam_search(
        c.X[fit_rows][:, cols], c.y[fit_rows], groups,
        budget=TRAIN_BUDGET, seed=9, space=DESK_SEARCH_SPACE,
        categorical_columns=flags_all,
    )
    pre = preprocess_fit(c.X[train_rows][:, cols], c.y[train_rows], flags_all)
    forest = RegressionForest(best, seed=10).fit(
        pre.transform(c.X[train_rows][:, cols]), pre.transform_target(c.y[train_rows])
    )
    flags_mean = _held_out_scores(
        c, held_out_groups,
        lambda G: pre.inverse_target(forest.predict(pre.transform(G[:, cols]))),
    )[0].mean()
    _check(
        full_mean < flags_mean,
        f"the full feature set reaches mean held-out regret {full_mean:.3f}, strictly "
        f"below {flags_mean:.3f} for a model shown only the candidate-identity flags",
    )
