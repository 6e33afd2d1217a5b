"""Named end-to-end experiments with file reports.

Each preset runs a self-contained study and writes three artifacts into the
output directory: ``report.json`` (aggregate metrics and plot-ready series),
``points.csv`` (one row per measured point), and ``run_info.json`` (wall
times and library versions; this is the only file whose content varies
between identical runs).

Presets:

* ``logging1`` / ``logging2``: a fixed synthetic environment (10 actions,
  10-dim contexts, logistic rewards) whose logging data mixes two softmax
  policies, temperature pairs (2, -2) and (3, 7) respectively. A sweep of 21
  evaluation temperatures in [-10, 10] compares zero-shot selection against
  the learned-subsampling baseline, with metrics averaged over logging
  realizations.
* ``classification``: supervised-to-bandit conversion of a user CSV across a
  list of evaluation blends; candidate MSE comes from stratified bootstrap
  resamples against the exactly known policy value.
* ``scaling``: selection regret of models trained on nested subsets of a
  meta-dataset, plus a fitted power law regret = A + B / size^alpha.
* ``ablation-features``: retrains on feature subsets (capability flags only,
  logging-only block, policy-comparison block, everything).
* ``ablation-actions`` / ``ablation-kl``: retrains on tasks filtered by
  action count (<= 5) or policy closeness (mean KL <= 0.1) against a
  size-matched random subset, all scored on one held-out test split.
"""

from __future__ import annotations

import json
import os
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from .bandit import (
    DESK_SPACE,
    GeneratorSpace,
    TaskGenParams,
    generate_ground_truth,
    generate_logging,
    make_environment,
    true_policy_value,
)
from .convert import convert_classification_to_bandit, load_classification_csv
from .estimators import enumerate_candidates, evaluate_all_candidates
from .features import FEATURE_NAMES, FLAG_COLUMNS, N_TASK_FEATURES, feature_matrix
from .meta_model import (
    HyperparamSpace,
    ValidationGroup,
    hyperparam_search,
    load_meta_model,
    predict_mse,
    preprocess_fit,
    train_meta_model,
)
from .forest import RegressionForest
from .metadataset import build_meta_dataset, read_meta_dataset
from .pasif import pasif_mse_all, pasif_stream_seed
from .reward_models import fit_all_reward_matrices
from .selection import (
    ground_truth_value_classification,
    model_fit_seed,
    estimate_stream_seed,
    relative_regret,
    spearman_rank,
    stratified_bootstrap,
)
from .util import bootstrap_ci, child_rng, child_seed, write_csv

PRESET_NAMES = (
    "logging1",
    "logging2",
    "classification",
    "scaling",
    "ablation-features",
    "ablation-actions",
    "ablation-kl",
)

#: meta-dataset sizes (in tasks) generated when the preset builds its own;
#: the KL filter keeps only a few percent of tasks, hence its larger pool
_DEFAULT_N_TASKS = {"scaling": 1250, "ablation-features": 400, "ablation-actions": 400, "ablation-kl": 600}

_BETA_E_GRID = tuple(float(b) for b in np.linspace(-10.0, 10.0, 21))
LOGGING_TEMPERATURES = {"logging1": (2.0, -2.0), "logging2": (3.0, 7.0)}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a preset run needs; all fields have desk-scale defaults."""

    preset: str
    out_dir: str
    seed: int = 0
    workers: int = 1
    model_path: str | None = None
    meta_path: str | None = None
    data_path: str | None = None
    # logging sweeps
    n_data: int = 5
    n_rounds: int = 2000
    n_ground_truth: int = 20_000
    beta_e_grid: tuple[float, ...] = _BETA_E_GRID
    include_pasif: bool = True
    # classification sweep
    alpha_b: float = 0.2
    alpha_e_list: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 0.99)
    bootstrap_count: int = 10
    bootstrap_fraction: float = 0.9
    split_fraction: float = 0.5
    # meta-dataset presets
    n_tasks: int | None = None
    budget: int = 10
    sizes: tuple[int, ...] = (125, 250, 500, 1000)
    space: GeneratorSpace = field(default=DESK_SPACE)

    def __post_init__(self):
        if self.preset not in PRESET_NAMES:
            raise ValueError(f"unknown preset {self.preset!r}; pick one of {PRESET_NAMES}")
        if not (0.0 <= self.alpha_b <= 1.0) or any(not (0.0 <= a <= 1.0) for a in self.alpha_e_list):
            raise ValueError("alpha values must lie in [0, 1]")
        if self.n_data < 1 or self.bootstrap_count < 1 or self.budget < 1:
            raise ValueError("n_data, bootstrap_count and budget must be positive")
        if not (0.0 < self.bootstrap_fraction <= 1.0):
            raise ValueError("bootstrap_fraction must lie in (0, 1]")
        if any(s < 1 for s in self.sizes) or list(self.sizes) != sorted(set(self.sizes)):
            raise ValueError("sizes must be distinct positive integers in ascending order")

    def resolved_n_tasks(self) -> int:
        return self.n_tasks if self.n_tasks is not None else _DEFAULT_N_TASKS.get(self.preset, 400)


def _require_file(path: str | None, what: str) -> str:
    if path is None:
        raise FileNotFoundError(f"this preset needs {what}; none was given")
    if not os.path.exists(path):
        raise FileNotFoundError(f"this preset needs {what}; {path} does not exist")
    return path


def _mean_ci(values, rng) -> dict:
    vals = np.asarray([v for v in values if np.isfinite(v)], dtype=np.float64)
    if vals.size == 0:
        return {"mean": float("nan"), "lo": float("nan"), "hi": float("nan"), "n": 0}
    mean, lo, hi = bootstrap_ci(vals, rng)
    return {"mean": mean, "lo": lo, "hi": hi, "n": int(vals.size)}


def _selection_metrics(predicted, true_mse) -> tuple[float, float]:
    """(relative regret, spearman) of one ranking; degenerate cases give NaN."""
    predicted = np.asarray(predicted, dtype=np.float64)
    true_mse = np.asarray(true_mse, dtype=np.float64)
    reg = relative_regret(float(true_mse[int(np.argmin(predicted))]), float(true_mse.min()))
    rho = spearman_rank(predicted, true_mse)
    return (float("nan") if reg.degenerate else reg.value), rho.value


# ---------------------------------------------------------------------------
# logging sweeps
# ---------------------------------------------------------------------------


def _run_logging(config: ExperimentConfig) -> tuple[dict, list[list]]:
    betas = LOGGING_TEMPERATURES[config.preset]
    model = load_meta_model(_require_file(config.model_path, "a trained selection model (--model)"))
    specs = enumerate_candidates()
    ids = [s.estimator_id for s in specs]
    env_seed = child_seed(config.seed, 0)
    methods = ["autoope"] + (["pasif"] if config.include_pasif else [])

    point_rows: list[list] = []
    sweep = []
    # the logging data and reward-model fits do not depend on beta_e, only the
    # evaluation propensities do, so fitted reward matrices are cached per
    # realization across the whole temperature sweep
    q_cache: dict[int, dict] = {}
    for j, beta_e in enumerate(config.beta_e_grid):
        params = TaskGenParams(
            n_actions=10, n_rounds=config.n_rounds, d_x=10, reward_kind="logistic",
            policy_kind_b="reward_prop", policy_kind_e="reward_prop",
            beta_b=betas, beta_e=float(beta_e), n_gen=config.n_data,
            n_ground_truth=config.n_ground_truth, seed=env_seed,
        )
        env = make_environment(params)
        v_true = true_policy_value(generate_ground_truth(env))
        errors = np.empty((config.n_data, len(ids)))
        tables = {m: np.empty((config.n_data, len(ids))) for m in methods}
        for s in range(config.n_data):
            task = generate_logging(env, s)
            if s not in q_cache:
                q_cache[s] = fit_all_reward_matrices(task, seed=model_fit_seed(env_seed, s))
            by_id = evaluate_all_candidates(task, q_cache[s], seed=estimate_stream_seed(env_seed, s))
            errors[s] = [(by_id[i] - v_true) ** 2 for i in ids]
            tables["autoope"][s] = predict_mse(model, feature_matrix(task, specs))
            if config.include_pasif:
                by_pasif = pasif_mse_all(task, seed=pasif_stream_seed(env_seed, s))
                tables["pasif"][s] = [by_pasif[i] for i in ids]
        true_mse = errors.mean(axis=0)
        entry = {"beta_e": float(beta_e), "true_value": v_true, "methods": {}}
        for m in methods:
            regrets, rhos = [], []
            for s in range(config.n_data):
                reg, rho = _selection_metrics(tables[m][s], true_mse)
                regrets.append(reg)
                rhos.append(rho)
                sel = ids[int(np.argmin(tables[m][s]))]
                point_rows.append([config.preset, float(beta_e), s, m, sel, reg, rho])
            entry["methods"][m] = {
                "regret": _mean_ci(regrets, child_rng(config.seed, 1, j, 0)),
                "spearman": _mean_ci(rhos, child_rng(config.seed, 1, j, 1)),
            }
        sweep.append(entry)

    series = {"beta_e": [p["beta_e"] for p in sweep]}
    for m in methods:
        for metric in ("regret", "spearman"):
            for part in ("mean", "lo", "hi"):
                series[f"{m}_{metric}_{part}"] = [p["methods"][m][metric][part] for p in sweep]
    report = {
        "temperatures_b": list(betas),
        "estimator_ids": ids,
        "sweep": sweep,
        "series": series,
    }
    return report, point_rows


# ---------------------------------------------------------------------------
# classification sweep
# ---------------------------------------------------------------------------


def _run_classification(config: ExperimentConfig) -> tuple[dict, list[list]]:
    data = load_classification_csv(_require_file(config.data_path, "a labeled CSV (--data)"))
    model = load_meta_model(_require_file(config.model_path, "a trained selection model (--model)"))
    specs = enumerate_candidates()
    ids = [s.estimator_id for s in specs]
    methods = ["autoope"] + (["pasif"] if config.include_pasif else [])

    point_rows: list[list] = []
    sweep = []
    for i, alpha_e in enumerate(config.alpha_e_list):
        conv = convert_classification_to_bandit(
            data, config.alpha_b, float(alpha_e), config.split_fraction, seed=child_seed(config.seed, 3, i)
        )
        v_exact = ground_truth_value_classification(conv.task, conv.rewards)
        errors = np.empty((config.bootstrap_count, len(ids)))
        tables = {m: np.empty((config.bootstrap_count, len(ids))) for m in methods}
        for b in range(config.bootstrap_count):
            tb = stratified_bootstrap(conv.task, config.bootstrap_fraction, seed=child_seed(config.seed, 4, i, b))
            q = fit_all_reward_matrices(tb, seed=child_seed(config.seed, 5, i, b))
            by_id = evaluate_all_candidates(tb, q, seed=child_seed(config.seed, 6, i, b))
            errors[b] = [(by_id[k] - v_exact) ** 2 for k in ids]
            tables["autoope"][b] = predict_mse(model, feature_matrix(tb, specs))
            if config.include_pasif:
                by_pasif = pasif_mse_all(tb, seed=child_seed(config.seed, 7, i, b))
                tables["pasif"][b] = [by_pasif[k] for k in ids]
        true_mse = errors.mean(axis=0)
        entry = {"alpha_e": float(alpha_e), "exact_value": v_exact, "methods": {}}
        for m in methods:
            regrets, rhos = [], []
            for b in range(config.bootstrap_count):
                reg, rho = _selection_metrics(tables[m][b], true_mse)
                regrets.append(reg)
                rhos.append(rho)
                sel = ids[int(np.argmin(tables[m][b]))]
                point_rows.append([config.preset, float(alpha_e), b, m, sel, reg, rho])
            entry["methods"][m] = {
                "regret": _mean_ci(regrets, child_rng(config.seed, 8, i, 0)),
                "spearman": _mean_ci(rhos, child_rng(config.seed, 8, i, 1)),
            }
        sweep.append(entry)
    report = {"alpha_b": config.alpha_b, "estimator_ids": ids, "sweep": sweep}
    return report, point_rows


# ---------------------------------------------------------------------------
# meta-dataset presets (scaling and ablations)
# ---------------------------------------------------------------------------


def _load_or_build_meta(config: ExperimentConfig):
    if config.meta_path is not None:
        path = _require_file(config.meta_path, "a meta-dataset CSV (--meta)")
    else:
        path = os.path.join(config.out_dir, "meta.csv")
        # the builder is resumable: a partial file continues, a finished one
        # is left untouched
        build_meta_dataset(
            path, config.resolved_n_tasks(), seed=child_seed(config.seed, 0),
            space=config.space, workers=config.workers,
        )
    return read_meta_dataset(path)


def _test_groups(X, y, task_ids, realization_ids, test_tasks):
    groups = []
    mask = np.isin(task_ids, test_tasks)
    rows = np.flatnonzero(mask)
    keys = task_ids[rows] * (realization_ids.max() + 1) + realization_ids[rows]
    for key in np.unique(keys):
        sel = rows[keys == key]
        groups.append((X[sel], y[sel]))
    return groups


def _score_groups(predict, groups, rng0, rng1) -> dict:
    regrets, rhos = [], []
    for Xg, yg in groups:
        reg, rho = _selection_metrics(predict(Xg), yg)
        regrets.append(reg)
        rhos.append(rho)
    return {
        "regret": _mean_ci(regrets, rng0),
        "spearman": _mean_ci(rhos, rng1),
        "n_groups": len(groups),
    }


def _run_scaling(config: ExperimentConfig) -> tuple[dict, list[list]]:
    X, y, task_ids, realization_ids, _ = _load_or_build_meta(config)
    tasks = np.unique(task_ids)
    order = tasks[child_rng(config.seed, 1).permutation(tasks.size)]
    n_test = max(1, int(round(0.2 * tasks.size)))
    test_tasks, pool = order[:n_test], order[n_test:]
    if max(config.sizes) > pool.size:
        raise ValueError(
            f"largest size {max(config.sizes)} exceeds the {pool.size} tasks left "
            f"after the test split; generate more tasks or shrink sizes"
        )
    groups = _test_groups(X, y, task_ids, realization_ids, test_tasks)

    point_rows: list[list] = []
    points = []
    for D in config.sizes:
        mask = np.isin(task_ids, pool[:D])
        model = train_meta_model(
            X[mask], y[mask], task_ids[mask], realization_ids[mask],
            budget=config.budget, seed=child_seed(config.seed, 2, D),
        )
        score = _score_groups(
            lambda G: predict_mse(model, G), groups,
            child_rng(config.seed, 3, D, 0), child_rng(config.seed, 3, D, 1),
        )
        points.append({"size": int(D), **score})
        point_rows.append([config.preset, int(D), 0, "autoope", "", score["regret"]["mean"], score["spearman"]["mean"]])

    sizes = np.array([p["size"] for p in points], dtype=np.float64)
    losses = np.array([p["regret"]["mean"] for p in points])
    fit = _fit_power_law(sizes, losses)
    report = {"points": points, "power_law": fit, "n_test_tasks": int(n_test)}
    return report, point_rows


def _fit_power_law(sizes, losses) -> dict:
    """Least-squares fit of loss = A + B / size**alpha with a grid fallback."""

    def f(d, a, b, alpha):
        return a + b / np.power(d, alpha)

    lo = float(min(losses.min(), 0.0))
    p0 = (max(losses.min(), 1e-6), max(losses.max() - losses.min(), 1e-6) * sizes.min() ** 0.5, 0.5)
    try:
        with warnings.catch_warnings():
            # with very few points the parameter covariance is undefined,
            # which is fine: only the point estimate is reported
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, _ = curve_fit(
                f, sizes, losses, p0=p0, maxfev=20000,
                bounds=([lo, 0.0, 1e-3], [np.inf, np.inf, 5.0]),
            )
        a, b, alpha = (float(v) for v in popt)
    except (RuntimeError, ValueError):
        best = (np.inf, p0[0], p0[1], 0.5)
        for alpha in np.arange(0.05, 3.0, 0.05):
            design = np.stack([np.ones_like(sizes), sizes**-alpha], axis=1)
            coef, *_ = np.linalg.lstsq(design, losses, rcond=None)
            sse = float(((design @ coef - losses) ** 2).sum())
            if sse < best[0]:
                best = (sse, float(coef[0]), float(coef[1]), float(alpha))
        a, b, alpha = best[1], best[2], best[3]
    resid = losses - f(sizes, a, b, alpha)
    return {"A": a, "B": b, "alpha": alpha, "sse": float((resid**2).sum())}


#: feature-column subsets for the ablation; each task-feature group keeps the
#: capability flags, otherwise every candidate of a task shares one feature row
#: and the learned ranking within a task degenerates to a constant
FEATURE_GROUPS = {
    "estimators-dependent": tuple(FLAG_COLUMNS),
    "policies-independent": tuple(range(0, 10)) + tuple(FLAG_COLUMNS),
    "policies-dependent": tuple(range(10, N_TASK_FEATURES)) + tuple(FLAG_COLUMNS),
    "all": tuple(range(len(FEATURE_NAMES))),
}


def _fit_on_columns(X, y, task_ids, realization_ids, cols, budget, seed):
    """Search + refit on a column subset; returns a predict(features) callable."""
    cols = np.asarray(cols, dtype=np.int64)
    cat = tuple(int(np.flatnonzero(cols == c)[0]) for c in FLAG_COLUMNS if c in cols)
    Xs = X[:, cols]
    tasks = np.unique(task_ids)
    order = tasks[child_rng(seed, 0).permutation(tasks.size)]
    n_val = max(1, int(round(0.25 * tasks.size)))
    val_mask = np.isin(task_ids, order[:n_val])
    groups = [
        ValidationGroup(Xg, yg)
        for Xg, yg in _test_groups(Xs, y, task_ids, realization_ids, order[:n_val])
    ]
    best_hp, _ = hyperparam_search(
        Xs[~val_mask], y[~val_mask], groups, budget=budget, seed=seed,
        space=HyperparamSpace(), categorical_columns=cat,
    )
    pre = preprocess_fit(Xs, y, cat)
    forest = RegressionForest(best_hp, seed=child_seed(seed, 2)).fit(pre.transform(Xs), pre.transform_target(y))
    return lambda G: pre.inverse_target(forest.predict(pre.transform(G[:, cols])))


def _run_ablation_features(config: ExperimentConfig) -> tuple[dict, list[list]]:
    X, y, task_ids, realization_ids, _ = _load_or_build_meta(config)
    tasks = np.unique(task_ids)
    order = tasks[child_rng(config.seed, 1).permutation(tasks.size)]
    n_test = max(1, int(round(0.2 * tasks.size)))
    test_tasks, pool = order[:n_test], order[n_test:]
    groups = _test_groups(X, y, task_ids, realization_ids, test_tasks)
    train_mask = np.isin(task_ids, pool)

    point_rows: list[list] = []
    rows = {}
    for gi, (name, cols) in enumerate(FEATURE_GROUPS.items()):
        predict = _fit_on_columns(
            X[train_mask], y[train_mask], task_ids[train_mask], realization_ids[train_mask],
            cols, config.budget, child_seed(config.seed, 2, gi),
        )
        score = _score_groups(predict, groups, child_rng(config.seed, 3, gi, 0), child_rng(config.seed, 3, gi, 1))
        rows[name] = {**score, "n_columns": len(cols)}
        point_rows.append([config.preset, gi, 0, name, "", score["regret"]["mean"], score["spearman"]["mean"]])
    report = {"groups": rows, "n_test_tasks": int(n_test)}
    return report, point_rows


def _run_ablation_filtered(config: ExperimentConfig) -> tuple[dict, list[list]]:
    X, y, task_ids, realization_ids, _ = _load_or_build_meta(config)
    tasks = np.unique(task_ids)
    order = tasks[child_rng(config.seed, 1).permutation(tasks.size)]
    n_test = max(1, int(round(0.2 * tasks.size)))
    test_tasks, pool = order[:n_test], order[n_test:]
    groups = _test_groups(X, y, task_ids, realization_ids, test_tasks)

    if config.preset == "ablation-actions":
        col, threshold, label = FEATURE_NAMES.index("n_actions"), 5.0, "n_actions <= 5"
    else:
        col, threshold, label = FEATURE_NAMES.index("kl_logging_eval"), 0.1, "mean KL(logging||eval) <= 0.1"
    task_level = {int(t): X[task_ids == t, col].mean() for t in pool}
    kept = np.array([t for t in pool if task_level[int(t)] <= threshold], dtype=task_ids.dtype)
    if kept.size < 3:
        raise ValueError(
            f"only {kept.size} training tasks satisfy {label}; "
            f"generate a larger meta-dataset for this ablation"
        )
    matched = pool[child_rng(config.seed, 2).permutation(pool.size)][: kept.size]

    point_rows: list[list] = []
    rows = {}
    for gi, (name, subset) in enumerate((("filtered", kept), ("random-matched", matched))):
        mask = np.isin(task_ids, subset)
        model = train_meta_model(
            X[mask], y[mask], task_ids[mask], realization_ids[mask],
            budget=config.budget, seed=child_seed(config.seed, 3, gi),
        )
        score = _score_groups(
            lambda G: predict_mse(model, G), groups,
            child_rng(config.seed, 4, gi, 0), child_rng(config.seed, 4, gi, 1),
        )
        rows[name] = {**score, "n_tasks": int(subset.size)}
        point_rows.append([config.preset, gi, 0, name, "", score["regret"]["mean"], score["spearman"]["mean"]])
    report = {"filter": label, "groups": rows, "n_test_tasks": int(n_test)}
    return report, point_rows


# ---------------------------------------------------------------------------
# dispatch and emission
# ---------------------------------------------------------------------------

_RUNNERS = {
    "logging1": _run_logging,
    "logging2": _run_logging,
    "classification": _run_classification,
    "scaling": _run_scaling,
    "ablation-features": _run_ablation_features,
    "ablation-actions": _run_ablation_filtered,
    "ablation-kl": _run_ablation_filtered,
}

_POINT_HEADER = ["preset", "sweep_value", "replicate", "method", "selected", "relative_regret", "spearman"]


def _config_dict(config: ExperimentConfig) -> dict:
    return asdict(config)


def run_experiment_preset(config: ExperimentConfig) -> dict:
    """Run one named preset end-to-end and write its report files."""
    os.makedirs(config.out_dir, exist_ok=True)
    started = time.time()
    body, point_rows = _RUNNERS[config.preset](config)
    report = {"preset": config.preset, "seed": config.seed, "config": _config_dict(config), **body}

    with open(os.path.join(config.out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2, allow_nan=True)
        fh.write("\n")
    write_csv(os.path.join(config.out_dir, "points.csv"), _POINT_HEADER, point_rows)
    run_info = {
        "started_unix": started,
        "finished_unix": time.time(),
        "duration_seconds": time.time() - started,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
    }
    with open(os.path.join(config.out_dir, "run_info.json"), "w", encoding="utf-8") as fh:
        json.dump(run_info, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return report
