"""Command-line interface.

Every subcommand exits 0 on success and 1 with a one-line diagnostic on
stderr when something goes wrong; argparse itself exits 2 on unknown flags
or missing required arguments. All randomness hangs off ``--seed``, so a
repeated invocation writes byte-identical outputs (timestamps live in the
separate run_info sidecar that presets produce).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from .bandit import DEFAULT_SPACE, DESK_SPACE
from .convert import convert_classification_to_bandit, load_classification_csv
from .errors import OpeSelectError
from .features import FEATURE_NAMES, feature_matrix
from .meta_model import load_meta_model, mdi_importance, save_meta_model, train_meta_model
from .metadataset import build_meta_dataset, read_meta_dataset
from .pasif import pasif_mse_all
from .presets import PRESET_NAMES, ExperimentConfig, run_experiment_preset
from .reward_models import fit_all_reward_matrices
from .selection import (
    autoope_select,
    estimate_stream_seed,
    ground_truth_value_classification,
    model_fit_seed,
    predict_mse,
)
from .estimators import enumerate_candidates, evaluate_all_candidates
from .bandit import generate_ground_truth, generate_logging, is_trivial_task, make_environment, true_policy_value
from .taskdir import load_task_dir, save_task_dir
from .util import write_csv

_SPACES = {"desk": DESK_SPACE, "full": DEFAULT_SPACE}


def _print_mse_table(pairs: list[tuple[str, float]], value_label: str) -> None:
    width = max(len(i) for i, _ in pairs)
    print(f"{'candidate':<{width}}  {value_label}")
    for est_id, value in sorted(pairs, key=lambda p: p[1]):
        print(f"{est_id:<{width}}  {value:.6g}")


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _cmd_generate(args: argparse.Namespace) -> int:
    rows = build_meta_dataset(
        args.out,
        n_tasks=args.n_tasks,
        seed=args.seed,
        space=_SPACES[args.space],
        workers=args.workers,
    )
    print(f"{args.out}: {rows} rows over {args.n_tasks} sampled tasks")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    X, y, task_ids, realization_ids, _ = read_meta_dataset(args.meta)
    model = train_meta_model(X, y, task_ids, realization_ids, budget=args.budget, seed=args.seed)
    save_meta_model(model, args.out)
    record = {
        "budget": args.budget,
        "seed": args.seed,
        "training_rows": model.n_training_rows,
        "trials": [
            {"hyperparams": dataclasses.asdict(t.hyperparams), "mean_regret": t.mean_regret}
            for t in model.search_record
        ],
    }
    best = min(model.search_record, key=lambda t: t.mean_regret)
    record["best"] = dataclasses.asdict(best.hyperparams)
    record_path = args.out + ".search.json"
    _write_json(record_path, record)
    print(
        f"{args.out}: trained on {model.n_training_rows} rows, "
        f"{len(model.search_record)} search trials (record in {record_path})"
    )
    return 0


def _cmd_select(args: argparse.Namespace) -> int:
    model = load_meta_model(args.model)
    bundle = load_task_dir(args.task)
    result = autoope_select(model, bundle.task)
    print(f"selected: {result.selected_id}  (predicted mse {result.predicted_mse[result.selected_index]:.6g})")
    print()
    _print_mse_table(list(zip(result.estimator_ids, result.predicted_mse)), "predicted_mse")
    if args.out:
        _write_json(
            args.out,
            {
                "selected_id": result.selected_id,
                "predicted_mse": dict(zip(result.estimator_ids, result.predicted_mse.tolist())),
            },
        )
    return 0


def _true_mse_synthetic(bundle, n_realizations: int | None) -> tuple[np.ndarray, float]:
    """Monte-Carlo MSE of every candidate under the task's own generator."""
    params = bundle.params
    env = make_environment(params)
    v_true = true_policy_value(generate_ground_truth(env))
    ids = tuple(s.estimator_id for s in enumerate_candidates())
    n_e = params.n_gen if n_realizations is None else n_realizations
    estimates = np.zeros((n_e, len(ids)))
    for s in range(n_e):
        task = generate_logging(env, s)
        if is_trivial_task(task):
            raise ValueError(f"realization {s} is degenerate; this task family cannot be scored")
        q = fit_all_reward_matrices(task, seed=model_fit_seed(params.seed, s))
        by_id = evaluate_all_candidates(task, q, seed=estimate_stream_seed(params.seed, s))
        estimates[s] = [by_id[i] for i in ids]
    return ((estimates - v_true) ** 2).mean(axis=0), v_true


def _true_mse_exact(bundle, seed: int) -> tuple[np.ndarray, float]:
    """Squared error of every candidate against the exact value of this draw."""
    v_exact = ground_truth_value_classification(bundle.task, bundle.rewards)
    ids = tuple(s.estimator_id for s in enumerate_candidates())
    q = fit_all_reward_matrices(bundle.task, seed=model_fit_seed(seed, 0))
    by_id = evaluate_all_candidates(bundle.task, q, seed=estimate_stream_seed(seed, 0))
    estimates = np.array([by_id[i] for i in ids])
    return (estimates - v_exact) ** 2, v_exact


def _cmd_evaluate(args: argparse.Namespace) -> int:
    model = load_meta_model(args.model)
    bundle = load_task_dir(args.task)
    if bundle.params is not None:
        true_mse, v_true = _true_mse_synthetic(bundle, args.n_realizations)
        basis = f"mean over regenerated logging realizations, true value {v_true:.6g}"
    elif bundle.rewards is not None:
        true_mse, v_true = _true_mse_exact(bundle, args.seed)
        basis = f"squared error on this single draw, exact value {v_true:.6g}"
    else:
        raise ValueError(
            f"{args.task}: manifest has neither generator parameters nor a reward matrix, "
            "so ground-truth metrics are unavailable"
        )

    result = autoope_select(model, bundle.task, true_mse=true_mse)
    best_idx = int(np.argmin(true_mse))
    print(f"ground truth: {basis}")
    print(f"selected: {result.selected_id}")
    print(f"best:     {result.estimator_ids[best_idx]}")
    regret = result.regret.value
    tag = " (absolute gap; best mse is zero)" if result.regret.degenerate else ""
    print(f"relative regret: {regret:.6g}{tag}")
    print(f"spearman: {result.spearman.value:.6g}")
    print()
    width = max(len(i) for i in result.estimator_ids)
    print(f"{'candidate':<{width}}  {'predicted_mse':>13}  {'true_mse':>13}")
    for j in np.argsort(true_mse):
        print(
            f"{result.estimator_ids[j]:<{width}}  "
            f"{result.predicted_mse[j]:>13.6g}  {true_mse[j]:>13.6g}"
        )
    if args.out:
        _write_json(
            args.out,
            {
                "ground_truth_basis": basis,
                "selected_id": result.selected_id,
                "best_id": result.estimator_ids[best_idx],
                "relative_regret": regret,
                "regret_degenerate": result.regret.degenerate,
                "spearman": result.spearman.value,
                "predicted_mse": dict(zip(result.estimator_ids, result.predicted_mse.tolist())),
                "true_mse": dict(zip(result.estimator_ids, true_mse.tolist())),
            },
        )
    return 0


def _cmd_convert(args: argparse.Namespace) -> int:
    data = load_classification_csv(args.data, label_column=args.label_column)
    converted = convert_classification_to_bandit(
        data,
        alpha_b=args.alpha_b,
        alpha_e=args.alpha_e,
        split_fraction=args.split_fraction,
        seed=args.seed,
    )
    source = {
        "kind": "classification",
        "data": args.data,
        "label_column": args.label_column,
        "alpha_b": args.alpha_b,
        "alpha_e": args.alpha_e,
        "split_fraction": args.split_fraction,
        "seed": args.seed,
    }
    save_task_dir(args.out, converted.task, rewards=converted.rewards, source=source)
    v_exact = ground_truth_value_classification(converted.task, converted.rewards)
    print(
        f"{args.out}: {converted.task.n_rounds} rounds, {converted.task.n_actions} actions, "
        f"exact target value {v_exact:.6g}"
    )
    return 0


def _cmd_baseline_pasif(args: argparse.Namespace) -> int:
    bundle = load_task_dir(args.task)
    table = pasif_mse_all(bundle.task, seed=args.seed)
    pairs = list(table.items())
    selected = min(pairs, key=lambda p: p[1])[0]
    print(f"selected: {selected}")
    print()
    _print_mse_table(pairs, "surrogate_mse")
    if args.out:
        _write_json(args.out, {"selected_id": selected, "surrogate_mse": table})
    return 0


def _cmd_importance(args: argparse.Namespace) -> int:
    model = load_meta_model(args.model)
    imp = mdi_importance(model)
    order = np.argsort(imp)[::-1]
    width = max(len(n) for n in FEATURE_NAMES)
    print(f"{'feature':<{width}}  importance")
    for j in order:
        print(f"{FEATURE_NAMES[j]:<{width}}  {imp[j]:.6g}")
    if args.out:
        write_csv(args.out, ["feature", "importance"], [(FEATURE_NAMES[j], float(imp[j])) for j in order])
    return 0


def _cmd_preset(args: argparse.Namespace) -> int:
    overrides = {
        "model_path": args.model,
        "meta_path": args.meta,
        "data_path": args.data,
        "n_tasks": args.n_tasks,
        "n_data": args.n_data,
        "budget": args.budget,
        "bootstrap_count": args.bootstrap_count,
        "sizes": tuple(args.sizes) if args.sizes else None,
        "alpha_e_list": tuple(args.alpha_e) if args.alpha_e else None,
    }
    config = ExperimentConfig(
        preset=args.name,
        out_dir=args.out,
        seed=args.seed,
        workers=args.workers,
        include_pasif=not args.no_pasif,
        **{k: v for k, v in overrides.items() if v is not None},
    )
    run_experiment_preset(config)
    print(f"{args.out}: report.json, points.csv, run_info.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opeselect",
        description="Meta-learned estimator selection for off-policy evaluation.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root seed for all derived randomness")
    common.add_argument("--workers", type=int, default=1, help="parallel processes where supported")

    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="build a meta-dataset of candidate MSEs")
    p.add_argument("--out", required=True, help="meta-dataset CSV to write")
    p.add_argument("--n-tasks", type=int, required=True, help="number of task families to sample")
    p.add_argument("--space", choices=sorted(_SPACES), default="desk", help="task sampling ranges")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", parents=[common], help="train the selection model on a meta-dataset")
    p.add_argument("--meta", required=True, help="meta-dataset CSV from `generate`")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--budget", type=int, default=50, help="random-search trials")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("select", parents=[common], help="pick an estimator for one task")
    p.add_argument("--model", required=True, help="trained model file")
    p.add_argument("--task", required=True, help="task directory")
    p.add_argument("--out", default=None, help="optional JSON report")
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("evaluate", parents=[common], help="score a selection against ground truth")
    p.add_argument("--model", required=True, help="trained model file")
    p.add_argument("--task", required=True, help="task directory with generator params or a reward matrix")
    p.add_argument("--n-realizations", type=int, default=None, help="override the realization count")
    p.add_argument("--out", default=None, help="optional JSON report")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("convert", parents=[common], help="turn a labelled CSV into a bandit task directory")
    p.add_argument("--data", required=True, help="classification CSV (features plus an integer label column)")
    p.add_argument("--out", required=True, help="task directory to write")
    p.add_argument("--label-column", type=int, default=-1, help="index of the label column")
    p.add_argument("--alpha-b", type=float, default=0.2, help="logging-policy sharpness in [0, 1]")
    p.add_argument("--alpha-e", type=float, default=0.5, help="target-policy sharpness in [0, 1]")
    p.add_argument("--split-fraction", type=float, default=0.5, help="share of rows kept as logged rounds")
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("baseline-pasif", parents=[common], help="importance-fitting baseline on one task")
    p.add_argument("--task", required=True, help="task directory")
    p.add_argument("--out", default=None, help="optional JSON report")
    p.set_defaults(func=_cmd_baseline_pasif)

    p = sub.add_parser("importance", parents=[common], help="feature importances of a trained model")
    p.add_argument("--model", required=True, help="trained model file")
    p.add_argument("--out", default=None, help="optional CSV report")
    p.set_defaults(func=_cmd_importance)

    p = sub.add_parser("preset", parents=[common], help="run a named experiment end to end")
    p.add_argument("--name", required=True, choices=PRESET_NAMES, help="experiment to run")
    p.add_argument("--out", required=True, help="directory for report.json and points.csv")
    p.add_argument("--model", default=None, help="reuse a trained model file")
    p.add_argument("--meta", default=None, help="reuse or build a meta-dataset CSV")
    p.add_argument("--data", default=None, help="classification CSV (classification preset)")
    p.add_argument("--n-tasks", type=int, default=None, help="meta-dataset size when building one")
    p.add_argument("--n-data", type=int, default=None, help="logging realizations per sweep point")
    p.add_argument("--budget", type=int, default=None, help="random-search trials when training")
    p.add_argument("--bootstrap-count", type=int, default=None, help="replicates per sweep point")
    p.add_argument("--sizes", type=int, nargs="+", default=None, help="training-set sizes (scaling preset)")
    p.add_argument("--alpha-e", type=float, nargs="+", default=None, help="target sharpness grid")
    p.add_argument("--no-pasif", action="store_true", help="skip the importance-fitting baseline")
    p.set_defaults(func=_cmd_preset)

    return parser


def cli_dispatch(argv: list[str] | None = None) -> int:
    """Parse ``argv`` and run one subcommand, mapping failures to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage or --help text
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (OpeSelectError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> int:
    return cli_dispatch(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
