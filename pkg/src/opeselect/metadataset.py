"""Meta-dataset construction: many synthetic tasks scored against ground truth.

Each generated task contributes one row per (realization, candidate): the 43
features of that candidate on that realization, plus the task-level
ground-truth MSE of the candidate averaged over all realizations of the task.
Tasks whose logging data is trivial (a realization where every reward is
identical) are skipped whole, so the output always holds exactly
kept_tasks * n_gen * 21 rows.

The file is line-oriented CSV with a schema comment, written in ascending
task order no matter how many workers computed the tasks, so reruns and
different worker counts produce byte-identical output. A sidecar
``<path>.progress`` lists finished task indices; rerunning with the same
arguments resumes after the last finished task, discarding rows of any task
that was mid-write when a previous run stopped.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .bandit import (
    GeneratorSpace,
    DEFAULT_SPACE,
    TaskGenParams,
    generate_ground_truth,
    generate_logging,
    is_trivial_task,
    make_environment,
    sample_task_params,
    true_policy_value,
)
from .errors import SchemaMismatchError
from .estimators import enumerate_candidates, evaluate_all_candidates
from .features import FEATURE_NAMES, FEATURE_SCHEMA_VERSION, N_FEATURES, feature_matrix
from .reward_models import DEFAULT_REWARD_CONFIG, RewardModelConfig, fit_all_reward_matrices
from .selection import estimate_stream_seed, model_fit_seed
from .util import child_rng, format_float

META_SCHEMA_COMMENT = f"opeselect meta-dataset schema={FEATURE_SCHEMA_VERSION}"
_COLUMNS = ("task", "realization", "estimator") + FEATURE_NAMES + ("mse",)


@dataclass(frozen=True)
class MseRecord:
    """One meta-dataset row: a candidate's features on one realization."""

    task_id: int
    realization: int
    estimator_id: str
    features: NDArray[np.float64]
    mse: float

    def __post_init__(self):
        if self.features.shape != (N_FEATURES,):
            raise ValueError(f"features must be a {N_FEATURES}-vector")


@dataclass(frozen=True)
class TaskEvaluation:
    """Everything measured on one generated task across its realizations."""

    task_index: int
    task_seed: int
    params: TaskGenParams
    trivial: bool
    v_true: float
    estimator_ids: tuple[str, ...]
    features: NDArray[np.float64]  # (n_gen, n_candidates, 43)
    estimates: NDArray[np.float64]  # (n_gen, n_candidates)
    mse: NDArray[np.float64]  # (n_candidates,)


def task_seed_for_index(run_seed: int, index: int) -> int:
    """The generator seed of the index-th task of a run; pure in (run, index)."""
    return int(child_rng(run_seed, index).integers(np.iinfo(np.int64).max))


def evaluate_task(
    run_seed: int,
    index: int,
    space: GeneratorSpace = DEFAULT_SPACE,
    reward_config: RewardModelConfig = DEFAULT_REWARD_CONFIG,
) -> TaskEvaluation:
    """Generate task ``index`` and score all candidates against ground truth.

    Realization s refits reward models and reruns every candidate on freshly
    drawn logging data; the candidate's ground-truth MSE is the mean squared
    gap to the fixed environment's true policy value across realizations. A
    trivial realization marks the whole task as skipped.
    """
    specs = enumerate_candidates()
    ids = tuple(s.estimator_id for s in specs)
    seed = task_seed_for_index(run_seed, index)
    params = sample_task_params(seed, space)
    env = make_environment(params)
    n_gen = params.n_gen

    feats = np.zeros((n_gen, len(ids), N_FEATURES))
    ests = np.zeros((n_gen, len(ids)))
    for s in range(n_gen):
        task = generate_logging(env, s)
        if is_trivial_task(task):
            return TaskEvaluation(
                index, seed, params, True, float("nan"), ids,
                np.zeros((0, len(ids), N_FEATURES)), np.zeros((0, len(ids))), np.zeros(len(ids)),
            )
        q = fit_all_reward_matrices(task, seed=model_fit_seed(params.seed, s), config=reward_config)
        by_id = evaluate_all_candidates(task, q, seed=estimate_stream_seed(params.seed, s))
        ests[s] = [by_id[i] for i in ids]
        feats[s] = feature_matrix(task, specs)

    v_true = true_policy_value(generate_ground_truth(env))
    mse = ((ests - v_true) ** 2).mean(axis=0)
    return TaskEvaluation(index, seed, params, False, v_true, ids, feats, ests, mse)


def records_from_evaluation(ev: TaskEvaluation) -> list[MseRecord]:
    """Flatten a task evaluation to rows; a skipped task yields none."""
    if ev.trivial:
        return []
    rows = []
    for s in range(ev.features.shape[0]):
        for j, est_id in enumerate(ev.estimator_ids):
            rows.append(MseRecord(ev.task_index, s, est_id, ev.features[s, j], float(ev.mse[j])))
    return rows


def _record_line(r: MseRecord) -> str:
    cells = [str(r.task_id), str(r.realization), r.estimator_id]
    cells.extend(format_float(v) for v in r.features)
    cells.append(format_float(r.mse))
    return ",".join(cells)


def _read_progress(path: str) -> list[int]:
    if not os.path.exists(path):
        return []
    with open(path, "r", encoding="utf-8") as fh:
        return [int(line) for line in fh if line.strip()]


def _worker(args) -> tuple[int, list[str]]:
    run_seed, index, space, reward_config = args
    ev = evaluate_task(run_seed, index, space, reward_config)
    return index, [_record_line(r) for r in records_from_evaluation(ev)]


def build_meta_dataset(
    path,
    n_tasks: int,
    seed: int = 0,
    space: GeneratorSpace = DEFAULT_SPACE,
    reward_config: RewardModelConfig = DEFAULT_REWARD_CONFIG,
    workers: int = 1,
) -> int:
    """Write the meta-dataset for tasks 0..n_tasks-1; returns rows written.

    Content is a pure function of (seed, space, reward_config, n_tasks): rows
    land in ascending task order whatever the worker count, and an interrupted
    run resumes from its progress sidecar without changing the final bytes.
    """
    if n_tasks < 1:
        raise ValueError("need at least one task")
    if workers < 1:
        raise ValueError("need at least one worker")
    path = os.fspath(path)
    progress_path = path + ".progress"

    done = _read_progress(progress_path)
    if done and not os.path.exists(path):
        done = []  # the data file is gone, so the sidecar is stale
    if done and (sorted(done) != list(range(len(done))) or len(done) > n_tasks):
        raise ValueError(
            f"progress file {progress_path} does not match this run; remove it to start over"
        )
    start = len(done)
    rows_written = 0

    if start == 0:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# {META_SCHEMA_COMMENT}\n")
            fh.write(",".join(_COLUMNS) + "\n")
        with open(progress_path, "w", encoding="utf-8"):
            pass
    else:
        # Drop rows of any task beyond the recorded progress (a partial write).
        kept = []
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
        for line in lines:
            if line.startswith("#") or line.startswith(_COLUMNS[0] + ","):
                kept.append(line)
            else:
                if int(line.split(",", 1)[0]) < start:
                    kept.append(line)
                    rows_written += 1
        with open(path, "w", encoding="utf-8") as fh:
            fh.writelines(kept)

    pending = list(range(start, n_tasks))
    if not pending:
        return rows_written

    def emit(index: int, lines: list[str]) -> int:
        with open(path, "a", encoding="utf-8") as fh:
            for line in lines:
                fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        with open(progress_path, "a", encoding="utf-8") as fh:
            fh.write(f"{index}\n")
        return len(lines)

    if workers == 1:
        for index in pending:
            _, lines = _worker((seed, index, space, reward_config))
            rows_written += emit(index, lines)
        return rows_written

    # Workers compute tasks out of order; a reorder buffer emits them in order.
    buffered: dict[int, list[str]] = {}
    next_to_emit = start
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for index, lines in pool.map(
            _worker, [(seed, i, space, reward_config) for i in pending], chunksize=1
        ):
            buffered[index] = lines
            while next_to_emit in buffered:
                rows_written += emit(next_to_emit, buffered.pop(next_to_emit))
                next_to_emit += 1
    return rows_written


def read_meta_dataset(path) -> tuple[NDArray, NDArray, NDArray, NDArray, list[str]]:
    """Load a meta-dataset file into training arrays.

    Returns (features (N,43), mse (N,), task_ids (N,), realization_ids (N,),
    estimator_ids (N,)). Rejects files whose schema line names a different
    feature schema version.
    """
    path = os.fspath(path)
    feats, mse, tasks, reals, names = [], [], [], [], []
    header_seen = False
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if not first.startswith("# opeselect meta-dataset schema="):
            raise SchemaMismatchError(f"{path} is not a meta-dataset file")
        got = first.split("schema=", 1)[1]
        if got != str(FEATURE_SCHEMA_VERSION):
            raise SchemaMismatchError(
                f"meta-dataset uses feature schema {got}, this build uses {FEATURE_SCHEMA_VERSION}"
            )
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if not header_seen:
                if line.split(",") != list(_COLUMNS):
                    raise SchemaMismatchError(f"unexpected meta-dataset columns in {path}")
                header_seen = True
                continue
            cells = line.split(",")
            tasks.append(int(cells[0]))
            reals.append(int(cells[1]))
            names.append(cells[2])
            feats.append([float(c) for c in cells[3 : 3 + N_FEATURES]])
            mse.append(float(cells[3 + N_FEATURES]))
    return (
        np.asarray(feats, dtype=np.float64).reshape(len(mse), N_FEATURES),
        np.asarray(mse, dtype=np.float64),
        np.asarray(tasks, dtype=np.int64),
        np.asarray(reals, dtype=np.int64),
        names,
    )
