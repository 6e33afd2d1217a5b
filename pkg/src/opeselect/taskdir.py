"""Persist tasks as plain-text directories.

A task directory holds one manifest plus column-oriented CSV files:

    manifest.json    format tag, shapes, generator params or source metadata
    logging.csv      context_0..context_{d-1}, action, reward, prop_b_0..prop_b_{K-1}
    evaluation.csv   prop_e_0..prop_e_{K-1}, row-aligned with logging.csv
    rewards.csv      reward_0..reward_{K-1}, only when the full reward matrix
                     is known (tasks built from labelled data)

Floats are written with 17 significant digits, so a save/load round trip
reproduces every array bit for bit.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np
from numpy.typing import NDArray

from .bandit import LoggingDataset, OpeTask, TaskGenParams
from .util import read_csv, write_csv

TASK_FORMAT = "opeselect-task"
TASK_FORMAT_VERSION = 1

_MANIFEST = "manifest.json"
_LOGGING = "logging.csv"
_EVALUATION = "evaluation.csv"
_REWARDS = "rewards.csv"


@dataclasses.dataclass(frozen=True)
class TaskBundle:
    """A task read back from disk, with whatever side information was stored."""

    task: OpeTask
    params: TaskGenParams | None
    rewards: NDArray[np.float64] | None
    manifest: dict


def save_task_dir(
    path: str,
    task: OpeTask,
    params: TaskGenParams | None = None,
    rewards: NDArray[np.float64] | None = None,
    source: dict | None = None,
) -> None:
    """Write ``task`` to directory ``path``, creating it if needed.

    ``params`` records how a synthetic task family is regenerated; ``rewards``
    is the (n_rounds, n_actions) matrix of counterfactual rewards when known;
    ``source`` is free-form metadata (for example conversion settings).
    """
    if rewards is not None:
        rewards = np.asarray(rewards, dtype=float)
        if rewards.shape != task.eval_propensities.shape:
            raise ValueError("reward matrix must be (n_rounds, n_actions)")
    os.makedirs(path, exist_ok=True)

    log = task.logging
    d_x = log.contexts.shape[1]
    header = (
        [f"context_{j}" for j in range(d_x)]
        + ["action", "reward"]
        + [f"prop_b_{a}" for a in range(task.n_actions)]
    )
    rows = (
        list(log.contexts[t]) + [int(log.actions[t]), float(log.rewards[t])] + list(log.propensities[t])
        for t in range(task.n_rounds)
    )
    write_csv(os.path.join(path, _LOGGING), header, rows)
    write_csv(
        os.path.join(path, _EVALUATION),
        [f"prop_e_{a}" for a in range(task.n_actions)],
        task.eval_propensities,
    )
    if rewards is not None:
        write_csv(
            os.path.join(path, _REWARDS),
            [f"reward_{a}" for a in range(task.n_actions)],
            rewards,
        )

    manifest = {
        "format": TASK_FORMAT,
        "version": TASK_FORMAT_VERSION,
        "n_rounds": task.n_rounds,
        "n_actions": task.n_actions,
        "d_x": d_x,
        "has_reward_matrix": rewards is not None,
        "generator": dataclasses.asdict(params) if params is not None else None,
    }
    if source is not None:
        manifest["source"] = source
    with open(os.path.join(path, _MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_task_dir(path: str) -> TaskBundle:
    """Read a directory written by :func:`save_task_dir`."""
    manifest_path = os.path.join(path, _MANIFEST)
    if not os.path.isfile(manifest_path):
        raise FileNotFoundError(f"{manifest_path}: not a task directory (no manifest)")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != TASK_FORMAT:
        raise ValueError(f"{manifest_path}: not a task manifest")
    version = manifest.get("version")
    if version != TASK_FORMAT_VERSION:
        raise ValueError(
            f"{manifest_path}: format version {version}, this build reads version {TASK_FORMAT_VERSION}"
        )

    n_actions = int(manifest["n_actions"])
    d_x = int(manifest["d_x"])

    header, raw = read_csv(os.path.join(path, _LOGGING))
    expected = (
        [f"context_{j}" for j in range(d_x)]
        + ["action", "reward"]
        + [f"prop_b_{a}" for a in range(n_actions)]
    )
    if header != expected:
        raise ValueError(f"{path}: logging.csv columns do not match the manifest shapes")
    table = np.array(raw, dtype=float)
    if table.ndim != 2 or table.shape[0] == 0:
        raise ValueError(f"{path}: logging.csv holds no rounds")
    contexts = table[:, :d_x]
    actions = table[:, d_x].astype(np.int64)
    rewards_logged = table[:, d_x + 1]
    propensities = table[:, d_x + 2 :]

    header_e, raw_e = read_csv(os.path.join(path, _EVALUATION))
    if header_e != [f"prop_e_{a}" for a in range(n_actions)]:
        raise ValueError(f"{path}: evaluation.csv columns do not match the manifest shapes")
    eval_propensities = np.array(raw_e, dtype=float)
    if eval_propensities.shape[0] != table.shape[0]:
        raise ValueError(f"{path}: evaluation.csv row count differs from logging.csv")

    reward_matrix = None
    if manifest.get("has_reward_matrix"):
        header_r, raw_r = read_csv(os.path.join(path, _REWARDS))
        if header_r != [f"reward_{a}" for a in range(n_actions)]:
            raise ValueError(f"{path}: rewards.csv columns do not match the manifest shapes")
        reward_matrix = np.array(raw_r, dtype=float)
        if reward_matrix.shape != eval_propensities.shape:
            raise ValueError(f"{path}: rewards.csv shape differs from the propensity tables")

    params = None
    if manifest.get("generator") is not None:
        record = dict(manifest["generator"])
        record["beta_b"] = tuple(record["beta_b"])
        params = TaskGenParams(**record)

    task = OpeTask(
        logging=LoggingDataset(
            contexts=contexts,
            actions=actions,
            rewards=rewards_logged,
            propensities=propensities,
        ),
        eval_propensities=eval_propensities,
    )
    return TaskBundle(task=task, params=params, rewards=reward_matrix, manifest=manifest)
