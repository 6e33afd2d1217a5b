"""Task directories: bit-exact round trips and format guards."""

import json

import numpy as np
import pytest

from opeselect.bandit import TaskGenParams, generate_logging, make_environment
from opeselect.convert import convert_classification_to_bandit
from opeselect.taskdir import load_task_dir, save_task_dir

from test_convert import _blobs

PARAMS = TaskGenParams(
    n_actions=3,
    n_rounds=40,
    d_x=2,
    reward_kind="logistic",
    policy_kind_b="linear",
    policy_kind_e="linear",
    beta_b=(1.0,),
    beta_e=-0.5,
    n_gen=2,
    n_ground_truth=500,
    seed=7,
)


def _synthetic_task():
    return generate_logging(make_environment(PARAMS), 0)


def _assert_tasks_equal(a, b):
    assert np.array_equal(a.logging.contexts, b.logging.contexts)
    assert np.array_equal(a.logging.actions, b.logging.actions)
    assert np.array_equal(a.logging.rewards, b.logging.rewards)
    assert np.array_equal(a.logging.propensities, b.logging.propensities)
    assert np.array_equal(a.eval_propensities, b.eval_propensities)


def test_synthetic_round_trip_is_bit_exact(tmp_path):
    task = _synthetic_task()
    save_task_dir(tmp_path / "task", task, params=PARAMS)
    bundle = load_task_dir(tmp_path / "task")
    _assert_tasks_equal(task, bundle.task)
    assert bundle.params == PARAMS
    assert bundle.rewards is None
    assert bundle.manifest["n_rounds"] == 40
    assert bundle.manifest["n_actions"] == 3
    assert not bundle.manifest["has_reward_matrix"]


def test_converted_round_trip_keeps_the_reward_matrix(tmp_path):
    converted = convert_classification_to_bandit(_blobs(seed=3), seed=1)
    source = {"origin": "blobs", "alpha_b": 0.2, "alpha_e": 0.5}
    save_task_dir(tmp_path / "task", converted.task, rewards=converted.rewards, source=source)
    bundle = load_task_dir(tmp_path / "task")
    _assert_tasks_equal(converted.task, bundle.task)
    assert np.array_equal(bundle.rewards, converted.rewards)
    assert bundle.params is None
    assert bundle.manifest["source"] == source


def test_saving_rejects_misshapen_reward_matrices(tmp_path):
    task = _synthetic_task()
    with pytest.raises(ValueError, match=r"must be \(n_rounds, n_actions\)"):
        save_task_dir(tmp_path / "task", task, rewards=np.zeros((task.n_rounds, 4)))


def test_loading_requires_a_manifest(tmp_path):
    (tmp_path / "bare").mkdir()
    with pytest.raises(FileNotFoundError, match="not a task directory"):
        load_task_dir(tmp_path / "bare")


def test_loading_rejects_foreign_manifests(tmp_path):
    path = tmp_path / "foreign"
    path.mkdir()
    (path / "manifest.json").write_text(json.dumps({"format": "something-else"}))
    with pytest.raises(ValueError, match="not a task manifest"):
        load_task_dir(path)


def _saved_dir(tmp_path, **save_kwargs):
    path = tmp_path / "task"
    save_task_dir(path, _synthetic_task(), **save_kwargs)
    return path


def _edit_manifest(path, **changes):
    manifest = json.loads((path / "manifest.json").read_text())
    manifest.update(changes)
    (path / "manifest.json").write_text(json.dumps(manifest))


def test_loading_rejects_future_format_versions(tmp_path):
    path = _saved_dir(tmp_path)
    _edit_manifest(path, version=2)
    with pytest.raises(ValueError, match="format version 2, this build reads version 1"):
        load_task_dir(path)


def test_loading_rejects_headers_that_disagree_with_the_manifest(tmp_path):
    path = _saved_dir(tmp_path)
    logging_csv = path / "logging.csv"
    lines = logging_csv.read_text().splitlines(keepends=True)
    logging_csv.write_text(lines[0].replace("action", "arm") + "".join(lines[1:]))
    with pytest.raises(ValueError, match="logging.csv columns do not match"):
        load_task_dir(path)


def test_loading_rejects_mismatched_row_counts(tmp_path):
    path = _saved_dir(tmp_path)
    eval_csv = path / "evaluation.csv"
    lines = eval_csv.read_text().splitlines(keepends=True)
    eval_csv.write_text("".join(lines[:-1]))
    with pytest.raises(ValueError, match="row count differs"):
        load_task_dir(path)


def test_loading_rejects_empty_logs(tmp_path):
    path = _saved_dir(tmp_path)
    logging_csv = path / "logging.csv"
    header = logging_csv.read_text().splitlines(keepends=True)[0]
    logging_csv.write_text(header)
    with pytest.raises(ValueError, match="holds no rounds"):
        load_task_dir(path)


def test_loading_rejects_truncated_reward_matrices(tmp_path):
    converted = convert_classification_to_bandit(_blobs(seed=4), seed=2)
    path = tmp_path / "task"
    save_task_dir(path, converted.task, rewards=converted.rewards)
    rewards_csv = path / "rewards.csv"
    lines = rewards_csv.read_text().splitlines(keepends=True)
    rewards_csv.write_text("".join(lines[:-1]))
    with pytest.raises(ValueError, match="shape differs"):
        load_task_dir(path)
