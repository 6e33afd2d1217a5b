from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from opeselect.bandit import (
    DESK_SPACE,
    GeneratorSpace,
    LoggingDataset,
    OpeTask,
    TaskGenParams,
    generate_logging,
    generate_ope_task,
    make_environment,
    sample_task_params,
)

settings.register_profile(
    "fast",
    max_examples=25,
    deadline=None,  # first numba compilation can take seconds
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("fast")


def softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def make_task(
    seed: int,
    n_rounds: int | None = None,
    n_actions: int | None = None,
    d_x: int | None = None,
    equal_policies: bool = False,
    sharpness: float = 2.0,
) -> OpeTask:
    """A small random task built directly from softmax propensity rows.

    Cheaper than running the full generator and with every knob explicit, so
    property tests can shape the task however they need.
    """
    rng = np.random.default_rng(seed)
    n = n_rounds if n_rounds is not None else int(rng.integers(5, 60))
    k = n_actions if n_actions is not None else int(rng.integers(2, 6))
    d = d_x if d_x is not None else int(rng.integers(1, 4))
    contexts = rng.normal(size=(n, d))
    pb = softmax_rows(sharpness * rng.normal(size=(n, k)))
    pe = pb.copy() if equal_policies else softmax_rows(sharpness * rng.normal(size=(n, k)))
    u = rng.random(n)
    actions = np.minimum((u[:, None] > np.cumsum(pb, axis=1)).sum(axis=1), k - 1).astype(np.int64)
    rewards = rng.integers(0, 2, size=n).astype(np.float64)
    return OpeTask(LoggingDataset(contexts, actions, rewards, pb), pe)


@pytest.fixture
def two_round_task() -> OpeTask:
    """Two rounds, two actions, hand-checkable weights w = [2.0, 0.5]."""
    return OpeTask(
        logging=LoggingDataset(
            contexts=np.array([[0.0], [1.0]]),
            actions=np.array([0, 1], dtype=np.int64),
            rewards=np.array([1.0, 0.0]),
            propensities=np.array([[0.5, 0.5], [0.2, 0.8]]),
        ),
        eval_propensities=np.array([[1.0, 0.0], [0.6, 0.4]]),
    )


@pytest.fixture
def two_round_q() -> np.ndarray:
    return np.array([[0.5, 0.1], [0.3, 0.7]])


@pytest.fixture(scope="session")
def desk_task() -> OpeTask:
    task, _ = generate_ope_task(sample_task_params(5, DESK_SPACE), realization=0)
    return task


@dataclass(frozen=True)
class ArtifactCorpus:
    """Paths to a small set of prebuilt artifacts shared across test modules."""

    meta: str
    close_policy_meta: str
    model: str
    synthetic_dir: str
    synthetic_params: TaskGenParams
    converted_dir: str
    bare_dir: str
    labels_csv: str


CORPUS_SPACE = GeneratorSpace(
    n_actions=(2, 4), n_rounds=(40, 80), d_x=(1, 3), n_gen=2, n_ground_truth=500
)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory) -> ArtifactCorpus:
    """Meta-dataset, trained model, and task directories at throwaway scale.

    Building these once keeps the CLI and preset tests fast; everything is
    seeded, so the artifacts are identical on every run.
    """
    from opeselect.convert import convert_classification_to_bandit, load_classification_csv
    from opeselect.meta_model import DESK_SEARCH_SPACE, save_meta_model, train_meta_model
    from opeselect.metadataset import build_meta_dataset, read_meta_dataset
    from opeselect.reward_models import RewardModelConfig
    from opeselect.taskdir import save_task_dir

    root = tmp_path_factory.mktemp("corpus")
    fast_rm = RewardModelConfig(forest_trees=8, forest_depth=4, boosted_trees=8, logistic_iters=50)

    meta = root / "meta.csv"
    build_meta_dataset(meta, 12, seed=2, space=CORPUS_SPACE, reward_config=fast_rm)

    close_space = GeneratorSpace(
        n_actions=(2, 4), n_rounds=(40, 80), d_x=(1, 3), beta=(-0.2, 0.2),
        n_gen=2, n_ground_truth=500,
    )
    close_meta = root / "meta_close.csv"
    build_meta_dataset(close_meta, 8, seed=6, space=close_space, reward_config=fast_rm)

    X, y, task_ids, realization_ids, _ = read_meta_dataset(meta)
    model = train_meta_model(
        X, y, task_ids, realization_ids, budget=2, seed=3, space=DESK_SEARCH_SPACE
    )
    model_path = root / "model.bin"
    save_meta_model(model, model_path)

    params = TaskGenParams(
        n_actions=3, n_rounds=60, d_x=2, reward_kind="logistic",
        policy_kind_b="linear", policy_kind_e="linear", beta_b=(1.0,), beta_e=-0.5,
        n_gen=2, n_ground_truth=800, seed=13,
    )
    task = generate_logging(make_environment(params), 0)
    save_task_dir(root / "synthetic", task, params=params)
    save_task_dir(root / "bare", task)

    rng = np.random.default_rng(0)
    centers = 3.0 * rng.normal(size=(3, 2))
    features = np.vstack([centers[c] + 0.8 * rng.normal(size=(40, 2)) for c in range(3)])
    labels = np.repeat(np.arange(3), 40)
    perm = rng.permutation(120)
    labels_csv = root / "labels.csv"
    with open(labels_csv, "w", encoding="utf-8") as fh:
        fh.write("f0,f1,label\n")
        for row, lab in zip(features[perm], labels[perm]):
            fh.write(f"{float(row[0])!r},{float(row[1])!r},{int(lab)}\n")

    converted = convert_classification_to_bandit(load_classification_csv(labels_csv), seed=1)
    save_task_dir(
        root / "converted", converted.task, rewards=converted.rewards,
        source={"kind": "classification", "seed": 1},
    )

    return ArtifactCorpus(
        meta=str(meta),
        close_policy_meta=str(close_meta),
        model=str(model_path),
        synthetic_dir=str(root / "synthetic"),
        synthetic_params=params,
        converted_dir=str(root / "converted"),
        bare_dir=str(root / "bare"),
        labels_csv=str(labels_csv),
    )
