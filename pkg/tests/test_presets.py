"""End-to-end experiment presets: report structure, determinism, guard rails."""

import json
import math

import numpy as np
import pytest

from opeselect.estimators import enumerate_candidates
from opeselect.presets import (
    ExperimentConfig,
    PRESET_NAMES,
    _fit_power_law,
    run_experiment_preset,
)

CANDIDATE_IDS = {s.estimator_id for s in enumerate_candidates()}


def _report(out_dir):
    with open(out_dir / "report.json", "r", encoding="utf-8") as fh:
        return json.load(fh)


def _point_rows(out_dir):
    lines = (out_dir / "points.csv").read_text().splitlines()
    assert lines[0].startswith("preset,sweep_value,replicate,method,selected")
    return [line.split(",") for line in lines[1:]]


def _mean_ci_keys(block):
    assert set(block) == {"mean", "lo", "hi", "n"}
    assert isinstance(block["mean"], float)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def test_config_rejects_bad_values(tmp_path):
    out = str(tmp_path)
    with pytest.raises(ValueError, match="unknown preset"):
        ExperimentConfig(preset="warmup", out_dir=out)
    with pytest.raises(ValueError, match=r"lie in \[0, 1\]"):
        ExperimentConfig(preset="classification", out_dir=out, alpha_b=1.5)
    with pytest.raises(ValueError, match="must be positive"):
        ExperimentConfig(preset="logging1", out_dir=out, n_data=0)
    with pytest.raises(ValueError, match="bootstrap_fraction"):
        ExperimentConfig(preset="classification", out_dir=out, bootstrap_fraction=0.0)
    with pytest.raises(ValueError, match="ascending order"):
        ExperimentConfig(preset="scaling", out_dir=out, sizes=(500, 250))


def test_default_task_counts_depend_on_the_preset(tmp_path):
    out = str(tmp_path)
    assert ExperimentConfig(preset="scaling", out_dir=out).resolved_n_tasks() == 1250
    assert ExperimentConfig(preset="ablation-kl", out_dir=out).resolved_n_tasks() == 600
    assert ExperimentConfig(preset="logging1", out_dir=out).resolved_n_tasks() == 400
    assert ExperimentConfig(preset="scaling", out_dir=out, n_tasks=7).resolved_n_tasks() == 7


def test_missing_inputs_are_named(tmp_path):
    with pytest.raises(FileNotFoundError, match="trained selection model"):
        run_experiment_preset(ExperimentConfig(preset="logging1", out_dir=str(tmp_path / "a")))
    with pytest.raises(FileNotFoundError, match="does not exist"):
        run_experiment_preset(
            ExperimentConfig(
                preset="logging1", out_dir=str(tmp_path / "b"),
                model_path=str(tmp_path / "nowhere.bin"),
            )
        )
    with pytest.raises(FileNotFoundError, match="labeled CSV"):
        run_experiment_preset(
            ExperimentConfig(preset="classification", out_dir=str(tmp_path / "c"))
        )
    with pytest.raises(FileNotFoundError, match="does not exist"):
        run_experiment_preset(
            ExperimentConfig(
                preset="scaling", out_dir=str(tmp_path / "d"),
                meta_path=str(tmp_path / "nowhere.csv"),
            )
        )


def test_every_preset_name_has_a_runner():
    assert set(PRESET_NAMES) == {
        "logging1", "logging2", "classification", "scaling",
        "ablation-features", "ablation-actions", "ablation-kl",
    }


# ---------------------------------------------------------------------------
# logging sweeps
# ---------------------------------------------------------------------------


def test_logging_sweep_reports_both_methods(tmp_path, tiny_corpus):
    out = tmp_path / "run"
    config = ExperimentConfig(
        preset="logging1", out_dir=str(out), seed=1, model_path=tiny_corpus.model,
        n_data=2, n_rounds=120, n_ground_truth=1500, beta_e_grid=(0.0, 3.0),
        include_pasif=True,
    )
    report = run_experiment_preset(config)
    for name in ("report.json", "points.csv", "run_info.json"):
        assert (out / name).is_file()
    written = _report(out)
    written.pop("config")
    assert written == {k: v for k, v in report.items() if k != "config"}

    assert report["temperatures_b"] == [2.0, -2.0]
    assert len(report["sweep"]) == 2
    for entry in report["sweep"]:
        assert math.isfinite(entry["true_value"])
        assert set(entry["methods"]) == {"autoope", "pasif"}
        for method in entry["methods"].values():
            _mean_ci_keys(method["regret"])
            _mean_ci_keys(method["spearman"])
    assert report["series"]["beta_e"] == [0.0, 3.0]
    assert len(report["series"]["pasif_regret_mean"]) == 2

    rows = _point_rows(out)
    assert len(rows) == 2 * 2 * 2  # sweep points x methods x realizations
    assert {row[3] for row in rows} == {"autoope", "pasif"}
    assert {row[4] for row in rows} <= CANDIDATE_IDS


def test_second_temperature_pair_skips_the_baseline_on_request(tmp_path, tiny_corpus):
    out = tmp_path / "run"
    config = ExperimentConfig(
        preset="logging2", out_dir=str(out), seed=2, model_path=tiny_corpus.model,
        n_data=1, n_rounds=100, n_ground_truth=800, beta_e_grid=(1.0,),
        include_pasif=False,
    )
    report = run_experiment_preset(config)
    assert report["temperatures_b"] == [3.0, 7.0]
    assert set(report["sweep"][0]["methods"]) == {"autoope"}
    assert len(_point_rows(out)) == 1


# ---------------------------------------------------------------------------
# meta-dataset presets
# ---------------------------------------------------------------------------


def _scaling_config(out, corpus, seed=4):
    return ExperimentConfig(
        preset="scaling", out_dir=str(out), seed=seed, meta_path=corpus.meta,
        sizes=(3, 6, 10), budget=2,
    )


def test_scaling_traces_regret_against_training_size(tmp_path, tiny_corpus):
    out = tmp_path / "run"
    report = run_experiment_preset(_scaling_config(out, tiny_corpus))
    assert [p["size"] for p in report["points"]] == [3, 6, 10]
    for point in report["points"]:
        _mean_ci_keys(point["regret"])
        assert point["n_groups"] == report["n_test_tasks"] * 2
    fit = report["power_law"]
    assert set(fit) == {"A", "B", "alpha", "sse"}
    assert 1e-3 <= fit["alpha"] <= 5.0
    assert len(_point_rows(out)) == 3

    info = json.loads((out / "run_info.json").read_text())
    assert info["started_unix"] <= info["finished_unix"]
    assert info["numpy"] == np.__version__


def test_identical_runs_write_identical_tables(tmp_path, tiny_corpus):
    first, second = tmp_path / "one", tmp_path / "two"
    run_experiment_preset(_scaling_config(first, tiny_corpus))
    run_experiment_preset(_scaling_config(second, tiny_corpus))
    assert (first / "points.csv").read_bytes() == (second / "points.csv").read_bytes()

    def lines_without_path(path):
        return [ln for ln in (path / "report.json").read_text().splitlines() if "out_dir" not in ln]

    assert lines_without_path(first) == lines_without_path(second)


def test_scaling_rejects_oversized_training_requests(tmp_path, tiny_corpus):
    config = ExperimentConfig(
        preset="scaling", out_dir=str(tmp_path), meta_path=tiny_corpus.meta,
        sizes=(50,), budget=2,
    )
    with pytest.raises(ValueError, match="exceeds the"):
        run_experiment_preset(config)


def test_power_law_fit_recovers_a_planted_curve():
    sizes = np.array([125.0, 250.0, 500.0, 1000.0, 2000.0])
    losses = 0.1 + 2.0 / sizes**0.7
    fit = _fit_power_law(sizes, losses)
    assert fit["alpha"] == pytest.approx(0.7, abs=0.05)
    assert fit["A"] == pytest.approx(0.1, abs=0.02)
    assert fit["sse"] < 1e-6


def test_feature_ablation_scores_each_column_group(tmp_path, tiny_corpus):
    out = tmp_path / "run"
    config = ExperimentConfig(
        preset="ablation-features", out_dir=str(out), seed=5,
        meta_path=tiny_corpus.meta, budget=2,
    )
    report = run_experiment_preset(config)
    groups = report["groups"]
    assert set(groups) == {
        "estimators-dependent", "policies-independent", "policies-dependent", "all",
    }
    assert groups["estimators-dependent"]["n_columns"] == 9
    assert groups["policies-independent"]["n_columns"] == 19
    assert groups["policies-dependent"]["n_columns"] == 33
    assert groups["all"]["n_columns"] == 43
    for block in groups.values():
        _mean_ci_keys(block["regret"])
    assert len(_point_rows(out)) == 4


def test_action_filter_keeps_small_action_tasks(tmp_path, tiny_corpus):
    config = ExperimentConfig(
        preset="ablation-actions", out_dir=str(tmp_path / "run"), seed=6,
        meta_path=tiny_corpus.meta, budget=2,
    )
    report = run_experiment_preset(config)
    assert report["filter"] == "n_actions <= 5"
    # every sampled task has at most four actions, so the filter keeps the pool
    assert report["groups"]["filtered"]["n_tasks"] == 10
    assert report["groups"]["random-matched"]["n_tasks"] == 10


def test_close_policy_filter_needs_a_rich_pool(tmp_path, tiny_corpus):
    scarce = ExperimentConfig(
        preset="ablation-kl", out_dir=str(tmp_path / "scarce"), seed=7,
        meta_path=tiny_corpus.meta, budget=2,
    )
    with pytest.raises(ValueError, match="satisfy"):
        run_experiment_preset(scarce)

    config = ExperimentConfig(
        preset="ablation-kl", out_dir=str(tmp_path / "run"), seed=7,
        meta_path=tiny_corpus.close_policy_meta, budget=2,
    )
    report = run_experiment_preset(config)
    assert report["filter"].startswith("mean KL")
    assert report["groups"]["filtered"]["n_tasks"] >= 3
    assert (
        report["groups"]["random-matched"]["n_tasks"]
        == report["groups"]["filtered"]["n_tasks"]
    )


# ---------------------------------------------------------------------------
# classification sweep
# ---------------------------------------------------------------------------


def test_classification_sweep_scores_against_the_exact_value(tmp_path, tiny_corpus):
    out = tmp_path / "run"
    config = ExperimentConfig(
        preset="classification", out_dir=str(out), seed=8,
        model_path=tiny_corpus.model, data_path=tiny_corpus.labels_csv,
        alpha_e_list=(0.0, 0.5), bootstrap_count=2, include_pasif=False,
    )
    report = run_experiment_preset(config)
    assert len(report["sweep"]) == 2
    uniform_point = report["sweep"][0]
    assert uniform_point["alpha_e"] == 0.0
    assert uniform_point["exact_value"] == pytest.approx(1.0 / 3, abs=1e-12)
    for entry in report["sweep"]:
        assert set(entry["methods"]) == {"autoope"}
        _mean_ci_keys(entry["methods"]["autoope"]["regret"])
    assert len(_point_rows(out)) == 4
