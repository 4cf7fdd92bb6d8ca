import json
import math

import numpy as np
import pytest

from dna_rl.models import experiments
from dna_rl.models.configs import DnaConfig, EnvConfig, InterferenceSpec, SweepConfig
from dna_rl.models.experiments import (
    EPOCH_FIELDS,
    INTERFERENCE_FIELDS,
    RunManifest,
    combined_hash,
    ema_smooth,
    emit_plot_data,
    interference_separation,
    interference_specs,
    lambda_cells,
    lambda_trends,
    noise_table_rows,
    run_epoch_sweep,
    run_interference,
    run_lambda_sweep,
    standard_error,
    sweep_bar_rows,
    train_interference_model,
)
from dna_rl.models.trainer import train
from dna_rl.utils.metrics import MetricsWriter, write_table


@pytest.fixture
def small_spec():
    return InterferenceSpec(
        sigma1_grid=(0.1, 100.0),
        joint_hidden=(8, 16),
        dual_hidden=(8, 8),
        seeds=2,
        train_steps=3,
        batch_size=16,
        eval_grid_size=200,
    )


def test_standard_error():
    assert standard_error([1.0, 2.0, 3.0]) == pytest.approx(1.0 / math.sqrt(3))
    assert math.isnan(standard_error([4.0]))


def test_interference_specs():
    spec = InterferenceSpec.desk()
    (joint,) = interference_specs("joint", spec)
    assert joint.hidden_widths == (256, 512)
    assert joint.head_names == ["t1", "t2"]
    dual = interference_specs("dual", spec)
    assert [s.head_names for s in dual] == [["t1"], ["t2"]]
    with pytest.raises(ValueError):
        interference_specs("triple", spec)


def test_untrained_models_have_half_unit_mse(small_spec):
    spec = small_spec.replace(train_steps=0, eval_grid_size=1000)
    for kind in ("joint", "dual"):
        t1, t2 = train_interference_model(kind, spec, 1.0, seed=0)
        assert t1 == pytest.approx(0.5, abs=0.05)
        assert t2 == pytest.approx(0.5, abs=0.05)


def test_dual_second_task_ignores_first_task_noise(small_spec):
    _, quiet = train_interference_model("dual", small_spec, 0.1, seed=3)
    _, loud = train_interference_model("dual", small_spec, 100.0, seed=3)
    assert quiet == loud
    _, joint_quiet = train_interference_model("joint", small_spec, 0.1, seed=3)
    _, joint_loud = train_interference_model("joint", small_spec, 100.0, seed=3)
    assert joint_quiet != joint_loud


def test_fixed_dataset_mode(small_spec):
    t1, t2 = train_interference_model("joint", small_spec.replace(dataset_size=50), 1.0, seed=0)
    assert np.isfinite(t1) and np.isfinite(t2)


def test_run_interference_rows(small_spec):
    rows = run_interference(small_spec)
    assert [r["sigma1"] for r in rows] == [0.1, 100.0]
    for row in rows:
        assert set(row) == set(INTERFERENCE_FIELDS)
        assert row["n_seeds"] == 2 and row["n_failed"] == 0
        assert row["dual_t2_se"] >= 0.0


def test_interference_separation():
    row = {"joint_t2_mse": 3.0, "joint_t2_se": 0.3, "dual_t2_mse": 1.0, "dual_t2_se": 0.4}
    assert interference_separation(row) == pytest.approx(4.0)
    row.update(joint_t2_se=0.0, dual_t2_se=0.0)
    assert interference_separation(row) == math.inf


@pytest.mark.slow
def test_joint_model_suffers_from_noisy_first_task():
    spec = InterferenceSpec.desk(sigma1_grid=(0.1, 100.0), seeds=20)
    quiet, loud = run_interference(spec, workers=4)
    assert interference_separation(loud) > 2.0
    assert abs(interference_separation(quiet)) <= 2.0


def test_lambda_cells_axis_layout():
    cells = lambda_cells(DnaConfig(), SweepConfig())
    assert len(cells) == len(set(cells)) == 9
    assert cells[0] == (0.6, 0.95)
    assert (0.8, 0.8) in cells and (0.95, 0.95) in cells


def test_lambda_cells_grid_layout():
    sweep = SweepConfig(lambda_layout="grid", lambda_pi_grid=(0.5, 0.7), lambda_v_grid=(0.9,))
    assert lambda_cells(DnaConfig(), sweep) == [(0.5, 0.9), (0.7, 0.9), (0.8, 0.95), (0.8, 0.8), (0.95, 0.95)]
    no_extra = sweep.replace(comparison_cells=False)
    assert lambda_cells(DnaConfig(), no_extra) == [(0.5, 0.9), (0.7, 0.9)]


def test_lambda_trends():
    base = DnaConfig()
    rows = []
    for lp, sigma in ((0.6, 1.0), (0.8, 2.0), (0.9, 3.0), (0.95, 5.0)):
        rows.append({"lambda_pi": lp, "lambda_v": 0.95, "sigma_policy": sigma, "sigma_value": 1.0})
    rows.append({"lambda_pi": 0.8, "lambda_v": 0.6, "sigma_policy": 9.0, "sigma_value": None})
    trends = lambda_trends(rows, base)
    assert trends["rho_policy"] == pytest.approx(1.0)
    assert math.isnan(trends["rho_value"])


def fake_cell(job):
    config_dict, _ = job
    return {
        "score": float(config_dict["seed"]),
        "sigma_policy": 1.0 if config_dict["probe_enabled"] else None,
        "sigma_value": 2.0,
        "sigma_distil": 3.0,
        "interactions": config_dict["total_interactions"],
    }


def test_lambda_sweep_rows(monkeypatch):
    monkeypatch.setattr(experiments, "_train_cell", fake_cell)
    base = DnaConfig(probe_enabled=False, seed=5)
    sweep = SweepConfig(lambda_pi_grid=(0.6, 0.9), lambda_v_grid=(0.95,), comparison_cells=False, seeds=2)
    rows = run_lambda_sweep(base, EnvConfig(), sweep)
    assert [(r["cell"], r["seed"]) for r in rows] == [(0, 5), (0, 6), (1, 5), (1, 6), (2, 5), (2, 6)]
    assert all(r["sigma_policy"] == 1.0 for r in rows)


def test_epoch_sweep_rows(monkeypatch):
    monkeypatch.setattr(experiments, "_train_cell", fake_cell)
    sweep = SweepConfig(seeds=1)
    rows = run_epoch_sweep(DnaConfig(total_interactions=1000), EnvConfig(), sweep)
    assert len(rows) == 12
    assert set(rows[0]) == set(EPOCH_FIELDS)
    assert {r["interactions"] for r in rows} == {1000}
    no_distil = [r for r in rows if r["param"] == "e_d" and r["value"] == 0]
    assert no_distil and no_distil[0]["e_pi"] == 2 and no_distil[0]["e_d"] == 0


def test_real_training_cell(tiny_config, grid_env):
    sweep = SweepConfig(lambda_pi_grid=(0.8,), lambda_v_grid=(0.95,), comparison_cells=False, seeds=1)
    (row,) = run_lambda_sweep(tiny_config, grid_env, sweep)
    assert row["interactions"] == 128
    assert (row["lambda_pi"], row["lambda_v"]) == (0.8, 0.95)


@pytest.mark.slow
def test_noise_trends_with_lambda():
    base = DnaConfig.preset("desk", total_interactions=100_000)
    sweep = SweepConfig(comparison_cells=False, seeds=3)
    rows = run_lambda_sweep(base, EnvConfig(name="cartpole"), sweep, workers=4)
    trends = lambda_trends(rows, base)
    assert trends["rho_policy"] > 0.0
    assert trends["rho_value"] < 0.0


def test_ema_smooth():
    assert ema_smooth([1.0, 5.0, 3.0], 0.0) == [1.0, 5.0, 3.0]
    assert ema_smooth([2.0, 4.0, 0.0], 0.5) == [2.0, 3.0, 1.5]
    with pytest.raises(ValueError):
        ema_smooth([1.0], 1.0)


def test_sweep_bar_rows():
    rows = [
        {"param": "e_pi", "value": 1, "score": 1.0},
        {"param": "e_pi", "value": 1, "score": 3.0},
        {"param": "e_v", "value": 2, "score": 5.0},
    ]
    bars = sweep_bar_rows(rows, ("param", "value"))
    assert bars[0] == {"param": "e_pi", "value": 1, "mean": 2.0, "se": pytest.approx(1.0), "n": 2}
    assert math.isnan(bars[1]["se"])


def test_manifest_and_hash():
    a, b = DnaConfig(), EnvConfig()
    assert combined_hash(a, b) == combined_hash(DnaConfig(), EnvConfig())
    assert combined_hash(a, b) != combined_hash(b, a)
    manifest = RunManifest("train", {"dna": a.to_dict()}, [0], combined_hash(a, b))
    assert json.loads(json.dumps(manifest.to_dict()))["seeds"] == [0]


@pytest.fixture
def run_dir(tmp_path, tiny_config, grid_env):
    out = tmp_path / "run"
    with MetricsWriter(str(out)) as sink:
        train(tiny_config, grid_env, sink=sink)
    (out / "manifest.json").write_text(json.dumps({"seeds": [tiny_config.seed]}))
    write_table(
        str(out / "lambda_sweep.csv"),
        ["cell", "lambda_pi", "lambda_v", "seed", "score"],
        [
            {"cell": 0, "lambda_pi": 0.8, "lambda_v": 0.95, "seed": 0, "score": 1.0},
            {"cell": 0, "lambda_pi": 0.8, "lambda_v": 0.95, "seed": 1, "score": 0.5},
        ],
    )
    return out


def test_plot_data_is_reproducible(run_dir, tmp_path):
    first = emit_plot_data([str(run_dir)], str(tmp_path / "plots1"))
    emit_plot_data([str(run_dir)], str(tmp_path / "plots2"))
    for name in ("training_curves.csv", "noise_curves.csv", "sweep_bars.csv"):
        a = (tmp_path / "plots1" / name).read_bytes()
        assert a == (tmp_path / "plots2" / name).read_bytes()
    header = (tmp_path / "plots1" / "training_curves.csv").read_text().splitlines()[0]
    assert header == "step,metric,value,seed,smoothed"
    metrics = {row["metric"] for row in first["training_curves.csv"]}
    assert {"policy_loss", "value_loss", "distil_loss"} <= metrics
    assert all(row["seed"] == 7 for row in first["training_curves.csv"])
    (bar,) = first["sweep_bars.csv"]
    assert bar["mean"] == pytest.approx(0.75) and bar["sweep"] == "lambda_sweep"


def test_noise_table_rows(run_dir):
    from dna_rl.utils.metrics import read_events

    rows = noise_table_rows(read_events(str(run_dir / "metrics.jsonl")))
    assert rows
    assert {r["phase"] for r in rows} == {"policy", "value", "distil"}
    assert [r["iteration"] for r in rows] == sorted(r["iteration"] for r in rows)
