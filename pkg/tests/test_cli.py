import json

import pytest

from dna_rl.launcher import EXIT_CONFIG, EXIT_OK, EXIT_USAGE, build_configs, build_parser, cli, read_config_file

TINY = """
[dna]
agents = 4
horizon = 16
mb_policy = 32
mb_value = 16
mb_distil = 16
hidden_widths = [16, 16]
total_interactions = 128
probe_b_small = 4
probe_b_big = 64
lr = 1e-3
gamma = 0.99

[env]
name = "gridworld"   # inline comments are allowed
grid_size = 4
warmup_max_steps = 20

[interference]
sigma1_grid = [0.1, 100.0]
joint_hidden = [8, 8]
dual_hidden = [8, 8]
train_steps = 3
batch_size = 8
eval_grid_size = 50

[sweep]
lambda_pi_grid = [0.8]
lambda_v_grid = [0.95]
comparison_cells = false
e_pi_grid = [1]
e_v_grid = [1]
e_d_grid = [0]
seeds = 1
"""


@pytest.fixture
def tiny_file(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY)
    return str(path)


def test_help_exits_cleanly(capsys):
    assert cli(["--help"]) == EXIT_OK


def test_unknown_flag_is_usage_error(tmp_path, capsys):
    assert cli(["train", "--bogus", "--out-dir", str(tmp_path / "out")]) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_missing_subcommand_is_usage_error():
    assert cli([]) == EXIT_USAGE


def test_missing_config_file(tmp_path):
    out = tmp_path / "out"
    assert cli(["train", "--config", str(tmp_path / "nope.ini"), "--out-dir", str(out)]) == EXIT_CONFIG
    assert not out.exists()


def test_invalid_config_value(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text("[dna]\ngamma = 1.5\n")
    out = tmp_path / "out"
    assert cli(["train", "--config", str(path), "--out-dir", str(out)]) == EXIT_CONFIG
    assert "gamma" in capsys.readouterr().err
    assert not out.exists()


def test_unknown_section(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[model]\nwidth = 3\n")
    assert cli(["train", "--config", str(path), "--out-dir", str(tmp_path / "out")]) == EXIT_CONFIG


def test_read_config_file(tiny_file):
    sections = read_config_file(tiny_file)
    assert sections["env"]["name"] == '"gridworld"'
    assert sections["dna"]["hidden_widths"] == "[16, 16]"


def test_flags_override_file(tiny_file):
    args = build_parser().parse_args(["sweep-lambda", "--config", tiny_file, "--seed", "9", "--mode", "ppo_joint"])
    dna, env, interference, sweep = build_configs(args)
    assert dna.seed == 9 and dna.mode == "ppo_joint"
    assert env.name == "gridworld" and env.grid_size == 4
    assert interference.base_seed == 9
    assert sweep.seeds == 1


def test_preset_is_applied_under_file_values(tiny_file):
    args = build_parser().parse_args(["train", "--config", tiny_file, "--preset", "ppo_basic"])
    dna = build_configs(args)[0]
    assert dna.mode == "ppo_joint"
    assert dna.agents == 4


def test_train_is_reproducible(tiny_file, tmp_path, capsys):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert cli(["train", "--config", tiny_file, "--seed", "3", "--out-dir", str(out)]) == EXIT_OK
    for name in ("metrics.jsonl", "metrics.csv", "final.ckpt", "manifest.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    manifest = json.loads((outs[0] / "manifest.json").read_text())
    assert manifest["experiment"] == "train"
    assert manifest["seeds"] == [3]
    assert manifest["config"]["dna"]["agents"] == 4
    assert "interactions=128" in capsys.readouterr().out


def test_evaluate_checkpoint(tiny_file, tmp_path):
    run = tmp_path / "run"
    assert cli(["train", "--config", tiny_file, "--out-dir", str(run)]) == EXIT_OK
    out = tmp_path / "eval"
    code = cli(["evaluate", "--checkpoint", str(run / "final.ckpt"), "--episodes", "2", "--out-dir", str(out)])
    assert code == EXIT_OK
    lines = (out / "evaluation.csv").read_text().splitlines()
    assert lines[0] == "checkpoint,episodes,mean_return"
    assert lines[1].startswith("final.ckpt,2,")


def test_evaluate_requires_checkpoint(tmp_path):
    assert cli(["evaluate", "--out-dir", str(tmp_path / "out")]) == EXIT_USAGE


def test_evaluate_missing_checkpoint(tmp_path):
    code = cli(["evaluate", "--checkpoint", str(tmp_path / "none.ckpt"), "--out-dir", str(tmp_path / "out")])
    assert code == EXIT_CONFIG
    assert not (tmp_path / "out").exists()


def test_resume_from_missing_checkpoint(tiny_file, tmp_path):
    out = tmp_path / "run"
    code = cli(["train", "--config", tiny_file, "--resume", str(tmp_path / "none.ckpt"), "--out-dir", str(out)])
    assert code == EXIT_CONFIG
    assert not out.exists()


def test_noise_probe_writes_table(tiny_file, tmp_path):
    out = tmp_path / "noise"
    assert cli(["noise-probe", "--config", tiny_file, "--out-dir", str(out)]) == EXIT_OK
    lines = (out / "noise_scale.csv").read_text().splitlines()
    assert lines[0] == "iteration,phase,g2_hat,s_hat,ema_g2,ema_s,b_simple,sigma"
    assert len(lines) == 1 + 2 * 3


def test_interference_command(tiny_file, tmp_path):
    out = tmp_path / "interference"
    assert cli(["interference", "--config", tiny_file, "--seeds", "2", "--out-dir", str(out)]) == EXIT_OK
    lines = (out / "interference.csv").read_text().splitlines()
    assert len(lines) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seeds"] == [0, 1]


def test_sweep_commands(tiny_file, tmp_path):
    lam = tmp_path / "lambda"
    assert cli(["sweep-lambda", "--config", tiny_file, "--out-dir", str(lam)]) == EXIT_OK
    assert len((lam / "lambda_sweep.csv").read_text().splitlines()) == 2
    assert (lam / "lambda_trends.csv").exists()
    ep = tmp_path / "epochs"
    assert cli(["sweep-epochs", "--config", tiny_file, "--out-dir", str(ep)]) == EXIT_OK
    assert len((ep / "epoch_sweep.csv").read_text().splitlines()) == 4


def test_emit_plots(tiny_file, tmp_path):
    run = tmp_path / "run"
    assert cli(["train", "--config", tiny_file, "--out-dir", str(run)]) == EXIT_OK
    plots = tmp_path / "plots"
    assert cli(["emit-plots", "--runs", str(run), "--decay", "0.5", "--out-dir", str(plots)]) == EXIT_OK
    assert (plots / "training_curves.csv").exists()
    assert (plots / "noise_curves.csv").exists()
    assert "<html" in (plots / "report.html").read_text()


def test_emit_plots_missing_run(tmp_path):
    code = cli(["emit-plots", "--runs", str(tmp_path / "missing"), "--out-dir", str(tmp_path / "plots")])
    assert code == EXIT_CONFIG
    assert not (tmp_path / "plots").exists()
