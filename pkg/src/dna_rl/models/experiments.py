"""Experiment harnesses: interference study, lambda / epoch sweeps, plot data

Every harness takes config objects, runs its cells (optionally in a process
pool with one single-threaded worker per cell), and returns plain row dicts
that the CLI writes as CSV. Results are merged in cell order, so the output
does not depend on the number of workers.
"""
import csv
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import nn_core, objectives
from .configs import DnaConfig, EnvConfig, InterferenceSpec
from .trainer import train
from ..utils.config_manager import config as app_config
from ..utils.metrics import read_events, write_table

log = logging.getLogger(__name__)

INTERFERENCE_FIELDS = [
    "sigma1",
    "joint_t1_mse",
    "joint_t1_se",
    "joint_t2_mse",
    "joint_t2_se",
    "dual_t1_mse",
    "dual_t1_se",
    "dual_t2_mse",
    "dual_t2_se",
    "n_seeds",
    "n_failed",
]
LAMBDA_FIELDS = [
    "cell",
    "lambda_pi",
    "lambda_v",
    "seed",
    "score",
    "sigma_policy",
    "sigma_value",
    "sigma_distil",
    "interactions",
]
EPOCH_FIELDS = ["param", "value", "seed", "e_pi", "e_v", "e_d", "score", "interactions"]
PLOT_FIELDS = ["step", "metric", "value", "seed", "smoothed"]
NOISE_FIELDS = ["iteration", "phase", "g2_hat", "s_hat", "ema_g2", "ema_s", "b_simple", "sigma"]


@dataclass
class RunManifest:
    """What a run is, written before any training starts

    Attributes:
        experiment (str): subcommand / experiment id
        config (dict): {section: {field: value}} snapshot
        seeds (list): every seed the run will use
        config_hash (str): sha256 over the config snapshot
        outputs (list): file names the run will produce
        code_version (str): package version
    """

    experiment: str
    config: dict
    seeds: list
    config_hash: str
    outputs: list = field(default_factory=list)
    code_version: str = ""

    def to_dict(self):
        return asdict(self)


def combined_hash(*configs):
    """Hash of several configs, stable in argument order"""
    digest = hashlib.sha256()
    for cfg in configs:
        digest.update(cfg.content_hash().encode("ascii"))
    return digest.hexdigest()


def _map(fn, jobs, workers):
    """Run ``fn`` over ``jobs`` in order, in a process pool when workers > 1"""
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(job) for job in jobs]


def standard_error(values):
    """sample std / sqrt(n); NaN for fewer than two values"""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return float("nan")
    return float(np.std(values, ddof=1) / math.sqrt(values.size))


# Interference: two regression targets learned jointly or by two networks

INTERFERENCE_HEADS = ("t1", "t2")
OUTPUT_GAIN = 0.01


def interference_targets(x, freq):
    """Noise-free truths F1 = sin(freq x), F2 = cos(freq x)"""
    return np.sin(freq * x), np.cos(freq * x)


def interference_specs(kind, spec):
    """NetSpecs for the joint model (one net, two heads) or the dual model"""
    common = {"activation": "relu", "init_scheme": "orthogonal"}
    if kind == "joint":
        heads = tuple((name, 1) for name in INTERFERENCE_HEADS)
        gains = tuple((name, OUTPUT_GAIN) for name in INTERFERENCE_HEADS)
        return [nn_core.NetSpec(1, spec.joint_hidden, heads, head_gains=gains, **common)]
    if kind == "dual":
        return [
            nn_core.NetSpec(1, spec.dual_hidden, ((name, 1),), head_gains=((name, OUTPUT_GAIN),), **common)
            for name in INTERFERENCE_HEADS
        ]
    raise ValueError(f"kind must be 'joint' or 'dual'. Got {kind!r}")


class _Sampler:
    """Noisy (x, y1, y2) mini-batches, streamed or drawn from a fixed dataset"""

    def __init__(self, spec, sigma1, rng):
        self.spec = spec
        self.sigma1 = sigma1
        self.rng = rng
        self.dataset = None
        if spec.dataset_size:
            self.dataset = self._draw(spec.dataset_size)

    def _draw(self, n):
        spec = self.spec
        x = self.rng.uniform(spec.domain_low, spec.domain_high, size=n)
        f1, f2 = interference_targets(x, spec.freq)
        y1 = f1 + self.sigma1 * self.rng.standard_normal(n)
        y2 = f2 + spec.sigma2 * self.rng.standard_normal(n)
        return x, y1, y2

    def batch(self):
        if self.dataset is None:
            return self._draw(self.spec.batch_size)
        idx = self.rng.integers(0, self.spec.dataset_size, size=self.spec.batch_size)
        return tuple(arr[idx] for arr in self.dataset)


def train_interference_model(kind, spec, sigma1, seed):
    """Train one joint or dual model and return (t1_mse, t2_mse) on the eval grid

    Both kinds see the same data stream for a given seed. Divergence gives
    NaN MSEs rather than an error.
    """
    init_seq, data_seq = np.random.SeedSequence(seed).spawn(2)
    init_rng = np.random.default_rng(init_seq)
    nets = [(s, nn_core.ParameterBlock(nn_core.init_params(s, init_rng))) for s in interference_specs(kind, spec)]
    sampler = _Sampler(spec, sigma1, np.random.default_rng(data_seq))
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(spec.train_steps):
            x, y1, y2 = sampler.batch()
            obs = x[:, None]
            targets = {"t1": y1, "t2": y2}
            for net_spec, block in nets:
                outputs, cache = nn_core.forward_with_cache(net_spec, block.params, obs)
                head_grads = {}
                for name in net_spec.head_names:
                    pred = outputs[name][:, 0]
                    if not np.all(np.isfinite(pred)):
                        return float("nan"), float("nan")
                    loss = objectives.value_mse_loss(pred, targets[name])
                    head_grads[name] = loss.head_grads[objectives.VALUE_HEAD]
                grads = nn_core.backward(net_spec, block.params, obs, head_grads, cache)
                if spec.grad_clip:
                    grads = nn_core.clip_global_grad_norm(grads, spec.grad_clip)
                block.grads[:] = grads
                nn_core.adam_step(block, spec.lr)

        grid = np.linspace(spec.domain_low, spec.domain_high, spec.eval_grid_size)
        truths = dict(zip(INTERFERENCE_HEADS, interference_targets(grid, spec.freq)))
        mse = {}
        for net_spec, block in nets:
            outputs = nn_core.forward(net_spec, block.params, grid[:, None])
            for name in net_spec.head_names:
                diff = outputs[name][:, 0] - truths[name]
                mse[name] = float(np.mean(diff * diff))
    return mse["t1"], mse["t2"]


def _interference_cell(job):
    spec_dict, sigma1, seed = job
    spec = InterferenceSpec(**spec_dict)
    joint = train_interference_model("joint", spec, sigma1, seed)
    dual = train_interference_model("dual", spec, sigma1, seed)
    return sigma1, seed, joint, dual


def run_interference(spec, workers=1, sink=None):
    """Joint vs dual MSE on both tasks for every sigma1, aggregated over seeds

    Returns:
        [dict]: one row per sigma1 with means, standard errors and failures
    """
    seeds = [spec.base_seed + k for k in range(spec.seeds)]
    jobs = [(spec.to_dict(), sigma1, seed) for sigma1 in spec.sigma1_grid for seed in seeds]
    log.info("Interference: %s sigma1 values x %s seeds", len(spec.sigma1_grid), len(seeds))
    results = _map(_interference_cell, jobs, workers)

    rows = []
    for sigma1 in spec.sigma1_grid:
        cells = [r for r in results if r[0] == sigma1]
        row = {"sigma1": sigma1, "n_seeds": len(cells)}
        failed = set()
        for kind, pos in (("joint", 2), ("dual", 3)):
            for t, task in enumerate(("t1", "t2")):
                values = np.array([c[pos][t] for c in cells], dtype=np.float64)
                failed.update(c[1] for c, v in zip(cells, values) if not np.isfinite(v))
                finite = values[np.isfinite(values)]
                row[f"{kind}_{task}_mse"] = float(finite.mean()) if finite.size else float("nan")
                row[f"{kind}_{task}_se"] = standard_error(finite)
        row["n_failed"] = len(failed)
        if failed:
            log.warning("sigma1=%s: %s seed(s) diverged", sigma1, len(failed))
        if sink is not None:
            sink.write("interference", **row)
        rows.append(row)
    return rows


def interference_separation(row, task="t2"):
    """(joint - dual) MSE gap in units of the combined standard error"""
    gap = row[f"joint_{task}_mse"] - row[f"dual_{task}_mse"]
    se = math.sqrt(row[f"joint_{task}_se"] ** 2 + row[f"dual_{task}_se"] ** 2)
    if se == 0.0:
        return math.inf if gap > 0 else (-math.inf if gap < 0 else 0.0)
    return gap / se


# Training sweeps


def _train_cell(job):
    """Train one configuration and report the score and end-of-run noise scales"""
    config_dict, env_dict = job
    config = DnaConfig(**config_dict)
    env_config = EnvConfig(**env_dict)
    state = train(config, env_config)
    score = state.recent_mean_return()
    sigmas = state.probes.sigmas() if state.probes is not None else {}
    return {
        "score": float("nan") if score is None else score,
        "sigma_policy": sigmas.get("policy"),
        "sigma_value": sigmas.get("value"),
        "sigma_distil": sigmas.get("distil"),
        "interactions": state.interactions,
    }


def lambda_cells(base_config, sweep):
    """(lambda_pi, lambda_v) pairs in run order, duplicates removed"""
    if sweep.lambda_layout == "grid":
        cells = [(lp, lv) for lp in sweep.lambda_pi_grid for lv in sweep.lambda_v_grid]
    else:
        cells = [(lp, base_config.lambda_v) for lp in sweep.lambda_pi_grid]
        cells += [(base_config.lambda_pi, lv) for lv in sweep.lambda_v_grid]
    if sweep.comparison_cells:
        cells += [(0.8, 0.95), (0.8, 0.8), (0.95, 0.95)]
    seen = set()
    unique = []
    for cell in cells:
        if cell not in seen:
            seen.add(cell)
            unique.append(cell)
    return unique


def run_lambda_sweep(base_config, env_config, sweep, workers=1, sink=None):
    """Train every (lambda_pi, lambda_v) cell for ``sweep.seeds`` seeds

    Probes are forced on so each row carries end-of-training sigma values.

    Returns:
        [dict]: one row per (cell, seed)
    """
    cells = lambda_cells(base_config, sweep)
    jobs, keys = [], []
    for i, (lp, lv) in enumerate(cells):
        for s in range(sweep.seeds):
            seed = base_config.seed + s
            cfg = base_config.replace(lambda_pi=lp, lambda_v=lv, seed=seed, probe_enabled=True)
            jobs.append((cfg.to_dict(), env_config.to_dict()))
            keys.append({"cell": i, "lambda_pi": lp, "lambda_v": lv, "seed": seed})
    log.info("Lambda sweep: %s cells x %s seeds", len(cells), sweep.seeds)
    rows = []
    for key, result in zip(keys, _map(_train_cell, jobs, workers)):
        row = dict(key)
        row.update(result)
        if sink is not None:
            sink.write("sweep", **row)
        rows.append(row)
    return rows


def _axis_trend(rows, axis, fixed_name, fixed_value, sigma_key):
    means = {}
    for row in rows:
        if row[fixed_name] != fixed_value or row[sigma_key] is None:
            continue
        means.setdefault(row[axis], []).append(row[sigma_key])
    xs = sorted(means)
    if len(xs) < 3:
        return float("nan")
    ys = [float(np.mean(means[x])) for x in xs]
    rho, _ = stats.spearmanr(xs, ys)
    return float(rho)


def lambda_trends(rows, base_config):
    """Spearman rho of seed-averaged sigma_pi vs lambda_pi and sigma_V vs lambda_v

    Each trend uses the cells on its own axis, with the other lambda at the
    base config's value.
    """
    return {
        "rho_policy": _axis_trend(rows, "lambda_pi", "lambda_v", base_config.lambda_v, "sigma_policy"),
        "rho_value": _axis_trend(rows, "lambda_v", "lambda_pi", base_config.lambda_pi, "sigma_value"),
    }


def run_epoch_sweep(base_config, env_config, sweep, workers=1, sink=None):
    """One-at-a-time sweep of E_pi, E_V and E_D holding the others fixed

    Returns:
        [dict]: one row per (param, value, seed); every row uses the same budget
    """
    grids = (("e_pi", sweep.e_pi_grid), ("e_v", sweep.e_v_grid), ("e_d", sweep.e_d_grid))
    hold = sweep.hold_epochs
    jobs, keys = [], []
    for param, grid in grids:
        for value in grid:
            epochs = {"e_pi": hold, "e_v": hold, "e_d": hold, param: value}
            for s in range(sweep.seeds):
                seed = base_config.seed + s
                cfg = base_config.replace(seed=seed, **epochs)
                jobs.append((cfg.to_dict(), env_config.to_dict()))
                keys.append({"param": param, "value": value, "seed": seed, **epochs})
    log.info("Epoch sweep: %s runs", len(jobs))
    rows = []
    for key, result in zip(keys, _map(_train_cell, jobs, workers)):
        row = dict(key)
        row["score"] = result["score"]
        row["interactions"] = result["interactions"]
        if sink is not None:
            sink.write("sweep", **row)
        rows.append(row)
    return rows


# Plot data


def ema_smooth(values, decay):
    """s_0 = v_0, s_t = decay * s_{t-1} + (1 - decay) * v_t; decay 0 is identity"""
    if not 0.0 <= decay < 1.0:
        raise ValueError(f"decay must be in [0, 1). Got {decay}")
    out = []
    s = None
    for v in values:
        s = v if s is None else decay * s + (1.0 - decay) * v
        out.append(s)
    return out


def _series_rows(points, decay):
    """points: {(metric, seed): [(step, value)]} -> sorted plot rows"""
    rows = []
    for (metric, seed) in sorted(points):
        series = sorted(points[(metric, seed)], key=lambda p: p[0])
        smoothed = ema_smooth([v for _, v in series], decay)
        for (step, value), sm in zip(series, smoothed):
            rows.append({"step": step, "metric": metric, "value": value, "seed": seed, "smoothed": sm})
    return rows


def training_curve_rows(events, seed, decay):
    points = {}
    for ev in events:
        step = ev.get("interactions")
        if ev["event"] == "iteration" and ev.get("mean_return") is not None:
            points.setdefault(("mean_return", seed), []).append((step, ev["mean_return"]))
        elif ev["event"] == "phase" and "loss" in ev:
            points.setdefault((f"{ev['phase']}_loss", seed), []).append((step, ev["loss"]))
    return _series_rows(points, decay)


def noise_curve_rows(events, seed, decay):
    points = {}
    for ev in events:
        if ev["event"] == "noise" and ev.get("sigma") is not None:
            step = ev.get("interactions")
            points.setdefault((f"sigma_{ev['phase']}", seed), []).append((step, ev["sigma"]))
            points.setdefault((f"b_simple_{ev['phase']}", seed), []).append((step, ev["b_simple"]))
    return _series_rows(points, decay)


def noise_table_rows(events):
    """Rows for noise_scale.csv, in stream order"""
    return [
        {key: ev.get(key) for key in NOISE_FIELDS}
        for ev in events
        if ev["event"] == "noise"
    ]


def sweep_bar_rows(sweep_rows, group_keys, score_key="score"):
    """Mean score and standard error per sweep cell"""
    groups = {}
    for row in sweep_rows:
        key = tuple(row[k] for k in group_keys)
        groups.setdefault(key, []).append(float(row[score_key]))
    out = []
    for key in sorted(groups):
        values = np.asarray(groups[key])
        row = dict(zip(group_keys, key))
        row.update({"mean": float(values.mean()), "se": standard_error(values), "n": values.size})
        out.append(row)
    return out


def emit_plot_data(run_dirs, out_dir, decay=0.9):
    """Write training_curves.csv and noise_curves.csv (and sweep_bars.csv when
    sweep tables are present) for the given run directories

    Output only depends on the input files, so re-running is byte-identical.

    Returns:
        dict: {file name: rows}
    """
    training, noise, bars = [], [], []
    for run_dir in sorted(run_dirs):
        manifest_path = os.path.join(run_dir, app_config.get_manifest_filename())
        seed = 0
        if os.path.exists(manifest_path):
            with open(manifest_path, encoding="utf-8") as f:
                seeds = json.load(f).get("seeds") or [0]
            seed = seeds[0]
        metrics_path = os.path.join(run_dir, app_config.get_metrics_filename())
        if os.path.exists(metrics_path):
            events = read_events(metrics_path)
            training += training_curve_rows(events, seed, decay)
            noise += noise_curve_rows(events, seed, decay)
        for name, keys in (("lambda_sweep.csv", ("lambda_pi", "lambda_v")), ("epoch_sweep.csv", ("param", "value"))):
            path = os.path.join(run_dir, name)
            if os.path.exists(path):
                bars += [dict(row, sweep=name[:-4]) for row in sweep_bar_rows(_read_csv(path), keys)]

    os.makedirs(out_dir, exist_ok=True)
    tables = {"training_curves.csv": training, "noise_curves.csv": noise}
    for name, rows in tables.items():
        write_table(os.path.join(out_dir, name), PLOT_FIELDS, rows)
    if bars:
        fields = ["sweep", "lambda_pi", "lambda_v", "param", "value", "mean", "se", "n"]
        write_table(os.path.join(out_dir, "sweep_bars.csv"), fields, bars)
        tables["sweep_bars.csv"] = bars
    log.info("Plot data written to %s", out_dir)
    return tables


def _read_csv(path):
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.DictReader(f))
    for row in rows:
        for key, value in row.items():
            try:
                row[key] = float(value)
            except (TypeError, ValueError):
                pass
    return rows
