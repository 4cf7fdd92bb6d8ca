import argparse
import configparser
import json
import logging
import os
import sys
from typing import Optional, Sequence, Tuple

from . import __version__
from .docs.doc_writer import write_report
from .models import experiments
from .models.configs import PRESETS, DnaConfig, EnvConfig, InterferenceSpec, SweepConfig
from .models.params import ConfigError
from .models.trainer import evaluate, load_trained_state, train
from .utils.config_manager import config
from .utils.metrics import MetricsWriter, read_events, write_json, write_table

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

SECTIONS = {
    "dna": DnaConfig,
    "env": EnvConfig,
    "interference": InterferenceSpec,
    "sweep": SweepConfig,
}
THREAD_VARS = ("OMP_NUM_THREADS", "MKL_NUM_THREADS", "OPENBLAS_NUM_THREADS")


class UsageError(Exception):
    """Bad command line; the message already includes the usage text"""


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting on bad input"""

    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def read_config_file(path: str) -> dict:
    """Read an experiment config file into {section: {key: text}}

    INI files and the flat TOML subset (``key = value`` under ``[section]``
    headers, quoted strings, bracketed lists) read the same way.

    Raises:
        FileNotFoundError: ``path`` does not exist
        ConfigError: unknown section or unparseable file
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        with open(path, encoding="utf-8") as f:
            parser.read_file(f)
    except configparser.Error as e:
        raise ConfigError("config", f"cannot parse {path}: {e}") from e
    sections = {}
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(name, f"unknown section; expected one of {sorted(SECTIONS)}")
        sections[name] = dict(parser.items(name))
    return sections


def build_configs(args: argparse.Namespace) -> Tuple[DnaConfig, EnvConfig, InterferenceSpec, SweepConfig]:
    """DnaConfig, EnvConfig, InterferenceSpec and SweepConfig from flags and file

    Raises:
        FileNotFoundError: --config names a missing file
        ConfigError: a value fails validation
    """
    sections = read_config_file(args.config) if args.config else {}

    dna_values = dict(PRESETS[args.preset]) if args.preset else {}
    dna_values.setdefault("probe_ema_decay", config.get_probe_ema_decay())
    dna_values.update(sections.get("dna", {}))
    if args.seed is not None:
        dna_values["seed"] = args.seed
    if getattr(args, "mode", None):
        dna_values["mode"] = args.mode
    dna = DnaConfig.from_mapping(dna_values)

    env = EnvConfig.from_mapping(sections.get("env", {}))

    base = InterferenceSpec.desk().to_dict() if getattr(args, "desk", False) else {}
    base.update(sections.get("interference", {}))
    if getattr(args, "seeds", None) is not None:
        base["seeds"] = args.seeds
    if args.seed is not None:
        base["base_seed"] = args.seed
    interference = InterferenceSpec.from_mapping(base)

    sweep_values = dict(sections.get("sweep", {}))
    if getattr(args, "sweep_seeds", None) is not None:
        sweep_values["seeds"] = args.sweep_seeds
    sweep = SweepConfig.from_mapping(sweep_values)
    return dna, env, interference, sweep


def _out_dir(args: argparse.Namespace) -> str:
    return args.out_dir or os.path.join(config.get_default_out_dir(), args.command)


def _check_inputs(args: argparse.Namespace, out_dir: str) -> None:
    """Fail on missing input files before anything is written under ``out_dir``

    Raises:
        FileNotFoundError: a checkpoint or run directory named on the command line is missing
    """
    checkpoint = getattr(args, "checkpoint", None) or getattr(args, "resume", None)
    if checkpoint and not os.path.isfile(checkpoint):
        raise FileNotFoundError(f"Checkpoint not found: {checkpoint}")
    if args.command == "emit-plots":
        for run_dir in args.runs or [out_dir]:
            if not os.path.isdir(run_dir):
                raise FileNotFoundError(f"Run directory not found: {run_dir}")


def _write_manifest(out_dir, experiment, configs, seeds, outputs):
    manifest = experiments.RunManifest(
        experiment=experiment,
        config={cfg.section: cfg.to_dict() for cfg in configs},
        seeds=list(seeds),
        config_hash=experiments.combined_hash(*configs),
        outputs=list(outputs),
        code_version=__version__,
    )
    write_json(os.path.join(out_dir, config.get_manifest_filename()), manifest.to_dict())
    log.info("Manifest written to %s", out_dir)
    return manifest


def _metric_outputs():
    return [config.get_metrics_filename(), config.get_metrics_csv_filename()]


def run_train(args: argparse.Namespace, configs: tuple, out_dir: str) -> int:
    dna, env, _, _ = configs
    outputs = _metric_outputs() + [config.get_final_checkpoint_name()]
    _write_manifest(out_dir, "train", (dna, env), [dna.seed], outputs)
    with MetricsWriter(out_dir) as sink:
        state = train(dna, env, out_dir=out_dir, sink=sink, resume=args.resume)
    mean = state.recent_mean_return()
    print(f"interactions={state.interactions} mean_return={'n/a' if mean is None else f'{mean:.4f}'}")
    return EXIT_OK


def run_noise_probe(args: argparse.Namespace, configs: tuple, out_dir: str) -> int:
    dna, env, _, _ = configs
    dna = dna.replace(probe_enabled=True)
    outputs = _metric_outputs() + ["noise_scale.csv", config.get_final_checkpoint_name()]
    _write_manifest(out_dir, "noise-probe", (dna, env), [dna.seed], outputs)
    with MetricsWriter(out_dir) as sink:
        state = train(dna, env, out_dir=out_dir, sink=sink, resume=args.resume)
    rows = experiments.noise_table_rows(read_events(os.path.join(out_dir, config.get_metrics_filename())))
    write_table(os.path.join(out_dir, "noise_scale.csv"), experiments.NOISE_FIELDS, rows)
    sigmas = state.probes.sigmas() if state.probes is not None else {}
    print(" ".join(f"sigma_{phase}={value}" for phase, value in sigmas.items()))
    return EXIT_OK


def run_evaluate(args: argparse.Namespace, configs: tuple, out_dir: str) -> int:
    state = load_trained_state(args.checkpoint)
    gamma = state.config.gamma if args.discounted else None
    seed = args.seed if args.seed is not None else 0
    _write_manifest(
        out_dir, "evaluate", (state.config, state.env_config), [seed], ["evaluation.csv"]
    )
    mean = evaluate(state, n_episodes=args.episodes, greedy=not args.sampled, gamma=gamma, seed=seed)
    row = {"checkpoint": os.path.basename(args.checkpoint), "episodes": args.episodes, "mean_return": mean}
    write_table(os.path.join(out_dir, "evaluation.csv"), list(row), [row])
    print(f"mean_return={mean:.6f}")
    return EXIT_OK


def run_interference_cmd(args: argparse.Namespace, configs: tuple, out_dir: str) -> int:
    spec = configs[2]
    seeds = [spec.base_seed + k for k in range(spec.seeds)]
    _write_manifest(out_dir, "interference", (spec,), seeds, ["interference.csv"])
    rows = experiments.run_interference(spec, workers=args.workers)
    write_table(os.path.join(out_dir, "interference.csv"), experiments.INTERFERENCE_FIELDS, rows)
    return EXIT_OK


def run_sweep_lambda(args: argparse.Namespace, configs: tuple, out_dir: str) -> int:
    dna, env, _, sweep = configs
    seeds = [dna.seed + s for s in range(sweep.seeds)]
    _write_manifest(out_dir, "sweep-lambda", (dna, env, sweep), seeds, ["lambda_sweep.csv", "lambda_trends.csv"])
    rows = experiments.run_lambda_sweep(dna, env, sweep, workers=args.workers)
    write_table(os.path.join(out_dir, "lambda_sweep.csv"), experiments.LAMBDA_FIELDS, rows)
    trends = experiments.lambda_trends(rows, dna)
    write_table(os.path.join(out_dir, "lambda_trends.csv"), list(trends), [trends])
    print(" ".join(f"{k}={v:.3f}" for k, v in trends.items()))
    return EXIT_OK


def run_sweep_epochs(args: argparse.Namespace, configs: tuple, out_dir: str) -> int:
    dna, env, _, sweep = configs
    seeds = [dna.seed + s for s in range(sweep.seeds)]
    _write_manifest(out_dir, "sweep-epochs", (dna, env, sweep), seeds, ["epoch_sweep.csv"])
    rows = experiments.run_epoch_sweep(dna, env, sweep, workers=args.workers)
    write_table(os.path.join(out_dir, "epoch_sweep.csv"), experiments.EPOCH_FIELDS, rows)
    return EXIT_OK


def run_emit_plots(args: argparse.Namespace, configs: tuple, out_dir: str) -> int:
    run_dirs = args.runs or [out_dir]
    decay = args.decay if args.decay is not None else config.get_smoothing_decay()
    tables = experiments.emit_plot_data(run_dirs, out_dir, decay=decay)
    manifest_path = os.path.join(sorted(run_dirs)[0], config.get_manifest_filename())
    if os.path.exists(manifest_path):
        with open(manifest_path, encoding="utf-8") as f:
            manifest = json.load(f)
        write_report(out_dir, manifest, tables)
    return EXIT_OK


COMMANDS = {
    "train": run_train,
    "evaluate": run_evaluate,
    "interference": run_interference_cmd,
    "sweep-lambda": run_sweep_lambda,
    "sweep-epochs": run_sweep_epochs,
    "noise-probe": run_noise_probe,
    "emit-plots": run_emit_plots,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="Experiment config file (.ini or .toml)")
    common.add_argument("--seed", type=int, default=None, help="Override the config seed")
    common.add_argument("--out-dir", type=str, default=None, help="Output directory")
    common.add_argument(
        "--deterministic",
        action="store_true",
        default=False,
        help="Pin BLAS/OpenMP to one thread (set before numpy loads via python -m dna_rl)",
    )
    common.add_argument(
        "--log-level",
        action="store",
        default=None,
        choices=["CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG"],
        help="Log Level",
    )
    common.add_argument("--workers", type=int, default=1, help="Worker processes for independent cells")
    common.add_argument("--preset", choices=sorted(PRESETS), default=None, help="DnaConfig preset")

    parser = _Parser(prog="dna_rl", description="Dual network actor-critic experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    for name in ("train", "noise-probe"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--resume", type=str, default=None, help="Checkpoint to resume from")

    p = sub.add_parser("evaluate", parents=[common])
    p.add_argument("--checkpoint", type=str, required=True, help="Checkpoint to evaluate")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--sampled", action="store_true", default=False, help="Sample actions instead of argmax")
    p.add_argument("--discounted", action="store_true", default=False, help="Report discounted returns")

    p = sub.add_parser("interference", parents=[common])
    p.add_argument("--seeds", type=int, default=None, help="Seeds per sigma1")
    p.add_argument("--desk", action="store_true", default=False, help="Reduced widths (256/512, 256/256)")

    p = sub.add_parser("sweep-lambda", parents=[common])
    p.add_argument("--mode", choices=["dna_dual", "ppo_joint"], default=None)
    p.add_argument("--sweep-seeds", type=int, default=None)

    p = sub.add_parser("sweep-epochs", parents=[common])
    p.add_argument("--sweep-seeds", type=int, default=None)

    p = sub.add_parser("emit-plots", parents=[common])
    p.add_argument("--runs", nargs="+", default=None, help="Run directories to read")
    p.add_argument("--decay", type=float, default=None, help="EMA smoothing decay in [0, 1)")
    return parser


def _setup_logging(level_name: Optional[str]) -> None:
    level = logging.getLevelName(level_name or config.get_default_log_level())
    logging.basicConfig(format=config.get_log_format(), level=level)


def cli(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and return its exit code

    0 success, 1 usage, 2 config, 3 runtime fault.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help / --version
        return EXIT_OK if not e.code else EXIT_USAGE

    _setup_logging(args.log_level)
    if args.deterministic:
        for var in THREAD_VARS:
            os.environ.setdefault(var, "1")

    # Configs and inputs are validated before any output directory exists
    out_dir = _out_dir(args)
    try:
        configs = build_configs(args)
        _check_inputs(args, out_dir)
    except (ConfigError, FileNotFoundError) as e:
        log.error("Config error: %s", e)
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    log.debug("Configs: %s", configs)

    try:
        os.makedirs(out_dir, exist_ok=True)
        return COMMANDS[args.command](args, configs, out_dir)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, FileNotFoundError) as e:
        log.error("Config error: %s", e)
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:
        log.exception(e)
        return EXIT_RUNTIME


def main() -> None:
    """
    Application entrypoint.

    Parses the command line, configures logging and runs the subcommand.
    Exits with the subcommand's exit code.
    """
    sys.exit(cli(sys.argv[1:]))
