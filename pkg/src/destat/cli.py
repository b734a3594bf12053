"""Command-line entry point.

Subcommands:

* ``train``         — fit a model from a YAML run config.
* ``eval``          — score a trained checkpoint on a chosen split.
* ``verify``        — exact attention-recovery identity checks.
* ``stationarity``  — per-variable unit-root statistics for CSV files.
* ``ablate``        — train/evaluate the full factor-mode grid.
* ``gen-synth``     — write a synthetic series to CSV.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .config import (
    apply_override,
    config_mapping,
    dump_config,
    load_dataset,
    load_run_config,
)
from .data import MISSING_POLICIES, SYNTHETIC_KINDS, SyntheticSpec
from .data import generate_synthetic, load_csv, make_windows, save_csv
from .errors import ConfigurationError, DegenerateSeriesError, DestatError
from .metrics import adf_statistic
from .model import MODEL_MODES, NSTransformer, load_checkpoint, save_checkpoint
from .oracle import run_verification
from .training import evaluate, train as run_training, write_history_csv

CHECKPOINT_FILE = "checkpoint.npz"
HISTORY_FILE = "history.csv"
RESOLVED_CONFIG_FILE = "config.yaml"
ABLATION_FILE = "ablation.csv"


def _cli_errors(fn):
    """Map library errors to the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigurationError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(2)
        except DestatError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
        except OSError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


@click.group()
@click.version_option(version=__version__, prog_name="destat")
def main():
    """Non-stationary transformer forecasting toolkit.

    Typical flow: describe a run in YAML, `destat train run.yaml`, then
    `destat eval run.yaml`. `destat verify` checks the attention-recovery
    identity; `destat ablate` sweeps the factor-mode grid.
    """


# ---- shared helpers ---------------------------------------------------------------


def _prepare_output_dir(path_str, force):
    path = Path(path_str)
    if path.exists():
        if not path.is_dir():
            raise ConfigurationError(
                f"output_dir: {path} exists and is not a directory"
            )
        if any(path.iterdir()) and not force:
            raise ConfigurationError(
                f"output_dir: {path} is not empty; pass --force to overwrite "
                f"its artifacts"
            )
    else:
        path.mkdir(parents=True)
    return path


def _guard_overwrite(path, force):
    if path.exists() and not force:
        raise ConfigurationError(
            f"{path} already exists; pass --force to overwrite"
        )


def _echo_epoch(row):
    click.echo(
        f"epoch {row['epoch'] + 1}: train_loss={row['train_loss']:.6f} "
        f"val_mse={row['val_mse']:.6f} val_mae={row['val_mae']:.6f}"
    )


def _load_run(config_path, overrides):
    run = load_run_config(config_path, overrides)
    dataset = load_dataset(run.data)
    return run, dataset


def _windows_for(run, dataset, model_config):
    return make_windows(
        dataset.values,
        model_config.input_len,
        model_config.pred_len,
        split=run.data.split,
    )


def _report_lines(report, heading):
    width = max(len(k) for k, _ in report.rows())
    lines = [heading]
    for key, value in report.rows():
        if isinstance(value, float):
            lines.append(f"  {key:<{width}}  {value:.6f}")
        else:
            lines.append(f"  {key:<{width}}  {value}")
    return lines


def _write_report_kv(report, path):
    with open(path, "w") as fh:
        for key, value in report.rows():
            fh.write(f"{key}={value!r}\n" if isinstance(value, float)
                     else f"{key}={value}\n")


_SET_HELP = "Override a config key, e.g. --set model.d_model=64 (repeatable)."


# ---- train ------------------------------------------------------------------------


@main.command("train")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
              help=_SET_HELP)
@click.option("--force", is_flag=True,
              help="Allow writing into a non-empty output directory.")
@_cli_errors
def cmd_train(config_path, overrides, force):
    """Train a model and write checkpoint, history, and resolved config."""
    run, dataset = _load_run(config_path, overrides)
    model_config = run.model_config(dataset.channels)
    out_dir = _prepare_output_dir(run.output_dir, force)
    groups = _windows_for(run, dataset, model_config)

    model = NSTransformer(model_config)
    base, projector = model.count_parameters()
    click.echo(
        f"dataset {dataset.name}: {dataset.length} rows x "
        f"{dataset.channels} variables; windows train={len(groups['train'])} "
        f"val={len(groups['val'])} test={len(groups['test'])}"
    )
    click.echo(f"parameters: base={base} projector={projector} mode={model_config.mode}")

    result = run_training(model, groups["train"], groups["val"], run.training,
                          log=_echo_epoch)

    save_checkpoint(model, out_dir / CHECKPOINT_FILE)
    write_history_csv(result.history, out_dir / HISTORY_FILE)
    dump_config(config_mapping(run, model_config), out_dir / RESOLVED_CONFIG_FILE)
    click.echo(
        f"best val_mse={result.best_val_mse:.6f} at epoch "
        f"{result.best_epoch + 1}"
        + (" (early stop)" if result.stopped_early else "")
    )
    click.echo(f"artifacts written to {out_dir}")


# ---- eval -------------------------------------------------------------------------


@main.command("eval")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoint", "checkpoint_path",
              type=click.Path(exists=True, dir_okay=False), default=None,
              help="Checkpoint to score (default: <output_dir>/checkpoint.npz).")
@click.option("--split", "split_name",
              type=click.Choice(["train", "val", "test"]), default="test",
              show_default=True, help="Which chronological split to score.")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
              help=_SET_HELP)
@click.option("--force", is_flag=True, help="Overwrite existing report files.")
@_cli_errors
def cmd_eval(config_path, checkpoint_path, split_name, overrides, force):
    """Evaluate a checkpoint; writes a text table and a key=value file."""
    run, dataset = _load_run(config_path, overrides)
    ckpt = (Path(checkpoint_path) if checkpoint_path
            else Path(run.output_dir) / CHECKPOINT_FILE)
    if not ckpt.is_file():
        raise ConfigurationError(
            f"checkpoint not found: {ckpt} (run `destat train` first or pass "
            f"--checkpoint)"
        )
    model = load_checkpoint(ckpt)
    if model.config.channels != dataset.channels:
        raise ConfigurationError(
            f"model.channels: checkpoint was trained on "
            f"{model.config.channels} variables but the dataset has "
            f"{dataset.channels}"
        )
    groups = _windows_for(run, dataset, model.config)
    report = evaluate(model, groups[split_name])

    out_dir = Path(run.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table_path = out_dir / f"eval_{split_name}.txt"
    kv_path = out_dir / f"eval_{split_name}.kv"
    _guard_overwrite(table_path, force)
    _guard_overwrite(kv_path, force)

    lines = _report_lines(
        report, f"checkpoint {ckpt.name}, split {split_name}, "
                f"mode {model.config.mode}")
    table_path.write_text("\n".join(lines) + "\n")
    _write_report_kv(report, kv_path)
    for line in lines:
        click.echo(line)
    click.echo(f"reports written to {table_path} and {kv_path}")


# ---- verify -----------------------------------------------------------------------


@main.command("verify")
@click.option("--instances", default=1000, show_default=True, type=int,
              help="Number of random instances to check.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--tolerance", default=1e-6, show_default=True, type=float,
              help="Max allowed deviation between raw and reconstructed maps.")
@click.option("--layers", default=1, show_default=True, type=int,
              help="Stack depth (the exact per-layer route is checked).")
@click.option("--expansion-tolerance", default=1e-9, show_default=True,
              type=float, help="Tolerance for the score-expansion identity.")
@click.option("--drop-tolerance", default=1e-10, show_default=True, type=float,
              help="Tolerance for the row-constant drop step.")
@click.option("--report", "report_path", type=click.Path(dir_okay=False),
              default=None, help="Also write the JSON report to this file.")
@_cli_errors
def cmd_verify(instances, seed, tolerance, layers, expansion_tolerance,
               drop_tolerance, report_path):
    """Check the attention-recovery identity; prints a JSON report.

    Exit 0 iff every instance passes every tolerance.
    """
    if instances < 0:
        raise ConfigurationError(f"--instances must be >= 0, got {instances}")
    if layers < 1:
        raise ConfigurationError(f"--layers must be >= 1, got {layers}")
    if instances == 0:
        click.echo("warning: 0 instances requested; nothing verified",
                   err=True)
        result = {"instances": 0, "seed": seed, "layers": layers,
                  "tolerance": tolerance, "max_deviation": 0.0,
                  "deviations": [], "failures": [], "passed": True,
                  "elapsed_seconds": 0.0,
                  "warning": "no instances requested"}
    else:
        result = run_verification(
            instances=instances, seed=seed, tolerance=tolerance, layers=layers,
            expansion_tolerance=expansion_tolerance if layers == 1 else None,
            drop_tolerance=drop_tolerance if layers == 1 else None,
        )
    text = json.dumps(result, indent=2)
    if report_path:
        Path(report_path).write_text(text + "\n")
    click.echo(text)
    if not result["passed"]:
        worst = max(
            result["failures"],
            key=lambda f: f.get("deviation",
                                f.get("expansion_deviation",
                                      f.get("drop_deviation", 0.0))),
        )
        click.echo(f"FAIL: worst instance {worst}", err=True)
        sys.exit(1)


# ---- stationarity -----------------------------------------------------------------


@main.command("stationarity")
@click.argument("csv_paths", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False))
@click.option("--missing-policy", type=click.Choice(MISSING_POLICIES),
              default="strict", show_default=True)
@click.option("--max-lag", type=int, default=None,
              help="Augmentation lag order (default: length-based rule).")
@_cli_errors
def cmd_stationarity(csv_paths, missing_policy, max_lag):
    """Per-variable and mean unit-root statistics for one or more CSVs.

    More negative statistics indicate more stationary series. With several
    files the blocks are printed in ascending order of stationarity (mean
    statistic descending).
    """
    summaries = []
    for path in csv_paths:
        dataset = load_csv(path, missing_policy=missing_policy)
        stats = []
        for j, column in enumerate(dataset.columns):
            try:
                stats.append(adf_statistic(dataset.values[:, j],
                                           max_lag=max_lag))
            except DegenerateSeriesError as exc:
                raise DegenerateSeriesError(
                    f"{path}, variable {column!r}: {exc}"
                ) from None
        mean_stat = float(np.mean([r.statistic for r in stats]))
        summaries.append((path, dataset, stats, mean_stat))

    summaries.sort(key=lambda item: -item[3])
    for path, dataset, stats, mean_stat in summaries:
        click.echo(f"{path} (T={dataset.length}, {dataset.channels} variables)")
        width = max(8, max(len(c) for c in dataset.columns))
        click.echo(f"  {'variable':<{width}}  {'lag':>4}  statistic")
        for column, res in zip(dataset.columns, stats):
            click.echo(
                f"  {column:<{width}}  {res.lag_order:>4}  {res.statistic:.6f}"
            )
        click.echo(f"  {'mean':<{width}}  {'':>4}  {mean_stat:.6f}")


# ---- ablate -----------------------------------------------------------------------


@main.command("ablate")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
              help=_SET_HELP)
@click.option("--force", is_flag=True,
              help="Allow writing into a non-empty output directory.")
@_cli_errors
def cmd_ablate(config_path, overrides, force):
    """Train and score every factor mode under one seed; emit a table."""
    run, dataset = _load_run(config_path, overrides)
    out_dir = _prepare_output_dir(run.output_dir, force)
    resolved = run.model_config(dataset.channels)
    groups = _windows_for(run, dataset, resolved)

    rows = []
    for mode in MODEL_MODES:
        model_config = run.model_config(dataset.channels, mode=mode)
        model = NSTransformer(model_config)
        click.echo(f"[{mode}] training ...")
        result = run_training(model, groups["train"], groups["val"],
                              run.training)
        report = evaluate(model, groups["test"])
        rows.append((mode, report.mse, report.mae,
                     report.relative_stationarity))
        best = f"best val_mse={result.best_val_mse:.6f}"
        click.echo(f"[{mode}] {best}; test mse={report.mse:.6f} "
                   f"mae={report.mae:.6f}")

    table_path = out_dir / ABLATION_FILE
    with open(table_path, "w") as fh:
        fh.write("mode,mse,mae,relative_stationarity\n")
        for mode, mse_v, mae_v, rel in rows:
            rel_text = "" if rel is None else repr(rel)
            fh.write(f"{mode},{mse_v!r},{mae_v!r},{rel_text}\n")
    dump_config(config_mapping(run, resolved), out_dir / RESOLVED_CONFIG_FILE)

    click.echo(f"{'mode':<22}{'mse':>12}{'mae':>12}{'rel_stationarity':>18}")
    for mode, mse_v, mae_v, rel in rows:
        rel_text = "n/a" if rel is None else f"{rel:.2f}%"
        click.echo(f"{mode:<22}{mse_v:>12.6f}{mae_v:>12.6f}{rel_text:>18}")
    click.echo(f"table written to {table_path}")


# ---- gen-synth --------------------------------------------------------------------


@main.command("gen-synth")
@click.argument("out_path", type=click.Path(dir_okay=False))
@click.option("--kind", type=click.Choice(SYNTHETIC_KINDS), required=True)
@click.option("--length", type=int, required=True)
@click.option("--channels", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--param", "params", multiple=True, metavar="KEY=VALUE",
              help="Generator parameter, YAML-parsed value (repeatable).")
@click.option("--force", is_flag=True, help="Overwrite an existing file.")
@_cli_errors
def cmd_gen_synth(out_path, kind, length, channels, seed, params, force):
    """Generate a synthetic series and write it as CSV."""
    out = Path(out_path)
    _guard_overwrite(out, force)
    param_map = {}
    for assignment in params:
        apply_override(param_map, assignment)
    spec = SyntheticSpec(kind=kind, length=length, channels=channels,
                         seed=seed, params=param_map)
    dataset = generate_synthetic(spec)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True)
    save_csv(dataset, out)
    click.echo(f"wrote {out}: {dataset.length} rows x "
               f"{dataset.channels} variables ({kind}, seed {seed})")


if __name__ == "__main__":
    main()
