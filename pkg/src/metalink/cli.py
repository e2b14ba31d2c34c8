"""Command-line front end: train / eval / sweep / selftest.

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import os
import sys

import click

from .autodiff import NumericError
from .config import ConfigError, TRAINED_SCHEMES, load_experiment


def _load(config_path, seed):
    cfg = load_experiment(config_path)
    if seed is not None:
        from dataclasses import replace
        cfg = replace(cfg, train=replace(cfg.train, seed=seed))
    return cfg


@click.group()
def main():
    """Link training without a channel model: simulator, trainers, BLER harness."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", default="out", show_default=True)
@click.option("--seed", type=int, default=None, help="Override the config seed.")
def train(config_path, out_dir, seed):
    """Run the scheme's training phase; write checkpoint, history and manifest."""
    from . import experiment, training

    cfg = _load(config_path, seed)
    os.makedirs(out_dir, exist_ok=True)
    if cfg.scheme not in TRAINED_SCHEMES:
        raise ConfigError(f"scheme {cfg.scheme!r} has no training phase")
    models, history = experiment.train_scheme(cfg, cfg.train.seed)
    experiment.save_trained(os.path.join(out_dir, "checkpoint.bin"), models)
    training.write_history_csv(os.path.join(out_dir, "history.csv"), history, cfg.scheme)
    experiment.write_manifest(os.path.join(out_dir, "manifest.json"), cfg,
                              [cfg.train.seed])
    click.echo(f"trained {cfg.scheme} for {cfg.train.frames} frames -> {out_dir}")


@main.command("eval")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", default="out", show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--checkpoint", type=click.Path(), default=None,
              help="Checkpoint file (defaults to OUT_DIR/checkpoint.bin).")
def eval_cmd(config_path, out_dir, seed, checkpoint):
    """Evaluate BLER for the configured scheme at the configured pilot count."""
    from . import evaluation, experiment

    cfg = _load(config_path, seed)
    os.makedirs(out_dir, exist_ok=True)
    if cfg.scheme in TRAINED_SCHEMES:
        path = checkpoint or os.path.join(out_dir, "checkpoint.bin")
        try:
            models = experiment.load_trained(path, cfg)
        except FileNotFoundError as exc:
            raise ConfigError(str(exc)) from exc
    else:
        models, _ = experiment.train_scheme(cfg, cfg.train.seed)
    record = evaluation.evaluate_bler(cfg, models)
    experiment.write_results_csv(os.path.join(out_dir, "results.csv"), [record])
    click.echo(f"{record.scheme}: P={record.P} BLER={record.bler:.5f} (+-{record.std:.5f})")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", default="out", show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=1, show_default=True,
              help="Worker processes for independent runs.")
def sweep(config_path, out_dir, seed, threads):
    """Train as needed and sweep the configured axis, writing results.csv."""
    from . import experiment

    cfg = _load(config_path, seed)
    rows = experiment.run_experiment(cfg, out_dir, threads=threads)
    click.echo(f"wrote {len(rows)} rows to {os.path.join(out_dir, 'results.csv')}")


@main.command()
def selftest():
    """Run the quick derived-oracle suite."""
    from .selftest import run_selftest

    if not run_selftest(echo=click.echo):
        raise NumericError("selftest failed", -1)
    click.echo("all selftests passed")


def entry(argv=None) -> int:
    try:
        main.main(args=argv, standalone_mode=False)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return 2
    except NumericError as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        return 3
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.exceptions.Abort:
        return 130
    return 0


if __name__ == "__main__":
    sys.exit(entry())
