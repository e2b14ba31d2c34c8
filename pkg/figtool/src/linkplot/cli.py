"""CLI: plot --csv results.csv --axis P --out fig.svg
        plot --history history.csv --out loss.svg"""

from __future__ import annotations

import sys

import click

from .render import plot_history, plot_sweep
from .table import TableError


@click.command()
@click.option("--csv", "csv_path", type=click.Path(exists=True), default=None,
              help="results.csv from the experiment harness.")
@click.option("--axis", type=click.Choice(["frames", "P", "rho"]), default=None,
              help="Sweep axis to plot from --csv.")
@click.option("--history", "history_path", type=click.Path(exists=True), default=None,
              help="Training-history CSV (tau,mean_loss,scheme).")
@click.option("--out", "out_path", required=True, type=click.Path())
def main(csv_path, axis, history_path, out_path):
    """Render a BLER sweep figure or a training-loss curve."""
    if history_path is not None:
        plot_history(history_path, out_path)
    elif csv_path is not None:
        if axis is None:
            raise click.UsageError("--axis is required with --csv")
        plot_sweep(csv_path, axis, out_path)
    else:
        raise click.UsageError("pass either --csv with --axis, or --history")
    click.echo(f"wrote {out_path}")


def entry(argv=None) -> int:
    try:
        main.main(args=argv, standalone_mode=False)
    except TableError as exc:
        click.echo(f"table error: {exc}", err=True)
        return 2
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(entry())
