"""Figure tool for the link-training harness CSVs."""

from .render import plot_history, plot_sweep
from .table import ResultTable, TableError, load_history, load_results

__all__ = ["plot_sweep", "plot_history", "load_results", "load_history",
           "ResultTable", "TableError"]

__version__ = "0.1.0"
