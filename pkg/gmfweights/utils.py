"""
Utility functions for turning gmfweights results into tables and files.
"""

from collections.abc import Sequence
from pathlib import Path

import yaml

from gmfweights.exceptions import GridError
from gmfweights.gaussian import GridField
from gmfweights.metrics import MetricsReport
from gmfweights.scenarios import TrialRecord

__all__ = [
    "reports_to_table",
    "trials_to_table",
    "grid_to_table",
    "write_reports",
    "write_trials",
    "write_grid",
]

# We import pandas inside of the functions so that the package may
# continue working without a hard dependency on pandas.


def reports_to_table(
    reports: Sequence[MetricsReport],
) -> "pandas.DataFrame":  # pyright: ignore[reportUndefinedVariable] # noqa: F821
    """
    Convert metrics reports to a pandas DataFrame.

    Args:
        reports: Report rows, e.g. from a component sweep

    Returns:
        DataFrame with one row per report and a ``flagged_fraction`` column.
    """
    import pandas as pd

    return pd.DataFrame(
        [
            {**report.to_record(), "flagged_fraction": report.flagged_fraction}
            for report in reports
        ]
    )


def trials_to_table(
    records: Sequence[TrialRecord],
) -> "pandas.DataFrame":  # pyright: ignore[reportUndefinedVariable] # noqa: F821
    """
    Convert per-trial records to a pandas DataFrame.

    Args:
        records: Trial records from a Monte Carlo run

    Returns:
        DataFrame with trial, epoch, rmse, rmse_position, snees, kld and flagged
        columns.
    """
    import pandas as pd

    return pd.DataFrame(
        [
            {
                "trial": record.trial,
                "epoch": record.epoch,
                "rmse": record.rmse,
                "rmse_position": record.rmse_position,
                "snees": record.snees,
                "kld": record.kld,
                "flagged": record.flagged,
            }
            for record in records
        ]
    )


def grid_to_table(
    field: GridField,
) -> "pandas.DataFrame":  # pyright: ignore[reportUndefinedVariable] # noqa: F821
    """
    Flatten a grid field to ``x1, x2, density`` rows for external plotting.
    """
    import pandas as pd

    if field.values is None:
        raise GridError("field has no values")
    nodes = field.nodes()
    return pd.DataFrame(
        {"x1": nodes[:, 0], "x2": nodes[:, 1], "density": field.values.ravel()}
    )


def write_reports(reports: Sequence[MetricsReport], path: str | Path) -> Path:
    """
    Write report rows to ``path``: CSV for a ``.csv`` suffix, YAML otherwise.

    Returns:
        The written path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".csv":
        reports_to_table(reports).to_csv(path, index=False)
    else:
        records = [
            {**report.to_record(), "flagged_fraction": report.flagged_fraction}
            for report in reports
        ]
        with open(path, "w") as f:
            yaml.safe_dump({"reports": records}, f, sort_keys=False)
    return path


def write_trials(records: Sequence[TrialRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trials_to_table(records).to_csv(path, index=False)
    return path


def write_grid(field: GridField, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid_to_table(field).to_csv(path, index=False)
    return path
