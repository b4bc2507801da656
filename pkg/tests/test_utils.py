import numpy as np
import pytest
import yaml

from gmfweights.exceptions import GridError
from gmfweights.gaussian import GridField
from gmfweights.metrics import MetricsReport
from gmfweights.scenarios import TrialRecord
from gmfweights.utils import (
    grid_to_table,
    reports_to_table,
    trials_to_table,
    write_grid,
    write_reports,
    write_trials,
)

pd = pytest.importorskip("pandas")

REPORTS = [
    MetricsReport("ekf:traditional", 100, 100, rmse=0.2433, kld=93.4),
    MetricsReport("ekf:improved", 100, 98, flagged_trials=2, rmse=0.2378, kld=0.82),
]


def test_reports_to_table():
    table = reports_to_table(REPORTS)

    assert list(table["method"]) == ["ekf:traditional", "ekf:improved"]
    assert table["flagged_fraction"].tolist() == pytest.approx([0.0, 0.02])
    assert table["snees"].isna().all()


def test_trials_to_table():
    records = [
        TrialRecord(0, 0, 0.1, rmse_position=0.05, snees=1.1),
        TrialRecord(1, 0, float("nan"), flagged=True),
    ]
    table = trials_to_table(records)

    assert list(table.columns) == [
        "trial",
        "epoch",
        "rmse",
        "rmse_position",
        "snees",
        "kld",
        "flagged",
    ]
    assert table["flagged"].tolist() == [False, True]


def test_grid_to_table():
    grid = GridField.linspace((0.0, 0.0), (1.0, 2.0), 3)
    values = np.arange(9.0).reshape(grid.shape)
    table = grid_to_table(grid.with_values(values))

    assert len(table) == 9
    np.testing.assert_array_equal(table["density"], values.ravel())
    assert set(table["x2"]) == {0.0, 1.0, 2.0}


def test_grid_without_values():
    with pytest.raises(GridError):
        grid_to_table(GridField.linspace((0.0, 0.0), (1.0, 1.0), 3))


def test_write_reports_csv(tmp_path):
    path = write_reports(REPORTS, tmp_path / "out" / "sweep.csv")
    table = pd.read_csv(path)

    assert table["rmse"].tolist() == pytest.approx([0.2433, 0.2378])


def test_write_reports_yaml(tmp_path):
    path = write_reports(REPORTS, tmp_path / "sweep.yaml")
    rows = yaml.safe_load(path.read_text())["reports"]

    assert rows[1]["method"] == "ekf:improved"
    assert rows[1]["flagged_fraction"] == pytest.approx(0.02)


def test_write_trials_and_grid(tmp_path):
    trials = write_trials([TrialRecord(0, 3, 0.5)], tmp_path / "trials.csv")
    assert pd.read_csv(trials)["epoch"].tolist() == [3]

    grid = GridField.linspace((0.0, 0.0), (1.0, 1.0), 2)
    dump = write_grid(grid.with_values(np.ones(grid.shape)), tmp_path / "g.csv")
    assert pd.read_csv(dump)["density"].sum() == 4.0
