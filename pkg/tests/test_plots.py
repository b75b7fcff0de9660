from __future__ import annotations

import math

import pandas as pd

from cqnls.plots import path_profile_chart, render_plots, save_chart, trajectory_chart


def _trajectory(with_distance: bool) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "t": [0.0, 0.5, 1.0],
            "mass": [2.0, 2.0, 2.0],
            "energy": [-1.0, -1.0 + 1e-7, -1.0 - 1e-7],
            "angmom": [0.0, 1e-9, 0.0],
            "dist": [0.0, 1e-3, 2e-3] if with_distance else [math.nan] * 3,
        }
    )


def test_trajectory_chart_adds_distance_panel():
    assert len(trajectory_chart(_trajectory(True)).vconcat) == 2
    assert len(trajectory_chart(_trajectory(False)).vconcat) == 1


def test_path_profile_chart_encodes_energy():
    frame = pd.DataFrame(
        {"node_index": [0, 1], "t": [0.0, 1.0], "tau": [0.5, 1.0], "energy": [1.0, -2.0], "sigma_dot": [3.0, 9.0]}
    )
    spec = path_profile_chart(frame).to_dict()
    assert spec["encoding"]["y"]["field"] == "energy"


def test_failed_export_returns_none(tmp_path):
    chart = trajectory_chart(_trajectory(True))
    assert save_chart(chart, tmp_path / "missing" / "chart.png") is None


def test_nothing_to_render(tmp_path):
    assert render_plots(tmp_path) == []
