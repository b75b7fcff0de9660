from __future__ import annotations

import logging
from pathlib import Path

import altair as alt
import pandas as pd

from cqnls.storage import read_csv

logger = logging.getLogger(__name__)

PATH_CSV = "path.csv"
TRAJECTORY_GLOB = "*trajectory*.csv"


def path_profile_chart(frame: pd.DataFrame) -> alt.Chart:
    # Energy along the relaxed path, with sigma_dot on the tooltip.
    return (
        alt.Chart(frame, title="Energy along the mountain-pass path")
        .mark_line(point=True)
        .encode(
            x=alt.X("t:Q", title="path parameter t"),
            y=alt.Y("energy:Q", title="E(u)"),
            tooltip=["node_index", "t", "energy", "sigma_dot", "tau"],
        )
        .properties(width=520, height=300)
    )


def trajectory_chart(frame: pd.DataFrame) -> alt.VConcatChart:
    # Relative drifts of M, E, L over time, plus the orbit distance when recorded.
    drift = pd.DataFrame({"t": frame["t"]})
    for column in ("mass", "energy", "angmom"):
        reference = frame[column].iloc[0]
        scale = abs(reference) if column != "angmom" else abs(frame["mass"].iloc[0])
        drift[column] = (frame[column] - reference) / (scale or 1.0)
    long = drift.melt("t", var_name="quantity", value_name="relative drift")
    drifts = (
        alt.Chart(long, title="Conservation drifts")
        .mark_line()
        .encode(x="t:Q", y="relative drift:Q", color="quantity:N")
        .properties(width=520, height=220)
    )
    charts = [drifts]
    if "dist" in frame and frame["dist"].notna().any():
        charts.append(
            alt.Chart(frame, title="Orbit distance")
            .mark_line()
            .encode(x="t:Q", y=alt.Y("dist:Q", title="dist to orbit"))
            .properties(width=520, height=220)
        )
    return alt.vconcat(*charts)


def save_chart(chart: alt.TopLevelMixin, path: str | Path) -> Path | None:
    # Figures are optional; a failed export only logs.
    path = Path(path)
    try:
        chart.save(str(path))
    except Exception as error:  # noqa: BLE001
        logger.warning("could not write %s: %s", path, error)
        return None
    return path


def render_plots(output_dir: str | Path) -> list[Path]:
    output_dir = Path(output_dir)
    written: list[Path] = []
    try:
        if (output_dir / PATH_CSV).exists():
            target = save_chart(path_profile_chart(read_csv(output_dir / PATH_CSV)), output_dir / "path.png")
            written += [target] if target else []
        for csv_path in sorted(output_dir.glob(TRAJECTORY_GLOB)):
            target = save_chart(trajectory_chart(read_csv(csv_path)), csv_path.with_suffix(".png"))
            written += [target] if target else []
    except Exception as error:  # noqa: BLE001
        logger.warning("plot rendering skipped: %s", error)
    return written
