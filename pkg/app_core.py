from __future__ import annotations

import os
from collections.abc import Sequence
from io import BytesIO
from pathlib import Path

import pandas as pd
import streamlit as st
from dotenv import load_dotenv

from cqnls.storage import read_csv, read_record

RESULTS_DIR_ENV = "CQNLS_RESULTS_DIR"
DEFAULT_RESULTS_DIR = "results"
SOLUTION_FILES = ("u1", "u2", "u3")
SOLUTION_LABELS = {"u1": "local minimiser", "u2": "global minimiser", "u3": "mountain-pass saddle"}
TRAJECTORY_GLOB = "*trajectory*.csv"
PATH_FILE = "path.csv"
RESULT_PAGES = ("home", "solutions", "path", "trajectories")


def default_results_dir() -> Path:
    # Results directory from .env / environment with a safe fallback.
    load_dotenv(dotenv_path=".env")
    return Path(os.getenv(RESULTS_DIR_ENV) or DEFAULT_RESULTS_DIR)


def load_record(path: Path) -> dict[str, str]:
    # Read a key=value record and return {} when it is missing or unreadable.
    if not path.exists():
        return {}

    try:
        return read_record(path)
    except (OSError, UnicodeDecodeError):
        return {}


def load_summary(directory: Path) -> dict[str, str]:
    return load_record(directory / "summary.txt")


def load_sidecar(directory: Path, name: str) -> dict[str, str]:
    return load_record(directory / f"{name}.txt")


def load_table(path: Path) -> pd.DataFrame | None:
    # Read a CSV table; None means "nothing to show".
    if not path.exists():
        return None

    try:
        return read_csv(path)
    except (OSError, ValueError):
        return None


def split_summary(summary: dict[str, str]) -> tuple[pd.DataFrame, pd.DataFrame]:
    # Separate check.* entries from plain values for two display tables.
    checks = [
        {"check": key.removeprefix("check."), "result": value}
        for key, value in summary.items()
        if key.startswith("check.")
    ]
    values = [
        {"quantity": key, "value": value}
        for key, value in summary.items()
        if not key.startswith("check.")
    ]
    return pd.DataFrame(values, columns=["quantity", "value"]), pd.DataFrame(checks, columns=["check", "result"])


def solution_table(directory: Path) -> pd.DataFrame:
    # One row per stored solution, built from the sidecar records.
    rows = []
    for name in SOLUTION_FILES:
        sidecar = load_sidecar(directory, name)
        if sidecar:
            rows.append({"solution": name, "role": SOLUTION_LABELS[name], **sidecar})
    return pd.DataFrame(rows)


def trajectory_files(directory: Path) -> list[Path]:
    if not directory.is_dir():
        return []
    return sorted(directory.glob(TRAJECTORY_GLOB))


def render_downloads(frame: pd.DataFrame, stem: str) -> None:
    # XLSX and CSV exports of a displayed table.
    excel_buffer = BytesIO()
    frame.to_excel(excel_buffer, index=False)

    xlsx_col, csv_col = st.columns(2)
    xlsx_col.download_button(
        "Download XLSX",
        data=excel_buffer.getvalue(),
        file_name=f"{stem}.xlsx",
        mime="application/vnd.openxmlformats-officedocument.spreadsheetml.sheet",
        key=f"xlsx_{stem}",
    )
    csv_col.download_button(
        "Download CSV",
        data=frame.to_csv(index=False, lineterminator="\n").encode("utf-8"),
        file_name=f"{stem}.csv",
        mime="text/csv",
        key=f"csv_{stem}",
    )


def init_app_state() -> None:
    # Initialize session keys exactly once per browser session.
    if "results_dir" not in st.session_state:
        st.session_state.results_dir = str(default_results_dir())
    st.session_state.setdefault("page_focus", None)


def current_results_dir() -> Path:
    return Path(st.session_state.get("results_dir") or DEFAULT_RESULTS_DIR)


def page_state(page_key: str, focus: str | None = None) -> dict[str, str | None]:
    # Session values selecting a results page and, optionally, one solution or trajectory on it.
    if page_key not in RESULT_PAGES:
        raise ValueError(f"unknown results page {page_key!r}")
    return {"active_page": page_key, "page_focus": focus}


def open_results_page(page_key: str, focus: str | None = None) -> None:
    st.session_state.update(page_state(page_key, focus))
    st.rerun()


def focused_index(names: Sequence[str], focus: str | None) -> int:
    return names.index(focus) if focus in names else 0


def first_failing_solution(summary: dict[str, str]) -> str | None:
    # u1/u2/u3 in order, by their check.<name>.* entries in the run summary.
    for name in SOLUTION_FILES:
        prefix = f"check.{name}."
        if any(key.startswith(prefix) and value != "pass" for key, value in summary.items()):
            return name
    return None
