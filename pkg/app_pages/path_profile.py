import streamlit as st

from app_core import PATH_FILE, current_results_dir, load_table, render_downloads
from cqnls.plots import path_profile_chart


def render() -> None:
    # Energy profile of the relaxed path and its node table.
    st.title("⛰ Mountain Pass")
    frame = load_table(current_results_dir() / PATH_FILE)

    if frame is None or frame.empty:
        st.info("No path.csv in this directory.")
        return

    peak = frame.loc[frame["energy"].idxmax()]
    st.metric("Path maximum", f"{peak['energy']:.10g}", help=f"node {int(peak['node_index'])}")
    st.altair_chart(path_profile_chart(frame), use_container_width=True)
    st.dataframe(frame, use_container_width=True, hide_index=True)
    render_downloads(frame, "path")
