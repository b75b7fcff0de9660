import streamlit as st

from app_core import current_results_dir, focused_index, load_table, render_downloads, trajectory_files
from cqnls.plots import trajectory_chart


def render() -> None:
    # Conservation drifts and orbit distance of a recorded trajectory.
    st.title("📈 Trajectories")
    files = trajectory_files(current_results_dir())

    if not files:
        st.info("No trajectory CSVs found. Run the propagate or stability command first.")
        return

    index = focused_index([path.name for path in files], st.session_state.get("page_focus"))
    selected = st.selectbox("Trajectory", files, index=index, format_func=lambda path: path.name)
    frame = load_table(selected)
    if frame is None or frame.empty:
        st.warning("Could not read this trajectory.")
        return

    if "dist" in frame and frame["dist"].notna().any():
        st.metric("Max orbit distance", f"{frame['dist'].max():.4e}")
    st.altair_chart(trajectory_chart(frame), use_container_width=True)
    render_downloads(frame, selected.stem)
