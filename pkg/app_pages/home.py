import streamlit as st

from app_core import (
    PATH_FILE,
    current_results_dir,
    first_failing_solution,
    load_record,
    load_summary,
    open_results_page,
    render_downloads,
    split_summary,
)


def render() -> None:
    # Landing page: pass/fail state of the run plus its resolved config.
    directory = current_results_dir()
    st.title("🏠 Run Summary")
    st.caption(f"Results directory: `{directory}`")

    summary = load_summary(directory)
    if not summary:
        st.info("No summary.txt here yet. Run `python -m cqnls three-solutions --out DIR` first.")
        return

    status = summary.get("status", "unknown")
    if status == "pass":
        st.success("All checks passed.")
    else:
        st.error("Some checks failed.")

    values_df, checks_df = split_summary(summary)
    checks_col, values_col = st.columns(2, gap="large")
    with checks_col:
        st.subheader("Checks")
        st.dataframe(checks_df, use_container_width=True, hide_index=True)
    with values_col:
        st.subheader("Values")
        st.dataframe(values_df, use_container_width=True, hide_index=True)
    render_downloads(values_df, "summary")

    config = load_record(directory / "config.txt")
    if config:
        with st.expander("Resolved config"):
            st.code("\n".join(f"{key}={value}" for key, value in config.items()))

    failing = first_failing_solution(summary)
    solution_label = f"Inspect {failing}" if failing else "Open Solutions"
    solution_col, path_col, trajectory_col = st.columns(3, gap="large")
    if solution_col.button(solution_label, key="home_solutions", use_container_width=True):
        open_results_page("solutions", focus=failing)
    has_path = (directory / PATH_FILE).exists()
    if path_col.button("Open Mountain Pass", key="home_path", use_container_width=True, disabled=not has_path):
        open_results_page("path")
    if trajectory_col.button("Open Trajectories", key="home_trajectories", use_container_width=True):
        open_results_page("trajectories")
