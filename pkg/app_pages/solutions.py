import streamlit as st

from app_core import current_results_dir, focused_index, render_downloads, solution_table

HEADLINE = ("solution", "role", "classification", "energy", "sigma_dot", "lambda", "Omega", "kkt_residual")


def render() -> None:
    # Functional reports of the three stored solutions side by side.
    st.title("🧮 Solutions")
    frame = solution_table(current_results_dir())

    if frame.empty:
        st.info("No u1/u2/u3 sidecar records found.")
        return

    headline = [column for column in HEADLINE if column in frame.columns]
    st.dataframe(frame[headline], use_container_width=True, hide_index=True)

    names = list(frame["solution"])
    selected = st.selectbox(
        "Recorded quantities for",
        names,
        index=focused_index(names, st.session_state.get("page_focus")),
        format_func=lambda name: f"{name} ({frame.set_index('solution').at[name, 'role']})",
    )
    st.dataframe(frame.set_index("solution").loc[[selected]].T, use_container_width=True)

    render_downloads(frame, "solutions")
