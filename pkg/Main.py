from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import streamlit as st

from app_core import current_results_dir, init_app_state, open_results_page
from app_pages import home, path_profile, solutions, trajectories


@dataclass(frozen=True)
class PageConfig:
    # Metadata used by the router and sidebar navigation.
    key: str
    title: str
    icon: str
    render: Callable[[], None]


# Ordered list defines the sidebar placement from top to bottom.
PAGES = [
    PageConfig("home", "Run Summary", "🏠", home.render),
    PageConfig("solutions", "Solutions", "🧮", solutions.render),
    PageConfig("path", "Mountain Pass", "⛰", path_profile.render),
    PageConfig("trajectories", "Trajectories", "📈", trajectories.render),
]

ALL_PAGES = {page.key: page for page in PAGES}


# App-wide state must be initialized before any page reads session values.
st.set_page_config(page_title="CQNLS Results", page_icon="📊", layout="wide")
init_app_state()

if st.session_state.get("active_page") not in ALL_PAGES:
    st.session_state.active_page = "home"


def render_sidebar(active_page: str) -> None:
    # Results directory picker plus code-ordered navigation.
    st.sidebar.title("CQNLS Results")
    st.session_state.results_dir = st.sidebar.text_input("Results directory", value=st.session_state.results_dir)
    if not current_results_dir().is_dir():
        st.sidebar.warning("Directory not found.")
    st.sidebar.markdown("### Navigation")

    for page in PAGES:
        button_type = "primary" if page.key == active_page else "secondary"
        if st.sidebar.button(
            f"{page.icon} {page.title}",
            key=f"nav_{page.key}",
            use_container_width=True,
            type=button_type,
        ):
            open_results_page(page.key)


active_page_key = st.session_state.active_page
render_sidebar(active_page_key)
ALL_PAGES[active_page_key].render()
