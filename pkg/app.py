"""
Entity Correction Explorer - Main Application
Interactive view over a trained run directory.

Features:
- Rewrite an utterance and inspect candidates, span decision and KG neighbourhood
- Threshold sweep chart and evaluation reports

Run with: streamlit run app.py
Set KGECO_CONFIG to the run config JSON (defaults apply otherwise).
"""

import os
import streamlit as st
from pathlib import Path
import sys

# Add current directory to path for imports
sys.path.insert(0, str(Path(__file__).parent))

# Import components
from components.rewrite_viewer import render_rewrite_form, render_rewrite_result
from components.report_viewer import render_eval_reports, render_sweep

# Import utilities
from ai.workspace import Workspace
from utils.config import load_config
from utils.errors import RewriteError
from utils.logging_setup import configure_logging


@st.cache_resource
def get_workspace() -> Workspace:
    """One workspace (and its loaded models) per server process."""
    config_path = os.environ.get("KGECO_CONFIG")
    cfg = load_config(Path(config_path) if config_path else None)
    configure_logging(cfg.log_level, quiet=True)
    return Workspace(cfg)


@st.cache_resource
def get_rewriter(_ws: Workspace):
    return _ws.rewriter()


def setup_page():
    """Configure Streamlit page settings."""
    st.set_page_config(
        page_title="Entity Correction Explorer",
        page_icon="🔎",
        layout="wide",
        initial_sidebar_state="expanded",
    )


def render_sidebar(ws: Workspace):
    """Render the sidebar navigation."""
    with st.sidebar:
        st.markdown("# 🔎 Entity Correction")
        st.caption(f"Run directory: `{ws.root}`")
        st.caption(f"Variant: `{ws.variant}`")

        st.divider()

        if st.button("✏️ Rewrite", use_container_width=True,
                     type="primary" if st.session_state.get("page") == "rewrite" else "secondary"):
            st.session_state.page = "rewrite"
            st.rerun()

        if st.button("📊 Reports", use_container_width=True,
                     type="primary" if st.session_state.get("page") == "reports" else "secondary"):
            st.session_state.page = "reports"
            st.rerun()


def render_rewrite_page(ws: Workspace):
    st.markdown("## ✏️ Rewrite an utterance")
    try:
        rewriter = get_rewriter(ws)
    except RewriteError as exc:
        st.error(str(exc))
        return

    result = render_rewrite_form(rewriter, ws.cfg.eval.theta)
    if result is not None:
        render_rewrite_result(result, ws.kg())


def render_reports_page(ws: Workspace):
    st.markdown("## 📊 Reports")
    render_sweep(ws.report(f"sweep-{ws.variant}.json"))
    st.divider()
    render_eval_reports(ws.path("reports"))


def render_main_content(ws: Workspace):
    """Render the main content area based on current page."""
    page = st.session_state.get("page", "rewrite")

    if page == "rewrite":
        render_rewrite_page(ws)

    elif page == "reports":
        render_reports_page(ws)


def main():
    """Main application entry point."""
    setup_page()

    if "page" not in st.session_state:
        st.session_state.page = "rewrite"

    ws = get_workspace()
    render_sidebar(ws)
    render_main_content(ws)


if __name__ == "__main__":
    main()
