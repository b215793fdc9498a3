"""
Report Viewer Component.
Shows the saved threshold sweep and evaluation reports of a run directory.
"""

import streamlit as st
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from ai.evaluation import SweepResult, sweep_figure
from utils.storage import load_json


def render_sweep(sweep_path: Path):
    """Chart and table for a saved sweep; a hint when none exists yet."""
    st.markdown("### Null threshold sweep")
    data = load_json(sweep_path)
    if not data:
        st.info("No sweep yet. Run `python cli.py sweep-theta` first.")
        return

    sweep = SweepResult.from_dict(data)
    col1, col2 = st.columns(2)
    with col1:
        st.metric("Chosen θ", f"{sweep.theta:g}")
    with col2:
        st.metric("Clean TR cap", f"{sweep.clean_tr_cap:.2%}", None if sweep.feasible else "infeasible",
                  delta_color="inverse")

    st.plotly_chart(sweep_figure(sweep), use_container_width=True)
    st.dataframe([
        {
            "θ": row.theta,
            "friction TR": row.friction.trigger_rate,
            "friction CTR": row.friction.correct_trigger_rate,
            "E-P": row.friction.entity_precision,
            "NLU-P": row.friction.nlu_precision,
            "clean TR": row.clean.trigger_rate,
        }
        for row in sweep.rows
    ], use_container_width=True)


def render_eval_reports(report_dir: Path):
    """Text reports written by `evaluate`, one expander per variant."""
    st.markdown("### Evaluation reports")
    reports = sorted(report_dir.glob("eval-*.txt")) if report_dir.exists() else []
    if not reports:
        st.info("No evaluation reports yet. Run `python cli.py evaluate` first.")
        return
    for path in reports:
        with st.expander(path.stem, expanded=len(reports) == 1):
            st.code(path.read_text(encoding="utf-8"), language=None)
