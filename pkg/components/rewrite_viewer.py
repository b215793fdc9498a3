"""
Rewrite Viewer Component.
Runs one utterance through the rewriter and shows the candidates, the
span decision and the one-hop neighbourhood of the winning entity.
"""

import streamlit as st
from typing import List, Optional
import sys
from pathlib import Path

import networkx as nx
import plotly.graph_objects as go

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from ai.pipeline import NluHypothesis, RewriteResult, Rewriter
from utils.kgstore import OUTGOING, KnowledgeGraph, one_hop


def render_rewrite_form(rewriter: Rewriter, default_theta: float) -> Optional[RewriteResult]:
    """Input form; returns the result of the last submitted rewrite."""
    with st.form("rewrite_form"):
        utterance = st.text_input("Utterance", value=st.session_state.get("utterance", ""))
        hypothesis_text = st.text_input("NLU hypothesis (optional)", placeholder="Music | PlayMusic | SongName: ...")
        col1, col2 = st.columns(2)
        with col1:
            theta = st.slider("Null threshold θ", 0.0, 10.0, float(default_theta), 0.5)
        with col2:
            k = st.number_input("Candidates k", min_value=1, max_value=50, value=rewriter.k)
        submitted = st.form_submit_button("Rewrite", type="primary")

    if not submitted:
        return st.session_state.get("rewrite_result")

    hypothesis = None
    if hypothesis_text.strip():
        try:
            hypothesis = NluHypothesis.parse(hypothesis_text.strip())
        except ValueError as exc:
            st.error(f"Could not parse hypothesis: {exc}")
            return None

    rewriter.k = int(k)
    result = rewriter.rewrite(utterance, theta, hypothesis)
    st.session_state.utterance = utterance
    st.session_state.rewrite_result = result
    return result


def render_rewrite_result(result: RewriteResult, kg: KnowledgeGraph):
    """Decision summary, candidate tables and the entity neighbourhood."""
    col1, col2, col3 = st.columns(3)
    with col1:
        st.metric("Triggered", "yes" if result.triggered else "no")
    with col2:
        st.metric("Span margin", f"{result.span.margin:.3f}")
    with col3:
        st.metric("Winner", result.entity or "-")

    if result.triggered:
        st.success(f"**{result.utterance}** → **{result.rewritten_utterance}**")
        if result.rewritten_hypothesis is not None:
            st.code(result.rewritten_hypothesis.serialize())
    elif result.diagnostic:
        st.info(f"No rewrite: {result.diagnostic}")

    tab1, tab2 = st.tabs(["Candidates", "Knowledge graph"])
    with tab1:
        _render_candidates(result)
    with tab2:
        if result.entity:
            render_neighbourhood(kg, result.entity)


def _render_candidates(result: RewriteResult):
    col1, col2 = st.columns(2)
    with col1:
        st.markdown("#### Retrieved")
        st.dataframe([{"surface": c.surface, "score": round(c.score, 4)} for c in result.retrieved],
                     use_container_width=True)
    with col2:
        st.markdown("#### Re-ranked")
        st.dataframe([{"surface": c.surface, "score": round(c.score, 4)} for c in result.ranked],
                     use_container_width=True)


def neighbourhood_figure(kg: KnowledgeGraph, surface: str, max_neighbors: int = 16) -> go.Figure:
    """Spring layout of the one-hop subgraphs behind a surface form."""
    graph = nx.DiGraph()
    for eid in kg.lookup(surface):
        sub = one_hop(kg, eid, max_neighbors)
        graph.add_node(eid, label=kg.entity(eid).surface, center=True)
        for rel, direction, neighbor in sub.edges:
            if neighbor not in graph:
                graph.add_node(neighbor, label=kg.entity(neighbor).surface, center=False)
            name = kg.relations[rel]
            if direction == OUTGOING:
                graph.add_edge(eid, neighbor, label=name)
            else:
                graph.add_edge(neighbor, eid, label=name)

    pos = nx.spring_layout(graph, seed=0)
    edge_x: List[Optional[float]] = []
    edge_y: List[Optional[float]] = []
    for a, b in graph.edges:
        edge_x += [pos[a][0], pos[b][0], None]
        edge_y += [pos[a][1], pos[b][1], None]

    nodes = list(graph.nodes)
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=edge_x, y=edge_y, mode="lines", line=dict(width=1, color="#999"), hoverinfo="none"))
    fig.add_trace(go.Scatter(
        x=[pos[n][0] for n in nodes],
        y=[pos[n][1] for n in nodes],
        mode="markers+text",
        text=[graph.nodes[n]["label"] for n in nodes],
        textposition="top center",
        marker=dict(size=[18 if graph.nodes[n]["center"] else 10 for n in nodes],
                    color=["#6c63ff" if graph.nodes[n]["center"] else "#bbb" for n in nodes]),
        hovertext=[f"id {n}" for n in nodes],
    ))
    fig.update_layout(showlegend=False, height=420, margin=dict(l=10, r=10, t=10, b=10),
                      xaxis=dict(visible=False), yaxis=dict(visible=False))
    return fig


def render_neighbourhood(kg: KnowledgeGraph, surface: str):
    if not kg.lookup(surface):
        st.caption("No graph entry for this surface.")
        return
    descriptions = kg.descriptions_for(surface)
    if descriptions:
        st.caption("Descriptions: " + "; ".join(descriptions))
    st.plotly_chart(neighbourhood_figure(kg, surface), use_container_width=True)
