"""Streamlit renderers for the rewrite explorer."""
