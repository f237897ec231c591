import streamlit as st

from modules.report_view import render_report
from modules.trace_view import render_trace_explorer
from modules.training_view import render_training

st.set_page_config(
    page_title="Neural Execution Workbench",
    page_icon="\U0001f9ed",
    layout="wide",
)

# ---------------------------------------------------------------------------
# Global font size overrides
# ---------------------------------------------------------------------------
st.markdown(
    """
    <style>
    .stMarkdown, .stText, .stCaption { font-size: 1.05rem !important; }
    [data-testid="stMetricValue"] { font-size: 1.6rem !important; }
    </style>
    """,
    unsafe_allow_html=True,
)

# ---------------------------------------------------------------------------
# Session state defaults
# ---------------------------------------------------------------------------
_defaults = {
    "out_dir": "runs/desk",
}
for _k, _v in _defaults.items():
    if _k not in st.session_state:
        st.session_state[_k] = _v

_NAV_OPTIONS = [
    "\U0001f3e0 Welcome",
    "Report",
    "Training",
    "Trace explorer",
]

# ---------------------------------------------------------------------------
# Sidebar - navigation
# ---------------------------------------------------------------------------
with st.sidebar:
    st.header("\U0001f9ed Neural Execution Workbench")
    st.caption("Browse experiment artifacts and oracle traces")
    st.divider()

    module = st.radio(
        "Navigate",
        _NAV_OPTIONS,
        key="nav_module",
        label_visibility="collapsed",
    )

    st.divider()
    st.text_input("Experiment directory", key="out_dir")


# ---------------------------------------------------------------------------
# Welcome page
# ---------------------------------------------------------------------------
def _render_welcome():
    st.title("Neural Execution Workbench")
    st.markdown(
        "Graph neural networks trained to execute classical graph algorithms "
        "(BFS, Bellman-Ford, Dijkstra, Prim, DFS, widest and most-reliable paths), "
        "step by step or from final outputs only."
    )

    c1, c2, c3 = st.columns(3)
    with c1:
        with st.container(border=True):
            st.markdown("**Report**")
            st.caption("Errors per graph size and family")
    with c2:
        with st.container(border=True):
            st.markdown("**Training**")
            st.caption("Loss curves and early stopping")
    with c3:
        with st.container(border=True):
            st.markdown("**Trace explorer**")
            st.caption("Step through an oracle execution")

    st.code("python workbench.py run --config configs/desk.yaml", language="bash")


# ---------------------------------------------------------------------------
# Module routing
# ---------------------------------------------------------------------------
if module == "\U0001f3e0 Welcome":
    _render_welcome()
elif module == "Report":
    render_report(st.session_state.out_dir)
elif module == "Training":
    render_training(st.session_state.out_dir)
elif module == "Trace explorer":
    render_trace_explorer()
