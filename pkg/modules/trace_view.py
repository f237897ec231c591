"""Trace explorer - run the oracle on one generated graph and inspect every step."""

import pandas as pd
import streamlit as st

from data.algorithms import ALGORITHMS, AlgorithmId
from utils.charts import create_trace_heatmap
from utils.graphgen import DatasetSpec, GraphFamily, generate_graph
from utils.trace_oracle import run_algorithm


def render_trace_explorer():
    """Render the trace explorer page."""
    st.header("Trace Explorer")
    st.markdown("Generate a graph, run an algorithm on it and look at its execution trace.")

    c1, c2, c3, c4 = st.columns(4)
    family = c1.selectbox("Family", [f.value for f in GraphFamily], key="tx_family")
    nodes = c2.number_input("Nodes", min_value=2, max_value=64, value=8, step=1, key="tx_nodes")
    seed = c3.number_input("Seed", min_value=0, value=0, step=1, key="tx_seed")
    algo = c4.selectbox(
        "Algorithm",
        list(AlgorithmId),
        format_func=lambda a: ALGORITHMS[a]["label"],
        key="tx_algo",
    )

    graph = generate_graph(DatasetSpec(GraphFamily(family), int(nodes), 1, int(seed)), 0)
    trace = run_algorithm(algo, graph)

    c1, c2, c3 = st.columns(3)
    c1.metric("Edges", len(graph.edges))
    c2.metric("Source", graph.source)
    c3.metric("Steps (T)", trace.T)

    st.plotly_chart(create_trace_heatmap(trace), use_container_width=True)

    if trace.pop_sequence:
        st.markdown("**Pop sequence:** " + " → ".join(str(u) for u in trace.pop_sequence))

    last = trace.steps[-1]
    table = pd.DataFrame({
        "node": range(graph.n),
        "key": ["-" if k is None else round(k, 4) for k in last.keys],
        "predecessor": ["-" if p is None else p for p in last.preds],
    })
    st.subheader("Final output")
    st.dataframe(table, hide_index=True, use_container_width=True)
