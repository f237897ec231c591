"""Plotly chart builders."""

import numpy as np
import plotly.graph_objects as go

from utils.scoring import METRIC_LABELS
from utils.trace_oracle import numeric_keys

_FAMILY_COLORS = {
    "ER": "#0EA5E9",
    "BA": "#22C55E",
    "GRID": "#EAB308",
}

_LAYOUT = dict(
    plot_bgcolor="rgba(0,0,0,0)",
    paper_bgcolor="rgba(0,0,0,0)",
    font=dict(color="#F8FAFC"),
)


def create_training_curve_chart(report):
    """Train and validation loss per epoch, with the best epoch marked.

    Args:
        report: TrainReport or its dict form.

    Returns:
        plotly Figure
    """
    data = report if isinstance(report, dict) else report.to_dict()
    epochs = list(range(1, len(data["train_losses"]) + 1))
    fig = go.Figure()
    fig.add_trace(go.Scatter(
        x=epochs, y=data["train_losses"], mode="lines", name="train",
        line=dict(color="#0EA5E9", width=2),
    ))
    fig.add_trace(go.Scatter(
        x=epochs, y=data["val_losses"], mode="lines", name="validation",
        line=dict(color="#F97316", width=2),
    ))
    if data.get("best_epoch"):
        fig.add_vline(
            x=data["best_epoch"],
            line=dict(color="rgba(148,163,184,0.6)", width=1, dash="dash"),
            annotation_text="best",
        )
    fig.update_layout(
        xaxis=dict(title=dict(text="Epoch"), showgrid=False),
        yaxis=dict(title=dict(text="Loss"), type="log", showgrid=False),
        height=420,
        margin=dict(l=60, r=30, t=30, b=60),
        legend=dict(orientation="h", y=1.1),
        **_LAYOUT,
    )
    return fig


def create_generalisation_chart(report, metric="pred_error"):
    """One line per graph family plus the cross-family mean with a std band."""
    per_family = report.per_family.reset_index()
    fig = go.Figure()
    for family, rows in per_family.groupby("family", sort=True):
        fig.add_trace(go.Scatter(
            x=rows["n"], y=rows[metric], mode="lines+markers", name=family,
            line=dict(color=_FAMILY_COLORS.get(family, "#94A3B8"), width=1, dash="dot"),
        ))
    sizes = list(report.summary.index)
    mean = report.summary[(metric, "mean")].to_numpy()
    std = report.summary[(metric, "std")].to_numpy()
    fig.add_trace(go.Scatter(
        x=sizes, y=mean, mode="lines+markers", name="mean",
        line=dict(color="#F8FAFC", width=3),
        error_y=dict(type="data", array=std, visible=True),
    ))
    fig.update_layout(
        xaxis=dict(title=dict(text="Nodes"), tickvals=sizes, showgrid=False),
        yaxis=dict(title=dict(text=METRIC_LABELS.get(metric, metric)), showgrid=False),
        height=420,
        margin=dict(l=60, r=30, t=30, b=60),
        **_LAYOUT,
    )
    return fig


def create_trace_heatmap(trace):
    """Node keys over the steps of an oracle trace; unreached cells stay empty."""
    rows = []
    for state in trace.steps:
        keys = numeric_keys(trace.algo, state.keys)
        rows.append([k if p is not None else np.nan for k, p in zip(keys, state.preds)])
    z = np.array(rows, dtype=float)
    fig = go.Figure(go.Heatmap(
        z=z,
        x=[str(i) for i in range(trace.graph.n)],
        y=list(range(len(trace.steps))),
        colorscale="Viridis",
        hovertemplate="node %{x}<br>step %{y}<br>key %{z:.3f}<extra></extra>",
    ))
    fig.update_layout(
        xaxis=dict(title=dict(text="Node")),
        yaxis=dict(title=dict(text="Step"), autorange="reversed"),
        height=max(300, 24 * len(trace.steps) + 120),
        margin=dict(l=60, r=30, t=30, b=60),
        **_LAYOUT,
    )
    return fig
