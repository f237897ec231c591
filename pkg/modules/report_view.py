"""Experiment report page - metrics tables and the size-generalisation chart."""

from pathlib import Path

import streamlit as st

from utils.charts import create_generalisation_chart
from utils.errors import WorkbenchError
from utils.scoring import METRIC_COLUMNS, METRIC_LABELS
from utils.serialize import read_metrics


def render_report(out_dir):
    """Render the metrics of one experiment directory."""
    st.header("Experiment Report")
    path = Path(out_dir) / "metrics.csv"
    if not path.is_file():
        st.info(f"No metrics.csv in `{out_dir}` yet. Run `python workbench.py run --config ...` first.")
        return

    try:
        header, report = read_metrics(path)
    except WorkbenchError as exc:
        st.error(str(exc))
        return

    st.caption(
        f"{header.get('algorithm', '')} | {header.get('regime', '')} | {header.get('arch', '')} "
        f"| seed {header.get('seed')} | config {header.get('config_hash')}"
    )

    # ---- Summary ----------------------------------------------------------
    st.subheader("Mean ± std across graph families")
    st.dataframe(report.summary_table(), use_container_width=True)

    metric = st.selectbox(
        "Metric",
        METRIC_COLUMNS,
        index=METRIC_COLUMNS.index("pred_error"),
        format_func=METRIC_LABELS.get,
        key="report_metric",
    )
    if report.per_family[metric].isna().all():
        st.caption("This metric does not apply to this run.")
    else:
        st.plotly_chart(create_generalisation_chart(report, metric), use_container_width=True)

    # ---- Per family -------------------------------------------------------
    with st.expander("Per-family breakdown"):
        st.dataframe(report.per_family.rename(columns=METRIC_LABELS), use_container_width=True)
