"""Training page - stopping epoch, best validation loss and loss curves."""

from pathlib import Path

import streamlit as st

from utils.charts import create_training_curve_chart
from utils.errors import WorkbenchError
from utils.serialize import read_train_report


def render_training(out_dir):
    st.header("Training")
    reports = [
        ("Target", Path(out_dir) / "train_report.json"),
        ("Pretraining", Path(out_dir) / "base_train_report.json"),
    ]
    found = [(label, p) for label, p in reports if p.is_file()]
    if not found:
        st.info(f"No train_report.json in `{out_dir}` yet.")
        return

    for label, path in found:
        try:
            _, report = read_train_report(path)
        except WorkbenchError as exc:
            st.error(str(exc))
            continue
        st.subheader(f"{label}: {report.regime} on {', '.join(report.tasks)}")
        c1, c2, c3 = st.columns(3)
        c1.metric("Stopping epoch", report.stopping_epoch)
        c2.metric("Best epoch", report.best_epoch)
        c3.metric("Best validation loss", f"{report.best_val_loss:.4g}")
        st.plotly_chart(create_training_curve_chart(report), use_container_width=True)
