from pathlib import Path

import pytest

from utils.config import ExperimentConfig
from utils.experiment import run_experiment

AppTest = pytest.importorskip("streamlit.testing.v1").AppTest

APP = str(Path(__file__).resolve().parent.parent / "app.py")


def _app(out_dir):
    at = AppTest.from_file(APP, default_timeout=60)
    at.session_state["out_dir"] = str(out_dir)
    return at


def test_welcome_page(tmp_path):
    at = _app(tmp_path).run()
    assert not at.exception
    assert at.title[0].value == "Neural Execution Workbench"


def test_report_page_without_run(tmp_path):
    at = _app(tmp_path / "empty").run()
    at.radio(key="nav_module").set_value("Report").run()
    assert not at.exception
    assert "No metrics.csv" in at.info[0].value


def test_report_and_training_pages_after_run(tmp_path):
    out = tmp_path / "run"
    run_experiment(ExperimentConfig(
        target="bfs_p", families=("ER",), train_nodes=5, train_count=3,
        eval_sizes=(5, 6), eval_count=2, max_epochs=1, hidden_dim=4, out=str(out),
    ))
    at = _app(out).run()
    at.radio(key="nav_module").set_value("Report").run()
    assert not at.exception
    assert at.dataframe
    at.radio(key="nav_module").set_value("Training").run()
    assert not at.exception
    assert at.metric[0].value == "1"


def test_trace_explorer(tmp_path):
    at = _app(tmp_path).run()
    at.radio(key="nav_module").set_value("Trace explorer").run()
    assert not at.exception
    at.selectbox(key="tx_family").set_value("GRID").run()
    assert not at.exception
    assert at.metric[2].label == "Steps (T)"
