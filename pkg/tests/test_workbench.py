import pytest

import workbench
from utils.config import ExperimentConfig, config_hash
from utils.serialize import read_checkpoint, read_graphs, read_traces


@pytest.fixture
def graph_file(tmp_path):
    path = tmp_path / "train_ER.jsonl"
    code = workbench.main([
        "generate", "--family", "er", "--nodes", "5", "--count", "4", "--seed", "3", "--out", str(path),
    ])
    assert code == 0
    return path


def test_generate(graph_file):
    header, graphs = read_graphs(graph_file)
    assert header["family"] == "ER" and header["seed"] == 3
    assert len(graphs) == 4 and all(g.n == 5 for g in graphs)


def test_trace(tmp_path, graph_file):
    out = tmp_path / "traces.jsonl"
    assert workbench.main(["trace", "--algo", "PRIM_S", "--in", str(graph_file), "--out", str(out)]) == 0
    header, traces = read_traces(out)
    assert header["algo"] == "PRIM_S"
    assert header["seed"] == 0
    assert header["config_hash"] == config_hash(ExperimentConfig())
    assert len(traces) == 4


def test_trace_accepts_data_alias_and_seed(tmp_path, graph_file):
    out = tmp_path / "traces.jsonl"
    code = workbench.main(["trace", "--algo", "bfs_p", "--data", str(graph_file), "--seed", "7", "--out", str(out)])
    assert code == 0
    header, _ = read_traces(out)
    assert header["seed"] == 7 and header["config_hash"]


def test_train_eval_report(tmp_path, graph_file, capsys):
    ckpt = tmp_path / "model.jsonl"
    code = workbench.main([
        "train", "--data", str(tmp_path), "--out", str(ckpt),
        "--target", "bellman_ford_p", "--max-epochs", "1", "--batch", "4", "--hidden-dim", "4",
    ])
    assert code == 0
    assert (tmp_path / "model_report.json").is_file()
    _, params = read_checkpoint(ckpt)
    assert params.hidden_dim == 4

    metrics = tmp_path / "metrics.csv"
    code = workbench.main([
        "eval", "--checkpoint", str(ckpt), "--data", str(graph_file), "--out", str(metrics),
    ])
    assert code == 0
    assert metrics.is_file() and (tmp_path / "metrics.md").is_file()
    assert "nodes" in capsys.readouterr().out

    assert workbench.main(["report", "--metrics", str(metrics)]) == 0
    assert "# BELLMAN_FORD_P" in capsys.readouterr().out


def test_transfer_train_writes_base_checkpoint(tmp_path, graph_file):
    ckpt = tmp_path / "model.jsonl"
    code = workbench.main([
        "train", "--data", str(graph_file), "--out", str(ckpt), "--regime", "transfer-freeze",
        "--target", "dijkstra_s", "--base", "prim_s", "--max-epochs", "1", "--batch", "4",
        "--hidden-dim", "4", "--trajectories", "2",
    ])
    assert code == 0
    assert (tmp_path / "model_base.jsonl").is_file()
    assert (tmp_path / "model_base_report.json").is_file()


def test_run_from_config(tmp_path, capsys):
    config = tmp_path / "tiny.yaml"
    config.write_text(
        "target: widest_p\n"
        "families: [grid]\n"
        "train_nodes: 5\n"
        "train_count: 3\n"
        "eval_sizes: [5]\n"
        "eval_count: 2\n"
        "max_epochs: 1\n"
        "hidden_dim: 4\n",
        encoding="utf-8",
    )
    out = tmp_path / "run"
    assert workbench.main(["run", "--config", str(config), "--out", str(out)]) == 0
    assert (out / "metrics.csv").is_file()
    assert workbench.main(["run", "--config", str(config), "--out", str(out), "--eval-only"]) == 0
    assert "nodes" in capsys.readouterr().out


def test_bad_input_exits_with_1(tmp_path, graph_file):
    assert workbench.main([
        "train", "--data", str(graph_file), "--out", str(tmp_path / "m.jsonl"), "--target", "quicksort",
    ]) == 1
    assert workbench.main([
        "eval", "--checkpoint", str(tmp_path / "missing.jsonl"), "--data", str(graph_file),
        "--out", str(tmp_path / "m.csv"),
    ]) == 1
    assert workbench.main(["run", "--config", str(tmp_path / "missing.yaml")]) == 1
    assert workbench.main(["run", "--out", str(tmp_path / "nothing"), "--eval-only"]) == 1


def test_internal_error_exits_with_2(monkeypatch, tmp_path):
    def boom(*args, **kwargs):
        raise RuntimeError("unexpected")

    monkeypatch.setattr(workbench, "run_experiment", boom)
    assert workbench.main(["run", "--out", str(tmp_path / "x")]) == 2


def test_undecodable_graph_file_exits_with_1(tmp_path, graph_file):
    graph_file.write_bytes(graph_file.read_bytes() + b"{\"n\": \xff}\n")
    argv = ["trace", "--algo", "bfs_p", "--in", str(graph_file), "--out", str(tmp_path / "t.jsonl")]
    assert workbench.main(argv) == 1


@pytest.mark.parametrize("argv", [
    ["fly"],
    ["trace", "--algo", "quicksort", "--in", "x", "--out", "y"],
    ["trace", "--algo", "dijkstra_s", "--out", "y"],
    ["generate", "--family", "er", "--nodes", "abc", "--out", "g.jsonl"],
])
def test_usage_errors_exit_with_1(argv, capsys):
    assert workbench.main(argv) == 1
    assert "error:" in capsys.readouterr().err


def test_help_still_exits_cleanly():
    with pytest.raises(SystemExit) as info:
        workbench.main(["--help"])
    assert info.value.code == 0
