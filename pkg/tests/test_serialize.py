import math

import numpy as np
import pytest

from data.algorithms import AlgorithmId
from utils.errors import ParseError
from utils.executor import init_params
from utils.graphgen import DatasetSpec, GraphFamily, generate_dataset
from utils.regimes import TrainReport
from utils.scoring import GraphMetrics, aggregate
from utils.serialize import (
    make_header,
    read_checkpoint,
    read_graphs,
    read_metrics,
    read_train_report,
    read_traces,
    write_checkpoint,
    write_graphs,
    write_metrics,
    write_train_report,
    write_traces,
)
from utils.trace_oracle import build_traces


@pytest.fixture
def graphs():
    return generate_dataset(DatasetSpec(GraphFamily.ER, 7, 4, master_seed=1))


def test_graphs_rewrite_byte_identical(tmp_path, graphs):
    first = write_graphs(tmp_path / "a.jsonl", graphs, make_header("graphs", seed=1, config_hash="abc"))
    header, loaded = read_graphs(first)
    assert header["kind"] == "graphs" and header["seed"] == 1 and header["config_hash"] == "abc"
    assert loaded == graphs
    second = write_graphs(tmp_path / "b.jsonl", loaded, header)
    assert first.read_bytes() == second.read_bytes()


def test_traces_read_back_equal(tmp_path, graphs):
    for algo in (AlgorithmId.DIJKSTRA_S, AlgorithmId.WIDEST_P):
        traces = build_traces(algo, graphs)
        path = write_traces(tmp_path / f"{algo.value}.jsonl", traces, make_header("traces", algorithm=algo.value))
        header, loaded = read_traces(path)
        assert header["algorithm"] == algo.value
        assert loaded == traces


def test_truncated_line_reports_line_number(tmp_path, graphs):
    path = write_graphs(tmp_path / "g.jsonl", graphs, make_header("graphs"))
    text = path.read_text(encoding="utf-8")
    path.write_text(text[: len(text) - 10], encoding="utf-8")
    with pytest.raises(ParseError) as info:
        read_graphs(path)
    assert info.value.line == 5
    assert f"{path}:5:" in str(info.value)


def test_missing_header_and_wrong_kind(tmp_path, graphs):
    path = write_graphs(tmp_path / "g.jsonl", graphs, make_header("graphs"))
    with pytest.raises(ParseError):
        read_traces(path)
    lines = path.read_text(encoding="utf-8").splitlines(keepends=True)
    path.write_text("".join(lines[1:]), encoding="utf-8")
    with pytest.raises(ParseError) as info:
        read_graphs(path)
    assert info.value.line == 1


def test_invalid_record_is_a_parse_error(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"_header": {"kind": "graphs"}}\n{"n": 3, "source": 0, "edges": [[1, 0, 0.5]]}\n')
    with pytest.raises(ParseError) as info:
        read_graphs(path)
    assert info.value.line == 2
    with pytest.raises(ParseError):
        read_graphs(tmp_path / "missing.jsonl")


def test_checkpoint_round_trip(tmp_path):
    params = init_params("NEPP", [AlgorithmId.PRIM_S, AlgorithmId.DIJKSTRA_S], seed=4, extra_processor=True)
    params.frozen = frozenset(params.processor_names())
    path = write_checkpoint(tmp_path / "ckpt.jsonl", params, make_header("checkpoint", seed=4))
    header, loaded = read_checkpoint(path)
    assert header["kind"] == "checkpoint"
    assert loaded.arch == "NEPP"
    assert loaded.tasks == params.tasks
    assert loaded.hidden_dim == params.hidden_dim
    assert loaded.frozen == params.frozen
    assert loaded.extra_processor
    assert set(loaded.tensors) == set(params.tensors)
    for name, t in params.tensors.items():
        assert np.array_equal(loaded.tensors[name].data, t.data)


def test_train_report_round_trip(tmp_path):
    report = TrainReport("NA", ["DIJKSTRA_S"], [0.3, 0.2], [0.4, math.inf], 1, 0.4, 2, 8)
    path = write_train_report(tmp_path / "train.json", report, make_header("train_report"))
    header, loaded = read_train_report(path)
    assert header["kind"] == "train_report"
    assert loaded == report


def test_metrics_round_trip(tmp_path):
    report = aggregate(
        [GraphMetrics(f, n, key_error=0.01 * n, pred_error=0.1, term_accuracy=0.9)
         for f in ("ER", "BA", "GRID") for n in (12, 24)],
        meta={"algorithm": "PRIM_S"},
    )
    header = make_header("metrics", seed=0, algorithm="PRIM_S")
    csv_path = write_metrics(tmp_path / "metrics.csv", tmp_path / "report.md", report, header)
    assert csv_path.read_text(encoding="utf-8").startswith("# {")
    assert (tmp_path / "report.md").read_text(encoding="utf-8").startswith("<!-- {")
    loaded_header, loaded = read_metrics(csv_path)
    assert loaded_header == header
    assert loaded.value(24, "key_error") == pytest.approx(report.value(24, "key_error"))
    assert loaded.value(12, "term_accuracy") == pytest.approx(0.9)


def test_metrics_without_header(tmp_path):
    path = tmp_path / "metrics.csv"
    path.write_text("n,family\n12,ER\n", encoding="utf-8")
    with pytest.raises(ParseError):
        read_metrics(path)


def test_invalid_utf8_reports_its_line(tmp_path, graphs):
    path = write_graphs(tmp_path / "g.jsonl", graphs, make_header("graphs"))
    lines = path.read_bytes().split(b"\n")
    lines[2] = lines[2][:-1] + b"\xff\xfe}"
    path.write_bytes(b"\n".join(lines))
    with pytest.raises(ParseError) as info:
        read_graphs(path)
    assert info.value.line == 3
    assert "UTF-8" in info.value.message

    report_path = write_train_report(tmp_path / "train.json", TrainReport("TF", ["BFS_P"], [0.1], [0.2], 1, 0.2, 1, 1),
                                     make_header("train_report"))
    report_path.write_bytes(report_path.read_bytes().replace(b'"TF"', b'"T\xff"'))
    with pytest.raises(ParseError) as info:
        read_train_report(report_path)
    assert info.value.line > 1

    metrics_path = tmp_path / "metrics.csv"
    metrics_path.write_bytes(b'# {"kind": "metrics"}\nn,family\n12,E\xffR\n')
    with pytest.raises(ParseError) as info:
        read_metrics(metrics_path)
    assert info.value.line == 3
