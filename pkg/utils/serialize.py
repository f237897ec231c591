"""JSON-lines artifacts: graphs, traces, checkpoints, training reports and metric tables.

Every JSON-lines file starts with a header line `{"_header": {...}}` carrying the
artifact kind, the seed and the config hash. Floats are written with Python's
shortest round-trip repr, so reading back gives bit-identical values.
"""

from __future__ import annotations

import io
import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from data.algorithms import parse_algorithm
from utils.diffcore import parameter
from utils.errors import InvalidArgument, ParseError
from utils.executor import ExecutorParams
from utils.graphgen import WeightedGraph
from utils.regimes import TrainReport
from utils.scoring import MetricsReport, report_from_frame
from utils.trace_oracle import StepState, Trace

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def make_header(kind, seed=None, config_hash=None, **extra):
    header = {"kind": kind, "version": FORMAT_VERSION, "seed": seed, "config_hash": config_hash}
    header.update(extra)
    return header


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# Generic JSON-lines
# ---------------------------------------------------------------------------

def write_jsonl(path, header, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dumps({"_header": header}) + "\n")
        for rec in records:
            fh.write(_dumps(rec) + "\n")
    return path


def read_jsonl(path, kind=None):
    """Return (header, [(line_number, record), ...]); malformed lines raise ParseError."""
    path = Path(path)
    if not path.is_file():
        raise ParseError(path, 0, "file not found")
    header = None
    records = []
    with path.open("rb") as fh:
        for lineno, raw in enumerate(fh, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise ParseError(path, lineno, f"invalid UTF-8 at byte {exc.start}") from exc
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, lineno, f"invalid JSON: {exc.msg} at column {exc.colno}") from exc
            if not isinstance(obj, dict):
                raise ParseError(path, lineno, "expected a JSON object")
            if header is None:
                if "_header" not in obj or not isinstance(obj["_header"], dict):
                    raise ParseError(path, lineno, "missing header line")
                header = obj["_header"]
                if kind is not None and header.get("kind") != kind:
                    raise ParseError(path, lineno, f"expected a {kind} file, found {header.get('kind')!r}")
                continue
            records.append((lineno, obj))
    if header is None:
        raise ParseError(path, 1, "empty file")
    return header, records


def _read_text(path):
    """Whole-file UTF-8 text; a bad byte becomes a ParseError on its line."""
    if not path.is_file():
        raise ParseError(path, 0, "file not found")
    data = path.read_bytes()
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        lineno = data.count(b"\n", 0, exc.start) + 1
        raise ParseError(path, lineno, f"invalid UTF-8 at byte {exc.start}") from exc


def _decode(path, lineno, fn, obj):
    try:
        return fn(obj)
    except (KeyError, TypeError, ValueError, InvalidArgument) as exc:
        raise ParseError(path, lineno, f"bad record: {exc}") from exc


# ---------------------------------------------------------------------------
# Graphs and traces
# ---------------------------------------------------------------------------

def graph_to_dict(g: WeightedGraph):
    return {"n": g.n, "source": g.source, "edges": [[u, v, w] for u, v, w in g.edges]}


def graph_from_dict(d):
    edges = tuple((int(u), int(v), float(w)) for u, v, w in d["edges"])
    return WeightedGraph(int(d["n"]), edges, int(d["source"]))


def write_graphs(path, graphs, header):
    return write_jsonl(path, header, (graph_to_dict(g) for g in graphs))


def read_graphs(path):
    header, records = read_jsonl(path, "graphs")
    return header, [_decode(path, ln, graph_from_dict, rec) for ln, rec in records]


def trace_to_dict(t: Trace):
    return {
        "algo": t.algo.value,
        "graph": graph_to_dict(t.graph),
        "T": t.T,
        "pops": list(t.pop_sequence),
        "steps": [{"keys": list(s.keys), "preds": list(s.preds), "popped": list(s.popped)} for s in t.steps],
    }


def trace_from_dict(d):
    steps = tuple(
        StepState(
            tuple(None if k is None else float(k) for k in s["keys"]),
            tuple(None if p is None else int(p) for p in s["preds"]),
            tuple(bool(p) for p in s["popped"]),
        )
        for s in d["steps"]
    )
    T = int(d["T"])
    if len(steps) != T + 1:
        raise ValueError(f"trace has {len(steps)} steps for T={T}")
    return Trace(graph_from_dict(d["graph"]), parse_algorithm(d["algo"]), steps, tuple(int(p) for p in d["pops"]), T)


def write_traces(path, traces, header):
    return write_jsonl(path, header, (trace_to_dict(t) for t in traces))


def read_traces(path):
    header, records = read_jsonl(path, "traces")
    return header, [_decode(path, ln, trace_from_dict, rec) for ln, rec in records]


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def write_checkpoint(path, params: ExecutorParams, header):
    meta = {
        "arch": params.arch,
        "tasks": [t.value for t in params.tasks],
        "hidden_dim": params.hidden_dim,
        "frozen": sorted(params.frozen),
        "extra_processor": params.extra_processor,
    }
    tensors = (
        {"name": name, "shape": list(t.shape), "data": t.data.ravel().tolist()}
        for name, t in sorted(params.tensors.items())
    )
    return write_jsonl(path, header, [meta, *tensors])


def read_checkpoint(path):
    header, records = read_jsonl(path, "checkpoint")
    if not records:
        raise ParseError(path, 1, "checkpoint has no parameter metadata")
    ln, meta = records[0]
    for key in ("arch", "tasks", "hidden_dim"):
        if key not in meta:
            raise ParseError(path, ln, f"checkpoint metadata lacks {key!r}")
    tensors = {}
    for ln, rec in records[1:]:
        def build(r):
            arr = np.asarray(r["data"], dtype=np.float64).reshape(tuple(r["shape"]))
            return parameter(arr, name=r["name"])
        t = _decode(path, ln, build, rec)
        tensors[t.name] = t
    params = ExecutorParams(
        meta["arch"],
        tuple(parse_algorithm(t) for t in meta["tasks"]),
        int(meta["hidden_dim"]),
        tensors,
        frozenset(meta.get("frozen", [])),
        bool(meta.get("extra_processor", False)),
    )
    return header, params


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def write_train_report(path, report: TrainReport, header):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"_header": header, **report.to_dict()}
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def read_train_report(path):
    path = Path(path)
    try:
        payload = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, f"invalid JSON: {exc.msg}") from exc
    if not isinstance(payload, dict):
        raise ParseError(path, 1, "expected a JSON object")
    header = payload.pop("_header", None)
    if header is None:
        raise ParseError(path, 1, "missing header")
    try:
        return header, TrainReport.from_dict(payload)
    except TypeError as exc:
        raise ParseError(path, 1, f"bad train report: {exc}") from exc


def write_metrics(csv_path, md_path, report: MetricsReport, header):
    """Per-family table as CSV (header as a leading '#' line) and the markdown report."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with csv_path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("# " + _dumps(header) + "\n")
        report.per_family.to_csv(fh, lineterminator="\n")
    if md_path is not None:
        Path(md_path).write_text(f"<!-- {_dumps(header)} -->\n" + report.to_markdown() + "\n", encoding="utf-8")
    return csv_path


def read_metrics(csv_path):
    csv_path = Path(csv_path)
    text = _read_text(csv_path)
    first, _, body = text.partition("\n")
    if not first.startswith("# "):
        raise ParseError(csv_path, 1, "missing header line")
    try:
        header = json.loads(first[2:])
    except json.JSONDecodeError as exc:
        raise ParseError(csv_path, 1, f"invalid header: {exc.msg}") from exc
    try:
        frame = pd.read_csv(io.StringIO(body))
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ParseError(csv_path, 2, f"invalid CSV: {exc}") from exc
    if not {"n", "family"} <= set(frame.columns):
        raise ParseError(csv_path, 2, "metrics table needs n and family columns")
    return header, report_from_frame(frame, header)
