"""Evaluation metrics: next-node, key and predecessor errors, termination accuracy, aggregation."""

import os
import sys
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
import pandas as pd

# Allow imports from project root when run directly
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from data.algorithms import AlgorithmId
from utils.errors import InvalidArgument
from utils.trace_oracle import numeric_keys

METRIC_COLUMNS = ["next_node_error", "key_error", "pred_error", "term_accuracy"]

METRIC_LABELS = {
    "next_node_error": "Next-node error",
    "key_error": "Key MSE (BFS: accuracy)",
    "pred_error": "Pred. error",
    "term_accuracy": "Term. accuracy",
}


@dataclass(frozen=True)
class Prediction:
    """What a model produced for one graph, reduced to the numbers the metrics need."""

    keys: tuple
    preds: tuple
    pops: tuple = ()
    next_node: tuple = ()
    T: int = 0
    truncated: bool = False

    @classmethod
    def from_record(cls, record, next_node=None):
        return cls(
            tuple(float(k) for k in record.final_keys()),
            tuple(int(p) for p in record.final_preds()),
            tuple(record.pops),
            tuple(next_node if next_node is not None else record.next_node),
            record.T,
            record.truncated,
        )


def _as_prediction(pred):
    return pred if isinstance(pred, Prediction) else Prediction.from_record(pred)


class SequentialMetrics(NamedTuple):
    next_node_error: float
    key_error: float
    pred_error: float
    length_mismatch: bool


class ParallelMetrics(NamedTuple):
    key_error: float
    pred_error: float


# ---------------------------------------------------------------------------
# Per-graph metrics
# ---------------------------------------------------------------------------

def _reachable(truth):
    last = truth.steps[-1]
    return np.array([p is not None for p in last.preds])


def _key_mse(pred_keys, truth, mask):
    if not mask.any():
        return 0.0
    truth_keys = np.array(numeric_keys(truth.algo, truth.steps[-1].keys), dtype=np.float64)
    diff = np.asarray(pred_keys, dtype=np.float64)[mask] - truth_keys[mask]
    return float(np.mean(diff * diff))


def _pred_error(pred_preds, truth, mask):
    if not mask.any():
        return 0.0
    truth_preds = np.array([p if p is not None else -1 for p in truth.steps[-1].preds])
    return float(np.mean(np.asarray(pred_preds)[mask] != truth_preds[mask]))


def _check_same_graph(pred, truth):
    if len(pred.keys) != truth.graph.n or len(pred.preds) != truth.graph.n:
        raise InvalidArgument(
            f"prediction covers {len(pred.keys)} nodes, trace graph has {truth.graph.n}"
        )


def sequential_metrics(pred, truth, next_nodes=None) -> SequentialMetrics:
    """Metrics of a sequential prediction against its trace.

    Args:
        pred: Prediction or RolloutRecord.
        truth: the oracle Trace of the same graph.
        next_nodes: teacher-forced next-node picks; defaults to the prediction's own
                    next_node list, or its pops when that is empty.

    Returns:
        SequentialMetrics. Pops are compared up to the shorter length; a length
        difference sets `length_mismatch`. Key MSE covers the selected (popped)
        nodes that the truth reaches; a prediction without pops is scored on
        every reachable node. Predecessor error covers every reachable node.
    """
    pred = _as_prediction(pred)
    _check_same_graph(pred, truth)
    if next_nodes is None:
        next_nodes = pred.next_node or pred.pops
    picks = list(next_nodes)
    true_pops = list(truth.pop_sequence)
    m = min(len(picks), len(true_pops))
    if m == 0:
        next_error = 1.0 if true_pops else 0.0
    else:
        next_error = float(np.mean([a != b for a, b in zip(picks[:m], true_pops[:m])]))
    mask = _reachable(truth)
    selected = mask.copy()
    if pred.pops:
        selected[:] = False
        selected[list(pred.pops)] = True
        selected &= mask
    return SequentialMetrics(
        next_error,
        _key_mse(pred.keys, truth, selected),
        _pred_error(pred.preds, truth, mask),
        len(picks) != len(true_pops),
    )


def parallel_metrics(pred, truth) -> ParallelMetrics:
    """Key MSE and predecessor error over truth-reachable nodes.

    For BFS the key metric is instead the accuracy of the 0/1 state over all
    nodes, thresholding the predicted probability at 0.5.
    """
    pred = _as_prediction(pred)
    _check_same_graph(pred, truth)
    mask = _reachable(truth)
    if truth.algo is AlgorithmId.BFS_P:
        state = np.asarray(pred.keys, dtype=np.float64) > 0.5
        key = float(np.mean(state == mask))
    else:
        key = _key_mse(pred.keys, truth, mask)
    return ParallelMetrics(key, _pred_error(pred.preds, truth, mask))


def termination_accuracy(T_pred, T_true) -> float:
    """1 - |T_pred - T_true| / T_true; can go negative."""
    if T_true <= 0:
        raise InvalidArgument(f"termination accuracy needs T_true >= 1, got {T_true}")
    if T_pred < 0:
        raise InvalidArgument(f"T_pred must be >= 0, got {T_pred}")
    return 1.0 - abs(T_pred - T_true) / T_true


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GraphMetrics:
    family: str
    n: int
    next_node_error: float = float("nan")
    key_error: float = float("nan")
    pred_error: float = float("nan")
    term_accuracy: float = float("nan")
    truncated: bool = False


@dataclass
class MetricsReport:
    """Per-(size, family) means and the cross-family mean and population std per size."""

    per_family: pd.DataFrame
    summary: pd.DataFrame
    meta: dict = field(default_factory=dict)

    def value(self, n, metric, stat="mean"):
        return float(self.summary.loc[int(n), (metric, stat)])

    def summary_table(self):
        """One row per size, each metric rendered as 'mean ± std'."""
        rows = {}
        for n in self.summary.index:
            row = {}
            for metric in METRIC_COLUMNS:
                mean = self.summary.loc[n, (metric, "mean")]
                std = self.summary.loc[n, (metric, "std")]
                row[METRIC_LABELS[metric]] = "n/a" if pd.isna(mean) else f"{mean:.4g} ± {std:.2g}"
            rows[int(n)] = row
        table = pd.DataFrame.from_dict(rows, orient="index")
        table.index.name = "nodes"
        return table

    def to_markdown(self):
        algo = self.meta.get("algorithm", "")
        lines = [f"# {algo} ({self.meta.get('regime', '')}, {self.meta.get('arch', '')})".rstrip(), ""]
        lines += ["## Mean ± std across graph families", "", self.summary_table().to_markdown(), ""]
        per_family = self.per_family.rename(columns=METRIC_LABELS)
        lines += ["## Per family", "", per_family.to_markdown(floatfmt=".4g"), ""]
        return "\n".join(lines)


def summarise(per_family: pd.DataFrame) -> pd.DataFrame:
    """Cross-family mean and population std of each metric, per size."""
    grouped = per_family[METRIC_COLUMNS].groupby(level="n")
    mean = grouped.mean()
    std = grouped.std(ddof=0)
    std = std.where(mean.notna())
    summary = pd.concat({"mean": mean, "std": std}, axis=1).swaplevel(axis=1)
    return summary[[(m, s) for m in METRIC_COLUMNS for s in ("mean", "std")]]


def aggregate(reports, meta=None) -> MetricsReport:
    """Per-family means, then mean ± population std across families.

    Args:
        reports: iterable of GraphMetrics.
        meta: optional dict stored on the report (algorithm, regime, arch, seed ...).

    Returns:
        MetricsReport indexed by size n.
    """
    rows = [asdict(r) for r in reports]
    if not rows:
        raise InvalidArgument("aggregate needs at least one per-graph report")
    df = pd.DataFrame(rows)
    df["truncated"] = df["truncated"].astype(float)
    per_family = df.groupby(["n", "family"], sort=True)[METRIC_COLUMNS + ["truncated"]].mean()
    per_family["graphs"] = df.groupby(["n", "family"], sort=True).size()
    per_family = per_family.rename(columns={"truncated": "truncated_fraction"})
    return MetricsReport(per_family, summarise(per_family), dict(meta or {}))


def report_from_frame(per_family: pd.DataFrame, meta=None) -> MetricsReport:
    """Rebuild a report from a stored per-family table."""
    if list(per_family.index.names) != ["n", "family"]:
        per_family = per_family.set_index(["n", "family"])
    return MetricsReport(per_family, summarise(per_family), dict(meta or {}))


if __name__ == "__main__":
    print("Running metric checks...\n")

    assert termination_accuracy(5, 5) == 1.0
    assert termination_accuracy(2, 4) == 0.5
    assert termination_accuracy(8, 4) == 0.0
    print("  termination_accuracy - PASS")

    report = aggregate([
        GraphMetrics("ER", 12, key_error=0.1, pred_error=0.1),
        GraphMetrics("BA", 12, key_error=0.2, pred_error=0.2),
        GraphMetrics("GRID", 12, key_error=0.3, pred_error=0.3),
    ])
    assert abs(report.value(12, "key_error") - 0.2) < 1e-12
    print("  aggregate mean - PASS")
    print(report.to_markdown())
