"""End-to-end pipeline: data, traces, training per regime, evaluation over sizes and families.

Output directory layout:

    config.json                 resolved config and its hash
    state.json                  completed stages (a rerun with the same hash skips them)
    data/train_<FAMILY>.jsonl   training graphs
    data/eval_<FAMILY>_<n>.jsonl
    traces/<ALGO>.jsonl         oracle traces over the pooled training graphs
    base_checkpoint.jsonl       pretrained executor (transfer regimes)
    checkpoint.jsonl            trained executor
    base_train_report.json, train_report.json
    metrics.csv, report.md
"""

from __future__ import annotations

import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from data.algorithms import parse_algorithm
from utils.config import ExperimentConfig, Regime, RegimeConfig, config_hash
from utils.errors import InvalidArgument, InvalidState
from utils.executor import init_params, rollout
from utils.graphgen import DatasetSpec, derive_seed, generate_dataset, parse_family
from utils.regimes import (
    FinalTarget,
    apply_transfer,
    train_multitask,
    train_na,
    train_tf,
    train_tf_multi,
)
from utils.scoring import (
    GraphMetrics,
    MetricsReport,
    Prediction,
    aggregate,
    parallel_metrics,
    sequential_metrics,
    termination_accuracy,
)
from utils.serialize import (
    make_header,
    read_checkpoint,
    read_graphs,
    read_metrics,
    read_traces,
    write_checkpoint,
    write_graphs,
    write_metrics,
    write_train_report,
    write_traces,
)
from utils.trace_oracle import build_traces, run_algorithm

logger = logging.getLogger(__name__)

STAGES = ("data", "traces", "train", "eval")


# ---------------------------------------------------------------------------
# Building blocks shared with the CLI
# ---------------------------------------------------------------------------

def dataset_spec(cfg: ExperimentConfig, family, n, count, purpose) -> DatasetSpec:
    seed = derive_seed(cfg.seed, purpose, family, n)
    return DatasetSpec(parse_family(family), n, count, seed, cfg.ba_attachment)


def pool_graphs(graph_lists):
    """Interleave per-family lists by index: ER[0], BA[0], GRID[0], ER[1], ..."""
    pooled = []
    longest = max((len(g) for g in graph_lists), default=0)
    for i in range(longest):
        for graphs in graph_lists:
            if i < len(graphs):
                pooled.append(graphs[i])
    return pooled


def train_regime(rc: RegimeConfig, arch, traces_by_task, hidden_dim=None, extra_bases=()):
    """Train an executor for `rc.target_task` under `rc.regime`.

    Args:
        rc: regime configuration.
        arch: "NE" or "NEPP".
        traces_by_task: {AlgorithmId: [Trace]} covering the target and every base task.
        hidden_dim: optional hidden size override.
        extra_bases: further TF pretraining tasks for the transfer regimes.

    Returns:
        (params, report, base_params, base_report); the base entries are None
        unless the regime pretrains.
    """
    target = rc.target_task
    init_seed = derive_seed(rc.seed, "init")
    if rc.regime is Regime.TF:
        params = init_params(arch, (target,), hidden_dim, init_seed)
        return params, train_tf(params, target, traces_by_task[target], rc), None, None
    if rc.regime is Regime.NA:
        params = init_params(arch, (target,), hidden_dim, init_seed)
        finals = [FinalTarget.from_trace(t) for t in traces_by_task[target]]
        return params, train_na(params, target, finals, rc), None, None
    if rc.regime is Regime.MULTITASK:
        params = init_params(arch, (rc.base_task, target), hidden_dim, init_seed)
        finals = [FinalTarget.from_trace(t) for t in traces_by_task[target]]
        report = train_multitask(params, rc.base_task, traces_by_task[rc.base_task], target, finals, rc)
        return params, report, None, None

    bases = [rc.base_task] + [b for b in extra_bases if b is not rc.base_task]
    base_params = init_params(arch, tuple(bases), hidden_dim, derive_seed(rc.seed, "init", "base"))
    pretrain = replace(rc, regime=Regime.TF, seed=derive_seed(rc.seed, "pretrain"))
    base_report = train_tf_multi(base_params, {b: traces_by_task[b] for b in bases}, pretrain)
    params = apply_transfer(base_params, rc.regime, target, rc.seed, arch=arch)
    finals = [FinalTarget.from_trace(t) for t in traces_by_task[target]]
    return params, train_na(params, target, finals, rc), base_params, base_report


def evaluate_graph(params, task, trace, family, use_true_steps) -> GraphMetrics:
    """Free-running evaluation of one graph against its oracle trace."""
    steps = trace.T if use_true_steps else None
    record = rollout(params, task, trace.graph, "FREE", steps=steps, training=False)
    term = float("nan") if use_true_steps else termination_accuracy(record.T, trace.T)
    if task.is_sequential:
        tf_record = rollout(params, task, trace, "TF")
        m = sequential_metrics(Prediction.from_record(record, tf_record.next_node), trace)
        return GraphMetrics(family, trace.graph.n, m.next_node_error, m.key_error, m.pred_error, term,
                            record.truncated)
    m = parallel_metrics(Prediction.from_record(record), trace)
    return GraphMetrics(family, trace.graph.n, float("nan"), m.key_error, m.pred_error, term, record.truncated)


def evaluate(params, task, eval_sets, use_true_steps, meta=None) -> MetricsReport:
    """Evaluate on {(family, n): [WeightedGraph]} and aggregate.

    Args:
        params: trained executor serving `task`.
        task: the evaluated algorithm.
        eval_sets: graphs per (family, size).
        use_true_steps: give the rollout the oracle's T instead of the termination head.
        meta: stored on the returned report.
    """
    rows = []
    for (family, n), graphs in sorted(eval_sets.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        part = [evaluate_graph(params, task, run_algorithm(task, g), family, use_true_steps) for g in graphs]
        truncated = sum(r.truncated for r in part)
        if truncated:
            logger.warning("%s n=%d %s: %d of %d rollouts hit the step cap",
                           task.value, n, family, truncated, len(part))
        if any(not np.isfinite(r.key_error) for r in part):
            logger.warning("%s n=%d %s: non-finite key error", task.value, n, family)
        logger.info("evaluated %s on %d %s graphs with %d nodes", task.value, len(part), family, n)
        rows += part
    return aggregate(rows, meta)


# ---------------------------------------------------------------------------
# Resumable pipeline
# ---------------------------------------------------------------------------

class _State:
    def __init__(self, path: Path, cfg_hash: str):
        self.path = path
        self.hash = cfg_hash
        self.completed = []
        self.failed = None
        if path.is_file():
            stored = json.loads(path.read_text(encoding="utf-8"))
            if stored.get("config_hash") == cfg_hash:
                self.completed = list(stored.get("completed", []))
            else:
                logger.info("config changed (%s -> %s); starting over", stored.get("config_hash"), cfg_hash)

    def done(self, stage):
        return stage in self.completed

    def save(self):
        payload = {"config_hash": self.hash, "completed": self.completed, "failed": self.failed}
        self.path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    def mark(self, stage):
        if stage not in self.completed:
            self.completed.append(stage)
        self.failed = None
        self.save()

    def fail(self, stage, exc):
        self.failed = {"stage": stage, "error": f"{type(exc).__name__}: {exc}"}
        self.save()


class Pipeline:
    """Runs the stages of one experiment, reusing artifacts of completed stages."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.rc = cfg.regime_config()
        self.out = cfg.out_dir
        self.hash = config_hash(cfg)
        self.out.mkdir(parents=True, exist_ok=True)
        self.state = _State(self.out / "state.json", self.hash)
        self.extra_bases = tuple(parse_algorithm(b) for b in cfg.extra_bases)

    def header(self, kind, **extra):
        return make_header(kind, self.cfg.seed, self.hash, **extra)

    @property
    def tasks(self):
        tasks = [self.rc.target_task]
        if self.rc.base_task is not None and self.rc.base_task not in tasks:
            tasks.append(self.rc.base_task)
        tasks += [b for b in self.extra_bases if b not in tasks]
        return tasks

    def _train_path(self, family):
        return self.out / "data" / f"train_{family}.jsonl"

    def _eval_path(self, family, n):
        return self.out / "data" / f"eval_{family}_{n}.jsonl"

    def _trace_path(self, task):
        return self.out / "traces" / f"{task.value}.jsonl"

    def _run_stage(self, stage, fn):
        try:
            fn()
        except Exception as exc:
            self.state.fail(stage, exc)
            raise
        self.state.mark(stage)

    # -- stages -------------------------------------------------------------

    def stage_data(self):
        cfg = self.cfg
        for family in cfg.families:
            spec = dataset_spec(cfg, family, cfg.train_nodes, cfg.train_count, "train")
            write_graphs(self._train_path(family), generate_dataset(spec),
                         self.header("graphs", family=family, n=cfg.train_nodes))
            for n in cfg.eval_sizes:
                spec = dataset_spec(cfg, family, n, cfg.eval_count, "eval")
                write_graphs(self._eval_path(family, n), generate_dataset(spec),
                             self.header("graphs", family=family, n=n))

    def train_graphs(self):
        return pool_graphs([read_graphs(self._train_path(f))[1] for f in self.cfg.families])

    def eval_sets(self):
        return {
            (f, n): read_graphs(self._eval_path(f, n))[1]
            for f in self.cfg.families for n in self.cfg.eval_sizes
        }

    def stage_traces(self):
        graphs = self.train_graphs()
        for task in self.tasks:
            write_traces(self._trace_path(task), build_traces(task, graphs), self.header("traces", algo=task.value))

    def stage_train(self):
        traces = {task: read_traces(self._trace_path(task))[1] for task in self.tasks}
        params, report, base_params, base_report = train_regime(
            self.rc, self.cfg.arch.upper(), traces, self.cfg.hidden_dim, self.extra_bases,
        )
        if base_params is not None:
            write_checkpoint(self.out / "base_checkpoint.jsonl", base_params, self.header("checkpoint"))
            write_train_report(self.out / "base_train_report.json", base_report, self.header("train_report"))
        write_checkpoint(self.out / "checkpoint.jsonl", params, self.header("checkpoint"))
        write_train_report(self.out / "train_report.json", report, self.header("train_report"))

    def stage_eval(self):
        _, params = read_checkpoint(self.out / "checkpoint.jsonl")
        meta = {
            "algorithm": self.rc.target_task.value,
            "regime": self.rc.regime.value,
            "arch": params.arch,
        }
        report = evaluate(params, self.rc.target_task, self.eval_sets(),
                          self.rc.regime.target_uses_true_steps, meta)
        write_metrics(self.out / "metrics.csv", self.out / "report.md", report,
                      self.header("metrics", **meta))
        return report

    def run(self, eval_only=False) -> MetricsReport:
        (self.out / "config.json").write_text(
            json.dumps({"config_hash": self.hash, **self.cfg.to_dict()}, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
        if eval_only:
            if not (self.out / "checkpoint.jsonl").is_file():
                raise InvalidState(f"no checkpoint in {self.out}; run the full pipeline first")
            if not all(self._eval_path(f, n).is_file() for f in self.cfg.families for n in self.cfg.eval_sizes):
                self._run_stage("data", self.stage_data)
            return self.stage_eval()
        for stage in STAGES[:-1]:
            if self.state.done(stage):
                logger.info("stage %s already complete, skipping", stage)
                continue
            logger.info("stage %s", stage)
            self._run_stage(stage, getattr(self, f"stage_{stage}"))
        if self.state.done("eval") and (self.out / "metrics.csv").is_file():
            logger.info("stage eval already complete, loading metrics")
            return read_metrics(self.out / "metrics.csv")[1]
        report = None

        def run_eval():
            nonlocal report
            report = self.stage_eval()

        logger.info("stage eval")
        self._run_stage("eval", run_eval)
        return report


def run_experiment(cfg: ExperimentConfig, eval_only=False) -> MetricsReport:
    """Run (or resume) the whole pipeline for one config; returns the metrics report."""
    if not isinstance(cfg, ExperimentConfig):
        raise InvalidArgument("run_experiment expects an ExperimentConfig")
    return Pipeline(cfg).run(eval_only=eval_only)

