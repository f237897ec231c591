import math

import numpy as np
import pytest

from data.algorithms import AlgorithmId
from utils.config import Regime, RegimeConfig, TrajectoryAggregate
from utils.diffcore import constant, mean_all
from utils.errors import InvalidArgument, InvalidState
from utils.executor import init_params
from utils.graphgen import DatasetSpec, GraphFamily, WeightedGraph, generate_dataset
from utils.regimes import (
    FinalTarget,
    TrainReport,
    _fit,
    aggregate_trajectory_losses,
    apply_transfer,
    na_loss,
    split_by_index,
    tf_loss,
    train_multitask,
    train_na,
    train_tf,
    training_streams,
)
from utils.trace_oracle import build_traces, run_algorithm

DIJ = AlgorithmId.DIJKSTRA_S
PRIM = AlgorithmId.PRIM_S


def _traces(task, count=4, n=5, seed=0):
    graphs = generate_dataset(DatasetSpec(GraphFamily.BA, n, count, master_seed=seed))
    return build_traces(task, graphs)


def _cfg(regime=Regime.TF, target=DIJ, base=None, **kw):
    kw.setdefault("max_epochs", 2)
    kw.setdefault("batch", 2)
    kw.setdefault("trajectories", 2)
    return RegimeConfig(regime=regime, target_task=target, base_task=base, **kw)


def _same_tensors(a, b):
    return all(np.array_equal(a.tensors[k].data, b.tensors[k].data) for k in a.tensors)


def test_final_target_from_trace():
    g = WeightedGraph(3, ((0, 1, 0.5),), 0)
    target = FinalTarget.from_trace(run_algorithm(DIJ, g))
    assert target.T == 2
    assert list(target.reached) == [True, True, False]
    assert list(target.pred_targets()) == [0, 0, 2]


def test_split_by_index():
    train, val = split_by_index(range(20))
    assert train == list(range(18))
    assert val == [18, 19]
    small_train, small_val = split_by_index(range(5))
    assert small_train == small_val == list(range(5))


def test_training_streams_are_reproducible_and_distinct():
    a = [rng.random() for rng in training_streams(3)]
    b = [rng.random() for rng in training_streams(3)]
    assert a == b
    assert len(set(a)) == 3


def test_tf_loss_is_finite_and_positive():
    params = init_params("NE", [DIJ], dims=4)
    for trace in _traces(DIJ):
        value = float(tf_loss(params, DIJ, trace).data)
        assert np.isfinite(value) and value > 0


def test_best_aggregate_never_exceeds_mean():
    losses = [constant(np.array(v)) for v in (0.7, 0.2, 0.9, 0.2)]
    best = aggregate_trajectory_losses(losses, TrajectoryAggregate.BEST)
    mean = aggregate_trajectory_losses(losses, TrajectoryAggregate.MEAN)
    assert best is losses[1]
    assert float(best.data) <= float(mean.data)
    assert float(mean.data) == pytest.approx(0.5)
    with pytest.raises(InvalidArgument):
        aggregate_trajectory_losses([])


def test_best_na_loss_on_same_noise_is_lower():
    params = init_params("NE", [DIJ], dims=4, seed=2)
    target = FinalTarget.from_trace(_traces(DIJ, count=1, n=6)[0])
    best = na_loss(params, DIJ, target, _cfg(trajectories=4), np.random.default_rng(7))
    mean = na_loss(
        params, DIJ, target,
        _cfg(trajectories=4, trajectory_aggregate=TrajectoryAggregate.MEAN),
        np.random.default_rng(7),
    )
    assert float(best.data) <= float(mean.data) + 1e-12


def test_na_loss_needs_step_count():
    params = init_params("NE", [DIJ], dims=4)
    trace = _traces(DIJ, count=1)[0]
    last = trace.steps[-1]
    with pytest.raises(InvalidArgument):
        na_loss(params, DIJ, FinalTarget(trace.graph, last.keys, last.preds, None), _cfg(), None)


class _TinyParams:
    """Just enough of ExecutorParams for the shared loop."""

    def __init__(self):
        self.tensors = {"w": init_params("NE", [DIJ], dims=2).tensors["encoder.W"]}
        self.tasks = (DIJ,)
        self.frozen = frozenset()

    def snapshot(self):
        return {k: t.data.copy() for k, t in self.tensors.items()}

    def load_snapshot(self, arrays):
        for k, arr in arrays.items():
            self.tensors[k].data[...] = arr

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()

    def grads(self):
        return {k: t.grad for k, t in self.tensors.items()}


def test_early_stopping_restores_best_epoch():
    params = _TinyParams()
    w = params.tensors["w"]
    val_sequence = iter([5.0, 4.0, 3.0, 3.5, 3.6, 3.7, 1.0, 1.0])
    seen = []

    def validation_loss():
        seen.append(params.snapshot()["w"])
        return next(val_sequence)

    cfg = _cfg(max_epochs=20, patience=3, batch=1, lr=0.01)
    report = _fit(params, cfg, [0], lambda batch: mean_all(w * w), validation_loss,
                  np.random.default_rng(0), "test")
    assert report.best_epoch == 3
    assert report.stopping_epoch == 6
    assert report.best_val_loss == 3.0
    assert len(report.train_losses) == len(report.val_losses) == 6
    assert report.optimizer_steps == 6
    assert np.array_equal(w.data, seen[2])


def test_non_finite_training_loss_raises():
    params = _TinyParams()
    w = params.tensors["w"]
    with pytest.raises(InvalidState):
        _fit(params, _cfg(), [0], lambda batch: mean_all(w * float("nan")), lambda: 1.0,
             np.random.default_rng(0), "test")


def test_non_finite_validation_counts_as_no_improvement():
    params = _TinyParams()
    w = params.tensors["w"]
    report = _fit(params, _cfg(max_epochs=3, patience=5), [0], lambda batch: mean_all(w * w),
                  lambda: float("nan"), np.random.default_rng(0), "test")
    assert report.val_losses == [math.inf] * 3
    assert report.best_epoch == 0


def test_train_tf_is_deterministic():
    traces = _traces(DIJ, count=3)
    runs = []
    for _ in range(2):
        params = init_params("NE", [DIJ], dims=4, seed=1)
        report = train_tf(params, DIJ, traces, _cfg(seed=5))
        runs.append((params, report))
    (pa, ra), (pb, rb) = runs
    assert ra.to_dict() == rb.to_dict()
    assert _same_tensors(pa, pb)
    assert ra.optimizer_steps == 2 * 2


def test_train_tf_rejects_empty_and_foreign_tasks():
    params = init_params("NE", [DIJ], dims=4)
    with pytest.raises(InvalidArgument):
        train_tf(params, DIJ, [], _cfg())
    with pytest.raises(InvalidArgument):
        train_tf(params, PRIM, _traces(PRIM), _cfg(target=PRIM))


def test_train_na_runs_on_parallel_task():
    task = AlgorithmId.BELLMAN_FORD_P
    params = init_params("NEPP", [task], dims=4)
    report = train_na(params, task, _traces(task), _cfg(regime=Regime.NA, target=task))
    assert report.regime == "NA"
    assert report.stopping_epoch == 2
    assert all(np.isfinite(report.train_losses))


@pytest.mark.parametrize("mode", ["freeze", "2proc"])
def test_frozen_processor_is_bitwise_unchanged(mode):
    pretrained = init_params("NE", [PRIM], dims=4, seed=0)
    params = apply_transfer(pretrained, mode, DIJ, seed=1)
    assert params.frozen == frozenset(params.processor_names())
    before = {k: params.tensors[k].data.copy() for k in params.processor_names()}
    for k, arr in before.items():
        assert np.array_equal(arr, pretrained.tensors[k].data)
    cfg = _cfg(regime=Regime("TRANSFER_" + mode.upper()), base=PRIM)
    train_na(params, DIJ, _traces(DIJ), cfg)
    for k, arr in before.items():
        assert np.array_equal(params.tensors[k].data, arr)
    if mode == "2proc":
        assert any(k.startswith("processor2.") for k in params.tensors)
        assert not any(k.startswith("processor2.") for k in params.frozen)


def test_finetune_updates_processor():
    pretrained = init_params("NE", [PRIM], dims=4, seed=0)
    params = apply_transfer(pretrained, Regime.TRANSFER_FINETUNE, DIJ, seed=1)
    assert not params.frozen
    train_na(params, DIJ, _traces(DIJ), _cfg(regime=Regime.TRANSFER_FINETUNE, base=PRIM))
    assert not np.array_equal(params.tensors["processor.msg.W"].data, pretrained.tensors["processor.msg.W"].data)


def test_transfer_checks():
    pretrained = init_params("NE", [PRIM], dims=4)
    with pytest.raises(InvalidArgument):
        apply_transfer(pretrained, "freeze", AlgorithmId.BFS_P, seed=0)
    with pytest.raises(InvalidArgument):
        apply_transfer(pretrained, "freeze", DIJ, seed=0, arch="ne++")
    with pytest.raises(InvalidArgument):
        apply_transfer(pretrained, "multitask", DIJ, seed=0)


def test_multitask_without_base_loss_matches_na():
    targets = _traces(DIJ)
    base_traces = _traces(PRIM, seed=3)
    cfg = _cfg(regime=Regime.MULTITASK, base=PRIM, include_base_loss=False)
    a = init_params("NE", [PRIM, DIJ], dims=4, seed=2)
    b = a.copy()
    ra = train_multitask(a, PRIM, base_traces, DIJ, targets, cfg)
    rb = train_na(b, DIJ, targets, cfg)
    assert ra.train_losses == rb.train_losses
    assert _same_tensors(a, b)


def test_multitask_adds_base_loss():
    targets = _traces(DIJ)
    base_traces = _traces(PRIM, seed=3)
    cfg = _cfg(regime=Regime.MULTITASK, base=PRIM, max_epochs=1)
    a = init_params("NE", [PRIM, DIJ], dims=4, seed=2)
    b = a.copy()
    with_base = train_multitask(a, PRIM, base_traces, DIJ, targets, cfg)
    without = train_na(b, DIJ, targets, cfg)
    assert with_base.train_losses[0] > without.train_losses[0]
    with pytest.raises(InvalidArgument):
        train_multitask(a, DIJ, base_traces, DIJ, targets, cfg)


def test_train_report_round_trip():
    report = TrainReport("TF", ["DIJKSTRA_S"], [1.0, 0.5], [1.1, 0.6], 2, 0.6, 2, 10)
    assert TrainReport.from_dict(report.to_dict()) == report


@pytest.mark.slow
def test_single_graph_overfit():
    task = AlgorithmId.BFS_P
    trace = run_algorithm(task, WeightedGraph(4, ((0, 1, 0.5), (1, 2, 0.5), (2, 3, 0.5)), 0))
    params = init_params("NE", [task], dims=16, seed=0)
    cfg = _cfg(target=task, max_epochs=500, patience=500, batch=1, lr=0.01)
    report = train_tf(params, task, [trace], cfg)
    assert min(report.train_losses) < 1e-3


@pytest.mark.slow
def test_teacher_forcing_learns_dijkstra():
    traces = _traces(DIJ, count=200, n=8, seed=11)
    params = init_params("NE", [DIJ], seed=0)
    report = train_tf(params, DIJ, traces, _cfg(max_epochs=30, patience=30, batch=32, lr=0.001))
    assert report.val_losses[report.best_epoch - 1] < 0.5 * report.val_losses[0]
