"""Training regimes: teacher forcing, no-algorithm rollouts, transfer and multi-task learning.

Every regime shares one loop (`_fit`): shuffle, batch, Adam step over the
non-frozen tensors, validate once per epoch, stop `patience` epochs after the
last validation improvement and restore the best parameters.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from data import defaults
from data.algorithms import AlgorithmId
from utils.config import Regime, RegimeConfig, TrajectoryAggregate, parse_regime
from utils.diffcore import (
    AdamState,
    Tensor,
    adam_step,
    add_n,
    bce,
    masked_softmax_ce,
    slice_cols,
    smooth_l1,
    take_rows,
)
from utils.errors import InvalidArgument, InvalidState
from utils.executor import ExecutorParams, edge_index, fresh_processor, init_params, parse_arch, rollout
from utils.graphgen import WeightedGraph, derive_seed
from utils.trace_oracle import Trace, numeric_keys

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FinalTarget:
    """Final-output supervision for one graph: keys, predecessors and the number of steps."""

    graph: WeightedGraph
    keys: tuple
    preds: tuple
    T: int | None

    @classmethod
    def from_trace(cls, trace: Trace):
        last = trace.steps[-1]
        return cls(trace.graph, last.keys, last.preds, trace.T)

    @property
    def reached(self):
        return np.array([p is not None for p in self.preds])

    def pred_targets(self):
        return np.array([p if p is not None else i for i, p in enumerate(self.preds)], dtype=np.int64)


@dataclass
class TrainReport:
    regime: str
    tasks: list
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf
    stopping_epoch: int = 0
    optimizer_steps: int = 0

    def to_dict(self):
        return {
            "regime": self.regime,
            "tasks": list(self.tasks),
            "train_losses": list(self.train_losses),
            "val_losses": list(self.val_losses),
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "stopping_epoch": self.stopping_epoch,
            "optimizer_steps": self.optimizer_steps,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def _mean(terms) -> Tensor:
    return add_n(terms) * (1.0 / len(terms))


def _reached_keys(task, state_keys, preds):
    idx = np.array([i for i, p in enumerate(preds) if p is not None], dtype=np.int64)
    numeric = numeric_keys(task, state_keys)
    return idx, np.array([[numeric[i]] for i in idx])


def tf_step_loss(task, out, candidates, prev, cur, t, T, popped_node=None) -> Tensor:
    """Sum of all head losses for teacher-forced step t (1-based) of a T-step trace."""
    terms = []
    reached = np.array(cur.reached)
    pred_targets = np.array([p if p is not None else i for i, p in enumerate(cur.preds)], dtype=np.int64)
    if task.is_sequential:
        mask = ~np.asarray(prev.popped)[None, :]
        terms.append(masked_softmax_ce(out.select_logits, mask, [popped_node]))
        key = take_rows(out.keys, [popped_node])
        terms.append(smooth_l1(key, [[cur.keys[popped_node]]]))
    elif task is AlgorithmId.BFS_P:
        terms.append(bce(out.keys, reached.astype(np.float64)[:, None]))
    else:
        idx, truth = _reached_keys(task, cur.keys, cur.preds)
        terms.append(smooth_l1(take_rows(slice_cols(out.keys, 0, 1), idx), truth))
        terms.append(bce(slice_cols(out.keys, 1, 2), reached.astype(np.float64)[:, None]))
    terms.append(masked_softmax_ce(out.pred_logits, candidates, pred_targets, reached.astype(np.float64)))
    terms.append(bce(out.term_logit, [[1.0 if t == T else 0.0]]))
    return add_n(terms)


def tf_loss(params: ExecutorParams, task: AlgorithmId, trace: Trace) -> Tensor:
    """Mean over steps of the teacher-forced per-step loss."""
    record = rollout(params, task, trace, "TF")
    candidates = edge_index(trace.graph).candidates
    terms = []
    for t, out in enumerate(record.outputs, start=1):
        popped = trace.pop_sequence[t - 1] if task.is_sequential else None
        terms.append(tf_step_loss(task, out, candidates, trace.steps[t - 1], trace.steps[t], t, trace.T, popped))
    return _mean(terms)


def final_output_loss(task, record, target: FinalTarget, selection_bce=False) -> Tensor:
    """Loss on the final outputs of a free-running rollout."""
    candidates = edge_index(target.graph).candidates
    reached = target.reached
    idx, truth = _reached_keys(task, target.keys, target.preds)
    last = record.outputs[-1]
    terms = []
    if task.is_sequential:
        terms.append(smooth_l1(take_rows(slice_cols(record.final_state, 0, 1), idx), truth))
    elif task is AlgorithmId.BFS_P:
        terms.append(bce(last.keys, reached.astype(np.float64)[:, None]))
    else:
        terms.append(smooth_l1(take_rows(slice_cols(last.keys, 0, 1), idx), truth))
        terms.append(bce(slice_cols(last.keys, 1, 2), reached.astype(np.float64)[:, None]))
    terms.append(masked_softmax_ce(last.pred_logits, candidates, target.pred_targets(), reached.astype(np.float64)))
    if selection_bce and task.is_sequential and record.choices:
        picks = [bce(out.select_logits, choice.data) for out, choice in zip(record.outputs, record.choices)]
        terms.append(_mean(picks))
    return add_n(terms)


def aggregate_trajectory_losses(losses, how=TrajectoryAggregate.BEST) -> Tensor:
    """BEST keeps the lowest-loss trajectory (first on ties); MEAN averages all of them."""
    if not losses:
        raise InvalidArgument("no trajectory losses to aggregate")
    if TrajectoryAggregate(how) is TrajectoryAggregate.MEAN:
        return _mean(losses)
    values = [float(loss.data) for loss in losses]
    return losses[int(np.argmin(values))]


def na_loss(params, task, target: FinalTarget, cfg: RegimeConfig, rng, training=True) -> Tensor:
    """Final-output loss over `cfg.trajectories` sampled rollouts (one for parallel tasks)."""
    if target.T is None:
        raise InvalidArgument("no-algorithm training needs the number of steps of every graph")
    k = cfg.trajectories if task.is_sequential and training else 1
    losses = []
    for _ in range(k):
        record = rollout(
            params, task, target.graph, "FREE", rng=rng, steps=target.T,
            training=training, temperature=cfg.temperature,
        )
        losses.append(final_output_loss(task, record, target, cfg.na_selection_bce))
    return aggregate_trajectory_losses(losses, cfg.trajectory_aggregate)


# ---------------------------------------------------------------------------
# Shared loop
# ---------------------------------------------------------------------------

def training_streams(seed):
    """Independent generators for batch order, Gumbel noise and base-task batch order."""
    shuffle, gumbel, base = np.random.SeedSequence(int(seed)).spawn(3)
    return np.random.default_rng(shuffle), np.random.default_rng(gumbel), np.random.default_rng(base)


def split_by_index(items, fraction=defaults.VALIDATION_FRACTION):
    """Last `fraction` of the items validate; too small a set validates on itself."""
    items = list(items)
    n_val = int(len(items) * fraction)
    if n_val == 0 or n_val == len(items):
        return items, items
    return items[:-n_val], items[-n_val:]


def _batches(order, size):
    for start in range(0, len(order), size):
        yield order[start:start + size]


def _fit(params, cfg, train, batch_loss, validation_loss, shuffle_rng, label) -> TrainReport:
    if not train:
        raise InvalidArgument("training set is empty")
    state = AdamState(lr=cfg.lr)
    report = TrainReport(cfg.regime.value, [t.value for t in params.tasks])
    best = params.snapshot()
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(len(train))
        losses = []
        for batch in _batches(order, cfg.batch):
            params.zero_grad()
            loss = batch_loss([train[i] for i in batch])
            value = float(loss.data)
            if not np.isfinite(value):
                raise InvalidState(f"{label}: non-finite training loss at epoch {epoch}")
            loss.backward()
            adam_step(params.tensors, params.grads(), state, frozen=params.frozen)
            report.optimizer_steps += 1
            losses.append(value)
            logger.debug("%s epoch %d batch loss %.6g", label, epoch, value)
        params.zero_grad()
        train_loss = float(np.mean(losses))
        val_loss = float(validation_loss())
        if not np.isfinite(val_loss):
            logger.warning("%s epoch %d: non-finite validation loss", label, epoch)
            val_loss = math.inf
        report.train_losses.append(train_loss)
        report.val_losses.append(val_loss)
        report.stopping_epoch = epoch
        logger.info("%s epoch %d train %.6g val %.6g", label, epoch, train_loss, val_loss)
        if val_loss < report.best_val_loss:
            report.best_val_loss = val_loss
            report.best_epoch = epoch
            best = params.snapshot()
        elif epoch - report.best_epoch >= cfg.patience:
            logger.info("%s early stop at epoch %d (best %d)", label, epoch, report.best_epoch)
            break
    params.load_snapshot(best)
    return report


def _mean_value(loss_fn, items):
    return float(np.mean([float(loss_fn(item).data) for item in items]))


# ---------------------------------------------------------------------------
# Regimes
# ---------------------------------------------------------------------------

def train_tf_multi(params: ExecutorParams, traces_by_task, cfg: RegimeConfig) -> TrainReport:
    """Teacher forcing on one or more tasks; each batch mixes them and the loss is their mean."""
    if not traces_by_task or not any(traces_by_task.values()):
        raise InvalidArgument("teacher forcing needs at least one trace")
    train, val = [], []
    for task, traces in traces_by_task.items():
        params.check_task(task)
        tr, va = split_by_index([(task, t) for t in traces])
        train += tr
        val += va
    shuffle_rng, _, _ = training_streams(cfg.seed)

    def item_loss(item):
        task, trace = item
        return tf_loss(params, task, trace)

    def batch_loss(batch):
        return _mean([item_loss(item) for item in batch])

    label = "TF[" + ",".join(t.value for t in traces_by_task) + "]"
    return _fit(params, cfg, train, batch_loss, lambda: _mean_value(item_loss, val), shuffle_rng, label)


def train_tf(params: ExecutorParams, task: AlgorithmId, traces, cfg: RegimeConfig) -> TrainReport:
    if not traces:
        raise InvalidArgument("teacher forcing needs at least one trace")
    return train_tf_multi(params, {task: list(traces)}, cfg)


def _na_parts(params, task, targets, cfg):
    params.check_task(task)
    targets = [t if isinstance(t, FinalTarget) else FinalTarget.from_trace(t) for t in targets]
    if not targets:
        raise InvalidArgument("no-algorithm training needs at least one graph")
    missing = [i for i, t in enumerate(targets) if t.T is None]
    if missing:
        raise InvalidArgument(f"graph {missing[0]} has no step count")
    train, val = split_by_index(targets)
    shuffle_rng, gumbel_rng, base_rng = training_streams(cfg.seed)

    def batch_loss(batch):
        return _mean([na_loss(params, task, target, cfg, gumbel_rng) for target in batch])

    def validation_loss():
        return _mean_value(lambda target: na_loss(params, task, target, cfg, None, training=False), val)

    return train, batch_loss, validation_loss, shuffle_rng, base_rng


def train_na(params: ExecutorParams, task: AlgorithmId, targets, cfg: RegimeConfig) -> TrainReport:
    """Train on final outputs only; `targets` are FinalTargets (or traces, reduced to their finals)."""
    train, batch_loss, validation_loss, shuffle_rng, _ = _na_parts(params, task, targets, cfg)
    return _fit(params, cfg, train, batch_loss, validation_loss, shuffle_rng, f"NA[{task.value}]")


def apply_transfer(pretrained: ExecutorParams, mode, target_task: AlgorithmId, seed, arch=None) -> ExecutorParams:
    """Fresh encoders/decoders for the target around the pretrained processor.

    FREEZE copies the processor and freezes it, FINETUNE copies it trainable, and
    2PROC keeps the frozen copy and adds a fresh trainable processor summed with it.
    """
    if isinstance(mode, Regime):
        regime = mode
    else:
        key = str(mode).strip().upper().replace("-", "_")
        regime = parse_regime(key if key.startswith("TRANSFER_") else "TRANSFER_" + key)
    if not regime.is_transfer:
        raise InvalidArgument(f"{regime.value} is not a transfer mode")
    if arch is not None and parse_arch(arch) != pretrained.arch:
        raise InvalidArgument(f"pretrained executor is {pretrained.arch}, requested {arch}")
    if any(t.framework is not target_task.framework for t in pretrained.tasks):
        raise InvalidArgument(f"pretrained tasks and {target_task.value} use different frameworks")
    two = regime is Regime.TRANSFER_2PROC
    params = init_params(
        pretrained.arch, (target_task,), dims=pretrained.hidden_dim,
        seed=derive_seed(seed, "transfer", target_task.value), extra_processor=two,
    )
    for name in pretrained.processor_names():
        params.tensors[name].data[...] = pretrained.tensors[name].data
    if two:
        fresh_processor(params, "processor2", derive_seed(seed, "transfer", "processor2"))
    if regime in (Regime.TRANSFER_FREEZE, Regime.TRANSFER_2PROC):
        params.frozen = frozenset(params.processor_names())
    logger.info("transfer %s -> %s (%s), %d frozen tensors",
                ",".join(t.value for t in pretrained.tasks), target_task.value, regime.value, len(params.frozen))
    return params


def train_multitask(params: ExecutorParams, base_task, base_traces, target_task, targets,
                    cfg: RegimeConfig) -> TrainReport:
    """Each optimizer step sums the base TF batch loss and the target NA batch loss."""
    params.check_task(base_task)
    if base_task is target_task:
        raise InvalidArgument("multi-task training needs two different tasks")
    train, na_batch, na_validation, shuffle_rng, base_rng = _na_parts(params, target_task, targets, cfg)
    if not cfg.include_base_loss:
        return _fit(params, cfg, train, na_batch, na_validation, shuffle_rng, f"MT[{target_task.value}]")
    if not base_traces:
        raise InvalidArgument("multi-task training needs base traces")
    base_train, base_val = split_by_index(base_traces)

    def base_batches():
        while True:
            order = base_rng.permutation(len(base_train))
            yield from _batches(order, cfg.batch)

    base_stream = base_batches()

    def batch_loss(batch):
        base = [tf_loss(params, base_task, base_train[i]) for i in next(base_stream)]
        return na_batch(batch) + _mean(base)

    def validation_loss():
        return na_validation() + _mean_value(lambda tr: tf_loss(params, base_task, tr), base_val)

    label = f"MT[{base_task.value}+{target_task.value}]"
    return _fit(params, cfg, train, batch_loss, validation_loss, shuffle_rng, label)
