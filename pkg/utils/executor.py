"""Encode-process-decode executors (NE and NE++), single steps and rollouts."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from data import defaults
from data.algorithms import AlgorithmId
from utils.diffcore import (
    Tensor,
    affine,
    concat,
    constant,
    gumbel_softmax_sample,
    max_aggregate,
    parameter,
    relu,
    scatter_dense,
    sigmoid,
    slice_cols,
    take_rows,
    transpose,
)
from utils.errors import InvalidArgument
from utils.graphgen import WeightedGraph, derive_seed
from utils.trace_oracle import StepState, Trace, initial_state

logger = logging.getLogger(__name__)

ARCHS = ("NE", "NEPP")


def input_dim(task: AlgorithmId) -> int:
    """Sequential nodes carry [key, reached, popped]; parallel nodes [key, reached]."""
    return 3 if task.is_sequential else 2


def output_dim(task: AlgorithmId) -> int:
    """Sequential: key. BFS: one 0/1 logit. Other parallel: key and reach logit."""
    if task.is_sequential or task is AlgorithmId.BFS_P:
        return 1
    return 2


def parse_arch(name) -> str:
    key = str(name).strip().upper().replace("+", "P")
    if key not in ARCHS:
        raise InvalidArgument(f"unknown architecture {name!r}; expected ne or nepp")
    return key


# ---------------------------------------------------------------------------
# Graph structure seen by the network
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EdgeIndex:
    """Directed message edges: one self edge per node, then both orientations of every edge."""

    n: int
    senders: np.ndarray
    receivers: np.ndarray
    weights: np.ndarray
    candidates: np.ndarray

    @property
    def n_edges(self):
        return len(self.senders)


@lru_cache(maxsize=4096)
def edge_index(g: WeightedGraph) -> EdgeIndex:
    senders = list(range(g.n))
    receivers = list(range(g.n))
    weights = [0.0] * g.n
    for u, v, w in g.edges:
        senders += [u, v]
        receivers += [v, u]
        weights += [w, w]
    candidates = np.eye(g.n, dtype=bool)
    for u, v, _ in g.edges:
        candidates[u, v] = candidates[v, u] = True
    return EdgeIndex(
        g.n,
        np.asarray(senders, dtype=np.int64),
        np.asarray(receivers, dtype=np.int64),
        np.asarray(weights, dtype=np.float64)[:, None],
        candidates,
    )


def encode_state(task: AlgorithmId, state: StepState) -> np.ndarray:
    """Node features for a trace state; UNREACHED becomes key 0 with reached 0."""
    n = len(state.keys)
    out = np.zeros((n, input_dim(task)))
    for i in range(n):
        if state.preds[i] is not None:
            out[i, 0] = state.keys[i]
            out[i, 1] = 1.0
        if task.is_sequential:
            out[i, 2] = 1.0 if state.popped[i] else 0.0
    return out


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass
class ExecutorParams:
    arch: str
    tasks: tuple
    hidden_dim: int
    tensors: dict
    frozen: frozenset = frozenset()
    extra_processor: bool = False

    def trainable(self):
        return {k: t for k, t in self.tensors.items() if k not in self.frozen}

    def grads(self):
        return {k: t.grad for k, t in self.tensors.items()}

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()

    def processor_names(self):
        return sorted(k for k in self.tensors if k.startswith("processor."))

    def copy(self):
        tensors = {k: parameter(t.data.copy(), name=k) for k, t in self.tensors.items()}
        return ExecutorParams(self.arch, self.tasks, self.hidden_dim, tensors, self.frozen, self.extra_processor)

    def snapshot(self):
        return {k: t.data.copy() for k, t in self.tensors.items()}

    def load_snapshot(self, arrays):
        for k, arr in arrays.items():
            self.tensors[k].data[...] = arr

    def check_task(self, task):
        if task not in self.tasks:
            raise InvalidArgument(
                f"parameters were built for {[t.value for t in self.tasks]}, not {task.value}"
            )


def _context_dim(arch, task, hidden):
    return hidden if arch == "NE" else input_dim(task) + hidden


def _shapes(arch, tasks, hidden, extra_processor=False):
    l = hidden
    shapes = {}
    if arch == "NE":
        k_all = sum(input_dim(t) for t in tasks)
        shapes["encoder.W"] = (k_all + l, l)
        shapes["encoder.b"] = (l,)
    for prefix in ["processor"] + (["processor2"] if extra_processor else []):
        if arch == "NE":
            shapes[f"{prefix}.edge.W"] = (1, l)
            shapes[f"{prefix}.edge.b"] = (l,)
            shapes[f"{prefix}.msg.W"] = (3 * l, l)
        else:
            shapes[f"{prefix}.msg.W"] = (l, l)
        shapes[f"{prefix}.msg.b"] = (l,)
        shapes[f"{prefix}.upd.W"] = (2 * l, l)
        shapes[f"{prefix}.upd.b"] = (l,)
    for t in tasks:
        name = t.value
        k = input_dim(t)
        c = _context_dim(arch, t, l) + l
        if arch == "NEPP":
            e_in = 2 * (k + l) + 1
            shapes[f"encoder.{name}.lin.W"] = (e_in, l)
            shapes[f"encoder.{name}.lin.b"] = (l,)
            shapes[f"encoder.{name}.mlp1.W"] = (e_in, l)
            shapes[f"encoder.{name}.mlp1.b"] = (l,)
            shapes[f"encoder.{name}.mlp2.W"] = (l, l)
            shapes[f"encoder.{name}.mlp2.b"] = (l,)
        shapes[f"decoder.{name}.W"] = (c, output_dim(t))
        shapes[f"decoder.{name}.b"] = (output_dim(t),)
        shapes[f"scorer.{name}.W"] = (2 * c + l, 1)
        shapes[f"scorer.{name}.b"] = (1,)
        if t.is_sequential:
            shapes[f"select.{name}.W"] = (c, 1)
            shapes[f"select.{name}.b"] = (1,)
        shapes[f"term.{name}.msg.W"] = (2 * l + 1, l)
        shapes[f"term.{name}.msg.b"] = (l,)
        shapes[f"term.{name}.upd.W"] = (2 * l, l)
        shapes[f"term.{name}.upd.b"] = (l,)
        shapes[f"term.{name}.out.W"] = (l, 1)
        shapes[f"term.{name}.out.b"] = (1,)
    return shapes


def _init_array(seed, name, shape):
    if len(shape) == 1:
        return np.zeros(shape)
    rng = np.random.default_rng(derive_seed(seed, name))
    return rng.normal(0.0, np.sqrt(1.0 / shape[0]), size=shape)


def init_params(arch, tasks, dims=None, seed=0, extra_processor=False) -> ExecutorParams:
    """Fresh parameters for an architecture and task set.

    Args:
        arch: "NE" or "NEPP".
        tasks: AlgorithmIds the executor serves; order fixes NE's feature layout.
        dims: hidden size l; defaults to 32, or 16 for NEPP with several tasks.
        seed: every tensor is drawn from its own stream derived from (seed, name).
        extra_processor: add a second trainable processor summed with the first.
    """
    arch = parse_arch(arch)
    tasks = tuple(tasks)
    if not tasks:
        raise InvalidArgument("init_params needs at least one task")
    if len(set(tasks)) != len(tasks):
        raise InvalidArgument("duplicate task in init_params")
    if dims is None:
        dims = defaults.HIDDEN_DIM_NEPP_MULTITASK if arch == "NEPP" and len(tasks) > 1 else defaults.HIDDEN_DIM
    if dims < 1:
        raise InvalidArgument(f"hidden size must be >= 1, got {dims}")
    shapes = _shapes(arch, tasks, dims, extra_processor)
    tensors = {name: parameter(_init_array(seed, name, shape), name=name) for name, shape in shapes.items()}
    return ExecutorParams(arch, tasks, dims, tensors, frozenset(), extra_processor)


def fresh_processor(params: ExecutorParams, prefix, seed):
    """Re-initialise every tensor under `prefix.` with a new seed."""
    for name, t in params.tensors.items():
        if name.startswith(prefix + "."):
            t.data[...] = _init_array(seed, name, t.shape)


# ---------------------------------------------------------------------------
# One step
# ---------------------------------------------------------------------------

@dataclass
class StepInput:
    features: Tensor
    hidden: Tensor
    graph: EdgeIndex


@dataclass
class StepOutput:
    keys: Tensor
    pred_logits: Tensor
    select_logits: Tensor | None
    term_logit: Tensor
    hidden: Tensor


def _ne_encode(params, task, x, h):
    T = params.tensors
    n = x.shape[0]
    blocks = []
    for t in params.tasks:
        if t is task:
            blocks.append(x)
        else:
            blocks.append(constant(np.zeros((n, input_dim(t)))))
    return affine(concat(blocks + [h]), T["encoder.W"], T["encoder.b"])


def _ne_processor(T, prefix, z, ei):
    w = constant(ei.weights)
    e = affine(w, T[f"{prefix}.edge.W"], T[f"{prefix}.edge.b"])
    msg_in = concat([take_rows(z, ei.senders), take_rows(z, ei.receivers), e])
    m = affine(msg_in, T[f"{prefix}.msg.W"], T[f"{prefix}.msg.b"])
    agg = max_aggregate(m, ei.receivers, ei.n)
    return affine(concat([z, agg]), T[f"{prefix}.upd.W"], T[f"{prefix}.upd.b"]), e


def _nepp_encode(T, task, x, h, ei):
    name = task.value
    w = constant(ei.weights)
    edge_in = concat([
        take_rows(h, ei.receivers), take_rows(x, ei.receivers), w,
        take_rows(h, ei.senders), take_rows(x, ei.senders),
    ])
    linear = affine(edge_in, T[f"encoder.{name}.lin.W"], T[f"encoder.{name}.lin.b"])
    hidden = relu(affine(edge_in, T[f"encoder.{name}.mlp1.W"], T[f"encoder.{name}.mlp1.b"]))
    return linear + affine(hidden, T[f"encoder.{name}.mlp2.W"], T[f"encoder.{name}.mlp2.b"])


def _nepp_processor(T, prefix, z_edges, h, ei):
    m = affine(z_edges, T[f"{prefix}.msg.W"], T[f"{prefix}.msg.b"])
    agg = max_aggregate(m, ei.receivers, ei.n)
    return affine(concat([h, agg]), T[f"{prefix}.upd.W"], T[f"{prefix}.upd.b"])


def _termination(T, name, h_new, ei):
    w = constant(ei.weights)
    msg_in = concat([take_rows(h_new, ei.senders), take_rows(h_new, ei.receivers), w])
    m = affine(msg_in, T[f"term.{name}.msg.W"], T[f"term.{name}.msg.b"])
    agg = max_aggregate(m, ei.receivers, ei.n)
    th = affine(concat([h_new, agg]), T[f"term.{name}.upd.W"], T[f"term.{name}.upd.b"])
    pooled = max_aggregate(th, np.zeros(ei.n, dtype=np.int64), 1)
    return affine(pooled, T[f"term.{name}.out.W"], T[f"term.{name}.out.b"])


def step(params: ExecutorParams, task: AlgorithmId, inp: StepInput) -> StepOutput:
    """One encode -> process -> decode pass."""
    params.check_task(task)
    T = params.tensors
    ei = inp.graph
    x, h = inp.features, inp.hidden
    if x.shape != (ei.n, input_dim(task)):
        raise InvalidArgument(f"{task.value} features must be ({ei.n}, {input_dim(task)}), got {x.shape}")
    if h.shape != (ei.n, params.hidden_dim):
        raise InvalidArgument(f"hidden state must be ({ei.n}, {params.hidden_dim}), got {h.shape}")
    name = task.value

    if params.arch == "NE":
        z = _ne_encode(params, task, x, h)
        h_new, edge_feat = _ne_processor(T, "processor", z, ei)
        if params.extra_processor:
            h_new = h_new + _ne_processor(T, "processor2", z, ei)[0]
        context = z
    else:
        edge_feat = _nepp_encode(T, task, x, h, ei)
        h_new = _nepp_processor(T, "processor", edge_feat, h, ei)
        if params.extra_processor:
            h_new = h_new + _nepp_processor(T, "processor2", edge_feat, h, ei)
        context = concat([x, h])

    ch = concat([context, h_new])
    keys = affine(ch, T[f"decoder.{name}.W"], T[f"decoder.{name}.b"])
    pair = concat([take_rows(ch, ei.receivers), take_rows(ch, ei.senders), edge_feat])
    scores = affine(pair, T[f"scorer.{name}.W"], T[f"scorer.{name}.b"])
    pred_logits = scatter_dense(scores, ei.receivers, ei.senders, (ei.n, ei.n))
    select_logits = None
    if task.is_sequential:
        select_logits = transpose(affine(ch, T[f"select.{name}.W"], T[f"select.{name}.b"]))
    term_logit = _termination(T, name, h_new, ei)
    return StepOutput(keys, pred_logits, select_logits, term_logit, h_new)


# ---------------------------------------------------------------------------
# Rollouts
# ---------------------------------------------------------------------------

@dataclass
class RolloutRecord:
    task: AlgorithmId
    mode: str
    graph: WeightedGraph
    outputs: list = field(default_factory=list)
    choices: list = field(default_factory=list)
    pops: list = field(default_factory=list)
    pick_keys: list = field(default_factory=list)
    next_node: list = field(default_factory=list)
    final_state: Tensor | None = None
    T: int = 0
    truncated: bool = False

    def final_keys(self):
        """Predicted output keys per node (BFS: probability of being reached)."""
        if self.task.is_sequential:
            return self.final_state.data[:, 0].copy()
        out = self.outputs[-1].keys.data
        if self.task is AlgorithmId.BFS_P:
            return 0.5 * (1.0 + np.tanh(0.5 * out[:, 0]))
        return out[:, 0].copy()

    def final_reached(self):
        if self.final_state is not None:
            return self.final_state.data[:, 1] > 0.5
        out = self.outputs[-1].keys.data
        return out[:, -1] > 0.0

    def final_preds(self):
        ei = edge_index(self.graph)
        logits = np.where(ei.candidates, self.outputs[-1].pred_logits.data, -np.inf)
        return np.argmax(logits, axis=1)


def _zero_hidden(params, n):
    return constant(np.zeros((n, params.hidden_dim)))


def rollout(params, task, source, mode="TF", rng=None, steps=None, training=False,
            temperature=defaults.GUMBEL_TEMPERATURE) -> RolloutRecord:
    """Run the executor over a whole execution.

    Args:
        params: ExecutorParams serving `task`.
        task: the algorithm being executed.
        source: a Trace (required for TF) or a WeightedGraph (FREE only).
        mode: "TF" feeds ground-truth inputs each step; "FREE" feeds the model's own outputs.
        rng: numpy Generator, used for Gumbel noise when training in FREE sequential mode.
        steps: FREE step budget. None means: stop on the termination head, capped at n.
        training: FREE only. Sequential picks are Gumbel samples and parallel reachability
            stays soft; otherwise picks are hard argmaxes and reachability is thresholded.
        temperature: Gumbel-softmax temperature.
    """
    mode = mode.upper()
    if mode == "TF":
        if not isinstance(source, Trace):
            raise InvalidArgument("teacher-forced rollout needs a ground-truth trace")
        return _rollout_tf(params, task, source)
    if mode != "FREE":
        raise InvalidArgument(f"unknown rollout mode {mode!r}")
    graph = source.graph if isinstance(source, Trace) else source
    if training and task.is_sequential and rng is None:
        raise InvalidArgument("sampling rollouts need an rng")
    if task.is_sequential:
        return _rollout_free_sequential(params, task, graph, rng, steps, training, temperature)
    return _rollout_free_parallel(params, task, graph, steps, training)


def _apply_pick(x, o, y):
    """Write the decoded key of the picked node and mark it reached and popped."""
    key, reached, pop = slice_cols(x, 0, 1), slice_cols(x, 1, 2), slice_cols(x, 2, 3)
    return concat([
        key * (1.0 - o) + o * y,
        reached + o * (1.0 - reached),
        pop + o * (1.0 - pop),
    ])


def _rollout_tf(params, task, trace):
    if trace.algo is not task:
        raise InvalidArgument(f"trace is for {trace.algo.value}, not {task.value}")
    ei = edge_index(trace.graph)
    record = RolloutRecord(task, "TF", trace.graph, T=trace.T)
    h = _zero_hidden(params, ei.n)
    # sequential: model keys written at the true pops
    x_final = constant(encode_state(task, trace.steps[0])) if task.is_sequential else None
    for t in range(1, trace.T + 1):
        prev = trace.steps[t - 1]
        x = constant(encode_state(task, prev))
        out = step(params, task, StepInput(x, h, ei))
        record.outputs.append(out)
        if task.is_sequential:
            mask = ~np.asarray(prev.popped)
            logits = np.where(mask, out.select_logits.data[0], -np.inf)
            record.next_node.append(int(np.argmax(logits)))
            u = trace.pop_sequence[t - 1]
            o = np.zeros((ei.n, 1))
            o[u, 0] = 1.0
            x_final = _apply_pick(x_final, constant(o), slice_cols(out.keys, 0, 1))
            record.pops.append(u)
            record.pick_keys.append(float(out.keys.data[u, 0]))
        h = out.hidden
    if task.is_sequential:
        record.final_state = x_final
    return record


def _terminates(out):
    p = 0.5 * (1.0 + np.tanh(0.5 * float(out.term_logit.data[0, 0])))
    return p > defaults.TERMINATION_THRESHOLD


def _rollout_free_sequential(params, task, graph, rng, steps, training, temperature):
    ei = edge_index(graph)
    n = ei.n
    use_head = steps is None
    budget = n if use_head else int(steps)
    record = RolloutRecord(task, "FREE", graph)
    x = constant(encode_state(task, initial_state(task, graph)))
    h = _zero_hidden(params, n)
    popped = np.zeros(n, dtype=bool)
    stopped = False
    for _ in range(budget):
        if popped.all():
            break
        out = step(params, task, StepInput(x, h, ei))
        mask = ~popped[None, :]
        if training:
            one_hot, _ = gumbel_softmax_sample(out.select_logits, mask, temperature, rng)
        else:
            pick = int(np.argmax(np.where(mask[0], out.select_logits.data[0], -np.inf)))
            hard = np.zeros((1, n))
            hard[0, pick] = 1.0
            one_hot = constant(hard)
        u = int(np.argmax(one_hot.data[0]))
        y = slice_cols(out.keys, 0, 1)
        x = _apply_pick(x, transpose(one_hot), y)
        popped[u] = True
        record.outputs.append(out)
        record.choices.append(one_hot)
        record.pops.append(u)
        record.pick_keys.append(float(y.data[u, 0]))
        h = out.hidden
        if use_head and _terminates(out):
            stopped = True
            break
    record.final_state = x
    record.T = len(record.outputs)
    if use_head and not stopped:
        record.truncated = True
        logger.debug("%s rollout on %d nodes hit the step cap", task.value, n)
    return record


def _rollout_free_parallel(params, task, graph, steps, training):
    ei = edge_index(graph)
    n = ei.n
    use_head = steps is None
    budget = n if use_head else int(steps)
    record = RolloutRecord(task, "FREE", graph)
    x = constant(encode_state(task, initial_state(task, graph)))
    h = _zero_hidden(params, n)
    stopped = False
    for _ in range(budget):
        out = step(params, task, StepInput(x, h, ei))
        reach_logit = slice_cols(out.keys, output_dim(task) - 1, output_dim(task))
        if training:
            r = sigmoid(reach_logit)
        else:
            r = constant((reach_logit.data > 0.0).astype(np.float64))
        if task is AlgorithmId.BFS_P:
            x = concat([r, r])
        else:
            x = concat([slice_cols(out.keys, 0, 1) * r, r])
        record.outputs.append(out)
        h = out.hidden
        if use_head and _terminates(out):
            stopped = True
            break
    record.final_state = x
    record.T = len(record.outputs)
    if use_head and not stopped:
        record.truncated = True
        logger.debug("%s rollout on %d nodes hit the step cap", task.value, n)
    return record
