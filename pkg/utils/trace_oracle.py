"""Ground-truth execution of the nine algorithms with full intermediate traces."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from data.algorithms import AlgorithmId, Framework
from utils.errors import InvalidArgument
from utils.graphgen import WeightedGraph

logger = logging.getLogger(__name__)

# Symbolic key of a node that no relaxation has reached yet.
UNREACHED = None


@dataclass(frozen=True)
class NodeSnapshot:
    key: float | None
    pred: int | None
    popped: bool = False


@dataclass(frozen=True)
class StepState:
    """All node states at one step, stored column-wise."""

    keys: tuple
    preds: tuple
    popped: tuple

    def node(self, i) -> NodeSnapshot:
        return NodeSnapshot(self.keys[i], self.preds[i], self.popped[i])

    @property
    def reached(self):
        return tuple(p is not None for p in self.preds)


@dataclass(frozen=True)
class Trace:
    graph: WeightedGraph
    algo: AlgorithmId
    steps: tuple
    pop_sequence: tuple
    T: int


# ---------------------------------------------------------------------------
# initialise_nodes / relax_edge
# ---------------------------------------------------------------------------

def _source_key(algo, n):
    key = algo.spec["source_key"]
    return float(n) if key == "n" else float(key)


def initial_state(algo: AlgorithmId, g: WeightedGraph) -> StepState:
    keys = [UNREACHED] * g.n
    preds = [None] * g.n
    keys[g.source] = _source_key(algo, g.n)
    preds[g.source] = g.source
    return StepState(tuple(keys), tuple(preds), (False,) * g.n)


def numeric_keys(algo: AlgorithmId, keys):
    """Replace UNREACHED by the value the relaxation rules compare against."""
    unreached = algo.spec["unreached"]
    return [unreached if k is UNREACHED else k for k in keys]


def _candidate(rule, u_key, v_key, w, v_popped):
    """New key for v if relaxing (u, v, w) improves it, else None. Keys are numeric."""
    if rule == "bfs":
        if v_key == 0.0 and u_key == 1.0:
            return 1.0
    elif rule == "shortest":
        if v_key > u_key + w:
            return u_key + w
    elif rule == "prim":
        if not v_popped and v_key > w:
            return w
    elif rule == "widest":
        if v_key < min(u_key, w):
            return min(u_key, w)
    elif rule == "reliable":
        if v_key < u_key * w:
            return u_key * w
    elif rule == "dfs":
        if math.isinf(v_key):
            return u_key - 1.0
    else:
        raise InvalidArgument(f"unknown relaxation rule {rule!r}")
    return None


def _is_reached(pred):
    return pred is not None


# ---------------------------------------------------------------------------
# Frameworks
# ---------------------------------------------------------------------------

def run_parallel(algo: AlgorithmId, g: WeightedGraph) -> Trace:
    """Synchronous sweeps of relax_edge over both orientations of every edge.

    Each sweep reads the previous snapshot; the first sweep that changes nothing
    is recorded too and ends the run.
    """
    if algo.framework is not Framework.PARALLEL:
        raise InvalidArgument(f"{algo.value} is not a parallel algorithm")
    rule = algo.spec["relax"]
    state = initial_state(algo, g)
    steps = [state]
    while True:
        prev_keys = numeric_keys(algo, state.keys)
        keys = list(prev_keys)
        preds = list(state.preds)
        changed = False
        for a, b, w in g.edges:
            for u, v in ((a, b), (b, a)):
                if not _is_reached(state.preds[u]):
                    continue
                new = _candidate(rule, prev_keys[u], keys[v], w, False)
                if new is not None:
                    keys[v] = new
                    preds[v] = u
                    changed = True
        out_keys = tuple(k if p is not None else UNREACHED for k, p in zip(keys, preds))
        state = StepState(out_keys, tuple(preds), (False,) * g.n)
        steps.append(state)
        if not changed:
            break
    return Trace(g, algo, tuple(steps), (), len(steps) - 1)


def _pick(order, keys, popped, preds):
    best = None
    for i, k in enumerate(keys):
        if popped[i] or preds[i] is None:
            continue
        if best is None:
            best = i
        elif order == "min" and k < keys[best]:
            best = i
        elif order == "max" and k > keys[best]:
            best = i
    return best


def run_sequential(algo: AlgorithmId, g: WeightedGraph) -> Trace:
    """Pop the extremal reached key (lowest index on ties), relax its neighbours, repeat."""
    if algo.framework is not Framework.SEQUENTIAL:
        raise InvalidArgument(f"{algo.value} is not a sequential algorithm")
    rule = algo.spec["relax"]
    order = algo.spec["pop"]
    adj = g.neighbours()
    state = initial_state(algo, g)
    keys = numeric_keys(algo, state.keys)
    preds = list(state.preds)
    popped = [False] * g.n
    steps = [state]
    pops = []
    while True:
        u = _pick(order, keys, popped, preds)
        if u is None:
            break
        popped[u] = True
        pops.append(u)
        for v, w in adj[u]:
            new = _candidate(rule, keys[u], keys[v], w, popped[v])
            if new is not None:
                keys[v] = new
                preds[v] = u
        out_keys = tuple(k if p is not None else UNREACHED for k, p in zip(keys, preds))
        steps.append(StepState(out_keys, tuple(preds), tuple(popped)))
    return Trace(g, algo, tuple(steps), tuple(pops), len(pops))


def run_algorithm(algo: AlgorithmId, g: WeightedGraph) -> Trace:
    if algo.is_sequential:
        return run_sequential(algo, g)
    return run_parallel(algo, g)


def build_traces(algo: AlgorithmId, graphs):
    traces = [run_algorithm(algo, g) for g in graphs]
    logger.info("traced %s on %d graphs", algo.value, len(traces))
    return traces


def final_output(t: Trace):
    """Keys and predecessors of the last step; the algorithm's output."""
    last = t.steps[-1]
    return list(last.keys), list(last.preds)
