"""Dense reverse-mode differentiation on numpy arrays, the training losses, Gumbel sampling and Adam.

Every Tensor doubles as its own tape node: it keeps its parents, the op name and a
closure that pushes the incoming gradient to the parents. `Tensor.backward()` walks
the graph once in reverse topological order.

Shapes are never broadcast implicitly; the only broadcast is the bias row in `affine`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from data import defaults
from utils.errors import InvalidArgument, InvalidState, NonFiniteError

logger = logging.getLogger(__name__)


class Tensor:
    """Float64 array plus the tape information needed to differentiate through it."""

    def __init__(self, data, parents=(), op="", backward=None, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = tuple(parents)
        self._op = op
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        label = self.name or self._op or "leaf"
        return f"Tensor({label}, shape={self.shape})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise InvalidArgument(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic (same shape, or a python scalar) --------------

    def __add__(self, other):
        return _binary(self, other, "add")

    def __radd__(self, other):
        return _binary(self, other, "add")

    def __sub__(self, other):
        return _binary(self, other, "sub")

    def __rsub__(self, other):
        return _binary(self, other, "rsub")

    def __mul__(self, other):
        return _binary(self, other, "mul")

    def __rmul__(self, other):
        return _binary(self, other, "mul")

    def __neg__(self):
        return self * -1.0


def constant(data) -> Tensor:
    return Tensor(data)


def parameter(data, name=None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _node(data, parents, op, backward):
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, parents, op, backward, requires_grad=True)


def _binary(a, b, kind):
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise InvalidArgument(f"{kind}: shape mismatch {a.shape} vs {b.shape}")
        if kind == "add":
            def backward(g):
                a._accumulate(g)
                b._accumulate(g)
            return _node(a.data + b.data, (a, b), "add", backward)
        if kind == "sub":
            def backward(g):
                a._accumulate(g)
                b._accumulate(-g)
            return _node(a.data - b.data, (a, b), "sub", backward)
        if kind == "rsub":
            return _binary(b, a, "sub")

        def backward(g):
            a._accumulate(g * b.data)
            b._accumulate(g * a.data)
        return _node(a.data * b.data, (a, b), "mul", backward)

    c = float(b)
    if kind == "add":
        return _node(a.data + c, (a,), "add", a._accumulate)
    if kind == "sub":
        return _node(a.data - c, (a,), "sub", a._accumulate)
    if kind == "rsub":
        return _node(c - a.data, (a,), "rsub", lambda g: a._accumulate(-g))
    return _node(a.data * c, (a,), "mul", lambda g: a._accumulate(g * c))


# ---------------------------------------------------------------------------
# Layers and shape ops
# ---------------------------------------------------------------------------

def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """x @ W + b for x (m, p), W (p, q), b (q,)."""
    if x.data.ndim != 2 or W.data.ndim != 2 or b.data.ndim != 1:
        raise InvalidArgument(f"affine expects 2-d x, 2-d W, 1-d b; got {x.shape}, {W.shape}, {b.shape}")
    if x.shape[1] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise InvalidArgument(f"affine shape mismatch: x{x.shape} W{W.shape} b{b.shape}")

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ W.data.T)
        if W.requires_grad:
            W._accumulate(x.data.T @ g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))

    return _node(x.data @ W.data + b.data, (x, W, b), "affine", backward)


def relu(x: Tensor) -> Tensor:
    on = x.data > 0
    return _node(x.data * on, (x,), "relu", lambda g: x._accumulate(g * on))


def sigmoid(x: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _node(s, (x,), "sigmoid", lambda g: x._accumulate(g * s * (1.0 - s)))


def concat(tensors, axis=1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise InvalidArgument("concat of nothing")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                t._accumulate(np.take(g, np.arange(lo, hi), axis=axis))

    return _node(data, tensors, "concat", backward)


def slice_cols(x: Tensor, start, stop) -> Tensor:
    if not 0 <= start < stop <= x.shape[1]:
        raise InvalidArgument(f"column slice [{start}:{stop}] outside width {x.shape[1]}")

    def backward(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        x._accumulate(full)

    return _node(x.data[:, start:stop], (x,), "slice", backward)


def take_rows(x: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        x._accumulate(full)

    return _node(x.data[idx], (x,), "take", backward)


def transpose(x: Tensor) -> Tensor:
    return _node(x.data.T.copy(), (x,), "transpose", lambda g: x._accumulate(g.T))


def scatter_dense(values: Tensor, rows, cols, shape) -> Tensor:
    """Place a column of E values at (rows[e], cols[e]) of a zero matrix."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if values.shape != (len(rows), 1):
        raise InvalidArgument(f"scatter_dense expects ({len(rows)}, 1) values, got {values.shape}")
    out = np.zeros(shape)
    out[rows, cols] = values.data[:, 0]
    return _node(out, (values,), "scatter", lambda g: values._accumulate(g[rows, cols][:, None]))


def add_n(tensors) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise InvalidArgument("add_n of nothing")
    shape = tensors[0].shape
    for t in tensors:
        if t.shape != shape:
            raise InvalidArgument(f"add_n: shape mismatch {t.shape} vs {shape}")

    def backward(g):
        for t in tensors:
            t._accumulate(g)

    return _node(np.sum([t.data for t in tensors], axis=0), tensors, "add_n", backward)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    return _node(np.array(x.data.mean()), (x,), "mean", lambda g: x._accumulate(np.full_like(x.data, g / n)))


def max_aggregate(messages: Tensor, segments, n_segments) -> Tensor:
    """Per-segment, per-feature max of message rows; gradient goes to the lowest-index argmax."""
    segments = np.asarray(segments, dtype=np.int64)
    n_msgs, d = messages.shape
    if len(segments) != n_msgs:
        raise InvalidArgument(f"{len(segments)} segment ids for {n_msgs} messages")
    counts = np.bincount(segments, minlength=n_segments)
    if (counts == 0).any():
        raise InvalidState(f"segment {int(np.argmin(counts))} receives no message")
    out = np.full((n_segments, d), -np.inf)
    np.maximum.at(out, segments, messages.data)
    hit = messages.data == out[segments]
    order = np.where(hit, np.arange(n_msgs)[:, None], n_msgs)
    arg = np.full((n_segments, d), n_msgs)
    np.minimum.at(arg, segments, order)
    cols = np.broadcast_to(np.arange(d), (n_segments, d))

    def backward(g):
        full = np.zeros_like(messages.data)
        np.add.at(full, (arg, cols), g)
        messages._accumulate(full)

    return _node(out, (messages,), "max_aggregate", backward)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def smooth_l1(pred: Tensor, target, beta=defaults.SMOOTH_L1_BETA) -> Tensor:
    """Mean of 0.5 x^2 / beta for |x| < beta, |x| - 0.5 beta otherwise."""
    if beta <= 0:
        raise InvalidArgument(f"smooth_l1 needs beta > 0, got {beta}")
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.shape:
        raise InvalidArgument(f"smooth_l1 shape mismatch {pred.shape} vs {target.shape}")
    x = pred.data - target
    ax = np.abs(x)
    small = ax < beta
    value = np.where(small, 0.5 * x * x / beta, ax - 0.5 * beta).mean()
    n = x.size
    slope = np.where(small, x / beta, np.sign(x)) / n
    return _node(np.array(value), (pred,), "smooth_l1", lambda g: pred._accumulate(g * slope))


def bce(logit: Tensor, target) -> Tensor:
    """Binary cross entropy on logits, mean over elements; targets may be soft."""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != logit.shape:
        raise InvalidArgument(f"bce shape mismatch {logit.shape} vs {target.shape}")
    x = logit.data
    value = (np.maximum(x, 0.0) - x * target + np.log1p(np.exp(-np.abs(x)))).mean()
    p = 0.5 * (1.0 + np.tanh(0.5 * x))
    slope = (p - target) / x.size
    return _node(np.array(value), (logit,), "bce", lambda g: logit._accumulate(g * slope))


def masked_softmax(logits, mask):
    """Row-wise softmax over the True entries of mask; masked entries are exactly 0."""
    logits = np.asarray(logits, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise InvalidArgument("masked_softmax: a row has no unmasked entry")
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_masked(logits: Tensor, mask) -> Tensor:
    p = masked_softmax(logits.data, mask)

    def backward(g):
        logits._accumulate(p * (g - (p * g).sum(axis=-1, keepdims=True)))

    return _node(p, (logits,), "softmax", backward)


def masked_softmax_ce(logits: Tensor, mask, targets, row_weights=None) -> Tensor:
    """Cross entropy of a masked softmax per row, averaged over rows with non-zero weight.

    Args:
        logits: (R, C) scores.
        mask: (R, C) bool; False entries get probability 0 and no gradient.
        targets: (R,) target column per row; must lie inside the row's mask.
        row_weights: optional (R,) weights, e.g. 0 for unreachable nodes.
    """
    if logits.data.ndim != 2:
        raise InvalidArgument(f"masked_softmax_ce expects (R, C) logits, got {logits.shape}")
    mask = np.asarray(mask, dtype=bool)
    targets = np.asarray(targets, dtype=np.int64)
    R = logits.shape[0]
    w = np.ones(R) if row_weights is None else np.asarray(row_weights, dtype=np.float64)
    active = w > 0
    if not active.any():
        raise InvalidArgument("masked_softmax_ce: no active rows")
    rows = np.flatnonzero(active)
    if not mask[rows].any(axis=1).all():
        raise InvalidArgument("masked_softmax_ce: an active row has an empty mask")
    if not mask[rows, targets[rows]].all():
        bad = rows[~mask[rows, targets[rows]]][0]
        raise InvalidArgument(f"masked_softmax_ce: target {targets[bad]} of row {bad} is masked out")
    safe_mask = mask.copy()
    safe_mask[~active] = True
    p = masked_softmax(logits.data, safe_mask)
    z = np.where(safe_mask, logits.data, -np.inf)
    m = z.max(axis=1)
    lse = m + np.log(np.where(safe_mask, np.exp(z - m[:, None]), 0.0).sum(axis=1))
    safe_targets = np.where(active, targets, 0)
    per_row = lse - logits.data[np.arange(R), safe_targets]
    total = w[active].sum()
    value = (w * np.where(active, per_row, 0.0)).sum() / total
    onehot = np.zeros_like(p)
    onehot[rows, targets[rows]] = 1.0
    slope = np.where(safe_mask, p - onehot, 0.0) * (w / total)[:, None]
    slope[~active] = 0.0
    return _node(np.array(value), (logits,), "masked_ce", lambda g: logits._accumulate(g * slope))


# ---------------------------------------------------------------------------
# Discrete sampling
# ---------------------------------------------------------------------------

def straight_through(hard, soft: Tensor) -> Tensor:
    """Forward value `hard`, gradient of `soft`."""
    hard = np.asarray(hard, dtype=np.float64)
    return _node(hard, (soft,), "straight_through", soft._accumulate)


def gumbel_softmax_sample(logits: Tensor, mask, temperature, rng: np.random.Generator):
    """Straight-through Gumbel-softmax over the unmasked entries of each row.

    Returns:
        (one_hot_hard, soft_probs): the hard sample carries the gradient of the soft
        probabilities at the given temperature.
    """
    if temperature <= 0:
        raise InvalidArgument(f"temperature must be > 0, got {temperature}")
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise InvalidArgument("gumbel_softmax_sample: every entry is masked")
    u = rng.random(logits.shape)
    u = np.clip(u, np.finfo(np.float64).tiny, 1.0 - np.finfo(np.float64).eps)
    noise = -np.log(-np.log(u))
    noisy = (logits + constant(noise)) * (1.0 / temperature)
    soft = softmax_masked(noisy, mask)
    choice = np.argmax(np.where(mask, noisy.data, -np.inf), axis=-1)
    hard = np.zeros(logits.shape)
    hard[np.arange(logits.shape[0]), choice] = 1.0
    return straight_through(hard, soft), soft


# ---------------------------------------------------------------------------
# Optimiser
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = defaults.LEARNING_RATE
    beta1: float = defaults.ADAM_BETA1
    beta2: float = defaults.ADAM_BETA2
    eps: float = defaults.ADAM_EPS
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState, frozen=()):
    """Bias-corrected Adam, in place.

    Args:
        params: {name: Tensor}.
        grads: {name: ndarray or None}; None counts as a zero gradient.
        state: moments and step counter, updated in place.
        frozen: names that are neither updated nor given moments.

    Returns:
        (params, state)
    """
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name in sorted(params):
        if name in frozen:
            continue
        p = params[name]
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise InvalidArgument(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# Verification harness
# ---------------------------------------------------------------------------

def grad_check(f, params, epsilon=1e-5, max_coords=None, rng=None) -> float:
    """Largest relative error between reverse-mode and central-difference gradients.

    Args:
        f: zero-argument callable building a scalar Tensor from `params`.
        params: {name: Tensor} leaves to check; perturbed in place and restored.
        epsilon: finite-difference step.
        max_coords: if set, check at most this many random coordinates per parameter.
        rng: numpy Generator for coordinate sampling.

    Relative error is |a - n| / max(|a|, |n|, 1e-6).
    """
    for p in params.values():
        p.zero_grad()
    f().backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for name in sorted(params):
        p = params[name]
        coords = list(np.ndindex(p.shape))
        if max_coords is not None and len(coords) > max_coords:
            picked = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[i] for i in sorted(picked)]
        for idx in coords:
            saved = p.data[idx]
            p.data[idx] = saved + epsilon
            plus = float(f().data)
            p.data[idx] = saved - epsilon
            minus = float(f().data)
            p.data[idx] = saved
            numeric = (plus - minus) / (2.0 * epsilon)
            a = analytic[name][idx]
            for value in (plus, minus, a):
                if not np.isfinite(value):
                    raise NonFiniteError(name, idx, value)
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, err)
    for p in params.values():
        p.zero_grad()
    logger.debug("grad_check max relative error %.3e", worst)
    return worst
