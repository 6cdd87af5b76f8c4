"""Minimal reverse-mode autodiff over dense feature matrices.

Nodes wrap NumPy arrays and are recorded on a Tape in construction
order, which is a valid topological order, so backward() is a single
reversed sweep. Gradients accumulate additively across fan-out. The
engine is dtype-polymorphic: ops preserve the dtype of their inputs
(float32 for training, float64 for numerical checks).
"""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteError


class Node:
    """One recorded value in the computation graph."""

    __slots__ = ("value", "grad", "_vjp", "info")

    def __init__(self, value, vjp=None):
        self.value = value
        self.grad = None
        self._vjp = vjp
        self.info = None

    @property
    def shape(self):
        return self.value.shape


def _accumulate(node: Node, g: np.ndarray) -> None:
    # Copy on first write: vjps may hand the same array to several parents.
    if node.grad is None:
        node.grad = np.array(g, dtype=node.value.dtype)
    else:
        node.grad += g


class Tape:
    """Recorded operations for one forward/backward cycle."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._param_links: list[tuple["Param", Node]] = []

    def leaf(self, value) -> Node:
        node = Node(np.asarray(value))
        self.nodes.append(node)
        return node

    def record(self, value, vjp) -> Node:
        node = Node(value, vjp)
        self.nodes.append(node)
        return node

    def backward(self, loss: Node) -> None:
        """Propagate d(loss)/d(node) into every node, then into Params.

        Raises NonFiniteError if any recorded forward value is not
        finite, before touching gradients.
        """
        for node in self.nodes:
            if not np.all(np.isfinite(node.value)):
                raise NonFiniteError("non-finite value in forward pass")
        if np.asarray(loss.value).size != 1:
            raise ValueError(f"loss must be a scalar, got shape {loss.value.shape}")
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.grad is not None and node._vjp is not None:
                node._vjp(node.grad)
        for param, node in self._param_links:
            if node.grad is not None:
                param.grad += node.grad


class Param:
    """A named parameter with gradient and momentum buffers."""

    __slots__ = ("name", "value", "grad", "momentum")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value)
        self.grad = np.zeros_like(self.value)
        self.momentum = np.zeros_like(self.value)


class ParamStore:
    """Uniquely named parameters, iterated in insertion order."""

    def __init__(self):
        self._params: dict[str, Param] = {}

    def add(self, name: str, value) -> Param:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Param(name, value)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def total_size(self) -> int:
        return sum(p.value.size for p in self._params.values())

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad[...] = 0

    def nodes(self, tape: Tape) -> dict[str, Node]:
        """Leaf nodes for every parameter, linked so backward() fills grads."""
        out = {}
        for name, p in self._params.items():
            node = tape.leaf(p.value)
            tape._param_links.append((p, node))
            out[name] = node
        return out


def sgd_step(params: ParamStore, lr: float, momentum: float) -> None:
    """v <- momentum*v + g; p <- p - lr*v; gradients are zeroed."""
    for p in params._params.values():
        p.momentum *= momentum
        p.momentum += p.grad
        p.value -= (lr * p.momentum).astype(p.value.dtype, copy=False)
        p.grad[...] = 0


# ---------------------------------------------------------------------------
# Generic ops.


def add(tape: Tape, a: Node, b: Node) -> Node:
    def vjp(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return tape.record(a.value + b.value, vjp)


def scale(tape: Tape, x: Node, c: float) -> Node:
    def vjp(g):
        _accumulate(x, g * c)

    return tape.record(x.value * x.value.dtype.type(c), vjp)


def relu(tape: Tape, x: Node) -> Node:
    mask = x.value > 0

    def vjp(g):
        _accumulate(x, g * mask)

    return tape.record(np.where(mask, x.value, x.value.dtype.type(0)), vjp)


def linear(tape: Tape, x: Node, w: Node, b: Node | None = None) -> Node:
    value = x.value @ w.value
    if b is not None:
        value = value + b.value

    def vjp(g):
        _accumulate(x, g @ w.value.T)
        _accumulate(w, x.value.T @ g)
        if b is not None:
            _accumulate(b, g.sum(axis=0))

    return tape.record(value, vjp)


def concat_channels(tape: Tape, xs: list[Node]) -> Node:
    rows = xs[0].value.shape[0]
    for x in xs:
        if x.value.shape[0] != rows:
            raise ValueError("channel concat requires equal row counts")
    widths = [x.value.shape[1] for x in xs]
    bounds = np.cumsum([0] + widths)

    def vjp(g):
        for x, a, b in zip(xs, bounds[:-1], bounds[1:]):
            _accumulate(x, g[:, a:b])

    return tape.record(np.concatenate([x.value for x in xs], axis=1), vjp)


def concat_rows(tape: Tape, xs: list[Node]) -> Node:
    sizes = [x.value.shape[0] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        for x, a, b in zip(xs, bounds[:-1], bounds[1:]):
            _accumulate(x, g[a:b])

    return tape.record(np.concatenate([x.value for x in xs], axis=0), vjp)


def split_rows(tape: Tape, x: Node, sizes: list[int]) -> list[Node]:
    bounds = np.cumsum([0] + list(sizes))
    if bounds[-1] != x.value.shape[0]:
        raise ValueError(f"split sizes sum to {bounds[-1]}, array has {x.value.shape[0]} rows")
    parts = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        def vjp(g, a=a, b=b):
            full = np.zeros_like(x.value)
            full[a:b] = g
            _accumulate(x, full)

        parts.append(tape.record(x.value[a:b].copy(), vjp))
    return parts


def gather_rows(tape: Tape, x: Node, idx: np.ndarray) -> Node:
    idx = np.asarray(idx, dtype=np.int64)

    def vjp(g):
        gx = np.zeros_like(x.value)
        np.add.at(gx, idx, g)
        _accumulate(x, gx)

    return tape.record(x.value[idx], vjp)


def l2_normalize_rows(tape: Tape, x: Node, eps: float = 1e-12) -> Node:
    norms = np.linalg.norm(x.value, axis=1, keepdims=True)
    denom = np.maximum(norms, eps)
    y = (x.value / denom).astype(x.value.dtype, copy=False)

    def vjp(g):
        inner = np.sum(g * y, axis=1, keepdims=True)
        gx = np.where(norms > eps, (g - y * inner) / denom, g / denom)
        _accumulate(x, gx.astype(x.value.dtype, copy=False))

    return tape.record(y, vjp)


# ---------------------------------------------------------------------------
# Batch normalization.

BN_EPS = 1e-5


class BatchNormState:
    """Running statistics for one normalization layer.

    Buffers live in the model dtype (so checkpoints round-trip exactly);
    updates are computed in float64 and cast on store.
    """

    __slots__ = ("running_mean", "running_var", "momentum")

    def __init__(self, channels: int, momentum: float = 0.1, dtype=np.float32):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum


def batch_norm(
    tape: Tape,
    x: Node,
    bn_scale: Node,
    bn_shift: Node,
    state: BatchNormState,
    training: bool,
    eps: float = BN_EPS,
) -> Node:
    """Per-channel standardization over all rows, then affine.

    Statistics are accumulated in float64. Training mode uses batch
    statistics and updates the running buffers; eval mode normalizes
    with the stored running statistics.
    """
    dtype = x.value.dtype
    x64 = x.value.astype(np.float64, copy=False)
    n = x64.shape[0]
    if training:
        if n < 2:
            raise ValueError("batch norm in training mode needs at least 2 rows")
        mu = x64.mean(axis=0)
        var = x64.var(axis=0)
        m = state.momentum
        buf_dtype = state.running_mean.dtype
        state.running_mean[...] = ((1 - m) * state.running_mean.astype(np.float64) + m * mu).astype(buf_dtype)
        state.running_var[...] = ((1 - m) * state.running_var.astype(np.float64) + m * var).astype(buf_dtype)
    else:
        mu = state.running_mean.astype(np.float64)
        var = state.running_var.astype(np.float64)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x64 - mu) * inv
    y = (xhat * bn_scale.value + bn_shift.value).astype(dtype, copy=False)

    def vjp(g):
        g64 = g.astype(np.float64, copy=False)
        _accumulate(bn_scale, (g64 * xhat).sum(axis=0).astype(dtype, copy=False))
        _accumulate(bn_shift, g64.sum(axis=0).astype(dtype, copy=False))
        dxhat = g64 * bn_scale.value.astype(np.float64, copy=False)
        if training:
            gx = (inv / n) * (
                n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
            )
        else:
            gx = dxhat * inv
        _accumulate(x, gx.astype(dtype, copy=False))

    return tape.record(y, vjp)
