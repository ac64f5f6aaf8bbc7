"""Tape-based reverse-mode automatic differentiation on numpy arrays.

Define-by-run: every operation appends a node to a :class:`Tape`, and
:func:`backward` replays the tape in reverse, accumulating into per-node
``grad`` slots. All values are float64. Broadcasting is deliberately
restricted to scalar-with-tensor; anything richer is a :class:`ShapeError`.

A tape is rebuilt for every forward pass and must stay on one thread for
the duration of a forward/backward cycle.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DomainError, ShapeError


class Tensor:
    """A value in the computation graph.

    ``data`` and ``grad`` are same-shape float64 arrays; ``node_id`` is the
    position on the owning tape. Leaves have no parents and no backward rule.
    """

    __slots__ = ("data", "grad", "tape", "node_id", "op", "_parents", "_backward")

    def __init__(self, data, tape, node_id, op="leaf", parents=(), backward=None):
        self.data = data
        self.grad = np.zeros_like(data)
        self.tape = tape
        self.node_id = node_id
        self.op = op
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, node_id={self.node_id})"


class Tape:
    """Ordered record of one forward pass.

    Nodes are appended in execution order, so every node's parents precede
    it; the backward sweep walks the list once in reverse.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def leaf(self, data) -> Tensor:
        """Wrap an array (or scalar) as a gradient-accumulating leaf."""
        arr = np.asarray(data, dtype=np.float64)
        return self.record(arr, "leaf", (), None)

    def record(self, data, op, parents, backward) -> Tensor:
        """Append an op node. ``backward(grad)`` must add into parent grads."""
        t = Tensor(np.asarray(data, dtype=np.float64), self, len(self.nodes), op, tuple(parents), backward)
        self.nodes.append(t)
        return t


def _same_tape(*tensors):
    tape = tensors[0].tape
    for t in tensors[1:]:
        if t.tape is not tape:
            raise ValueError("tensors belong to different tapes")
    return tape


def _accumulate(parent, g):
    # Reverse of scalar broadcasting: a scalar-shaped parent absorbs the sum.
    if parent.data.shape == g.shape:
        parent.grad += g
    else:
        parent.grad += g.sum()


def _binary_out_shape(a, b, op):
    if a.data.shape == b.data.shape:
        return a.data.shape
    if a.data.size == 1:
        return b.data.shape
    if b.data.size == 1:
        return a.data.shape
    raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} are neither equal nor scalar-broadcastable")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    tape = _same_tape(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.data.shape} and {b.data.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        a.grad += g @ b.data.T
        b.grad += a.data.T @ g

    return tape.record(out_data, "matmul", (a, b), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; one operand may be a scalar."""
    tape = _same_tape(a, b)
    _binary_out_shape(a, b, "add")
    out_data = a.data + b.data

    def bwd(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return tape.record(out_data, "add", (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; one operand may be a scalar."""
    tape = _same_tape(a, b)
    _binary_out_shape(a, b, "mul")
    out_data = a.data * b.data

    def bwd(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return tape.record(out_data, "mul", (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a plain (non-differentiable) scalar constant."""
    c = float(c)
    out_data = a.data * c

    def bwd(g):
        a.grad += g * c

    return a.tape.record(out_data, "scale", (a,), bwd)


def relu(a: Tensor) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is taken as 0."""
    out_data = np.maximum(a.data, 0.0)
    mask = (a.data > 0.0).astype(np.float64)

    def bwd(g):
        a.grad += g * mask

    return a.tape.record(out_data, "relu", (a,), bwd)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bwd(g):
        a.grad += g * out_data

    return a.tape.record(out_data, "exp", (a,), bwd)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError("log: input contains non-positive values")
    out_data = np.log(a.data)

    def bwd(g):
        a.grad += g / a.data

    return a.tape.record(out_data, "log", (a,), bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis``, computed with max-subtraction for stability."""
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        a.grad += (g - inner) * out_data

    return a.tape.record(out_data, "softmax", (a,), bwd)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row softmax.

    ``logits`` is (B, K); ``labels`` is a length-B integer sequence with
    values in [0, K). Returns a scalar tensor.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be 2-D, got shape {logits.data.shape}")
    z = logits.data
    n, k = z.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: expected {n} labels, got shape {labels.shape}")
    bad = (labels < 0) | (labels >= k)
    if np.any(bad):
        row = int(np.argmax(bad))
        raise IndexError(f"cross_entropy: label {labels[row]} out of range for {k} classes (row {row})")
    m = z.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))
    logp = z - lse
    out_data = np.asarray(-logp[np.arange(n), labels].mean())

    probs = np.exp(logp)
    onehot = np.zeros_like(z)
    onehot[np.arange(n), labels] = 1.0

    def bwd(g):
        logits.grad += (probs - onehot) * (float(g) / n)

    return logits.tape.record(out_data, "cross_entropy", (logits,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape: cannot reshape {a.data.shape} into {shape}")
    out_data = a.data.reshape(shape)

    def bwd(g):
        a.grad += g.reshape(a.data.shape)

    return a.tape.record(out_data, "reshape", (a,), bwd)


def permute(a: Tensor, axes) -> Tensor:
    """Transpose axes; gradient applies the inverse permutation."""
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise ShapeError(f"permute: axes {axes} are not a permutation of {a.data.ndim} dims")
    out_data = np.transpose(a.data, axes)
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        a.grad += np.transpose(g, inverse)

    return a.tape.record(out_data, "permute", (a,), bwd)


def mean_axis0(a: Tensor) -> Tensor:
    """Column means of a 2-D tensor: (M, N) -> (N,)."""
    if a.data.ndim != 2:
        raise ShapeError(f"mean_axis0: expected a 2-D tensor, got shape {a.data.shape}")
    m = a.data.shape[0]
    out_data = a.data.mean(axis=0)

    def bwd(g):
        a.grad += g[None, :] / m

    return a.tape.record(out_data, "mean_axis0", (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    """Mean over all elements; returns a scalar tensor."""
    n = a.data.size
    out_data = np.asarray(a.data.mean())

    def bwd(g):
        a.grad += float(g) / n

    return a.tape.record(out_data, "mean_all", (a,), bwd)


def temporal_conv(x: Tensor, kernels: Tensor) -> Tensor:
    """Depthwise convolution along the time axis of a (T, V, C) tensor.

    ``kernels`` is (C, k): one width-k filter per channel, shared across
    joints. Zero padding, stride 1, no bias; output shape equals input shape.
    """
    tape = _same_tape(x, kernels)
    if x.data.ndim != 3 or kernels.data.ndim != 2 or x.data.shape[2] != kernels.data.shape[0]:
        raise ShapeError(f"temporal_conv: incompatible shapes {x.data.shape} and {kernels.data.shape}")
    t_len, _, _ = x.data.shape
    k = kernels.data.shape[1]
    pad_left = (k - 1) // 2
    padded = np.zeros((t_len + k - 1,) + x.data.shape[1:], dtype=np.float64)
    padded[pad_left : pad_left + t_len] = x.data
    windows = sliding_window_view(padded, k, axis=0)  # (T, V, C, k)
    out_data = np.einsum("tvck,ck->tvc", windows, kernels.data)

    def bwd(g):
        kernels.grad += np.einsum("tvc,tvck->ck", g, windows)
        gpad = np.zeros_like(padded)
        for j in range(k):
            gpad[j : j + t_len] += g * kernels.data[:, j]
        x.grad += gpad[pad_left : pad_left + t_len]

    return tape.record(out_data, "temporal_conv", (x, kernels), bwd)


def gather_pairs(a: Tensor, pairs: np.ndarray) -> Tensor:
    """Extract entries a[i, j] for each (i, j) row of ``pairs``: (V, V) -> (E,)."""
    if a.data.ndim != 2:
        raise ShapeError(f"gather_pairs: expected a 2-D tensor, got shape {a.data.shape}")
    rows, cols = pairs[:, 0], pairs[:, 1]
    out_data = a.data[rows, cols]

    def bwd(g):
        np.add.at(a.grad, (rows, cols), g)

    return a.tape.record(out_data, "gather_pairs", (a,), bwd)


def scatter_symmetric(values: Tensor, pairs: np.ndarray, size: int) -> Tensor:
    """Write per-edge values into a symmetric (size, size) matrix.

    Each value lands at both (i, j) and (j, i); the diagonal stays zero
    because pairs never contain self-pairs.
    """
    if values.data.ndim != 1 or values.data.shape[0] != pairs.shape[0]:
        raise ShapeError(f"scatter_symmetric: {values.data.shape} values for {pairs.shape[0]} pairs")
    rows, cols = pairs[:, 0], pairs[:, 1]
    out_data = np.zeros((size, size), dtype=np.float64)
    out_data[rows, cols] = values.data
    out_data[cols, rows] = values.data

    def bwd(g):
        values.grad += g[rows, cols] + g[cols, rows]

    return values.tape.record(out_data, "scatter_symmetric", (values,), bwd)


def take_column(a: Tensor, col: int) -> Tensor:
    """Select one column of a 2-D tensor: (M, N) -> (M,)."""
    if a.data.ndim != 2:
        raise ShapeError(f"take_column: expected a 2-D tensor, got shape {a.data.shape}")
    out_data = a.data[:, col]

    def bwd(g):
        a.grad[:, col] += g

    return a.tape.record(out_data, "take_column", (a,), bwd)


def stack_columns(columns) -> Tensor:
    """Stack same-length 1-D tensors as columns: K x (M,) -> (M, K)."""
    columns = tuple(columns)
    tape = _same_tape(*columns)
    if any(c.data.ndim != 1 or c.data.shape != columns[0].data.shape for c in columns):
        raise ShapeError("stack_columns: all inputs must be 1-D with equal length")
    out_data = np.stack([c.data for c in columns], axis=1)

    def bwd(g):
        for idx, c in enumerate(columns):
            c.grad += g[:, idx]

    return tape.record(out_data, "stack_columns", columns, bwd)


def stack_rows(rows) -> Tensor:
    """Stack same-length 1-D tensors as rows: B x (K,) -> (B, K)."""
    rows = tuple(rows)
    tape = _same_tape(*rows)
    if any(r.data.ndim != 1 or r.data.shape != rows[0].data.shape for r in rows):
        raise ShapeError("stack_rows: all inputs must be 1-D with equal length")
    out_data = np.stack([r.data for r in rows], axis=0)

    def bwd(g):
        for idx, r in enumerate(rows):
            r.grad += g[idx]

    return tape.record(out_data, "stack_rows", rows, bwd)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` for every node the scalar ``loss`` depends on.

    Nodes not reachable from the loss keep their zero grad. Each node's
    backward rule runs exactly once, in reverse tape order.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.data.shape}")
    nodes = loss.tape.nodes
    loss.grad += 1.0
    needed = bytearray(len(nodes))
    needed[loss.node_id] = 1
    for node in reversed(nodes[: loss.node_id + 1]):
        if not needed[node.node_id]:
            continue
        for p in node._parents:
            needed[p.node_id] = 1
        if node._backward is not None:
            node._backward(node.grad)


def first_nonfinite(tape: Tape):
    """Return the earliest tape node holding a NaN/Inf, or None."""
    for node in tape.nodes:
        if not np.all(np.isfinite(node.data)):
            return node
    return None
