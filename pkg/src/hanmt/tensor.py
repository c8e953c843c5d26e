"""Dense tensors with reverse-mode automatic differentiation.

Just enough machinery for a Transformer and its optimizers: affine maps,
batched matmul, embedding lookup, layer norm, GELU, softmax variants,
dropout, reductions, and fused cross-entropy losses. Storage is float32
(float64 available for verification); reductions accumulate in float64.

Ops record themselves on the active Graph; with no graph open they run
forward-only, which is what inference uses.
"""

import math

import numpy as np


class TensorError(Exception):
    pass


class ShapeError(TensorError):
    pass


class NumericError(TensorError):
    pass


class GraphStateError(TensorError):
    pass


class EmptyLossError(TensorError):
    """Every position of a loss was ignored; refusing to return 0 silently."""


_graph_stack = []


def _active_graph():
    return _graph_stack[-1] if _graph_stack else None


class Graph:
    """Ordered record of executed ops, replayed in reverse for backward.

    A graph and its tensors belong to one execution context; it must not be
    shared across threads while live. backward() may run once per graph.
    """

    def __init__(self):
        self._tape = []
        self._consumed = False

    def __enter__(self):
        _graph_stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _graph_stack.pop()
        assert popped is self
        return False

    def record(self, out, backward_fn):
        self._tape.append((out, backward_fn))

    def backward(self, loss):
        """Seed d(loss)=1 and propagate through the tape in reverse order."""
        if self._consumed:
            raise GraphStateError("backward() already ran on this graph")
        if loss.data.shape != ():
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        self._consumed = True
        loss.grad = np.ones((), dtype=loss.data.dtype)
        for out, backward_fn in reversed(self._tape):
            if out.grad is not None:
                backward_fn(out.grad)


class Tensor:
    """Row-major float array plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad")

    def __init__(self, data, dtype=np.float32):
        arr = np.asarray(data, dtype=dtype)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor initialized with non-finite values")
        self.data = arr
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


def _record(out, backward_fn):
    g = _active_graph()
    if g is not None:
        g.record(out, backward_fn)


def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op} produced non-finite values")


def _unbroadcast(grad, shape):
    """Sum a gradient down to `shape` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, dtype=a.data.dtype)

    def backward(g):
        a.accumulate_grad(_unbroadcast(g, a.data.shape))
        b.accumulate_grad(_unbroadcast(g, b.data.shape))

    _record(out, backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, dtype=a.data.dtype)

    def backward(g):
        a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    _record(out, backward)
    return out


def scale(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data * c, dtype=x.data.dtype)

    def backward(g):
        x.accumulate_grad(g * c)

    _record(out, backward)
    return out


def mul_const(x: Tensor, mask) -> Tensor:
    """Elementwise product with a constant (non-differentiated) array."""
    mask = np.asarray(mask, dtype=x.data.dtype)
    out = Tensor(x.data * mask, dtype=x.data.dtype)

    def backward(g):
        x.accumulate_grad(g * mask)

    _record(out, backward)
    return out


def matmul_affine(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = x @ w (+ bias); x may carry leading batch dims, w is [a, b]."""
    if x.data.shape[-1] != w.data.shape[0]:
        raise ShapeError(
            f"matmul_affine inner dims differ: {x.data.shape} vs {w.data.shape}"
        )
    y = x.data @ w.data
    if bias is not None:
        y = y + bias.data
    _check_finite(y, "matmul_affine")
    out = Tensor(y, dtype=x.data.dtype)

    def backward(g):
        x.accumulate_grad(g @ w.data.T)
        w.accumulate_grad(x.data.reshape(-1, x.data.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
        if bias is not None:
            bias.accumulate_grad(g.reshape(-1, g.shape[-1]).sum(axis=0))

    _record(out, backward)
    return out


def batched_matmul(a: Tensor, b: Tensor) -> Tensor:
    """np.matmul over the last two axes; leading dims must match exactly."""
    if a.data.shape[:-2] != b.data.shape[:-2]:
        raise ShapeError(
            f"batched_matmul leading dims differ: {a.data.shape} vs {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"batched_matmul inner dims differ: {a.data.shape} vs {b.data.shape}"
        )
    out = Tensor(a.data @ b.data, dtype=a.data.dtype)

    def backward(g):
        a.accumulate_grad(g @ np.swapaxes(b.data, -1, -2))
        b.accumulate_grad(np.swapaxes(a.data, -1, -2) @ g)

    _record(out, backward)
    return out


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup; ids is an integer array, output gains a trailing dim."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeError(
            f"id out of range for embedding table of {table.data.shape[0]} rows"
        )
    out = Tensor(table.data[ids], dtype=table.data.dtype)

    def backward(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids.reshape(-1), g.reshape(-1, g.shape[-1]))

    _record(out, backward)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True, dtype=np.float64)
    var = x.data.var(axis=-1, keepdims=True, dtype=np.float64)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((x.data - mu) * inv).astype(x.data.dtype)
    out = Tensor(xhat * gain.data + bias.data, dtype=x.data.dtype)

    def backward(g):
        gain.accumulate_grad(_unbroadcast(g * xhat, gain.data.shape))
        bias.accumulate_grad(_unbroadcast(g, bias.data.shape))
        gx = g * gain.data
        # d xhat/d x folded analytically: inv * (gx - mean(gx) - xhat * mean(gx*xhat))
        m1 = gx.mean(axis=-1, keepdims=True, dtype=np.float64)
        m2 = (gx * xhat).mean(axis=-1, keepdims=True, dtype=np.float64)
        dx = (inv * (gx - m1 - xhat * m2)).astype(x.data.dtype)
        x.accumulate_grad(dx)

    _record(out, backward)
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU (the usual MLM-head nonlinearity)."""
    u = _GELU_C * (x.data + 0.044715 * x.data ** 3)
    t = np.tanh(u)
    out = Tensor(0.5 * x.data * (1.0 + t), dtype=x.data.dtype)

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data ** 2)
        dx = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t ** 2) * du
        x.accumulate_grad(g * dx.astype(x.data.dtype))

    _record(out, backward)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0), dtype=x.data.dtype)

    def backward(g):
        x.accumulate_grad(g * (x.data > 0))

    _record(out, backward)
    return out


def softmax(x: Tensor, additive_mask=None) -> Tensor:
    """Row softmax over the last axis, log-sum-exp stabilized.

    additive_mask is a constant array broadcast onto the logits (use large
    negative values to forbid attention positions).
    """
    z = x.data.astype(np.float64)
    if additive_mask is not None:
        z = z + additive_mask
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p64 = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p64.astype(x.data.dtype), dtype=x.data.dtype)
    p = out.data

    def backward(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        x.accumulate_grad(p * (g - inner))

    _record(out, backward)
    return out


def log_softmax(x: Tensor) -> Tensor:
    z = x.data.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = Tensor((z - lse).astype(x.data.dtype), dtype=x.data.dtype)
    p = np.exp(out.data.astype(np.float64)).astype(x.data.dtype)

    def backward(g):
        x.accumulate_grad(g - p * g.sum(axis=-1, keepdims=True))

    _record(out, backward)
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Train-time inverted dropout; skip the call entirely at inference."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return mul_const(x, keep)


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape), dtype=x.data.dtype)

    def backward(g):
        x.accumulate_grad(g.reshape(x.data.shape))

    _record(out, backward)
    return out


def transpose(x: Tensor, axes) -> Tensor:
    out = Tensor(x.data.transpose(axes), dtype=x.data.dtype)
    inverse = np.argsort(axes)

    def backward(g):
        x.accumulate_grad(g.transpose(inverse))

    _record(out, backward)
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum(dtype=np.float64), dtype=x.data.dtype)

    def backward(g):
        x.accumulate_grad(np.full_like(x.data, g))

    _record(out, backward)
    return out


def mean_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.mean(dtype=np.float64), dtype=x.data.dtype)

    def backward(g):
        x.accumulate_grad(np.full_like(x.data, g / x.data.size))

    _record(out, backward)
    return out


def softmax_cross_entropy(logits: Tensor, targets, ignore_id: int = -1) -> Tensor:
    """Mean negative log-probability of each target under row softmax.

    Rows whose target equals ignore_id contribute nothing; if that leaves
    no rows at all the loss is undefined and an EmptyLossError is raised.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"expected [n, V] logits, got shape {logits.data.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (logits.data.shape[0],):
        raise ShapeError("targets must be one id per logit row")
    valid = targets != ignore_id
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise EmptyLossError("every position carries ignore_id; loss undefined")
    checked = targets[valid]
    if checked.min() < 0 or checked.max() >= logits.data.shape[1]:
        raise ShapeError("target id outside vocabulary")

    z = logits.data.astype(np.float64)
    zmax = z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z - zmax).sum(axis=-1)) + zmax[:, 0]
    rows = np.arange(logits.data.shape[0])
    nll = lse - z[rows, np.where(valid, targets, 0)]
    loss64 = nll[valid].sum() / n_valid
    _check_finite(np.asarray(loss64), "softmax_cross_entropy")
    out = Tensor(loss64, dtype=logits.data.dtype)

    def backward(g):
        p = np.exp(z - zmax)
        p /= p.sum(axis=-1, keepdims=True)
        p[rows[valid], targets[valid]] -= 1.0
        p[~valid] = 0.0
        logits.accumulate_grad((p * (float(g) / n_valid)).astype(logits.data.dtype))

    _record(out, backward)
    return out


def sequence_nll(logits: Tensor, targets, pad_id: int) -> Tensor:
    """Per-sentence mean token NLL, then mean over sentences.

    logits [B, T, V], targets [B, T]; positions equal to pad_id are ignored.
    A sentence with no valid position at all is an error (empty target).
    """
    if logits.data.ndim != 3:
        raise ShapeError(f"expected [B, T, V] logits, got shape {logits.data.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.data.shape[:2]:
        raise ShapeError("targets must match the leading logits dims")
    valid = targets != pad_id
    counts = valid.sum(axis=1)
    if (counts == 0).any():
        raise EmptyLossError("a sentence in the batch has an empty target")

    B, T, V = logits.data.shape
    z = logits.data.astype(np.float64)
    zmax = z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z - zmax).sum(axis=-1)) + zmax[..., 0]
    safe = np.where(valid, targets, 0)
    picked = np.take_along_axis(z, safe[..., None], axis=-1)[..., 0]
    nll = (lse - picked) * valid
    loss64 = (nll.sum(axis=1) / counts).mean()
    _check_finite(np.asarray(loss64), "sequence_nll")
    out = Tensor(loss64, dtype=logits.data.dtype)

    def backward(g):
        p = np.exp(z - zmax)
        p /= p.sum(axis=-1, keepdims=True)
        rows = np.repeat(np.arange(B), T)
        cols = np.tile(np.arange(T), B)
        p[rows, cols, safe.reshape(-1)] -= 1.0
        w = (valid / counts[:, None] / B) * float(g)
        logits.accumulate_grad((p * w[..., None]).astype(logits.data.dtype))

    _record(out, backward)
    return out
