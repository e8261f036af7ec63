"""Minimal reverse-mode automatic differentiation on numpy float64 arrays.

Every differentiable quantity is a Tensor holding a value array and, after
backward(), a gradient of the same shape.  Ops are free functions that record
a closure computing the parent gradients from the output gradient.  The op
set is exactly what the model layers need: dense linear algebra, pointwise
nonlinearities, softmaxes (dense-masked and segment forms), 1-d convolution
and pooling, and the three losses.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "Parameter", "SegmentIndex", "GatherPlan",
    "add", "sub", "mul", "div", "neg", "matmul", "transpose", "reshape",
    "concat", "relu", "leaky_relu", "sigmoid", "exp", "log",
    "row_softmax", "masked_neighbor_softmax",
    "conv1d", "maxpool1d", "mean_rows", "max_rows", "sum_", "mean_",
    "take_rows", "put_rows", "segment_sum", "repeat_segments", "segment_max",
    "cross_entropy", "bce_matrix", "mse_matrix", "grad_check",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)

    def backward(self, seed=None):
        """Accumulate gradients of this (scalar unless seeded) tensor's parents."""
        if seed is None:
            if self.data.size != 1:
                raise ShapeError(
                    f"backward() without seed requires a scalar, got shape {self.data.shape}")
            seed = np.ones_like(self.data)
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        grads = {id(self): np.asarray(seed, dtype=np.float64)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf: accumulate into .grad
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        # self may itself be a leaf parameter
        if self._backward is None and self.requires_grad and id(self) not in visited:
            pass


class Parameter(Tensor):
    """A named leaf tensor trained by an optimizer."""

    __slots__ = ("name",)

    def __init__(self, data, name=""):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter(name={self.name!r}, shape={self.data.shape})"


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward):
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.data.shape),
                            _unbroadcast(g * a.data, b.data.shape)))


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data / b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.data.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)))


def neg(a):
    a = _as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,))


# ---------------------------------------------------------------------------
# linear algebra and shape ops

def matmul(a, b):
    """a @ b where b is a 2-d matrix; a may carry leading batch axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.ndim != 2:
        raise ShapeError(f"matmul right operand must be 2-d, got {b.data.shape}")
    if a.ndim < 2:
        raise ShapeError(f"matmul left operand must be >=2-d, got {a.data.shape}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} vs {b.data.shape}")
    out = a.data @ b.data

    def backward(g):
        da = g @ b.data.T
        a2 = a.data.reshape(-1, a.data.shape[-1])
        g2 = g.reshape(-1, b.data.shape[1])
        db = a2.T @ g2
        return da, db

    return _node(out, (a, b), backward)


def transpose(a, axes):
    a = _as_tensor(a)
    inv = np.argsort(axes)
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def reshape(a, shape):
    a = _as_tensor(a)
    orig = a.data.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _node(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


# ---------------------------------------------------------------------------
# pointwise nonlinearities

def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


def leaky_relu(a, slope=0.2):
    a = _as_tensor(a)
    mask = a.data > 0
    scale = np.where(mask, 1.0, slope)
    return _node(a.data * scale, (a,), lambda g: (g * scale,))


def sigmoid(a):
    a = _as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    return _node(s, (a,), lambda g: (g * s * (1.0 - s),))


def exp(a):
    a = _as_tensor(a)
    e = np.exp(a.data)
    return _node(e, (a,), lambda g: (g * e,))


def log(a):
    a = _as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


# ---------------------------------------------------------------------------
# reductions

def sum_(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _node(out, (a,), backward)


def mean_(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def mean_rows(a):
    """Mean over axis 0 (aggregate a set of row vectors)."""
    return mean_(_as_tensor(a), axis=0)


def max_rows(a):
    """Elementwise max over axis 0; gradient flows to the argmax rows only."""
    a = _as_tensor(a)
    if a.data.shape[0] == 0:
        raise ShapeError("max_rows of an empty row set")
    idx = a.data.argmax(axis=0)
    out = a.data.max(axis=0)

    def backward(g):
        da = np.zeros_like(a.data)
        cols = np.arange(a.data.shape[1]) if a.ndim == 2 else ()
        if a.ndim == 1:
            da[idx] = g
        else:
            da[idx, cols] = g
        return (da,)

    return _node(out, (a,), backward)


# ---------------------------------------------------------------------------
# softmaxes

def row_softmax(a):
    """Softmax along the last axis, max-subtracted for stability."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - dot),)

    return _node(p, (a,), backward)


def masked_neighbor_softmax(scores, mask):
    """Per-row softmax restricted to True entries of a boolean mask.

    Rows whose mask is all-False come out as all zeros.  Used for dense GAT
    attention where the mask is the neighborhood (incl. self) indicator.
    """
    scores = _as_tensor(scores)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != scores.data.shape:
        raise ShapeError(f"mask shape {mask.shape} != scores shape {scores.data.shape}")
    neg_inf = np.where(mask, scores.data, -np.inf)
    rowmax = neg_inf.max(axis=-1, keepdims=True)
    rowmax = np.where(np.isfinite(rowmax), rowmax, 0.0)
    e = np.where(mask, np.exp(neg_inf - rowmax), 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    p = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)

    def backward(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - dot),)

    return _node(p, (scores,), backward)


# ---------------------------------------------------------------------------
# 1-d convolution / pooling (valid padding, channels-last)

def conv1d(signal, kernel, stride=1):
    """Valid cross-correlation.  signal: (B, T, Fin), kernel: (K, Fin, Fout)."""
    x, w = _as_tensor(signal), _as_tensor(kernel)
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d expects (B,T,Fin) and (K,Fin,Fout), got {x.data.shape} and {w.data.shape}")
    if x.data.shape[2] != w.data.shape[1]:
        raise ShapeError(f"conv1d channel mismatch: {x.data.shape} vs {w.data.shape}")
    B, T, Fin = x.data.shape
    K, _, Fout = w.data.shape
    if T < K:
        raise ShapeError(f"conv1d signal length {T} shorter than kernel {K}")
    Tout = (T - K) // stride + 1
    out = np.zeros((B, Tout, Fout))
    for k in range(K):
        out += x.data[:, k:k + stride * Tout:stride, :] @ w.data[k]

    def backward(g):
        dx = np.zeros_like(x.data)
        dw = np.zeros_like(w.data)
        for k in range(K):
            xs = x.data[:, k:k + stride * Tout:stride, :]
            dw[k] = np.einsum("btf,bto->fo", xs, g)
            dx[:, k:k + stride * Tout:stride, :] += g @ w.data[k].T
        return dx, dw

    return _node(out, (x, w), backward)


def maxpool1d(signal, window):
    """Non-overlapping max pooling along the time axis; trailing remainder dropped."""
    x = _as_tensor(signal)
    if x.ndim != 3:
        raise ShapeError(f"maxpool1d expects (B,T,F), got {x.data.shape}")
    B, T, F = x.data.shape
    Tout = T // window
    if Tout == 0:
        raise ShapeError(f"maxpool1d window {window} exceeds length {T}")
    xr = x.data[:, :Tout * window, :].reshape(B, Tout, window, F)
    idx = xr.argmax(axis=2)
    out = xr.max(axis=2)

    def backward(g):
        dr = np.zeros((B, Tout, window, F))
        np.put_along_axis(dr, idx[:, :, None, :], g[:, :, None, :], axis=2)
        dx = np.zeros_like(x.data)
        dx[:, :Tout * window, :] = dr.reshape(B, Tout * window, F)
        return (dx,)

    return _node(out, (x,), backward)


# ---------------------------------------------------------------------------
# gather / scatter / segment ops (edge-list message passing)

class GatherPlan:
    """Precomputed scatter plan for the backward pass of take_rows.

    Sorting the gather indices once lets the scatter-add run through
    reduceat instead of np.add.at, which matters on ~1e5-edge graphs.
    """

    def __init__(self, idx, n_rows):
        idx = np.asarray(idx, dtype=np.intp)
        self.idx = idx
        self.n_rows = int(n_rows)
        self.order = np.argsort(idx, kind="stable")
        sorted_idx = idx[self.order]
        if len(sorted_idx):
            boundaries = np.flatnonzero(np.diff(sorted_idx)) + 1
            self.starts = np.concatenate(([0], boundaries))
            self.rows = sorted_idx[self.starts]
        else:
            self.starts = np.zeros(0, dtype=np.intp)
            self.rows = np.zeros(0, dtype=np.intp)

    def scatter_add(self, g):
        out = np.zeros((self.n_rows,) + g.shape[1:])
        if len(self.rows):
            out[self.rows] = np.add.reduceat(g[self.order], self.starts, axis=0)
        return out


def take_rows(a, idx, plan=None):
    """Row gather a[idx]; backward scatter-adds (via `plan` when supplied)."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)

    def backward(g):
        if plan is not None:
            return (plan.scatter_add(g),)
        da = np.zeros_like(a.data)
        np.add.at(da, idx, g)
        return (da,)

    return _node(a.data[idx], (a,), backward)


def put_rows(a, idx, n_rows):
    """Place rows a[k] at positions idx[k] of an n_rows output; rest zero."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    out = np.zeros((n_rows,) + a.data.shape[1:])
    out[idx] = a.data
    return _node(out, (a,), lambda g: (g[idx],))


class SegmentIndex:
    """Contiguous segments of a row-sorted edge array.

    `starts[k]` is the offset of segment k; all segments are non-empty.
    """

    def __init__(self, starts, total):
        self.starts = np.asarray(starts, dtype=np.intp)
        self.total = int(total)
        ends = np.concatenate((self.starts[1:], [self.total]))
        self.lengths = ends - self.starts
        if np.any(self.lengths <= 0):
            raise ShapeError("SegmentIndex segments must be non-empty")

    @classmethod
    def from_sorted_ids(cls, sorted_ids):
        sorted_ids = np.asarray(sorted_ids, dtype=np.intp)
        boundaries = np.flatnonzero(np.diff(sorted_ids)) + 1
        starts = np.concatenate(([0], boundaries))
        return cls(starts, len(sorted_ids))


def segment_sum(a, seg):
    """Sum rows within each segment: (E, ...) -> (n_segments, ...)."""
    a = _as_tensor(a)
    out = np.add.reduceat(a.data, seg.starts, axis=0)
    return _node(out, (a,), lambda g: (np.repeat(g, seg.lengths, axis=0),))


def repeat_segments(a, seg):
    """Inverse-shape op of segment_sum: broadcast one row per segment back to E rows."""
    a = _as_tensor(a)
    out = np.repeat(a.data, seg.lengths, axis=0)
    return _node(out, (a,), lambda g: (np.add.reduceat(g, seg.starts, axis=0),))


def segment_max(a, seg):
    """Elementwise max within each segment; gradient to the first argmax row."""
    a = _as_tensor(a)
    out = np.maximum.reduceat(a.data, seg.starts, axis=0)
    shape = a.data.shape
    flat = a.data.reshape(len(a.data), -1)
    local = np.repeat(out.reshape(len(out), -1), seg.lengths, axis=0)
    winner = flat == local
    # first winner per (segment, column): within-segment cumulative count == 1
    cs = np.cumsum(winner, axis=0)
    prev = np.zeros_like(cs)
    prev[seg.starts[1:]] = cs[seg.starts[1:] - 1]
    np.maximum.accumulate(prev, axis=0, out=prev)
    firsts = winner & ((cs - prev) == 1)

    def backward(g):
        grepeat = np.repeat(g.reshape(len(g), -1), seg.lengths, axis=0)
        da = np.where(firsts, grepeat, 0.0)
        return (da.reshape(shape),)

    return _node(out, (a,), backward)


# ---------------------------------------------------------------------------
# losses

def cross_entropy(logits, onehot, mask):
    """Mean negative log-likelihood over masked rows.

    logits: (N, M) Tensor; onehot: (N, M) constant; mask: boolean (N,).
    """
    logits = _as_tensor(logits)
    onehot = np.asarray(onehot, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if logits.data.shape != onehot.shape:
        raise ShapeError(f"logits shape {logits.data.shape} != labels shape {onehot.shape}")
    n_sel = int(mask.sum())
    if n_sel == 0:
        raise ValueError("cross_entropy: empty mask")
    z = logits.data
    zmax = z.max(axis=-1, keepdims=True)
    lse = zmax + np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True))
    logp = z - lse
    loss = -(onehot[mask] * logp[mask]).sum() / n_sel

    def backward(g):
        p = np.exp(logp)
        dz = (p - onehot) * mask[:, None] / n_sel
        return (g * dz,)

    return _node(loss, (logits,), backward)


def bce_matrix(recon, target, eps=1e-7):
    """Mean binary cross-entropy over all entries; recon clamped to [eps, 1-eps]."""
    recon = _as_tensor(recon)
    target = np.asarray(target, dtype=np.float64)
    if recon.data.shape != target.shape:
        raise ShapeError(f"recon shape {recon.data.shape} != target shape {target.shape}")
    r = np.clip(recon.data, eps, 1.0 - eps)
    n = r.size
    loss = -(target * np.log(r) + (1.0 - target) * np.log(1.0 - r)).sum() / n

    def backward(g):
        inside = (recon.data > eps) & (recon.data < 1.0 - eps)
        dr = np.where(inside, (r - target) / (r * (1.0 - r)) / n, 0.0)
        return (g * dr,)

    return _node(loss, (recon,), backward)


def mse_matrix(recon, target):
    """Mean squared difference over all entries."""
    recon = _as_tensor(recon)
    target = np.asarray(target, dtype=np.float64)
    if recon.data.shape != target.shape:
        raise ShapeError(f"recon shape {recon.data.shape} != target shape {target.shape}")
    diff = recon.data - target
    loss = (diff * diff).sum() / diff.size
    return _node(loss, (recon,), lambda g: (g * 2.0 * diff / diff.size,))


# ---------------------------------------------------------------------------
# gradient checking

def grad_check(fn, params, h=1e-5):
    """Compare reverse-mode gradients of scalar fn() against central differences.

    Returns the max relative error over every element of every parameter.
    """
    for p in params:
        p.zero_grad()
    out = fn()
    if not np.isfinite(out.data).all():
        raise ValueError("grad_check: non-finite function value")
    out.backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn().data)
            flat[i] = orig - h
            fm = float(fn().data)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            denom = max(abs(aflat[i]) + abs(numeric), 1e-8)
            err = abs(aflat[i] - numeric) / denom
            if abs(aflat[i]) < 1e-10 and abs(numeric) < 1e-10:
                err = 0.0
            worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return worst
