"""A small reverse-mode autodiff engine over float64 numpy arrays.

Operations record themselves on the active :class:`Tape` (set with
``with Tape() as tape:``); ``tape.backward(loss)`` walks the records in
reverse exactly once. Outside a tape, ops compute values only.

Conventions the gradient checker relies on:

* ``relu`` has subgradient 0 at 0.
* ``max_over_time`` routes the gradient to the first argmax of each column.
* No broadcasting except ``add_bias`` (bias over the last axis).
"""

import contextvars

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InputError, NonFiniteError, ShapeError

CHECK_FINITE = True

_active_tape = contextvars.ContextVar("active_tape", default=None)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def tensor(data, requires_grad=False):
    return Tensor(np.array(data, dtype=np.float64), requires_grad)


class Tape:
    """Ordered record of executed ops: ``(output, inputs, backward_fn)``."""

    def __init__(self):
        self.records = []
        self.visits = 0
        self._token = None

    def __enter__(self):
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc):
        _active_tape.reset(self._token)
        self._token = None
        return False

    def record(self, out, inputs, backward):
        self.records.append((out, inputs, backward))

    def backward(self, loss, seed_grad=None):
        """Propagate d(loss)/d(.) into ``.grad`` of every tensor that needs it."""
        for out, inputs, _ in self.records:
            out.grad = None
            for t in inputs:
                if t.requires_grad:
                    t.grad = None
        if seed_grad is None:
            if loss.size != 1:
                raise ShapeError(f"backward from non-scalar of shape {loss.shape} needs seed_grad")
            seed_grad = np.ones_like(loss.data)
        loss.grad = np.array(seed_grad, dtype=np.float64)
        for out, inputs, backward in reversed(self.records):
            self.visits += 1
            if out.grad is None:
                continue
            grads = backward(out.grad)
            for t, g in zip(inputs, grads):
                if g is None or not t.requires_grad:
                    continue
                if t.grad is None:
                    t.grad = np.array(g, dtype=np.float64)
                else:
                    t.grad = t.grad + g
        for _, inputs, _ in self.records:
            for t in inputs:
                if t.requires_grad and t.grad is None:
                    t.grad = np.zeros_like(t.data)


def active_tape():
    return _active_tape.get()


def _result(name, data, inputs, backward):
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{name} produced a non-finite value")
    out = Tensor(data)
    tape = _active_tape.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward)
    return out


def _shape_mismatch(op, a, b):
    return ShapeError(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


def add(a, b):
    if a.shape != b.shape:
        raise _shape_mismatch("add", a.shape, b.shape)
    return _result("add", a.data + b.data, (a, b), lambda g: (g, g))


def add_bias(x, b):
    """``x + b`` with ``b`` of shape ``[n]`` added along the last axis of ``x``."""
    if b.data.ndim != 1 or x.data.ndim not in (1, 2) or x.shape[-1] != b.shape[0]:
        raise _shape_mismatch("add_bias", x.shape, b.shape)

    def backward(g):
        return g, (g if g.ndim == 1 else g.sum(axis=0))

    return _result("add_bias", x.data + b.data, (x, b), backward)


def scale(x, c):
    c = float(c)
    return _result("scale", x.data * c, (x,), lambda g: (g * c,))


def matmul(a, b):
    """Matrix product for 1-D/2-D operands (vector-matrix, matrix-vector, matrix-matrix)."""
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2) or (ad.ndim == 1 and bd.ndim == 1):
        raise _shape_mismatch("matmul", a.shape, b.shape)
    if ad.shape[-1] != bd.shape[0]:
        raise _shape_mismatch("matmul", a.shape, b.shape)

    def backward(g):
        a2 = ad if ad.ndim == 2 else ad[None, :]
        b2 = bd if bd.ndim == 2 else bd[:, None]
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        ga = (g2 @ b2.T).reshape(ad.shape)
        gb = (a2.T @ g2).reshape(bd.shape)
        return ga, gb

    return _result("matmul", ad @ bd, (a, b), backward)


def transpose(x):
    if x.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.shape}")
    return _result("transpose", x.data.T.copy(), (x,), lambda g: (g.T,))


def relu(x):
    mask = x.data > 0.0
    return _result("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def tanh(x):
    y = np.tanh(x.data)
    return _result("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def sum(x):  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return _result("sum", np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def stack(xs):
    """Stack same-shape tensors along a new leading axis."""
    xs = tuple(xs)
    if not xs:
        raise ShapeError("stack of zero tensors")
    for t in xs[1:]:
        if t.shape != xs[0].shape:
            raise _shape_mismatch("stack", xs[0].shape, t.shape)
    data = np.stack([t.data for t in xs])
    return _result("stack", data, xs, lambda g: tuple(g[i] for i in range(len(xs))))


def embedding(table, indices):
    """Rows ``table[indices]``; gradients scatter-add back into the table."""
    idx = np.asarray(indices, dtype=np.int64)
    n = table.shape[0]
    if idx.ndim != 1:
        raise ShapeError(f"embedding indices must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise InputError(f"embedding index out of range [0, {n})")
    shape = table.shape

    def backward(g):
        gt = np.zeros(shape)
        np.add.at(gt, idx, g)
        return (gt,)

    return _result("embedding", table.data[idx], (table,), backward)


def conv1d_valid(x, filters, bias):
    """Valid 1-D convolution of ``x [L x D]`` with ``filters [F x h x D]``.

    ``out[t, f] = bias[f] + sum_{i<h, j<D} x[t+i, j] * filters[f, i, j]``;
    output shape ``[(L-h+1) x F]``.
    """
    xd, wd = x.data, filters.data
    if xd.ndim != 2 or wd.ndim != 3 or wd.shape[2] != xd.shape[1]:
        raise _shape_mismatch("conv1d_valid", x.shape, filters.shape)
    if bias.shape != (wd.shape[0],):
        raise _shape_mismatch("conv1d_valid", filters.shape, bias.shape)
    length, dim = xd.shape
    n_f, h, _ = wd.shape
    if h > length:
        raise ShapeError(f"conv1d_valid: filter height {h} exceeds input length {length}")
    steps = length - h + 1
    # [T, D, h] view -> [T, h*D] copy
    windows = sliding_window_view(xd, h, axis=0).transpose(0, 2, 1).reshape(steps, h * dim)
    w2 = wd.reshape(n_f, h * dim)
    out = windows @ w2.T + bias.data

    def backward(g):
        gw = (g.T @ windows).reshape(n_f, h, dim)
        gb = g.sum(axis=0)
        gwin = (g @ w2).reshape(steps, h, dim)
        gx = np.zeros_like(xd)
        for i in range(h):
            gx[i:i + steps] += gwin[:, i, :]
        return gx, gw, gb

    return _result("conv1d_valid", out, (x, filters, bias), backward)


def max_over_time(x):
    """Column-wise max of ``x [T x F]`` -> ``[F]``; ties go to the first row."""
    xd = x.data
    if xd.ndim != 2:
        raise ShapeError(f"max_over_time expects [T x F], got shape {x.shape}")
    if xd.shape[0] == 0:
        raise ShapeError("max_over_time over zero time steps")
    arg = np.argmax(xd, axis=0)
    cols = np.arange(xd.shape[1])
    shape = xd.shape

    def backward(g):
        gx = np.zeros(shape)
        gx[arg, cols] = g
        return (gx,)

    return _result("max_over_time", xd[arg, cols], (x,), backward)


def softmax(x):
    xd = x.data
    if xd.ndim != 1 or xd.size == 0:
        raise ShapeError(f"softmax expects a non-empty vector, got shape {x.shape}")
    e = np.exp(xd - xd.max())
    s = e / e.sum()

    def backward(g):
        return (s * (g - np.dot(g, s)),)

    return _result("softmax", s, (x,), backward)


def spatial_dropout(x, p, mode, rng):
    """Drop whole embedding channels (columns of ``x [L x D]``) with probability ``p``.

    Kept channels are scaled by ``1 / (1 - p)``. Eval mode, or ``p == 0``,
    returns ``x`` itself.
    """
    if not 0.0 <= p < 1.0:
        raise InputError(f"dropout probability must be in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise InputError(f"unknown mode {mode!r}")
    if x.data.ndim != 2:
        raise ShapeError(f"spatial_dropout expects [L x D], got shape {x.shape}")
    if mode == "eval" or p == 0.0:
        return x
    keep = rng.random(x.shape[1]) >= p
    col_scale = keep / (1.0 - p)
    return _result("spatial_dropout", x.data * col_scale, (x,), lambda g: (g * col_scale,))


def cross_entropy(logits, label):
    """``-log softmax(logits)[label]`` computed through log-sum-exp."""
    z = logits.data
    if z.ndim != 1:
        raise ShapeError(f"cross_entropy expects a logit vector, got shape {logits.shape}")
    if not 0 <= label < z.size:
        raise InputError(f"label {label} out of range for {z.size} classes")
    m = z.max()
    e = np.exp(z - m)
    lse = m + np.log(e.sum())
    probs = e / e.sum()

    def backward(g):
        d = probs.copy()
        d[label] -= 1.0
        return (d * float(g),)

    return _result("cross_entropy", np.array(lse - z[label]), (logits,), backward)


def mean(xs):
    """Mean of a sequence of scalar tensors."""
    xs = tuple(xs)
    return scale(sum(stack(xs)), 1.0 / len(xs))


def dump_tsv(t, path):
    """Write a 1-D or 2-D tensor as tab-separated rows."""
    data = np.atleast_2d(t.data)
    with open(path, "w", encoding="utf-8") as f:
        for row in data:
            f.write("\t".join(repr(float(v)) for v in row) + "\n")
