"""Dense float64 tensors on a recorded tape with reverse-mode gradients.

A `Tape` is an append-only list of operation records; creation order is the
topological order, so the backward sweep is a single reverse pass that visits
each node exactly once. Node values are treated as immutable once recorded.

Every forward op validates that its output is finite (NaN/Inf raise
`NumericError` rather than propagating silently); the backward sweep applies
the same check to every gradient it produces. Reductions over the component
axis of a mixture use `psum`, which sums in value-sorted order so the result
is bit-identical under any permutation of the summands.
"""

import numpy as np

from . import kernels


class NumericError(ArithmeticError):
    """A non-finite value appeared in a forward value or a gradient."""


def _as_f8(x):
    a = np.asarray(x, dtype=np.float64)
    return a


class Node:
    __slots__ = ("op", "inputs", "value", "vjp", "param", "name")

    def __init__(self, op, inputs, value, vjp, param=False, name=None):
        self.op = op
        self.inputs = inputs
        self.value = value
        self.vjp = vjp
        self.param = param
        self.name = name


class Var:
    """Handle to one node of a tape."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape, idx):
        self.tape = tape
        self.idx = idx

    @property
    def value(self):
        return self.tape.nodes[self.idx].value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def elu(self):
        return elu(self)

    def __repr__(self):
        n = self.tape.nodes[self.idx]
        return f"Var({n.op}, shape={n.value.shape}, idx={self.idx})"


class Tape:
    """Recorded computation graph over float64 arrays."""

    def __init__(self, check_finite=True):
        self.nodes = []
        self.check_finite = check_finite

    def _record(self, op, inputs, value, vjp, param=False, name=None):
        value = _as_f8(value)
        if self.check_finite and not np.isfinite(value).all():
            raise NumericError(f"non-finite value produced by op {op!r}")
        for v in inputs:
            if v.tape is not self:
                raise ValueError("inputs belong to a different tape")
        self.nodes.append(Node(op, tuple(v.idx for v in inputs), value, vjp, param, name))
        return Var(self, len(self.nodes) - 1)

    def const(self, value, name=None):
        """Leaf with no gradient."""
        return self._record("const", (), value, None, name=name)

    def param(self, value, name=None):
        """Trainable leaf; backward reports its gradient."""
        return self._record("param", (), value, None, param=True, name=name)

    def params(self, arrays):
        """Register a dict of named arrays, preserving order."""
        return {k: self.param(v, name=k) for k, v in arrays.items()}


def backward(tape, loss):
    """Gradient of a scalar loss w.r.t. every parameter node of the tape.

    Returns {node index: gradient array}. Non-parameter gradients are freed
    as soon as they have been consumed.
    """
    if loss.tape is not tape:
        raise ValueError("loss does not belong to this tape")
    lnode = tape.nodes[loss.idx]
    if lnode.value.shape != ():
        raise ValueError(f"loss must be scalar, got shape {lnode.value.shape}")
    grads = [None] * (loss.idx + 1)
    grads[loss.idx] = np.ones((), dtype=np.float64)
    param_grads = {}
    for idx in range(loss.idx, -1, -1):
        g = grads[idx]
        grads[idx] = None
        if g is None:
            continue
        node = tape.nodes[idx]
        if node.param:
            param_grads[idx] = g
        if node.vjp is None:
            continue
        for inp, contrib in zip(node.inputs, node.vjp(g)):
            if contrib is None:
                continue
            if tape.check_finite and not np.isfinite(contrib).all():
                raise NumericError(f"non-finite gradient at op {node.op!r}")
            grads[inp] = contrib if grads[inp] is None else grads[inp] + contrib
    return param_grads


def _unbroadcast(g, shape):
    """Reduce a gradient back to the shape of a broadcast operand."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _coerce(tape, x):
    if isinstance(x, Var):
        return x
    return tape.const(x)


def add(a, b):
    tape = a.tape if isinstance(a, Var) else b.tape
    a, b = _coerce(tape, a), _coerce(tape, b)
    va, vb = a.value, b.value

    def vjp(g):
        return _unbroadcast(g, va.shape), _unbroadcast(g, vb.shape)

    return tape._record("add", (a, b), va + vb, vjp)


def sub(a, b):
    tape = a.tape if isinstance(a, Var) else b.tape
    a, b = _coerce(tape, a), _coerce(tape, b)
    va, vb = a.value, b.value

    def vjp(g):
        return _unbroadcast(g, va.shape), -_unbroadcast(g, vb.shape)

    return tape._record("sub", (a, b), va - vb, vjp)


def mul(a, b):
    if not isinstance(b, Var) and np.isscalar(b):
        s = float(b)

        def vjp_s(g):
            return (g * s,)

        return a.tape._record("smul", (a,), a.value * s, vjp_s)
    tape = a.tape if isinstance(a, Var) else b.tape
    a, b = _coerce(tape, a), _coerce(tape, b)
    va, vb = a.value, b.value

    def vjp(g):
        return _unbroadcast(g * vb, va.shape), _unbroadcast(g * va, vb.shape)

    return tape._record("mul", (a, b), va * vb, vjp)


def div(a, b):
    if not isinstance(b, Var) and np.isscalar(b):
        return mul(a, 1.0 / float(b))
    tape = a.tape if isinstance(a, Var) else b.tape
    a, b = _coerce(tape, a), _coerce(tape, b)
    va, vb = a.value, b.value
    out = va / vb

    def vjp(g):
        return _unbroadcast(g / vb, va.shape), _unbroadcast(-g * out / vb, vb.shape)

    return tape._record("div", (a, b), out, vjp)


def matmul(a, b):
    va, vb = a.value, b.value
    if va.ndim != 2 or vb.ndim != 2 or va.shape[1] != vb.shape[0]:
        raise ValueError(f"matmul shape mismatch: {va.shape} @ {vb.shape}")

    def vjp(g):
        return g @ vb.T, va.T @ g

    return a.tape._record("matmul", (a, b), va @ vb, vjp)


def reshape(a, shape):
    va = a.value
    out = va.reshape(shape)

    def vjp(g):
        return (g.reshape(va.shape),)

    return a.tape._record("reshape", (a,), out, vjp)


def concat(parts, axis):
    tape = parts[0].tape
    values = [p.value for p in parts]
    splits = np.cumsum([v.shape[axis] for v in values])[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return tape._record("concat", tuple(parts), np.concatenate(values, axis=axis), vjp)


def gather(a, indices, axis):
    """Select rows along an axis with an integer index array."""
    va = a.value
    idx = np.asarray(indices, dtype=np.intp)

    def vjp(g):
        out = np.zeros(va.shape, dtype=np.float64)
        sl = (slice(None),) * axis
        np.add.at(out, sl + (idx,), g)
        return (out,)

    return a.tape._record("gather", (a,), np.take(va, idx, axis=axis), vjp)


def reduce_sum(a, axis=None, keepdims=False):
    va = a.value

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, va.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, va.shape).copy(),)

    return a.tape._record("sum", (a,), np.sum(va, axis=axis, keepdims=keepdims), vjp)


def mean_all(a):
    n = a.value.size
    return mul(reduce_sum(a), 1.0 / n)


def psum(a, axis):
    """Permutation-invariant sum along `axis`.

    Summands are ordered by value before sequential accumulation, so any
    permutation of slices along `axis` produces a bit-identical result.
    Intended for reductions across mixture components (small axes).
    """
    va = a.value
    srt = np.sort(va, axis=axis)
    out = np.take(srt, 0, axis=axis)
    for i in range(1, va.shape[axis]):
        out = out + np.take(srt, i, axis=axis)

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, axis), va.shape).copy(),)

    return a.tape._record("psum", (a,), out, vjp)


def stop_grad(a):
    return a.tape._record("stop_grad", (a,), a.value, lambda g: (None,))


def clip(a, lo, hi):
    va = a.value
    mask = (va >= lo) & (va <= hi)

    def vjp(g):
        return (g * mask,)

    return a.tape._record("clip", (a,), np.clip(va, lo, hi), vjp)


def log(a):
    va = a.value
    if np.any(va <= 0.0):
        raise NumericError("log of non-positive value")

    def vjp(g):
        return (g / va,)

    return a.tape._record("log", (a,), np.log(va), vjp)


def exp(a):
    out = np.exp(a.value)

    def vjp(g):
        return (g * out,)

    return a.tape._record("exp", (a,), out, vjp)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    out = _sigmoid(a.value)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return a.tape._record("sigmoid", (a,), out, vjp)


def tanh(a):
    out = np.tanh(a.value)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return a.tape._record("tanh", (a,), out, vjp)


def relu(a):
    va = a.value
    mask = va > 0

    def vjp(g):
        return (g * mask,)

    return a.tape._record("relu", (a,), np.where(mask, va, 0.0), vjp)


def elu(a):
    """ELU with alpha = 1."""
    va = a.value
    neg = np.expm1(np.minimum(va, 0.0))
    out = np.where(va > 0, va, neg)

    def vjp(g):
        return (g * np.where(va > 0, 1.0, neg + 1.0),)

    return a.tape._record("elu", (a,), out, vjp)


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu, "elu": elu}


def activate(a, kind):
    try:
        return _ACTIVATIONS[kind](a)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


def layer_norm(x, gain, bias, eps=1e-6):
    """Zero-mean unit-variance normalization per sample, then affine.

    Axis 0 indexes samples for inputs with ndim > 1 (all remaining axes are
    normalized over jointly); a 1-D input is treated as a single sample.
    `gain` and `bias` must broadcast against x.
    """
    vx = x.value
    if vx.ndim == 0 or vx.shape[-1] == 0:
        raise ValueError("layer_norm needs a non-empty feature axis")
    axes = tuple(range(1, vx.ndim)) if vx.ndim > 1 else (0,)
    n = 1
    for ax in axes:
        n *= vx.shape[ax]
    mu = vx.mean(axis=axes, keepdims=True)
    xc = vx - mu
    var = np.mean(xc * xc, axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    vg, vb = gain.value, bias.value
    out = xhat * vg + vb

    def vjp(g):
        dgain = _unbroadcast(g * xhat, vg.shape)
        dbias = _unbroadcast(g, vb.shape)
        dxhat = g * vg
        m1 = dxhat.mean(axis=axes, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=axes, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgain, dbias

    return x.tape._record("layer_norm", (x, gain, bias), out, vjp)


def _batched(v):
    if v.ndim == 3:
        return v[None], True
    if v.ndim == 4:
        return v, False
    raise ValueError(f"expected [C,H,W] or [N,C,H,W], got shape {v.shape}")


def conv2d(x, w, stride=1, padding=0):
    """Cross-correlation of x [*,C,H,W] with kernels [F,C,kh,kw].

    `padding` is an int (symmetric) or ((top,bottom),(left,right)). The
    summation order per output pixel is fixed (in-channel, then kernel row,
    then kernel column), identical to a naive nested-loop implementation.
    """
    vx, vw = x.value, w.value
    vxb, squeeze = _batched(vx)
    if vw.ndim != 4 or vw.shape[1] != vxb.shape[1]:
        raise ValueError(f"conv2d shape mismatch: input {vx.shape}, kernels {vw.shape}")
    pad = kernels.normalize_padding(padding)
    kernels.conv_output_size(vxb.shape[2], vxb.shape[3], vw.shape[2], vw.shape[3], stride, pad)
    xp = kernels.pad_input(vxb, pad)
    out = kernels.conv2d_forward(xp, vw, stride)

    def vjp(g):
        gb = g[None] if squeeze else g
        dx = kernels.conv2d_grad_input(gb, vw, stride, xp.shape[2], xp.shape[3], pad)
        dw = kernels.conv2d_grad_kernels(gb, xp, stride, vw.shape[2], vw.shape[3])
        return dx[0] if squeeze else dx, dw

    return x.tape._record("conv2d", (x, w), out[0] if squeeze else out, vjp)


def nn_upsample(x, factor):
    """Nearest-neighbour upsampling of x [*,C,H,W] by an integer factor."""
    if factor < 1:
        raise ValueError("upsample factor must be >= 1")
    vx = x.value
    vxb, squeeze = _batched(vx)
    out = np.repeat(np.repeat(vxb, factor, axis=2), factor, axis=3)

    def vjp(g):
        gb = g[None] if squeeze else g
        n, c, fh, fw = gb.shape
        dx = gb.reshape(n, c, fh // factor, factor, fw // factor, factor).sum(axis=(3, 5))
        return (dx[0] if squeeze else dx,)

    return x.tape._record("nn_upsample", (x,), out[0] if squeeze else out, vjp)
