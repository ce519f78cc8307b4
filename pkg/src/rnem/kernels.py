"""Convolution kernels: backend selection, padding plumbing, gradients.

The forward pass is the hot loop; it runs through the compiled extension when
importable, with a pure numpy fallback selected at import (both produce
bit-identical results; see benchmarks/bench_kernels.py for the speed gap).
Set RNEM_KERNEL_BACKEND to "python" or "cython" to force a backend.

Gradients are shared by both backends: they reduce to matrix products over
im2col patch matrices, which is deterministic for fixed shapes but not
required to match a particular summation order.
"""

import os

import numpy as np

from . import _pykernels

_requested = os.environ.get("RNEM_KERNEL_BACKEND", "auto").lower()
if _requested not in ("auto", "cython", "python"):
    raise ValueError(f"RNEM_KERNEL_BACKEND must be auto|cython|python, got {_requested!r}")

if _requested == "python":
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        if _requested == "cython":
            raise
        _impl = _pykernels

KERNEL_BACKEND = _impl.BACKEND_NAME


def get_backend(name=None):
    """Return the kernel module for `name` (None = the active backend)."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def normalize_padding(padding):
    """Expand int or pair-of-pairs padding to ((top,bottom),(left,right))."""
    if isinstance(padding, (int, np.integer)):
        if padding < 0:
            raise ValueError("padding must be non-negative")
        return ((int(padding),) * 2,) * 2
    (pt, pb), (pl, pr) = padding
    if min(pt, pb, pl, pr) < 0:
        raise ValueError("padding must be non-negative")
    return ((int(pt), int(pb)), (int(pl), int(pr)))


def pad_input(x, padding):
    (pt, pb), (pl, pr) = padding
    if pt == pb == pl == pr == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))


def conv_output_size(h, w, kh, kw, stride, padding):
    (pt, pb), (pl, pr) = padding
    ho, rh = divmod(h + pt + pb - kh, stride)
    wo, rw = divmod(w + pl + pr - kw, stride)
    if ho < 0 or wo < 0 or rh or rw:
        raise ValueError(
            f"conv geometry mismatch: input {h}x{w}, kernel {kh}x{kw}, "
            f"stride {stride}, padding {padding}"
        )
    return ho + 1, wo + 1


def conv2d_forward(xp, w, stride):
    """Forward cross-correlation on a padded input, via the active backend."""
    return _impl.conv2d_forward(xp, w, stride)


def conv2d_grad_input(g, w, stride, hp, wp, padding):
    """Gradient w.r.t. the unpadded input; g is [N,F,Ho,Wo]."""
    dxp = _impl.conv2d_grad_input(np.ascontiguousarray(g), w, stride, hp, wp)
    (pt, pb), (pl, pr) = padding
    return dxp[:, :, pt : hp - pb, pl : wp - pr]


def conv2d_grad_kernels(g, xp, stride, kh, kw):
    """Gradient w.r.t. the kernels; returns [F,C,kh,kw]."""
    return _impl.conv2d_grad_kernels(np.ascontiguousarray(g), xp, stride, kh, kw)
