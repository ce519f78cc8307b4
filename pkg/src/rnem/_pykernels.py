"""Pure numpy fallback for the compiled convolution forward kernel.

Contributions accumulate in (in-channel, kernel-row, kernel-col) order, one
vectorized shift-add per kernel tap, which gives every output pixel the exact
same sequence of rounded multiply/add operations as a naive six-loop
implementation. The compiled backend follows the same order, so forward
results are bit-identical across backends.
"""

import numpy as np

BACKEND_NAME = "python"


def conv2d_forward(xp, w, stride):
    """Cross-correlate padded input [N,C,Hp,Wp] with kernels [F,C,kh,kw]."""
    n, c, hp, wp = xp.shape
    f, _, kh, kw = w.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = np.zeros((n, f, ho, wo), dtype=np.float64)
    for ci in range(c):
        for ki in range(kh):
            for kj in range(kw):
                patch = xp[:, ci, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride]
                out += patch[:, None, :, :] * w[None, :, ci, ki, kj, None, None]
    return out


def conv2d_grad_input(g, w, stride, hp, wp):
    """Gradient w.r.t. the padded input; g is [N,F,Ho,Wo]."""
    n, f, ho, wo = g.shape
    _, c, kh, kw = w.shape
    dxp = np.zeros((n, c, hp, wp), dtype=np.float64)
    for ki in range(kh):
        for kj in range(kw):
            contrib = np.tensordot(g, w[:, :, ki, kj], axes=([1], [0]))
            dxp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += (
                contrib.transpose(0, 3, 1, 2)
            )
    return dxp


def conv2d_grad_kernels(g, xp, stride, kh, kw):
    """Gradient w.r.t. the kernels; returns [F,C,kh,kw]."""
    n, f, ho, wo = g.shape
    c = xp.shape[1]
    dw = np.empty((f, c, kh, kw), dtype=np.float64)
    for ki in range(kh):
        for kj in range(kw):
            patch = xp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride]
            dw[:, :, ki, kj] = np.tensordot(g, patch, axes=([0, 2, 3], [0, 2, 3]))
    return dw
