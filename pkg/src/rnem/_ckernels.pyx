# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled convolution kernels (OpenMP, channel-vectorized inner loops).

Forward accumulation runs in (in-channel, kernel-row, kernel-col) order per
output pixel, matching the pure-python backend bit for bit; compiled with
-ffp-contract=off so FMA contraction cannot change the rounding sequence.
Gradients are deterministic for fixed inputs but use their own loop orders.

Wide layers vectorize across a channel axis held in a stack-local accumulator
(thread-private, register-resident); narrow layers (< 8 channels) fall back
to row-vectorized loops.
"""

import numpy as np

cimport cython
from cython.parallel import prange

BACKEND_NAME = "cython"

DEF MAXCH = 512  # stack accumulator width; covers any layer in scope


def conv2d_forward(xp, w, int stride):
    if w.shape[0] > MAXCH or w.shape[1] > MAXCH:
        raise ValueError("channel count exceeds compiled kernel limit")
    xp = np.ascontiguousarray(xp)
    if w.shape[0] >= 8:
        return _forward_cvec(xp, np.ascontiguousarray(np.moveaxis(w, 0, 3)), stride)
    return _forward_rvec(xp, np.ascontiguousarray(w), stride)


def conv2d_grad_input(g, w, int stride, Py_ssize_t hp, Py_ssize_t wp):
    g = np.ascontiguousarray(g)
    if w.shape[1] >= 8:
        wt = np.ascontiguousarray(np.moveaxis(w, 1, 3))
        if w.shape[0] < 8 and stride == 1:
            dxpc = _grad_input_gather(g, wt, hp, wp)
        else:
            dxpc = _grad_input_cvec(g, wt, stride, hp, wp)
        return np.ascontiguousarray(np.moveaxis(dxpc, 3, 1))
    return _grad_input_rvec(g, np.ascontiguousarray(w), stride, hp, wp)


def conv2d_grad_kernels(g, xp, int stride, Py_ssize_t kh, Py_ssize_t kw):
    xp = np.ascontiguousarray(xp)
    if g.shape[1] >= 8:
        gt = np.ascontiguousarray(np.moveaxis(g, 1, 3))
        dwt = _grad_kernels_fvec(gt, xp, stride, kh, kw)
        return np.ascontiguousarray(np.moveaxis(dwt, 3, 0))
    return _grad_kernels_scalar(np.ascontiguousarray(g), xp, stride, kh, kw)


cdef void _fwd_cvec_one(const double* xpb, const double* wt, double* outb,
                        Py_ssize_t c, Py_ssize_t hp, Py_ssize_t wp,
                        Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t f,
                        Py_ssize_t ho, Py_ssize_t wo, int stride) noexcept nogil:
    cdef double acc[MAXCH]
    cdef Py_ssize_t i, j, ci, ki, kj, fo
    cdef const double* xrow
    cdef const double* wrow
    cdef double xv
    for i in range(ho):
        for j in range(wo):
            for fo in range(f):
                acc[fo] = 0.0
            for ci in range(c):
                for ki in range(kh):
                    xrow = xpb + ((ci * hp + i * stride + ki) * wp + j * stride)
                    wrow = wt + (ci * kh + ki) * kw * f
                    for kj in range(kw):
                        xv = xrow[kj]
                        for fo in range(f):
                            acc[fo] = acc[fo] + xv * wrow[kj * f + fo]
            for fo in range(f):
                outb[(i * wo + j) * f + fo] = acc[fo]


def _forward_cvec(double[:, :, :, ::1] xp, double[:, :, :, ::1] wt, int stride):
    # wt is [C, kh, kw, F]; output accumulated channels-last, transposed after.
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1], hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t kh = wt.shape[1], kw = wt.shape[2], f = wt.shape[3]
    cdef Py_ssize_t ho = (hp - kh) // stride + 1
    cdef Py_ssize_t wo = (wp - kw) // stride + 1
    out_arr = np.empty((n, ho, wo, f), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b
    with nogil:
        for b in prange(n, schedule='static'):
            _fwd_cvec_one(&xp[b, 0, 0, 0], &wt[0, 0, 0, 0], &out[b, 0, 0, 0],
                          c, hp, wp, kh, kw, f, ho, wo, stride)
    return np.ascontiguousarray(np.moveaxis(out_arr, 3, 1))


def _forward_rvec(double[:, :, :, ::1] xp, double[:, :, :, ::1] w, int stride):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1], hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t f = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = (hp - kh) // stride + 1
    cdef Py_ssize_t wo = (wp - kw) // stride + 1
    out_arr = np.zeros((n, f, ho, wo), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, fo, ci, ki, kj, i, j, row
    cdef double wv
    with nogil:
        for b in prange(n, schedule='static'):
            for fo in range(f):
                for ci in range(c):
                    for ki in range(kh):
                        for kj in range(kw):
                            wv = w[fo, ci, ki, kj]
                            for i in range(ho):
                                row = i * stride + ki
                                if stride == 1:
                                    for j in range(wo):
                                        out[b, fo, i, j] += xp[b, ci, row, j + kj] * wv
                                else:
                                    for j in range(wo):
                                        out[b, fo, i, j] += xp[b, ci, row, j * stride + kj] * wv
    return out_arr


cdef void _gin_cvec_one(const double* gb, const double* wt, double* dxb,
                        Py_ssize_t f, Py_ssize_t ho, Py_ssize_t wo,
                        Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t c,
                        Py_ssize_t hp, Py_ssize_t wp, int stride) noexcept nogil:
    cdef Py_ssize_t fo, i, j, ki, kj, ci, col
    cdef const double* wrow
    cdef double* drow
    cdef double gv
    for fo in range(f):
        for i in range(ho):
            for ki in range(kh):
                drow = dxb + ((i * stride + ki) * wp) * c
                for j in range(wo):
                    gv = gb[(fo * ho + i) * wo + j]
                    col = j * stride
                    wrow = wt + (fo * kh + ki) * kw * c
                    for kj in range(kw):
                        for ci in range(c):
                            drow[(col + kj) * c + ci] += gv * wrow[kj * c + ci]


def _grad_input_cvec(double[:, :, :, ::1] g, double[:, :, :, ::1] wt, int stride,
                     Py_ssize_t hp, Py_ssize_t wp):
    # wt is [F, kh, kw, C]; returns padded-input gradient channels-last.
    cdef Py_ssize_t n = g.shape[0], f = g.shape[1], ho = g.shape[2], wo = g.shape[3]
    cdef Py_ssize_t kh = wt.shape[1], kw = wt.shape[2], c = wt.shape[3]
    dxp_arr = np.zeros((n, hp, wp, c), dtype=np.float64)
    cdef double[:, :, :, ::1] dxp = dxp_arr
    cdef Py_ssize_t b
    with nogil:
        for b in prange(n, schedule='static'):
            _gin_cvec_one(&g[b, 0, 0, 0], &wt[0, 0, 0, 0], &dxp[b, 0, 0, 0],
                          f, ho, wo, kh, kw, c, hp, wp, stride)
    return dxp_arr


cdef void _gin_gather_one(const double* gb, const double* wt, double* dxb,
                          Py_ssize_t f, Py_ssize_t ho, Py_ssize_t wo,
                          Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t c,
                          Py_ssize_t hp, Py_ssize_t wp) noexcept nogil:
    # stride-1 only; accumulates per input pixel so the few output channels
    # are read repeatedly from cache instead of scattering into memory.
    cdef double acc[MAXCH]
    cdef Py_ssize_t y, x, fo, ki, kj, i, j, ci
    cdef const double* wrow
    cdef double gv
    for y in range(hp):
        for x in range(wp):
            for ci in range(c):
                acc[ci] = 0.0
            for fo in range(f):
                for ki in range(kh):
                    i = y - ki
                    if i < 0 or i >= ho:
                        continue
                    for kj in range(kw):
                        j = x - kj
                        if j < 0 or j >= wo:
                            continue
                        gv = gb[(fo * ho + i) * wo + j]
                        wrow = wt + (fo * kh + ki) * kw * c + kj * c
                        for ci in range(c):
                            acc[ci] = acc[ci] + gv * wrow[ci]
            for ci in range(c):
                dxb[(y * wp + x) * c + ci] = acc[ci]


def _grad_input_gather(double[:, :, :, ::1] g, double[:, :, :, ::1] wt,
                       Py_ssize_t hp, Py_ssize_t wp):
    cdef Py_ssize_t n = g.shape[0], f = g.shape[1], ho = g.shape[2], wo = g.shape[3]
    cdef Py_ssize_t kh = wt.shape[1], kw = wt.shape[2], c = wt.shape[3]
    dxp_arr = np.empty((n, hp, wp, c), dtype=np.float64)
    cdef double[:, :, :, ::1] dxp = dxp_arr
    cdef Py_ssize_t b
    with nogil:
        for b in prange(n, schedule='static'):
            _gin_gather_one(&g[b, 0, 0, 0], &wt[0, 0, 0, 0], &dxp[b, 0, 0, 0],
                            f, ho, wo, kh, kw, c, hp, wp)
    return dxp_arr


def _grad_input_rvec(double[:, :, :, ::1] g, double[:, :, :, ::1] w, int stride,
                     Py_ssize_t hp, Py_ssize_t wp):
    cdef Py_ssize_t n = g.shape[0], f = g.shape[1], ho = g.shape[2], wo = g.shape[3]
    cdef Py_ssize_t c = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    dxp_arr = np.zeros((n, c, hp, wp), dtype=np.float64)
    cdef double[:, :, :, ::1] dxp = dxp_arr
    cdef Py_ssize_t b, fo, ci, ki, kj, i, j, row
    cdef double wv
    with nogil:
        for b in prange(n, schedule='static'):
            for fo in range(f):
                for ci in range(c):
                    for ki in range(kh):
                        for kj in range(kw):
                            wv = w[fo, ci, ki, kj]
                            for i in range(ho):
                                row = i * stride + ki
                                for j in range(wo):
                                    dxp[b, ci, row, j * stride + kj] += g[b, fo, i, j] * wv
    return dxp_arr


cdef void _gk_fvec_one(const double* xp, const double* gt, double* dwt_ci,
                       Py_ssize_t ci, Py_ssize_t n, Py_ssize_t c,
                       Py_ssize_t hp, Py_ssize_t wp, Py_ssize_t ho, Py_ssize_t wo,
                       Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t f,
                       int stride) noexcept nogil:
    cdef double acc[MAXCH]
    cdef Py_ssize_t ki, kj, b, i, j, fo
    cdef const double* xrow
    cdef const double* grow
    cdef double xv
    for ki in range(kh):
        for kj in range(kw):
            for fo in range(f):
                acc[fo] = 0.0
            for b in range(n):
                for i in range(ho):
                    xrow = xp + ((b * c + ci) * hp + i * stride + ki) * wp + kj
                    grow = gt + (b * ho + i) * wo * f
                    for j in range(wo):
                        xv = xrow[j * stride]
                        for fo in range(f):
                            acc[fo] = acc[fo] + xv * grow[j * f + fo]
            for fo in range(f):
                dwt_ci[(ki * kw + kj) * f + fo] = acc[fo]


def _grad_kernels_fvec(double[:, :, :, ::1] gt, double[:, :, :, ::1] xp, int stride,
                       Py_ssize_t kh, Py_ssize_t kw):
    # gt is [N, Ho, Wo, F]; returns [C, kh, kw, F].
    cdef Py_ssize_t n = gt.shape[0], ho = gt.shape[1], wo = gt.shape[2], f = gt.shape[3]
    cdef Py_ssize_t c = xp.shape[1], hp = xp.shape[2], wp = xp.shape[3]
    dwt_arr = np.empty((c, kh, kw, f), dtype=np.float64)
    cdef double[:, :, :, ::1] dwt = dwt_arr
    cdef Py_ssize_t ci
    with nogil:
        for ci in prange(c, schedule='static'):
            _gk_fvec_one(&xp[0, 0, 0, 0], &gt[0, 0, 0, 0], &dwt[ci, 0, 0, 0],
                         ci, n, c, hp, wp, ho, wo, kh, kw, f, stride)
    return dwt_arr


def _grad_kernels_scalar(double[:, :, :, ::1] g, double[:, :, :, ::1] xp, int stride,
                         Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t n = g.shape[0], f = g.shape[1], ho = g.shape[2], wo = g.shape[3]
    cdef Py_ssize_t c = xp.shape[1]
    dw_arr = np.zeros((f, c, kh, kw), dtype=np.float64)
    cdef double[:, :, :, ::1] dw = dw_arr
    cdef Py_ssize_t fo, ci, ki, kj, b, i, j, row
    cdef double acc
    with nogil:
        for ci in prange(c, schedule='static'):
            for fo in range(f):
                for ki in range(kh):
                    for kj in range(kw):
                        acc = 0.0
                        for b in range(n):
                            for i in range(ho):
                                row = i * stride + ki
                                for j in range(wo):
                                    acc = acc + g[b, fo, i, j] * xp[b, ci, row, j * stride + kj]
                        dw[fo, ci, ki, kj] = acc
    return dw_arr
