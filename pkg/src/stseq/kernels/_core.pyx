# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels for the hot inner loops (gelu, softmax, rmsnorm, rope, adam).

Mirrors ``_numpy`` signatures; selected at import by ``stseq.kernels``.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from libc.math cimport erf, exp, sqrt

cnp.import_array()

ctypedef fused floating:
    float
    double

cdef double INV_SQRT2 = 0.7071067811865476
cdef double INV_SQRT2PI = 0.3989422804014327


def gelu_fwd(floating[::1] x):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    out_np = np.empty(n, dtype=np.asarray(x).dtype)
    cdef floating[::1] y = out_np
    cdef double v
    with nogil:
        for i in range(n):
            v = <double> x[i]
            y[i] = <floating> (0.5 * v * (1.0 + erf(v * INV_SQRT2)))
    return out_np


def gelu_bwd(floating[::1] x, floating[::1] gout):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    out_np = np.empty(n, dtype=np.asarray(x).dtype)
    cdef floating[::1] g = out_np
    cdef double v, cdf, pdf
    with nogil:
        for i in range(n):
            v = <double> x[i]
            cdf = 0.5 * (1.0 + erf(v * INV_SQRT2))
            pdf = exp(-0.5 * v * v) * INV_SQRT2PI
            g[i] = <floating> (<double> gout[i] * (cdf + v * pdf))
    return out_np


def softmax_rows_fwd(floating[:, ::1] x):
    cdef Py_ssize_t r = x.shape[0]
    cdef Py_ssize_t n = x.shape[1]
    cdef Py_ssize_t i, j
    out_np = np.empty((r, n), dtype=np.asarray(x).dtype)
    cdef floating[:, ::1] y = out_np
    cdef double m, s, e
    with nogil:
        for i in range(r):
            m = <double> x[i, 0]
            for j in range(1, n):
                if <double> x[i, j] > m:
                    m = <double> x[i, j]
            s = 0.0
            for j in range(n):
                e = exp(<double> x[i, j] - m)
                y[i, j] = <floating> e
                s += e
            for j in range(n):
                y[i, j] = <floating> (<double> y[i, j] / s)
    return out_np


def softmax_rows_bwd(floating[:, ::1] y, floating[:, ::1] gout):
    cdef Py_ssize_t r = y.shape[0]
    cdef Py_ssize_t n = y.shape[1]
    cdef Py_ssize_t i, j
    out_np = np.empty((r, n), dtype=np.asarray(y).dtype)
    cdef floating[:, ::1] g = out_np
    cdef double dot
    with nogil:
        for i in range(r):
            dot = 0.0
            for j in range(n):
                dot += <double> y[i, j] * <double> gout[i, j]
            for j in range(n):
                g[i, j] = <floating> (<double> y[i, j] * (<double> gout[i, j] - dot))
    return out_np


def rmsnorm_fwd(floating[:, ::1] x, floating[::1] gain, double eps):
    cdef Py_ssize_t r = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t i, j
    dt = np.asarray(x).dtype
    out_np = np.empty((r, d), dtype=dt)
    inv_np = np.empty(r, dtype=dt)
    cdef floating[:, ::1] y = out_np
    cdef floating[::1] inv = inv_np
    cdef double ms, s
    with nogil:
        for i in range(r):
            ms = 0.0
            for j in range(d):
                ms += <double> x[i, j] * <double> x[i, j]
            s = 1.0 / sqrt(ms / d + eps)
            inv[i] = <floating> s
            for j in range(d):
                y[i, j] = <floating> (<double> x[i, j] * <double> inv[i] * <double> gain[j])
    return out_np, inv_np


def rmsnorm_bwd(floating[:, ::1] x, floating[::1] gain, floating[::1] inv_rms,
                floating[:, ::1] gout):
    cdef Py_ssize_t r = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t i, j
    dt = np.asarray(x).dtype
    gx_np = np.empty((r, d), dtype=dt)
    ggain_np = np.zeros(d, dtype=dt)
    cdef floating[:, ::1] gx = gx_np
    cdef floating[::1] ggain = ggain_np
    cdef double s, row_dot, gg
    with nogil:
        for i in range(r):
            s = <double> inv_rms[i]
            row_dot = 0.0
            for j in range(d):
                row_dot += <double> gout[i, j] * <double> gain[j] * <double> x[i, j]
            for j in range(d):
                gg = <double> gout[i, j] * <double> gain[j]
                gx[i, j] = <floating> (s * gg - (s * s * s * row_dot / d) * <double> x[i, j])
                ggain[j] += <floating> (<double> gout[i, j] * <double> x[i, j] * s)
    return gx_np, ggain_np


def rope_fwd(floating[:, :, ::1] x, floating[:, ::1] cos, floating[:, ::1] sin):
    cdef Py_ssize_t h = x.shape[0]
    cdef Py_ssize_t l = x.shape[1]
    cdef Py_ssize_t dh = x.shape[2]
    cdef Py_ssize_t half = dh // 2
    cdef Py_ssize_t a, i, k
    out_np = np.empty((h, l, dh), dtype=np.asarray(x).dtype)
    cdef floating[:, :, ::1] y = out_np
    cdef double xe, xo, c, s
    with nogil:
        for a in range(h):
            for i in range(l):
                for k in range(half):
                    xe = <double> x[a, i, 2 * k]
                    xo = <double> x[a, i, 2 * k + 1]
                    c = <double> cos[i, k]
                    s = <double> sin[i, k]
                    y[a, i, 2 * k] = <floating> (xe * c - xo * s)
                    y[a, i, 2 * k + 1] = <floating> (xe * s + xo * c)
    return out_np


def adam_step(floating[::1] p, floating[::1] g, floating[::1] m, floating[::1] v,
              double lr, double beta1, double beta2, double eps, double bc1, double bc2):
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t i
    cdef double mi, vi
    with nogil:
        for i in range(n):
            mi = beta1 * <double> m[i] + (1.0 - beta1) * <double> g[i]
            vi = beta2 * <double> v[i] + (1.0 - beta2) * <double> g[i] * <double> g[i]
            m[i] = <floating> mi
            v[i] = <floating> vi
            p[i] = <floating> (<double> p[i] - lr * (mi / bc1) / (sqrt(vi / bc2) + eps))
    return None
