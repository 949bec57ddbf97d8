"""Pure-numpy kernels: the fallback backend for the hot inner loops.

Same signatures as the compiled ``_core`` extension. All functions expect
C-contiguous float32 or float64 arrays and preserve the input dtype.
"""

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327


def gelu_fwd(x):
    return (0.5 * x * (1.0 + erf(x * np.asarray(_INV_SQRT2, dtype=x.dtype)))).astype(x.dtype, copy=False)


def gelu_bwd(x, gout):
    cdf = 0.5 * (1.0 + erf(x * np.asarray(_INV_SQRT2, dtype=x.dtype)))
    pdf = np.exp(-0.5 * x * x) * np.asarray(_INV_SQRT2PI, dtype=x.dtype)
    return (gout * (cdf + x * pdf)).astype(x.dtype, copy=False)


def softmax_rows_fwd(x):
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_bwd(y, gout):
    dot = (y * gout).sum(axis=1, keepdims=True)
    return y * (gout - dot)


def rmsnorm_fwd(x, gain, eps):
    ms = (x * x).mean(axis=1) + np.asarray(eps, dtype=x.dtype)
    inv_rms = (ms ** -0.5).astype(x.dtype, copy=False)
    return x * inv_rms[:, None] * gain[None, :], inv_rms


def rmsnorm_bwd(x, gain, inv_rms, gout):
    d = x.shape[1]
    gg = gout * gain[None, :]
    # gx_j = s*gg_j - (s^3 x_j / d) * sum_i gg_i x_i
    row_dot = (gg * x).sum(axis=1)
    s = inv_rms
    gx = s[:, None] * gg - (s ** 3 * row_dot / d)[:, None] * x
    ggain = (gout * x * s[:, None]).sum(axis=0)
    return gx.astype(x.dtype, copy=False), ggain.astype(x.dtype, copy=False)


def rope_fwd(x, cos, sin):
    # x (h, l, dh); cos/sin (l, dh/2); rotate interleaved (even, odd) pairs
    xe = x[:, :, 0::2]
    xo = x[:, :, 1::2]
    y = np.empty_like(x)
    y[:, :, 0::2] = xe * cos[None] - xo * sin[None]
    y[:, :, 1::2] = xe * sin[None] + xo * cos[None]
    return y


def adam_step(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    one = np.asarray(1.0, dtype=p.dtype)
    m *= beta1
    m += (one - beta1) * g
    v *= beta2
    v += (one - beta2) * g * g
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
