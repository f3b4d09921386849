"""Stride-1 2-D cross-correlation on (C, H, W) arrays with pre-padded input.

``forward``:  out[o, i, j] = b[o] + sum_{c,ky,kx} w[o, c, ky, kx] * xp[c, i+ky, j+kx]
``weight_grad``: dw[o, c, ky, kx] = sum_{i,j} dout[o, i, j] * xp[c, i+ky, j+kx]

The numba loops accumulate in a fixed (c, ky, kx) order per output element;
the numpy path goes through an im2col matrix product.  With the numba
backend the selected kernels still hand narrow layers to the numpy path.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .._jit import USE_NUMBA, njit


@njit
def conv2d_forward_numba(xp, w, b, out):
    n_out, n_in, k, _ = w.shape
    h, width = out.shape[1], out.shape[2]
    acc = np.empty(width, dtype=out.dtype)
    for o in range(n_out):
        for i in range(h):
            acc[:] = b[o]
            for c in range(n_in):
                for ky in range(k):
                    row = xp[c, i + ky]
                    for kx in range(k):
                        wv = w[o, c, ky, kx]
                        for j in range(width):
                            acc[j] += wv * row[j + kx]
            out[o, i, :] = acc
    return out


@njit
def conv2d_weight_grad_numba(xp, dout, dw):
    n_out, n_in, k, _ = dw.shape
    h, width = dout.shape[1], dout.shape[2]
    # row-wise partial sums keep the inner loop vectorisable
    acc = np.empty((k, k, width), dtype=dw.dtype)
    for o in range(n_out):
        for c in range(n_in):
            acc[:] = 0.0
            for i in range(h):
                drow = dout[o, i]
                for ky in range(k):
                    row = xp[c, i + ky]
                    for kx in range(k):
                        for j in range(width):
                            acc[ky, kx, j] += drow[j] * row[j + kx]
            for ky in range(k):
                for kx in range(k):
                    s = 0.0
                    for j in range(width):
                        s += acc[ky, kx, j]
                    dw[o, c, ky, kx] = s
    return dw


def _columns(xp, k, h, w):
    win = sliding_window_view(xp, (k, k), axis=(1, 2))       # (C, H, W, k, k)
    return win.transpose(0, 3, 4, 1, 2).reshape(xp.shape[0] * k * k, h * w)


def conv2d_forward_numpy(xp, w, b, out):
    n_out, _, k, _ = w.shape
    h, width = out.shape[1], out.shape[2]
    cols = _columns(xp, k, h, width)
    out[...] = (w.reshape(n_out, -1) @ cols).reshape(n_out, h, width) + b[:, None, None]
    return out


def conv2d_weight_grad_numpy(xp, dout, dw):
    n_out, _, k, _ = dw.shape
    h, width = dout.shape[1], dout.shape[2]
    cols = _columns(xp, k, h, width)
    dw[...] = (dout.reshape(n_out, -1) @ cols.T).reshape(dw.shape)
    return dw


# The numba loops vectorise along a row; below this output width the
# im2col + BLAS product is faster (see benchmarks/bench_kernels.py).
NUMBA_MIN_WIDTH = 96


def conv2d_forward(xp, w, b, out):
    if USE_NUMBA and out.shape[2] >= NUMBA_MIN_WIDTH:
        return conv2d_forward_numba(xp, w, b, out)
    return conv2d_forward_numpy(xp, w, b, out)


def conv2d_weight_grad(xp, dout, dw):
    if USE_NUMBA and dout.shape[2] >= NUMBA_MIN_WIDTH:
        return conv2d_weight_grad_numba(xp, dout, dw)
    return conv2d_weight_grad_numpy(xp, dout, dw)
