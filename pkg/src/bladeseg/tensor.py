"""Layer math for the U-Net, forward and backward, on (C, H, W) arrays.

Tensors are plain C-contiguous numpy arrays; float32 for training, float64
when gradient checking.  Every op returns fresh arrays and never writes to
its inputs.  Convolutions are cross-correlations (no kernel flip).
"""

import numpy as np

from .errors import OddSpatialDims, ShapeMismatch
from .kernels.conv import conv2d_forward, conv2d_weight_grad

FLOAT_TYPES = (np.float32, np.float64)


def _check_chw(x, name="input"):
    if x.ndim != 3:
        raise ShapeMismatch(f"{name} must be C x H x W, got shape {x.shape}")
    if x.dtype.type not in FLOAT_TYPES:
        raise ShapeMismatch(f"{name} must be float32 or float64, got {x.dtype}")


def _pad(x, pad):
    if pad == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad)))


def _conv_args(x, weight, bias, stride, pad):
    _check_chw(x)
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeMismatch(f"weight must be O x C x k x k, got {weight.shape}")
    out_ch, in_ch, k, _ = weight.shape
    if k not in (1, 3):
        raise ShapeMismatch(f"kernel size must be 1 or 3, got {k}")
    if stride != 1:
        raise ShapeMismatch(f"only stride 1 is supported, got {stride}")
    if pad is None:
        pad = (k - 1) // 2
    if pad not in (0, (k - 1) // 2):
        raise ShapeMismatch(f"pad must be 0 or {(k - 1) // 2} for k={k}, got {pad}")
    if in_ch != x.shape[0]:
        raise ShapeMismatch(f"input has {x.shape[0]} channels, weight expects {in_ch}")
    if bias.shape != (out_ch,):
        raise ShapeMismatch(f"bias shape {bias.shape} does not match {out_ch} output channels")
    h_out = x.shape[1] + 2 * pad - k + 1
    w_out = x.shape[2] + 2 * pad - k + 1
    if h_out < 1 or w_out < 1:
        raise ShapeMismatch(f"input {x.shape} too small for k={k}, pad={pad}")
    return pad, h_out, w_out


def conv2d_fwd(x, weight, bias, stride=1, pad=None):
    """Same-size (pad=(k-1)/2, the default) or valid (pad=0) convolution."""
    pad, h_out, w_out = _conv_args(x, weight, bias, stride, pad)
    dtype = np.result_type(x, weight)
    out = np.empty((weight.shape[0], h_out, w_out), dtype=dtype)
    return conv2d_forward(_pad(x.astype(dtype, copy=False), pad),
                          np.ascontiguousarray(weight, dtype=dtype),
                          np.ascontiguousarray(bias, dtype=dtype), out)


def conv2d_bwd(dout, x, weight, stride=1, pad=None):
    """Gradients (d_input, d_weight, d_bias) of :func:`conv2d_fwd`."""
    bias = np.zeros(weight.shape[0], dtype=weight.dtype)
    pad, h_out, w_out = _conv_args(x, weight, bias, stride, pad)
    if dout.shape != (weight.shape[0], h_out, w_out):
        raise ShapeMismatch(f"dout shape {dout.shape}, expected {(weight.shape[0], h_out, w_out)}")
    dtype = np.result_type(x, weight, dout)
    k = weight.shape[2]
    xp = _pad(x.astype(dtype, copy=False), pad)
    dout = np.ascontiguousarray(dout, dtype=dtype)

    dw = np.empty(weight.shape, dtype=dtype)
    conv2d_weight_grad(xp, dout, dw)
    db = dout.sum(axis=(1, 2), dtype=np.float64).astype(dtype)

    # input gradient: full correlation of dout with the flipped, transposed kernel
    w_t = np.ascontiguousarray(weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3), dtype=dtype)
    dpad = np.empty((x.shape[0], xp.shape[1], xp.shape[2]), dtype=dtype)
    conv2d_forward(_pad(dout, k - 1), w_t, np.zeros(x.shape[0], dtype=dtype), dpad)
    h, w = x.shape[1], x.shape[2]
    dx = np.ascontiguousarray(dpad[:, pad:pad + h, pad:pad + w])
    return dx, dw, db


def upconv2x2_fwd(x, weight, bias):
    """Stride-2 transposed convolution with a 2x2 kernel; doubles H and W.

    ``weight`` is C_in x C_out x 2 x 2;
    out[o, 2i+a, 2j+b] = bias[o] + sum_c x[c, i, j] * weight[c, o, a, b].
    """
    _check_chw(x)
    if weight.ndim != 4 or weight.shape[2:] != (2, 2) or weight.shape[0] != x.shape[0]:
        raise ShapeMismatch(f"upconv weight {weight.shape} incompatible with input {x.shape}")
    c_out = weight.shape[1]
    if bias.shape != (c_out,):
        raise ShapeMismatch(f"bias shape {bias.shape}, expected ({c_out},)")
    _, h, w = x.shape
    taps = np.tensordot(weight, x, axes=([0], [0]))            # (O, 2, 2, H, W)
    out = taps.transpose(0, 3, 1, 4, 2).reshape(c_out, 2 * h, 2 * w)
    return np.ascontiguousarray(out + bias[:, None, None].astype(out.dtype))


def upconv2x2_bwd(dout, x, weight):
    c_in, h, w = x.shape
    c_out = weight.shape[1]
    if dout.shape != (c_out, 2 * h, 2 * w):
        raise ShapeMismatch(f"dout shape {dout.shape}, expected {(c_out, 2 * h, 2 * w)}")
    d = dout.reshape(c_out, h, 2, w, 2).transpose(0, 2, 4, 1, 3)  # (O, 2, 2, H, W)
    dx = np.tensordot(weight, d, axes=([1, 2, 3], [0, 1, 2]))       # (C, H, W)
    dw = np.tensordot(x, d, axes=([1, 2], [3, 4]))                   # (C, O, 2, 2)
    db = dout.sum(axis=(1, 2), dtype=np.float64).astype(dout.dtype)
    return np.ascontiguousarray(dx), np.ascontiguousarray(dw), db


def maxpool2x2_fwd(x):
    """2x2/stride-2 max pool.

    Returns the pooled array and the winning position 0..3 inside each window
    in row-major order; ties go to the earliest position.
    """
    _check_chw(x)
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise OddSpatialDims(f"maxpool needs even H and W, got {h} x {w}")
    win = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    argmax = win.argmax(axis=-1).astype(np.uint8)
    out = np.take_along_axis(win, argmax[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), argmax


def maxpool2x2_bwd(dout, argmax):
    c, hh, ww = dout.shape
    if argmax.shape != dout.shape:
        raise ShapeMismatch(f"argmax shape {argmax.shape} does not match dout {dout.shape}")
    win = np.zeros((c, hh, ww, 4), dtype=dout.dtype)
    np.put_along_axis(win, argmax[..., None].astype(np.intp), dout[..., None], axis=-1)
    return np.ascontiguousarray(win.reshape(c, hh, ww, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, 2 * hh, 2 * ww))


def relu_fwd(x):
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def relu_bwd(dout, x):
    return np.where(x > 0, dout, 0).astype(dout.dtype, copy=False)


def sigmoid_fwd(x):
    """Logistic function, evaluated without overflow for large |x|."""
    x = np.asarray(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_bwd(dout, y):
    """Backward given the forward *output* ``y``."""
    return dout * y * (1 - y)


def concat_channels(a, b):
    if a.shape[1:] != b.shape[1:]:
        raise ShapeMismatch(f"cannot concatenate {a.shape} and {b.shape}: spatial dims differ")
    return np.concatenate([a, b], axis=0)


def concat_bwd(dout, c1):
    return np.ascontiguousarray(dout[:c1]), np.ascontiguousarray(dout[c1:])
