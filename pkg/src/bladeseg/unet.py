"""U-Net assembled from the ops in :mod:`bladeseg.tensor`.

Fixed layer order (this is also the order in the model file):

    encoder levels 0..depth-1   conv3x3 + ReLU, conv3x3 + ReLU, then 2x2 max pool
    bottleneck                  conv3x3 + ReLU, conv3x3 + ReLU
    decoder levels depth-1..0   upconv2x2, concat(skip, up), conv3x3 + ReLU, conv3x3 + ReLU
    head                        conv1x1 + sigmoid

Level ``i`` has ``base_channels * 2**i`` channels; the bottleneck has
``base_channels * 2**depth``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import BadMagic, InvalidConfig, ModelFileError, ShapeMismatch, TruncatedFile, VersionMismatch

MAGIC = b"UNET"
FORMAT_VERSION = 1
CONV3, UPCONV, CONV1 = "conv3x3", "upconv2x2", "conv1x1"


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 3
    base_channels: int = 8
    in_channels: int = 3
    out_channels: int = 1

    def validate(self):
        for name in ("depth", "base_channels", "in_channels"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise InvalidConfig(f"{name} must be a positive integer, got {v!r}")
        if self.out_channels != 1:
            raise InvalidConfig(f"out_channels must be 1 (binary mask head), got {self.out_channels}")
        return self

    def width(self, level):
        return self.base_channels * 2 ** level


# the classic full-size layout, meant for 512x512 inputs; far too slow for CPU tests
FULL_SCALE = UNetConfig(depth=4, base_channels=64)


@dataclass
class Layer:
    kind: str
    weight: np.ndarray
    bias: np.ndarray


@dataclass
class UNetParams:
    config: UNetConfig
    layers: list = field(default_factory=list)

    def arrays(self):
        """Flat [w0, b0, w1, b1, ...] list in layer order."""
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def astype(self, dtype):
        return UNetParams(self.config, [Layer(l.kind, l.weight.astype(dtype), l.bias.astype(dtype))
                                        for l in self.layers])

    def copy(self):
        return self.astype(self.layers[0].weight.dtype)

    @property
    def dtype(self):
        return self.layers[0].weight.dtype


def layer_shapes(config: UNetConfig):
    """(kind, weight shape, bias shape) for every layer in file order."""
    config.validate()
    shapes = []

    def conv(kind, c_in, c_out, k):
        shapes.append((kind, (c_out, c_in, k, k), (c_out,)))

    c_prev = config.in_channels
    for lvl in range(config.depth):
        c = config.width(lvl)
        conv(CONV3, c_prev, c, 3)
        conv(CONV3, c, c, 3)
        c_prev = c
    c_b = config.width(config.depth)
    conv(CONV3, c_prev, c_b, 3)
    conv(CONV3, c_b, c_b, 3)
    c_prev = c_b
    for lvl in reversed(range(config.depth)):
        c = config.width(lvl)
        shapes.append((UPCONV, (c_prev, c, 2, 2), (c,)))
        conv(CONV3, 2 * c, c, 3)
        conv(CONV3, c, c, 3)
        c_prev = c
    conv(CONV1, c_prev, config.out_channels, 1)
    return shapes


def fan_in(kind, weight_shape):
    if kind == UPCONV:
        # each output pixel receives exactly one tap from every input channel
        return weight_shape[0]
    return int(np.prod(weight_shape[1:]))


def param_count(config: UNetConfig) -> int:
    return sum(int(np.prod(w)) + int(np.prod(b)) for _, w, b in layer_shapes(config))


def unet_init(config: UNetConfig, seed: int, dtype=np.float32) -> UNetParams:
    """He-normal weights (std sqrt(2 / fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for kind, wshape, bshape in layer_shapes(config):
        std = np.sqrt(2.0 / fan_in(kind, wshape))
        w = rng.normal(0.0, std, size=wshape).astype(dtype)
        layers.append(Layer(kind, w, np.zeros(bshape, dtype=dtype)))
    return UNetParams(config, layers)


def _check_input(params, image):
    cfg = params.config
    if image.ndim != 3 or image.shape[0] != cfg.in_channels:
        raise ShapeMismatch(f"expected {cfg.in_channels} x H x W input, got {image.shape}")
    step = 2 ** cfg.depth
    if image.shape[1] % step or image.shape[2] % step:
        raise ShapeMismatch(f"H and W must be divisible by {step} for depth {cfg.depth}, got {image.shape[1:]}")


def unet_forward(params: UNetParams, image, keep_cache=False):
    """Probabilities (1, H, W) for a (C, H, W) image.

    With ``keep_cache`` the activations needed by :func:`unet_backward` are
    returned as a second value.
    """
    _check_input(params, image)
    dtype = params.dtype
    h = np.ascontiguousarray(image, dtype=dtype)
    layers = iter(params.layers)
    tape = []

    def conv_relu(x):
        layer = next(layers)
        z = T.conv2d_fwd(x, layer.weight, layer.bias)
        tape.append(("conv", x, z))
        return T.relu_fwd(z)

    skips = []
    for _ in range(params.config.depth):
        h = conv_relu(conv_relu(h))
        skips.append(h)
        h, argmax = T.maxpool2x2_fwd(h)
        tape.append(("pool", argmax))
    h = conv_relu(conv_relu(h))
    for skip in reversed(skips):
        layer = next(layers)
        up = T.upconv2x2_fwd(h, layer.weight, layer.bias)
        tape.append(("up", h))
        h = T.concat_channels(skip, up)
        tape.append(("cat", skip.shape[0]))
        h = conv_relu(conv_relu(h))
    head = next(layers)
    logits = T.conv2d_fwd(h, head.weight, head.bias, pad=0)
    tape.append(("head", h))
    prob = T.sigmoid_fwd(logits)
    # keep probabilities strictly inside (0, 1) even where the sigmoid saturates
    prob = np.clip(prob, np.nextafter(dtype.type(0), dtype.type(1)),
                   np.nextafter(dtype.type(1), dtype.type(0)))
    if keep_cache:
        return prob, (tape, prob)
    return prob


def unet_backward(params: UNetParams, cache, dprob):
    """Gradients [(dW, db), ...] in layer order for upstream ``dprob``."""
    tape, prob = cache
    grads = [None] * len(params.layers)
    li = len(params.layers) - 1
    d = T.sigmoid_bwd(np.asarray(dprob, dtype=prob.dtype), prob)
    skip_grads = []
    for entry in reversed(tape):
        kind = entry[0]
        if kind == "head":
            d, dw, db = T.conv2d_bwd(d, entry[1], params.layers[li].weight, pad=0)
            grads[li] = (dw, db)
            li -= 1
        elif kind == "conv":
            _, x, z = entry
            d = T.relu_bwd(d, z)
            d, dw, db = T.conv2d_bwd(d, x, params.layers[li].weight)
            grads[li] = (dw, db)
            li -= 1
        elif kind == "cat":
            d_skip, d = T.concat_bwd(d, entry[1])
            skip_grads.append(d_skip)
        elif kind == "up":
            d, dw, db = T.upconv2x2_bwd(d, entry[1], params.layers[li].weight)
            grads[li] = (dw, db)
            li -= 1
        elif kind == "pool":
            d = T.maxpool2x2_bwd(d, entry[1]) + skip_grads.pop()
    return grads


# ---------------------------------------------------------------- persistence

def save_model(params: UNetParams, path):
    """Write the little-endian binary model file.

    Layout: b"UNET", u32 version, u32 depth, base_channels, in_channels,
    out_channels, then each layer's weight and bias as float32 in layer order.
    """
    cfg = params.config
    chunks = [MAGIC, struct.pack("<5I", FORMAT_VERSION, cfg.depth, cfg.base_channels,
                                 cfg.in_channels, cfg.out_channels)]
    for arr in params.arrays():
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_model(path) -> UNetParams:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise TruncatedFile(f"{path}: {len(data)} bytes, too short for a model header")
    if data[:4] != MAGIC:
        raise BadMagic(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 24:
        raise TruncatedFile(f"{path}: header truncated")
    version, depth, base, c_in, c_out = struct.unpack_from("<5I", data, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    try:
        config = UNetConfig(depth, base, c_in, c_out).validate()
    except InvalidConfig as exc:
        raise ModelFileError(f"{path}: {exc}") from None
    offset = 24
    layers = []
    for kind, wshape, bshape in layer_shapes(config):
        arrays = []
        for shape in (wshape, bshape):
            n = int(np.prod(shape))
            if offset + 4 * n > len(data):
                raise TruncatedFile(f"{path}: truncated inside layer {len(layers)} ({kind})")
            arrays.append(np.frombuffer(data, dtype="<f4", count=n, offset=offset)
                          .reshape(shape).astype(np.float32))
            offset += 4 * n
        layers.append(Layer(kind, *arrays))
    if offset != len(data):
        raise ModelFileError(f"{path}: {len(data) - offset} unexpected trailing bytes")
    return UNetParams(config, layers)
