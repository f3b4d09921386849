"""Overlap metrics, soft overlap losses, Adam and the per-sample training loop."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, fields
from enum import Enum

import numpy as np

from .dataset import load_sample
from .errors import EmptyDataset, InvalidConfig, ShapeMismatch
from .unet import UNetConfig, UNetParams, unet_backward, unet_forward, unet_init

log = logging.getLogger(__name__)


class LossKind(str, Enum):
    SOFT_JACCARD = "soft_jaccard"
    SOFT_DICE = "soft_dice"


# ---------------------------------------------------------------- hard metrics

def _binary_pair(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a.astype(bool), b.astype(bool)


def jaccard_index(w1, w2) -> float:
    """|W1 & W2| / |W1 | W2|; two empty masks count as perfect agreement (1.0)."""
    a, b = _binary_pair(w1, w2)
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a & b)) / union


def dice_coeff(a, b) -> float:
    """2|A & B| / (|A| + |B|); 1.0 when both masks are empty."""
    a, b = _binary_pair(a, b)
    total = int(np.count_nonzero(a)) + int(np.count_nonzero(b))
    if total == 0:
        return 1.0
    return 2 * int(np.count_nonzero(a & b)) / total


# ---------------------------------------------------------------- soft losses

def soft_loss(pred, truth, kind=LossKind.SOFT_JACCARD, smooth: float = 1.0):
    """Differentiable overlap loss and its gradient with respect to ``pred``.

    soft Dice     1 - (2 I + s) / (P + G + s)
    soft Jaccard  1 - (I + s) / (P + G - I + s)

    with I = sum(p * t), P = sum(p), G = sum(t).  Sums are taken in float64;
    the gradient comes back in ``pred``'s dtype.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"pred {pred.shape} and truth {truth.shape} differ")
    kind = LossKind(kind)
    p = pred.astype(np.float64, copy=False)
    t = truth.astype(np.float64, copy=False)
    inter = float(np.sum(p * t))
    p_sum, t_sum = float(np.sum(p)), float(np.sum(t))
    if kind is LossKind.SOFT_DICE:
        num, den = 2.0 * inter + smooth, p_sum + t_sum + smooth
        grad = -(2.0 * t * den - num) / (den * den)
    else:
        num, den = inter + smooth, p_sum + t_sum - inter + smooth
        grad = -(t * den - num * (1.0 - t)) / (den * den)
    return 1.0 - num / den, grad.astype(pred.dtype, copy=False)


# ---------------------------------------------------------------- Adam

@dataclass
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    loss_kind: str = LossKind.SOFT_JACCARD.value
    smooth: float = 1.0
    seed: int = 0
    init_seed: int = 0
    flip_probability: float = 0.5
    threshold: float = 0.5

    def validate(self):
        if not (isinstance(self.epochs, int) and self.epochs >= 1):
            raise InvalidConfig(f"epochs must be an integer >= 1, got {self.epochs!r}")
        if not self.learning_rate >= 0:
            raise InvalidConfig(f"learning_rate must be >= 0, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise InvalidConfig(f"{name} must lie in [0, 1), got {v}")
        if not self.epsilon > 0:
            raise InvalidConfig("epsilon must be positive")
        try:
            LossKind(self.loss_kind)
        except ValueError:
            raise InvalidConfig(f"unknown loss_kind {self.loss_kind!r}") from None
        if not 0.0 <= self.flip_probability <= 1.0:
            raise InvalidConfig("flip_probability must lie in [0, 1]")
        if not 0.0 < self.threshold < 1.0:
            raise InvalidConfig("threshold must lie in (0, 1)")
        if self.smooth < 0:
            raise InvalidConfig("smooth must be non-negative")
        return self

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise InvalidConfig(f"unknown train keys: {', '.join(unknown)}")
        return cls(**d)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, applied to ``params`` in place.

    ``params`` and ``grads`` are parallel lists of arrays.  Returns ``state``
    (also updated in place) for convenience.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("params, grads and Adam moments must have equal length")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"parameter {p.shape} vs gradient {g.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(p.dtype, copy=False)
    return state


# ---------------------------------------------------------------- training

def image_to_input(rgb, dtype=np.float32):
    """H x W x 3 uint8 -> 3 x H x W floats in [0, 1]."""
    return np.ascontiguousarray(np.asarray(rgb).transpose(2, 0, 1), dtype=dtype) / dtype(255)


def mask_to_target(mask, dtype=np.float32):
    return (np.asarray(mask) > 0).astype(dtype)[None]


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_dice: float
    val_jaccard: float


@dataclass
class TrainResult:
    params: UNetParams
    history: list = field(default_factory=list)
    best_epoch: int = -1


def history_csv(history) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "train_loss", "val_dice", "val_jaccard"])
    for h in history:
        writer.writerow([h.epoch, repr(float(h.train_loss)), repr(float(h.val_dice)), repr(float(h.val_jaccard))])
    return buf.getvalue()


def _load_arrays(records, data_dir):
    xs, ys = [], []
    for rec in records:
        rgb, mask = load_sample(data_dir, rec)
        xs.append(image_to_input(rgb))
        ys.append(mask_to_target(mask))
    return xs, ys


def mean_scores(params, images, targets, threshold):
    """Macro-averaged (dice, jaccard) of thresholded predictions."""
    dices, jaccs = [], []
    for x, y in zip(images, targets):
        pred = unet_forward(params, x)[0] > threshold
        truth = y[0] > 0.5
        dices.append(dice_coeff(pred, truth))
        jaccs.append(jaccard_index(pred, truth))
    return float(np.mean(dices)), float(np.mean(jaccs))


def train_arrays(images, targets, unet_config: UNetConfig, train_config: TrainConfig,
                 val_images=(), val_targets=(), init_params: UNetParams | None = None,
                 on_epoch=None) -> TrainResult:
    """Train on in-memory (3, H, W) images and (1, H, W) binary targets."""
    cfg = train_config.validate()
    if not len(images):
        raise EmptyDataset("training set is empty")
    params = init_params.copy() if init_params is not None else unet_init(unet_config, cfg.init_seed)
    arrays = params.arrays()
    state = AdamState.zeros_like(arrays)
    history, best_epoch, best_dice = [], -1, -math.inf
    n = len(images)
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(n)
        flips = rng.random(n) < cfg.flip_probability
        total = 0.0
        for k in order:
            x, y = images[k], targets[k]
            if flips[k]:
                x, y = np.ascontiguousarray(x[:, :, ::-1]), np.ascontiguousarray(y[:, :, ::-1])
            prob, cache = unet_forward(params, x, keep_cache=True)
            loss, dprob = soft_loss(prob, y, cfg.loss_kind, cfg.smooth)
            grads = unet_backward(params, cache, dprob)
            flat = [g for pair in grads for g in pair]
            adam_step(arrays, flat, state, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
            total += loss
        if len(val_images):
            vd, vj = mean_scores(params, val_images, val_targets, cfg.threshold)
        else:
            vd = vj = float("nan")
        stats = EpochStats(epoch, total / n, vd, vj)
        history.append(stats)
        if vd > best_dice:
            best_dice, best_epoch = vd, epoch
        log.info("epoch %d loss %.5f val_dice %.4f", epoch, stats.train_loss, vd)
        if on_epoch is not None:
            on_epoch(stats)
    return TrainResult(params, history, best_epoch)


def train(train_records, val_records, unet_config: UNetConfig, train_config: TrainConfig,
          data_dir, init_params=None, on_epoch=None) -> TrainResult:
    """Per-sample Adam training over manifest records loaded from ``data_dir``.

    Each epoch visits the training set in a shuffled order derived from
    (seed, epoch), flipping image and mask together with the configured
    probability.  ``best_epoch`` is the epoch with the highest validation Dice.
    """
    if not train_records:
        raise EmptyDataset("training set is empty")
    images, targets = _load_arrays(train_records, data_dir)
    val_images, val_targets = _load_arrays(val_records, data_dir)
    return train_arrays(images, targets, unet_config, train_config, val_images, val_targets,
                        init_params, on_epoch)
