"""Held-out and k-fold evaluation with per-defect-kind breakdown."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import Manifest, kfold, load_sample
from .errors import EmptyDataset, InvalidK, ShapeMismatch
from .optim import TrainConfig, dice_coeff, image_to_input, jaccard_index, train
from .unet import UNetConfig, UNetParams, unet_forward


@dataclass
class KindMetrics:
    count: int
    mean_dice: float
    mean_jaccard: float


@dataclass
class Metrics:
    mean_dice: float
    mean_jaccard: float
    micro_dice: float
    micro_jaccard: float
    per_kind: dict
    threshold: float
    count: int
    per_image: list = field(default_factory=list)

    def to_dict(self, include_images=False):
        d = {
            "count": self.count,
            "threshold": self.threshold,
            "mean_dice": self.mean_dice,
            "mean_jaccard": self.mean_jaccard,
            "micro_dice": self.micro_dice,
            "micro_jaccard": self.micro_jaccard,
            "per_kind": {k: vars(v) for k, v in self.per_kind.items()},
        }
        if include_images:
            d["per_image"] = self.per_image
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_dict(**kw), indent=2)

    def table(self) -> str:
        lines = [f"{'kind':<14}{'n':>5}{'dice':>9}{'jaccard':>9}"]
        for kind, m in self.per_kind.items():
            lines.append(f"{kind:<14}{m.count:>5}{m.mean_dice:>9.4f}{m.mean_jaccard:>9.4f}")
        lines.append(f"{'all (macro)':<14}{self.count:>5}{self.mean_dice:>9.4f}{self.mean_jaccard:>9.4f}")
        lines.append(f"{'all (micro)':<14}{self.count:>5}{self.micro_dice:>9.4f}{self.micro_jaccard:>9.4f}")
        return "\n".join(lines)


def model_predictor(params: UNetParams):
    def predict(rgb):
        return unet_forward(params, image_to_input(rgb, params.dtype.type))[0]
    return predict


def evaluate_predictor(predict, records, data_dir, threshold: float = 0.5, threads: int = 1) -> Metrics:
    """Score ``predict(rgb) -> H x W probabilities`` against stored masks.

    Means are macro averages over images, accumulated in record order; the
    pixel-pooled (micro) scores are reported alongside.  ``threads > 1``
    scores images concurrently without changing any result.
    """
    if not records:
        raise EmptyDataset("no records to evaluate")
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")

    def score(rec):
        rgb, mask = load_sample(data_dir, rec)
        pred = np.asarray(predict(rgb)) > threshold
        truth = mask > 0
        if pred.shape != truth.shape:
            raise ShapeMismatch(f"prediction {pred.shape} vs mask {truth.shape} for sample {rec.id}")
        row = {"id": rec.id, "kind": rec.defect_kind.value,
               "dice": dice_coeff(pred, truth), "jaccard": jaccard_index(pred, truth),
               "predicted_pixels": int(pred.sum())}
        counts = (int(np.count_nonzero(pred & truth)), int(np.count_nonzero(pred | truth)),
                  int(pred.sum()), int(truth.sum()))
        return row, counts

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scored = list(pool.map(score, records))
    else:
        scored = [score(rec) for rec in records]
    rows = [r for r, _ in scored]
    inter, union, pred_total, truth_total = (sum(c[i] for _, c in scored) for i in range(4))
    per_kind = {}
    for kind in dict.fromkeys(r["kind"] for r in rows):
        sel = [r for r in rows if r["kind"] == kind]
        per_kind[kind] = KindMetrics(len(sel), float(np.mean([r["dice"] for r in sel])),
                                     float(np.mean([r["jaccard"] for r in sel])))
    per_kind = dict(sorted(per_kind.items()))
    micro_dice = 1.0 if pred_total + truth_total == 0 else 2 * inter / (pred_total + truth_total)
    micro_jacc = 1.0 if union == 0 else inter / union
    return Metrics(float(np.mean([r["dice"] for r in rows])), float(np.mean([r["jaccard"] for r in rows])),
                   micro_dice, micro_jacc, per_kind, threshold, len(rows), rows)


def evaluate(params: UNetParams, records, data_dir, threshold: float = 0.5, threads: int = 1) -> Metrics:
    return evaluate_predictor(model_predictor(params), records, data_dir, threshold, threads)


@dataclass
class FoldResult:
    fold: int
    test_ids: list
    metrics: Metrics
    history: list


@dataclass
class CrossValidation:
    folds: list
    mean_dice: float
    std_dice: float

    def table(self) -> str:
        lines = [f"{'fold':<6}{'n':>5}{'dice':>9}{'jaccard':>9}"]
        for f in self.folds:
            lines.append(f"{f.fold:<6}{f.metrics.count:>5}{f.metrics.mean_dice:>9.4f}{f.metrics.mean_jaccard:>9.4f}")
        lines.append(f"mean dice {self.mean_dice:.4f}  std {self.std_dice:.4f}")
        return "\n".join(lines)

    def to_dict(self):
        return {
            "mean_dice": self.mean_dice,
            "std_dice": self.std_dice,
            "folds": [{"fold": f.fold, "test_ids": f.test_ids, "metrics": f.metrics.to_dict()}
                      for f in self.folds],
        }


def cross_validate(manifest: Manifest, data_dir, k: int = 5, unet_config: UNetConfig | None = None,
                   train_config: TrainConfig | None = None, seed: int = 0, threads: int = 1,
                   on_fold=None) -> CrossValidation:
    """Train on k-1 folds, evaluate on the held-out one, for every fold.

    ``std_dice`` is the sample standard deviation of the fold Dice scores.
    """
    if k < 2:
        raise InvalidK(f"k must be >= 2, got {k}")
    unet_config = unet_config or UNetConfig()
    train_config = train_config or TrainConfig()
    folds = kfold(manifest, k, seed)
    lookup = manifest.by_id()
    results = []
    for i, test_ids in enumerate(folds):
        train_ids = [sid for j, f in enumerate(folds) if j != i for sid in f]
        tr = train([lookup[s] for s in sorted(train_ids)], [], unet_config, train_config, data_dir)
        test_records = [lookup[s] for s in sorted(test_ids)]
        metrics = evaluate(tr.params, test_records, data_dir, train_config.threshold, threads)
        results.append(FoldResult(i, sorted(test_ids), metrics, tr.history))
        if on_fold is not None:
            on_fold(results[-1])
    dice = np.array([r.metrics.mean_dice for r in results])
    std = float(np.std(dice, ddof=1)) if len(dice) > 1 else math.nan
    return CrossValidation(results, float(dice.mean()), std)
