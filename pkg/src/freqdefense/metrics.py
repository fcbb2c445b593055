"""Image-fidelity and segmentation metrics: MSE, SSIM and mIoU."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor import as_image

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_RANGE = 255.0


def mse(a, b) -> float:
    a, b = as_image(a, "a"), as_image(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"shapes differ: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d * d))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(img2d, w):
    # weighted mean over every full window, no padding
    return np.einsum("ijkl,kl->ij", sliding_window_view(img2d, w.shape), w, optimize=True)


def ssim_map(a, b) -> np.ndarray:
    """Local SSIM for every full 11x11 window, shape ``(H-10, W-10, C)``."""
    a, b = as_image(a, "a"), as_image(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"shapes differ: {a.shape} vs {b.shape}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ShapeError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels")
    w = gaussian_window()
    c1 = (SSIM_K1 * SSIM_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_RANGE) ** 2
    maps = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mx, my = _filter_valid(x, w), _filter_valid(y, w)
        sxx = _filter_valid(x * x, w) - mx * mx
        syy = _filter_valid(y * y, w) - my * my
        sxy = _filter_valid(x * y, w) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        maps.append(num / den)
    return np.stack(maps, axis=-1)


def ssim(a, b) -> float:
    """Mean SSIM, Gaussian window (11, sigma 1.5), averaged over channels."""
    return float(np.mean(ssim_map(a, b)))


@dataclass
class ConfusionAccumulator:
    """Per-class TP/FP/FN pixel counts; mergeable across workers."""

    num_classes: int
    tp: np.ndarray = field(default=None)
    fp: np.ndarray = field(default=None)
    fn: np.ndarray = field(default=None)

    def __post_init__(self):
        for name in ("tp", "fp", "fn"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(self.num_classes, dtype=np.int64))

    def update(self, pred, gt) -> "ConfusionAccumulator":
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
        for lab in (pred, gt):
            if lab.size and (lab.min() < 0 or lab.max() >= self.num_classes):
                raise ValueError(f"labels must lie in 0..{self.num_classes - 1}")
        p = pred.ravel().astype(np.int64)
        g = gt.ravel().astype(np.int64)
        hit = p == g
        self.tp += np.bincount(g[hit], minlength=self.num_classes)
        self.fp += np.bincount(p[~hit], minlength=self.num_classes)
        self.fn += np.bincount(g[~hit], minlength=self.num_classes)
        return self

    def merge(self, other: "ConfusionAccumulator") -> "ConfusionAccumulator":
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge accumulators with different class counts")
        return ConfusionAccumulator(self.num_classes, self.tp + other.tp,
                                    self.fp + other.fp, self.fn + other.fn)

    def iou(self) -> np.ndarray:
        """Per-class IoU; NaN for classes absent from both maps."""
        den = self.tp + self.fp + self.fn
        out = np.full(self.num_classes, np.nan)
        np.divide(self.tp, den, out=out, where=den > 0)
        return out

    def miou(self) -> float:
        iou = self.iou()
        present = ~np.isnan(iou)
        return float(np.mean(iou[present])) if present.any() else float("nan")


def miou(pred, gt, num_classes: int):
    """Return ``(mIoU, per-class IoU)``; absent classes are left out of the mean."""
    acc = ConfusionAccumulator(num_classes).update(pred, gt)
    return acc.miou(), acc.iou()
