"""Averaged perturbation amplitude spectra and a grid-artifact score."""

from __future__ import annotations

import numpy as np

from .errors import EstimationError, ShapeError
from .tensor import as_image, dft3


def average_amplitude_spectrum(perturbations, per_channel: bool = False) -> np.ndarray:
    """Per-bin mean of ``|dft3(r)|`` over a set of perturbations."""
    total = None
    n = 0
    for r in perturbations:
        mag = np.abs(dft3(as_image(r, "r"), per_channel=per_channel))
        if total is None:
            total = np.zeros_like(mag)
        elif mag.shape != total.shape:
            raise ShapeError(f"perturbation shape {mag.shape} differs from {total.shape}")
        total += mag
        n += 1
    if n == 0:
        raise EstimationError("need at least one perturbation")
    return total / n


def harmonic_mask(shape, s: int) -> np.ndarray:
    """Bins whose row or column index is a nonzero multiple of H/s or W/s."""
    H, W = shape[:2]
    if H % s or W % s:
        raise ShapeError(f"{H}x{W} is not divisible by {s}")
    k = np.arange(H)
    l = np.arange(W)
    rows = (k % (H // s) == 0) & (k != 0)
    cols = (l % (W // s) == 0) & (l != 0)
    mask2d = rows[:, None] | cols[None, :]
    return np.broadcast_to(mask2d[:, :, None], shape[:2] + (shape[2] if len(shape) > 2 else 1,))


def harmonic_peak_score(spectrum, s: int) -> float:
    """Mean magnitude on harmonic rows/columns over the median of the rest.

    The spatial DC bins ``(0, 0, m)`` are excluded from the denominator.
    """
    spec = np.abs(np.asarray(spectrum, dtype=np.float64))
    if spec.ndim == 2:
        spec = spec[:, :, None]
    harm = harmonic_mask(spec.shape, s)
    other = ~harm
    other = other.copy()
    other[0, 0, :] = False
    denom = float(np.median(spec[other]))
    if denom == 0.0:
        return float("inf") if spec[harm].mean() > 0 else float("nan")
    return float(spec[harm].mean() / denom)
