"""Seeded synthetic scenes and the named random streams used by the pipeline."""

from __future__ import annotations

import zlib

import numpy as np

# Base colour per class; more classes cycle through the palette with an offset.
_PALETTE = np.array([
    [70, 70, 70],     # road-like grey
    [40, 130, 60],    # vegetation green
    [70, 130, 180],   # sky blue
    [200, 40, 40],    # vehicle red
    [220, 200, 60],
    [150, 80, 160],
], dtype=np.float64)


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named component derived from one root seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


def synthetic_scene(rng: np.random.Generator, size: int = 32, num_classes: int = 4,
                    num_regions: int = 6, noise: float = 2.0):
    """One piecewise-constant scene and its ground-truth class map.

    Regions are Voronoi cells of random sites, each assigned a class; pixels
    take the class colour plus a per-region tint, a smooth shading ramp and
    a little sensor noise, rounded to integer gray levels.
    """
    sites = rng.uniform(0, size, size=(num_regions, 2))
    classes = rng.integers(0, num_classes, size=num_regions)
    classes[: min(num_classes, num_regions)] = rng.permutation(num_classes)[: min(num_classes, num_regions)]
    hh, ww = np.mgrid[0:size, 0:size]
    d2 = (hh[..., None] - sites[:, 0]) ** 2 + (ww[..., None] - sites[:, 1]) ** 2
    region = np.argmin(d2, axis=-1)
    gt = classes[region]

    base = _PALETTE[classes % len(_PALETTE)] + 25.0 * (classes // len(_PALETTE))[:, None]
    tint = rng.uniform(-15, 15, size=(num_regions, 3))
    img = (base + tint)[region]
    slope = rng.uniform(-0.6, 0.6, size=2)
    img = img + (slope[0] * (hh - size / 2) + slope[1] * (ww - size / 2))[..., None]
    img = img + rng.normal(0.0, noise, size=img.shape)
    return np.clip(np.rint(img), 0, 255), gt.astype(np.int64)


def synthetic_dataset(seed: int, n: int, size: int = 32, num_classes: int = 4,
                      stream: str = "data-gen"):
    rng = substream(seed, stream)
    return [synthetic_scene(rng, size, num_classes) for _ in range(n)]
