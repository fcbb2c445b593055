"""Spatial-domain comparison defenses and a declarative way to build them.

Every defense is a pure function from an ``(H, W, C)`` image in [0, 255] to
another image in [0, 255].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from .errors import SpecError
from .tensor import as_image

DEFENSE_KINDS = ("identity", "wiener", "jpeg_dct", "jpeg2000", "median_blur", "bit_depth",
                 "nl_means", "compose")

# Standard JPEG luminance quantisation table (ITU-T T.81, Annex K).
JPEG_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


def median_blur(x, k: int = 3) -> np.ndarray:
    """Per-channel k x k median with border replication."""
    if k < 1 or k % 2 == 0:
        raise SpecError(f"median window must be odd, got {k}")
    x = as_image(x)
    return ndimage.median_filter(x, size=(k, k, 1), mode="nearest")


def bit_depth_reduce(x, bits: int = 5) -> np.ndarray:
    """Quantise to ``2**bits`` levels and map back to the 0-255 scale."""
    if not 1 <= bits <= 8:
        raise SpecError(f"bits must be in 1..8, got {bits}")
    x = as_image(x)
    levels = 2**bits - 1
    q = np.rint(x / 255.0 * levels)
    return np.clip(np.rint(q * 255.0 / levels), 0.0, 255.0)


def _box_sum(a, size: int) -> np.ndarray:
    """Sum over a ``size`` x ``size`` window centred on each pixel (valid region)."""
    c = np.cumsum(np.cumsum(a, axis=0), axis=1)
    c = np.pad(c, ((1, 0), (1, 0)))
    return c[size:, size:] - c[:-size, size:] - c[size:, :-size] + c[:-size, :-size]


def nl_means(x, search: int = 13, patch: int = 3, strength: float = 2.0,
             sigma: float = 0.0) -> np.ndarray:
    """Non-local means with a square search window.

    The patch distance ``d2`` is the mean squared difference over the
    ``patch x patch x C`` neighbourhoods, and a candidate pixel is weighted
    by ``exp(-max(d2 - 2 sigma^2, 0) / strength^2)``.  Patches and search
    window extend past the border by reflection.
    """
    if search % 2 == 0 or patch % 2 == 0 or patch > search or patch < 1:
        raise SpecError("search and patch must be odd with patch <= search")
    if strength <= 0:
        raise SpecError("strength must be positive")
    x = as_image(x)
    H, W, C = x.shape
    ps, ss = patch // 2, search // 2
    pad = ps + ss
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)), mode="reflect")
    centre = xp[ss : ss + H + 2 * ps, ss : ss + W + 2 * ps]
    num = np.zeros_like(x)
    den = np.zeros((H, W, 1))
    h2 = float(strength) ** 2
    for di in range(-ss, ss + 1):
        for dj in range(-ss, ss + 1):
            shifted = xp[ss + di : ss + di + H + 2 * ps, ss + dj : ss + dj + W + 2 * ps]
            diff2 = np.sum((centre - shifted) ** 2, axis=2)
            d2 = _box_sum(diff2, patch) / (patch * patch * C)
            w = np.exp(-np.maximum(d2 - 2.0 * sigma**2, 0.0) / h2)[:, :, None]
            num += w * shifted[ps : ps + H, ps : ps + W]
            den += w
    return np.clip(num / den, 0.0, 255.0)


def jpeg_quant_table(quality: int) -> np.ndarray:
    """Luminance table scaled by the libjpeg quality rule."""
    if not 1 <= quality <= 100:
        raise SpecError(f"quality must be in 1..100, got {quality}")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.clip(np.floor((JPEG_LUMA_TABLE * scale + 50.0) / 100.0), 1.0, 255.0)


def jpeg_dct(x, quality: int = 90) -> np.ndarray:
    """Block-DCT quantisation round trip, each channel independently.

    The image is edge-padded to a multiple of 8, level shifted by 128, and
    every 8x8 block is DCT-II transformed, quantised, dequantised and
    inverted.  The result is rounded to integer levels and cropped back.
    """
    x = as_image(x)
    Q = jpeg_quant_table(quality)
    H, W, C = x.shape
    Hp, Wp = -(-H // 8) * 8, -(-W // 8) * 8
    xp = np.pad(x, ((0, Hp - H), (0, Wp - W), (0, 0)), mode="edge") - 128.0
    # (bh, 8, bw, 8, C) -> (bh, bw, C, 8, 8)
    blocks = xp.reshape(Hp // 8, 8, Wp // 8, 8, C).transpose(0, 2, 4, 1, 3)
    coef = sfft.dctn(blocks, type=2, norm="ortho", axes=(-2, -1))
    coef = np.rint(coef / Q) * Q
    rec = sfft.idctn(coef, type=2, norm="ortho", axes=(-2, -1))
    out = rec.transpose(0, 3, 1, 4, 2).reshape(Hp, Wp, C)[:H, :W] + 128.0
    return np.clip(np.rint(out), 0.0, 255.0)


def identity(x) -> np.ndarray:
    return as_image(x).copy()


def compose(defenses, x) -> np.ndarray:
    """Apply ``defenses`` left to right."""
    defenses = list(defenses)
    if not defenses:
        raise SpecError("compose needs at least one defense")
    for d in defenses:
        x = d(x)
    return x


@dataclass(frozen=True)
class DefenseSpec:
    """Declarative defense; ``params`` carry the method parameters.

    ``wiener`` takes ``{"filter": name}`` naming an entry of the filter bank
    handed to :meth:`build`; ``compose`` takes ``{"steps": [spec, ...]}``.
    """

    kind: str
    params: Mapping = field(default_factory=dict)
    name: str | None = None

    def __post_init__(self):
        if self.kind not in DEFENSE_KINDS:
            raise SpecError(f"unknown defense kind {self.kind!r}")
        p = dict(self.params)
        if self.kind == "jpeg_dct" and not 1 <= p.get("quality", 90) <= 100:
            raise SpecError("jpeg quality must be in 1..100")
        if self.kind == "median_blur" and p.get("k", 3) % 2 == 0:
            raise SpecError("median window must be odd")
        if self.kind == "bit_depth" and not 1 <= p.get("bits", 5) <= 8:
            raise SpecError("bits must be in 1..8")
        if self.kind == "nl_means":
            s, k = p.get("search", 13), p.get("patch", 3)
            if s % 2 == 0 or k % 2 == 0 or k > s:
                raise SpecError("search and patch must be odd with patch <= search")
        if self.kind == "wiener" and "filter" not in p:
            raise SpecError("wiener defense needs a 'filter' name")
        if self.kind == "compose":
            steps = p.get("steps") or []
            if not steps:
                raise SpecError("compose needs at least one step")
            p["steps"] = tuple(s if isinstance(s, DefenseSpec) else DefenseSpec.from_dict(s)
                               for s in steps)
        object.__setattr__(self, "params", p)

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind == "wiener":
            return f"wiener[{self.params['filter']}]"
        if self.kind == "compose":
            return "+".join(s.label for s in self.params["steps"])
        return self.kind

    def filter_names(self) -> set:
        if self.kind == "wiener":
            return {self.params["filter"]}
        if self.kind == "compose":
            return set().union(*(s.filter_names() for s in self.params["steps"]))
        return set()

    def build(self, filters: Mapping | None = None) -> Callable:
        """Return the defense as an image -> image callable."""
        p = self.params
        kind = self.kind
        if kind == "identity":
            return identity
        if kind == "wiener":
            name = p["filter"]
            if not filters or name not in filters:
                raise SpecError(f"no Wiener filter named {name!r} available")
            return filters[name]
        if kind == "jpeg_dct":
            q = int(p.get("quality", 90))
            return lambda x: jpeg_dct(x, q)
        if kind == "jpeg2000":
            raise NotImplementedError("JPEG2000 compression is not implemented")
        if kind == "median_blur":
            k = int(p.get("k", 3))
            return lambda x: median_blur(x, k)
        if kind == "bit_depth":
            b = int(p.get("bits", 5))
            return lambda x: bit_depth_reduce(x, b)
        if kind == "nl_means":
            s, k, h = int(p.get("search", 13)), int(p.get("patch", 3)), float(p.get("strength", 2.0))
            return lambda x: nl_means(x, s, k, h)
        steps = [s.build(filters) for s in p["steps"]]
        return lambda x: compose(steps, x)

    def to_dict(self) -> dict:
        p = dict(self.params)
        if self.kind == "compose":
            p["steps"] = [s.to_dict() for s in p["steps"]]
        d = {"kind": self.kind, "params": p}
        if self.name:
            d["name"] = self.name
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DefenseSpec":
        extra = set(d) - {"kind", "params", "name"}
        if extra:
            raise SpecError(f"unknown defense fields {sorted(extra)}")
        return cls(d["kind"], d.get("params", {}), d.get("name"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DefenseSpec":
        return cls.from_dict(json.loads(text))
