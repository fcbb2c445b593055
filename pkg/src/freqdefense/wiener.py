"""Data-driven Wiener filters against additive adversarial perturbations.

A filter is a real gain per DFT bin.  For a clean image ``x`` and a
perturbation ``r`` with spectra ``X`` and ``R`` the per-pair gain is

    G = |X|^2 / (|X|^2 + |R|^2) = SNR / (1 + SNR),   SNR = |X|^2 / |R|^2,

a single-attack filter is the mean of these gains over a training set, and
a combined filter is the mean of single-attack filters.  Bins where both
spectra vanish get gain 1.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EstimationError, FormatError, ShapeError, SymmetryError
from .formats import atomic_write_bytes
from .tensor import as_image, dft3, idft3, mirror_index

WFLT_MAGIC = b"WFLT"
WFLT_VERSION = 1
_HEADER = struct.Struct("<4sHBdIII")

PROVENANCE_TAGS = {"per_image_upper_limit": 0, "single_attack": 1, "combined": 2}
_TAG_NAMES = {v: k for k, v in PROVENANCE_TAGS.items()}

SYMMETRY_TOLERANCE = 1e-9


@dataclass(eq=False)
class WienerFilter:
    gains: np.ndarray
    provenance: str = "per_image_upper_limit"
    training_epsilon: float = float("nan")
    attack: str | None = None

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=np.float64)
        if self.gains.ndim != 3:
            raise ShapeError(f"gains must have shape (H, W, C), got {self.gains.shape}")
        if self.provenance not in PROVENANCE_TAGS:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def shape(self):
        return self.gains.shape

    def __call__(self, x) -> np.ndarray:
        return apply(self, x)


def symmetrize(G) -> np.ndarray:
    """Average ``G`` with its index-mirrored copy, making it exactly symmetric."""
    G = np.asarray(G, dtype=np.float64)
    return 0.5 * (G + mirror_index(G))


def _pair_gains(x, r) -> np.ndarray:
    x = as_image(x)
    r = as_image(r, "r")
    if x.shape != r.shape:
        raise ShapeError(f"image {x.shape} and perturbation {r.shape} differ")
    px = np.abs(dft3(x)) ** 2
    pr = np.abs(dft3(r)) ** 2
    den = px + pr
    G = np.ones_like(px)
    np.divide(px, den, out=G, where=den > 0)
    return G


def filter_from_pair(x, r, epsilon: float = float("nan")) -> WienerFilter:
    """Per-image filter for a known clean image and perturbation."""
    return WienerFilter(symmetrize(_pair_gains(x, r)), "per_image_upper_limit", epsilon)


def filter_single_attack(pairs, attack: str | None = None,
                         epsilon: float = float("nan")) -> WienerFilter:
    """Mean of per-pair gains over ``(x, r)`` pairs from one attack type."""
    pairs = list(pairs)
    if not pairs:
        raise EstimationError("cannot estimate a filter from an empty dataset")
    shape = as_image(pairs[0][0]).shape
    total = np.zeros(shape)
    for x, r in pairs:
        g = _pair_gains(x, r)
        if g.shape != shape:
            raise ShapeError(f"pair shape {g.shape} differs from {shape}")
        total += g
    return WienerFilter(symmetrize(total / len(pairs)), "single_attack", epsilon, attack)


def filter_combined(filters) -> WienerFilter:
    """Equal-weight mean of filters fitted on different attack types."""
    filters = list(filters)
    if not filters:
        raise EstimationError("cannot combine an empty list of filters")
    shape = filters[0].shape
    if any(f.shape != shape for f in filters):
        raise ShapeError("filters to combine must share one shape")
    gains = np.mean(np.stack([f.gains for f in filters]), axis=0)
    eps = {f.training_epsilon for f in filters}
    epsilon = eps.pop() if len(eps) == 1 else float("nan")
    return WienerFilter(symmetrize(gains), "combined", epsilon)


def apply(G: WienerFilter, x) -> np.ndarray:
    """Filter ``x`` in the DFT domain and return the clipped spatial result."""
    x = as_image(x)
    gains = G.gains if isinstance(G, WienerFilter) else np.asarray(G, dtype=np.float64)
    if gains.shape != x.shape:
        raise ShapeError(f"filter {gains.shape} does not match image {x.shape}")
    defect = float(np.max(np.abs(gains - mirror_index(gains))))
    if defect > SYMMETRY_TOLERANCE:
        raise SymmetryError(f"filter gains are not symmetric (defect {defect:.3g})")
    return np.clip(idft3(gains * dft3(x)), 0.0, 255.0)


def encode_filter(G: WienerFilter) -> bytes:
    H, W, C = G.shape
    header = _HEADER.pack(WFLT_MAGIC, WFLT_VERSION, PROVENANCE_TAGS[G.provenance],
                          float(G.training_epsilon), H, W, C)
    return header + G.gains.astype("<f8").tobytes()


def decode_filter(data: bytes) -> WienerFilter:
    if len(data) < _HEADER.size:
        raise FormatError("truncated filter header")
    magic, version, tag, eps, H, W, C = _HEADER.unpack_from(data)
    if magic != WFLT_MAGIC:
        raise FormatError(f"bad filter magic {magic!r}")
    if version != WFLT_VERSION:
        raise FormatError(f"unsupported filter version {version}")
    if tag not in _TAG_NAMES:
        raise FormatError(f"unknown provenance tag {tag}")
    body = data[_HEADER.size :]
    if len(body) != 8 * H * W * C:
        raise FormatError("filter payload does not match its header")
    gains = np.frombuffer(body, dtype="<f8").reshape(H, W, C).astype(np.float64)
    return WienerFilter(gains, _TAG_NAMES[tag], eps)


def save_filter(path, G: WienerFilter) -> None:
    atomic_write_bytes(path, encode_filter(G))


def load_filter(path) -> WienerFilter:
    return decode_filter(Path(path).read_bytes())
