"""Dense H x W x C image tensors and their 3D discrete Fourier transform.

Images are plain ``float64`` numpy arrays of shape ``(H, W, C)`` on the
0-255 gray-level scale; perturbations share the layout but may be negative.
Spectra are ``complex128`` arrays of the same shape.

By default the transform runs over all three axes, including the colour
axis, so ``dft3`` is the literal triple sum

    X[k, l, m] = sum_{h,w,c} x[h, w, c] exp(-2j pi (k h / H + l w / W + m c / C)).

Pass ``per_channel=True`` to transform only the two spatial axes.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, SizedInputError, SymmetryError

#: Largest number of elements accepted by the transforms.
MAX_ELEMENTS = 1 << 26

#: Imaginary residue above which a real-valued inverse is refused.
IMAG_TOLERANCE = 1e-6


def as_image(x, name: str = "x") -> np.ndarray:
    """Validate ``x`` as an image tensor and return it as float64.

    2D input is promoted to a single-channel ``(H, W, 1)`` tensor.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ShapeError(f"{name} must have shape (H, W, C), got {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"{name} has an empty axis: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError(f"{name} contains NaN or Inf")
    return arr


def _check_size(shape) -> None:
    n = int(np.prod(shape))
    if n > MAX_ELEMENTS:
        raise SizedInputError(f"{n} elements exceeds the cap of {MAX_ELEMENTS}")


def _axes(per_channel: bool) -> tuple[int, ...]:
    return (0, 1) if per_channel else (0, 1, 2)


def dft3(x, per_channel: bool = False) -> np.ndarray:
    """Forward 3D DFT of an image tensor (unnormalised)."""
    x = as_image(x)
    _check_size(x.shape)
    return np.fft.fftn(x, axes=_axes(per_channel))


def idft3(X, per_channel: bool = False, real: bool = True) -> np.ndarray:
    """Inverse 3D DFT with the 1/(HWC) normalisation.

    With ``real=True`` the imaginary residue is checked and dropped; a residue
    of ``IMAG_TOLERANCE`` or more means ``X`` was not conjugate symmetric and
    raises :class:`SymmetryError`.
    """
    X = np.asarray(X, dtype=np.complex128)
    if X.ndim != 3:
        raise ShapeError(f"spectrum must have shape (H, W, C), got {X.shape}")
    _check_size(X.shape)
    x = np.fft.ifftn(X, axes=_axes(per_channel))
    if not real:
        return x
    residue = float(np.max(np.abs(x.imag))) if x.size else 0.0
    if residue >= IMAG_TOLERANCE:
        raise SymmetryError(f"inverse has imaginary residue {residue:.3g}")
    return np.ascontiguousarray(x.real)


def mirror_index(X: np.ndarray, per_channel: bool = False) -> np.ndarray:
    """Return ``X[-k, -l, -m]`` (indices modulo the axis lengths)."""
    out = X
    for ax in _axes(per_channel):
        out = np.roll(np.flip(out, axis=ax), 1, axis=ax)
    return out


def symmetry_defect(X: np.ndarray, per_channel: bool = False) -> float:
    """Largest deviation of ``X`` from conjugate symmetry."""
    X = np.asarray(X)
    return float(np.max(np.abs(X - np.conj(mirror_index(X, per_channel)))))


def fftshift_log_magnitude(X) -> np.ndarray:
    """Log-magnitude display image with the zero frequency at the centre.

    Each channel is ``log(1 + |X|)`` shifted by ``ceil(H/2), ceil(W/2)`` and
    rescaled linearly to [0, 255]; a flat channel maps to zeros.
    """
    X = np.asarray(X)
    if X.ndim != 3:
        raise ShapeError(f"spectrum must have shape (H, W, C), got {X.shape}")
    # output[k] = input[(k + ceil(H/2)) mod H], i.e. the usual fftshift
    shifted = np.fft.fftshift(np.abs(X), axes=(0, 1))
    mag = np.log1p(shifted)
    lo = mag.min(axis=(0, 1), keepdims=True)
    hi = mag.max(axis=(0, 1), keepdims=True)
    span = hi - lo
    out = np.zeros_like(mag)
    np.divide((mag - lo) * 255.0, span, out=out, where=span > 0)
    return out
