"""Binary file formats: PPM/PGM images, PNG export, raw perturbation tensors."""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensor import as_image

PERT_MAGIC = b"PERT"
_PERT_HEADER = struct.Struct("<4sIII")


def atomic_write_bytes(path, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_uint8(x) -> np.ndarray:
    return np.clip(np.rint(np.asarray(x, dtype=np.float64)), 0, 255).astype(np.uint8)


def encode_pnm(x) -> bytes:
    """Encode a 1- or 3-channel image as binary PGM (P5) or PPM (P6)."""
    img = to_uint8(as_image(x))
    H, W, C = img.shape
    if C == 1:
        magic = b"P5"
    elif C == 3:
        magic = b"P6"
    else:
        raise FormatError(f"PNM needs 1 or 3 channels, got {C}")
    return magic + f"\n{W} {H}\n255\n".encode("ascii") + img.tobytes()


def write_pnm(path, x) -> None:
    atomic_write_bytes(path, encode_pnm(x))


def _pnm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PNM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def decode_pnm(data: bytes) -> np.ndarray:
    """Decode binary PGM/PPM bytes into a float64 ``(H, W, C)`` tensor."""
    tokens, offset = _pnm_tokens(data, 4)
    magic = tokens[0]
    if magic == b"P5":
        C = 1
    elif magic == b"P6":
        C = 3
    else:
        raise FormatError(f"unsupported PNM magic {magic!r}")
    try:
        W, H, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError("malformed PNM header") from exc
    if maxval != 255:
        raise FormatError(f"only 8-bit PNM is supported (maxval={maxval})")
    raster = data[offset : offset + H * W * C]
    if len(raster) != H * W * C:
        raise FormatError("truncated PNM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(H, W, C).astype(np.float64)


def read_pnm(path) -> np.ndarray:
    return decode_pnm(Path(path).read_bytes())


def write_png(path, x) -> None:
    from PIL import Image

    img = to_uint8(as_image(x))
    if img.shape[2] == 1:
        img = img[:, :, 0]
    elif img.shape[2] != 3:
        raise FormatError(f"PNG export needs 1 or 3 channels, got {img.shape[2]}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    Image.fromarray(img).save(tmp, format="PNG")
    os.replace(tmp, path)


def encode_perturbation(r) -> bytes:
    r = as_image(r, "r")
    H, W, C = r.shape
    return _PERT_HEADER.pack(PERT_MAGIC, H, W, C) + r.astype("<f8").tobytes()


def decode_perturbation(data: bytes) -> np.ndarray:
    if len(data) < _PERT_HEADER.size:
        raise FormatError("truncated perturbation header")
    magic, H, W, C = _PERT_HEADER.unpack_from(data)
    if magic != PERT_MAGIC:
        raise FormatError(f"bad perturbation magic {magic!r}")
    body = data[_PERT_HEADER.size :]
    if len(body) != 8 * H * W * C:
        raise FormatError("perturbation payload does not match its header")
    return np.frombuffer(body, dtype="<f8").reshape(H, W, C).astype(np.float64)


def save_perturbation(path, r) -> None:
    atomic_write_bytes(path, encode_perturbation(r))


def load_perturbation(path) -> np.ndarray:
    return decode_perturbation(Path(path).read_bytes())
