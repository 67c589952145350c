"""File formats: PNG images and a lossless binary tensor container.

Tensor container layout (all integers little-endian)::

    bytes 0-7    magic b"RGTENSOR"
    bytes 8-11   uint32 format version (1)
    bytes 12-15  uint32 ndim
    bytes 16-19  4-byte ASCII dtype code, "<f8 " for float64
    then         ndim x uint64 extents
    then         row-major data
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .diffcore import ConfigurationError

MAGIC = b"RGTENSOR"
VERSION = 1
_DTYPES = {b"<f8 ": np.dtype("<f8")}


def save_tensor(path, x: np.ndarray) -> None:
    x = np.ascontiguousarray(x, dtype="<f8")
    header = MAGIC + struct.pack("<II", VERSION, x.ndim) + b"<f8 " + struct.pack(f"<{x.ndim}Q", *x.shape)
    Path(path).write_bytes(header + x.tobytes())


def load_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ConfigurationError(f"{path}: not a tensor container (bad magic)")
    version, ndim = struct.unpack_from("<II", raw, 8)
    if version != VERSION:
        raise ConfigurationError(f"{path}: unsupported container version {version}")
    code = raw[16:20]
    if code not in _DTYPES:
        raise ConfigurationError(f"{path}: unsupported dtype code {code!r}")
    shape = struct.unpack_from(f"<{ndim}Q", raw, 20)
    offset = 20 + 8 * ndim
    dtype = _DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64))
    if len(raw) - offset != count * dtype.itemsize:
        raise ConfigurationError(f"{path}: payload size does not match shape {shape}")
    return np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(shape).copy()


def read_image(path) -> np.ndarray:
    """PNG (or any Pillow-readable file) to a ``(C, H, W)`` float array in [0, 1]."""
    try:
        img = Image.open(path)
        img.load()
    except (OSError, ValueError) as err:
        raise ConfigurationError(f"cannot read image {path}: {err}") from err
    if img.mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(img, dtype=np.float64)
        scale = 65535.0
        arr = arr[None]
    else:
        if img.mode not in ("L", "RGB"):
            # alpha is dropped; palette and other modes are expanded
            img = img.convert("L" if img.mode in ("1", "LA") else "RGB")
        arr = np.asarray(img, dtype=np.float64)
        scale = 255.0
        arr = arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1)
    return np.clip(arr / scale, 0.0, 1.0)


def write_image(path, x: np.ndarray, bits: int = 8) -> None:
    """Write a ``(C, H, W)`` or ``(H, W)`` array in [0, 1] as 8- or 16-bit PNG (1 or 3 channels)."""
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    if x.ndim == 3:
        if x.shape[0] == 1:
            x = x[0]
        elif x.shape[0] == 3:
            x = x.transpose(1, 2, 0)
        else:
            raise ConfigurationError(f"cannot write a {x.shape[0]}-channel image")
    if bits == 8:
        img = Image.fromarray(np.round(x * 255.0).astype(np.uint8))
    elif bits == 16:
        if x.ndim != 2:
            raise ConfigurationError("16-bit output supports grayscale only")
        img = Image.fromarray(np.round(x * 65535.0).astype(np.uint16))
    else:
        raise ConfigurationError(f"bits must be 8 or 16, got {bits}")
    img.save(path, format="PNG")


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
