"""PNG and raw float32 ("VRF1") readers and writers for scalar fields."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

MAGIC = b"VRF1"
_HEADER = struct.Struct("<4sIII")


def read_png(path) -> np.ndarray:
    """8-bit grayscale PNG mapped linearly to [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=float) / 255.0


def write_png(path, u: np.ndarray, vmin: float = 0.0, vmax: float = 1.0) -> None:
    """Write ``u`` as 8-bit grayscale, mapping ``[vmin, vmax]`` to ``[0, 255]``."""
    u = np.asarray(u, dtype=float)
    scale = (u - vmin) / (vmax - vmin) if vmax > vmin else np.zeros_like(u)
    data = np.round(np.clip(scale, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path)


def write_heatmap(path, u: np.ndarray) -> None:
    """PNG of ``u`` rescaled to its own min/max."""
    u = np.asarray(u, dtype=float)
    write_png(path, u, float(u.min()), float(u.max()))


def write_raw(path, u: np.ndarray) -> None:
    u = np.asarray(u, dtype=float)
    if u.ndim != 2:
        raise ValueError(f"expected a 2-D field, got shape {u.shape}")
    h, w = u.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, h, w, 0))
        f.write(np.ascontiguousarray(u, dtype="<f4").tobytes())


def read_raw(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, h, w, _ = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    body = buf[_HEADER.size :]
    if len(body) != 4 * h * w:
        raise ValueError(f"{path}: expected {4 * h * w} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(float)


def read_field(path) -> np.ndarray:
    """Read a raw field or a PNG depending on the file contents."""
    with open(path, "rb") as f:
        head = f.read(4)
    return read_raw(path) if head == MAGIC else read_png(path)
