"""Image file I/O: 8-bit PNG and raw float32 tensors with an FQD1 header."""

from __future__ import annotations

import struct

import numpy as np
from PIL import Image

RAW_MAGIC = b"FQD1"
_HEADER = struct.Struct("<4sIII")  # magic, C, H, W


def write_png(path, image: np.ndarray) -> None:
    """Save a (C, H, W) float image as PNG, scaling by 255 with round-half-up."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ValueError(f"PNG export expects (1|3, H, W), got {img.shape}")
    quant = np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)
    if img.shape[0] == 1:
        pil = Image.fromarray(quant[0], mode="L")
    else:
        pil = Image.fromarray(np.moveaxis(quant, 0, -1), mode="RGB")
    pil.save(path, format="PNG")


def read_png(path) -> np.ndarray:
    """Load a PNG as a (C, H, W) float64 image in [0, 1]."""
    with Image.open(path) as pil:
        if pil.mode == "L":
            arr = np.asarray(pil, dtype=np.float64)[None, :, :]
        else:
            arr = np.moveaxis(
                np.asarray(pil.convert("RGB"), dtype=np.float64), -1, 0
            )
    return arr / 255.0


def write_raw(path, image: np.ndarray) -> None:
    """Save a (C, H, W) image as float32 little-endian with a 16-byte header."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise ValueError(f"raw export expects (C, H, W), got {img.shape}")
    c, h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(RAW_MAGIC, c, h, w))
        fh.write(np.ascontiguousarray(img, dtype="<f4").tobytes())


def read_raw(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, c, h, w = _HEADER.unpack(header)
        if magic != RAW_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {RAW_MAGIC!r}")
        payload = fh.read(4 * c * h * w)
    data = np.frombuffer(payload, dtype="<f4")
    if data.size != c * h * w:
        raise ValueError(f"{path}: expected {c * h * w} floats, found {data.size}")
    return data.reshape(c, h, w).astype(np.float64)
