"""Raster I/O and content hashing.

Images are numpy ``uint8`` arrays of shape (height, width, channels) with 3
(RGB) or 4 (RGBA) channels.
"""

from __future__ import annotations

import base64
import hashlib
import io
from pathlib import Path

import numpy as np
from PIL import Image


class ImageDecodeError(Exception):
    pass


def as_raster(image) -> np.ndarray:
    arr = np.asarray(image)
    if arr.dtype != np.uint8 or arr.ndim != 3 or arr.shape[2] not in (3, 4):
        raise ImageDecodeError(f"expected uint8 HxWx3/4 raster, got {arr.dtype} {arr.shape}")
    return arr


def load_image(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            mode = "RGBA" if ("A" in im.getbands() or "transparency" in im.info) else "RGB"
            return np.array(im.convert(mode))
    except FileNotFoundError:
        raise
    except Exception as exc:  # PIL raises a zoo of exception types
        raise ImageDecodeError(f"cannot decode {path}: {exc}") from exc


def image_dims(path: str | Path) -> tuple[int, int]:
    """(width, height) without decoding pixel data."""
    try:
        with Image.open(path) as im:
            return im.size
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ImageDecodeError(f"cannot decode {path}: {exc}") from exc


def encode_png(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(as_raster(image)).save(buf, format="PNG")
    return buf.getvalue()


def save_png(image: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(encode_png(image))


def png_data_url(image: np.ndarray) -> str:
    return "data:image/png;base64," + base64.b64encode(encode_png(image)).decode("ascii")


def image_hash(image: np.ndarray) -> str:
    """SHA-256 over shape and decoded pixels, independent of file encoding."""
    arr = np.ascontiguousarray(as_raster(image))
    h = hashlib.sha256()
    h.update(("%dx%dx%d:" % arr.shape).encode("ascii"))
    h.update(arr.tobytes())
    return h.hexdigest()
