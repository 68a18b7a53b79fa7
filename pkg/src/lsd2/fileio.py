"""Image files and atomic writes.

PNG files hold 8-bit sRGB (gamma-encoded) values. ``.f32`` files are a
lossless planar float32 container: magic ``F32P``, then little-endian uint32
height, width, channels, then ``channels*height*width`` float32 values.
"""
from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".f32"}
F32_MAGIC = b"F32P"


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def to_uint8(img) -> np.ndarray:
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def png_bytes(img) -> bytes:
    arr = to_uint8(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    buf = io.BytesIO()
    PILImage.fromarray(arr).save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def f32_bytes(img) -> bytes:
    arr = np.asarray(img, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[..., None]
    h, w, c = arr.shape
    return F32_MAGIC + struct.pack("<III", h, w, c) + np.ascontiguousarray(arr.transpose(2, 0, 1)).tobytes()


def save_image(path, img) -> None:
    """Write a [0, 1] image; the format follows the suffix (``.png`` or ``.f32``)."""
    path = Path(path)
    if path.suffix == ".f32":
        atomic_write_bytes(path, f32_bytes(img))
    else:
        atomic_write_bytes(path, png_bytes(img))


def load_image(path) -> np.ndarray:
    """Read an image as float32 (H, W, 3) in [0, 1] (gamma-encoded for PNG/JPEG)."""
    path = Path(path)
    if path.suffix == ".f32":
        data = path.read_bytes()
        if data[:4] != F32_MAGIC:
            raise ValueError(f"{path}: not an F32P file")
        h, w, c = struct.unpack("<III", data[4:16])
        arr = np.frombuffer(data, dtype="<f4", offset=16, count=h * w * c)
        return arr.reshape(c, h, w).transpose(1, 2, 0).astype(np.float32)
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr


def center_crop_resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Center crop to the target aspect ratio, then resize (bicubic) to ``height x width``."""
    h, w = img.shape[:2]
    target = width / height
    if w / h > target:
        cw = int(round(h * target))
        x0 = (w - cw) // 2
        img = img[:, x0:x0 + cw]
    else:
        ch = int(round(w / target))
        y0 = (h - ch) // 2
        img = img[y0:y0 + ch]
    if img.shape[:2] == (height, width):
        return img.astype(np.float32)
    pil = PILImage.fromarray(np.clip(img * 255.0 + 0.5, 0, 255).astype(np.uint8))
    pil = pil.resize((width, height), PILImage.BICUBIC)
    return np.asarray(pil, dtype=np.float32) / 255.0


def list_images(directory) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
