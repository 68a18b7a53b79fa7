"""Spatially-variant convolution of an image with a PSF field."""
from __future__ import annotations

import numpy as np

from ..imagecore import DTYPE
from .psf import PsfField, psf_batch


def _axis_weights(length: int, centers: np.ndarray) -> np.ndarray:
    """Linear interpolation weights ``(n_centers, length)``; clamped outside the end centers."""
    pos = np.arange(length, dtype=np.float64)
    w = np.zeros((len(centers), length))
    if len(centers) == 1:
        w[0] = 1.0
        return w
    idx = np.clip(np.searchsorted(centers, pos, side="right") - 1, 0, len(centers) - 2)
    frac = np.clip((pos - centers[idx]) / (centers[idx + 1] - centers[idx]), 0.0, 1.0)
    w[idx, np.arange(length)] += 1.0 - frac
    w[idx + 1, np.arange(length)] += frac
    return w


def _convolve_region(padded: np.ndarray, weights: np.ndarray, pad: int,
                     rows: slice, cols: slice) -> np.ndarray:
    """Gather convolution ``sum_d k(d) I(p - d)`` on an output window.

    ``padded`` is the edge-replicated image with ``pad`` pixels per side.
    """
    r = (weights.shape[0] - 1) // 2
    h = rows.stop - rows.start
    w = cols.stop - cols.start
    out = np.zeros((h, w, padded.shape[2]))
    for ky, kx in zip(*np.nonzero(weights)):
        dy, dx = ky - r, kx - r
        y0 = rows.start + pad - dy
        x0 = cols.start + pad - dx
        out += weights[ky, kx] * padded[y0:y0 + h, x0:x0 + w]
    return out


def _blur_tiled(img: np.ndarray, field: PsfField) -> np.ndarray:
    height, width = img.shape[:2]
    kernels = field.kernels()
    pad = field.max_radius_used()
    padded = np.pad(img.astype(np.float64), ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    first = kernels[0]
    if all(k == first for k in kernels[1:]):
        return _convolve_region(padded, first.weights, pad, slice(0, height), slice(0, width))

    wy = _axis_weights(height, field.centers_y)
    wx = _axis_weights(width, field.centers_x)
    out = np.zeros(img.shape, dtype=np.float64)
    for j, row in enumerate(field.grid):
        ys = np.nonzero(wy[j])[0]
        if not len(ys):
            continue
        rs = slice(int(ys[0]), int(ys[-1]) + 1)
        for i, kern in enumerate(row):
            xs = np.nonzero(wx[i])[0]
            if not len(xs):
                continue
            cs = slice(int(xs[0]), int(xs[-1]) + 1)
            blend = wy[j, rs][:, None] * wx[i, cs][None, :]
            out[rs, cs] += blend[..., None] * _convolve_region(padded, kern.weights, pad, rs, cs)
    return out


def _blur_exact(img: np.ndarray, field: PsfField, rows_per_chunk: int = 8) -> np.ndarray:
    if field.track is None or field.K is None or field.shutter is None:
        raise ValueError("exact mode needs a field that carries its track, intrinsics and shutter")
    height, width = img.shape[:2]
    out = np.zeros(img.shape, dtype=np.float64)
    chunks = []
    for y0 in range(0, height, rows_per_chunk):
        y1 = min(height, y0 + rows_per_chunk)
        yy, xx = np.mgrid[y0:y1, 0:width]
        pts = np.stack([xx.ravel(), yy.ravel()], axis=1).astype(np.float64)
        kern, _ = psf_batch(field.track, field.K, field.shutter, pts,
                            field.n_samples, field.max_radius)
        chunks.append((y0, y1, kern))
    pad = max((k.shape[-1] - 1) // 2 for _, _, k in chunks)
    padded = np.pad(img.astype(np.float64), ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    for y0, y1, kern in chunks:
        r = (kern.shape[-1] - 1) // 2
        kern = kern.reshape(y1 - y0, width, kern.shape[-2], kern.shape[-1])
        for ky, kx in zip(*np.nonzero(kern.any(axis=(0, 1)))):
            dy, dx = ky - r, kx - r
            src = padded[y0 + pad - dy:y1 + pad - dy, pad - dx:pad - dx + width]
            out[y0:y1] += kern[:, :, ky, kx][..., None] * src
    return out


def apply_blur(img, field: PsfField, mode: str = "tiled") -> np.ndarray:
    """Blur ``img`` (H, W, C) with ``field``; borders are edge-replicated.

    ``tiled`` blends the four nearest tile kernels bilinearly per pixel;
    ``exact`` recomputes the kernel of every pixel (slow reference path).
    """
    img = np.asarray(img)
    if img.ndim != 3:
        raise ValueError(f"expected (H, W, C) image, got shape {img.shape}")
    if img.shape[:2] != (field.height, field.width):
        raise ValueError(f"field covers {field.width}x{field.height}, image is "
                         f"{img.shape[1]}x{img.shape[0]}")
    if mode == "tiled":
        out = _blur_tiled(img, field)
    elif mode == "exact":
        out = _blur_exact(img, field)
    else:
        raise ValueError(f"unknown blur mode {mode!r}")
    return out.astype(DTYPE)
