"""Procedural sRGB test scenes, used when no source image directory is supplied."""
from __future__ import annotations

import numpy as np


def random_scene(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Piecewise-smooth scene: gradient backdrop, textured shapes, small highlights."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    u = xx / max(width - 1, 1)
    v = yy / max(height - 1, 1)
    c0, c1 = rng.uniform(0.05, 0.6, size=(2, 3))
    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.clip(0.5 + 0.7 * ((u - 0.5) * np.cos(angle) + (v - 0.5) * np.sin(angle)), 0, 1)
    img = c0 + (c1 - c0) * ramp[..., None]

    for _ in range(int(rng.integers(4, 9))):
        color = rng.uniform(0.0, 0.95, size=3)
        cx, cy = rng.uniform(0, 1, size=2)
        rx, ry = rng.uniform(0.06, 0.35, size=2)
        if rng.random() < 0.5:
            mask = ((u - cx) / rx) ** 2 + ((v - cy) / ry) ** 2 <= 1.0
        else:
            mask = (np.abs(u - cx) <= rx) & (np.abs(v - cy) <= ry)
        if rng.random() < 0.4:
            freq = rng.uniform(3, 12)
            phi = rng.uniform(0, 2 * np.pi)
            stripes = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (u * np.cos(phi) + v * np.sin(phi)))
            shade = color * (0.55 + 0.45 * stripes[..., None])
        else:
            shade = np.broadcast_to(color, img.shape)
        img = np.where(mask[..., None], shade, img)

    for _ in range(int(rng.integers(1, 4))):
        cx, cy = rng.uniform(0.1, 0.9, size=2)
        r = rng.uniform(0.015, 0.04)
        spot = np.exp(-(((u - cx) ** 2 + (v - cy) ** 2) / (2 * r * r)))
        img = img + (1.0 - img) * spot[..., None] * rng.uniform(0.7, 1.0)

    # soften hard edges slightly (3x3 box)
    pad = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    img = sum(pad[dy:dy + height, dx:dx + width] for dy in range(3) for dx in range(3)) / 9.0
    return np.clip(img, 0.0, 1.0).astype(np.float32)
