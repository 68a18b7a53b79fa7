"""Linear-light image values and the scalar intensity transforms used by the synthesis.

Images are ``float32`` arrays of shape ``(height, width, 3)``. Every transform
returns a new array; inputs are never modified in place.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DTYPE = np.float32
DEFAULT_GAMMA = 2.2


class InvalidImageError(ValueError):
    pass


class InvalidParameterError(ValueError):
    pass


def as_image(data, *, check_range: bool = False) -> np.ndarray:
    """Validate ``data`` as an HxWx3 finite non-negative raster and return a float32 copy."""
    img = np.array(data, dtype=DTYPE)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidImageError(f"expected (H, W, 3) image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise InvalidImageError("image contains non-finite values")
    if check_range and (img.min() < 0.0 or img.max() > 1.0):
        raise InvalidImageError("image values must lie in [0, 1]")
    return img


def _finite(img) -> np.ndarray:
    img = np.asarray(img)
    if not np.all(np.isfinite(img)):
        raise InvalidImageError("image contains non-finite values")
    return img


def gamma_decode(img, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    img = _finite(img)
    if img.min(initial=0.0) < 0.0:
        raise InvalidImageError("gamma_decode expects non-negative values")
    return np.power(img, gamma, dtype=np.float64).astype(DTYPE)


def gamma_encode(img, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    img = _finite(img)
    if img.min(initial=0.0) < 0.0:
        raise InvalidImageError("gamma_encode expects non-negative values")
    return np.power(img, 1.0 / gamma, dtype=np.float64).astype(DTYPE)


def scale(img, s: float) -> np.ndarray:
    """Multiply every intensity by ``s``. No clipping, values may exceed 1."""
    if not s > 0:
        raise InvalidParameterError(f"scale factor must be positive, got {s}")
    return (np.asarray(img, dtype=np.float64) * s).astype(DTYPE)


def clip(img, max: float = 1.0) -> np.ndarray:
    return np.clip(np.asarray(img, dtype=DTYPE), 0.0, max)


@dataclass(frozen=True)
class ChannelAffine:
    """Per-channel gain ``a`` and offset ``b``: ``v -> a[i] * v + b[i]``."""

    a: tuple[float, float, float]
    b: tuple[float, float, float]

    def __post_init__(self):
        if len(self.a) != 3 or len(self.b) != 3:
            raise InvalidParameterError("ChannelAffine needs 3 gains and 3 offsets")

    @classmethod
    def identity(cls) -> "ChannelAffine":
        return cls((1.0, 1.0, 1.0), (0.0, 0.0, 0.0))

    @classmethod
    def sample(cls, rng: np.random.Generator,
               a_bounds=((0.02, 0.3),) * 3,
               b_bounds=((0.0, 0.01),) * 3) -> "ChannelAffine":
        """Draw gains and offsets uniformly, each channel from its own interval."""
        a = tuple(float(rng.uniform(lo, hi)) for lo, hi in a_bounds)
        b = tuple(float(rng.uniform(lo, hi)) for lo, hi in b_bounds)
        return cls(a, b)


def affine_channels(img, t: ChannelAffine) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    a = np.asarray(t.a, dtype=np.float64)
    b = np.asarray(t.b, dtype=np.float64)
    return (img * a + b).astype(DTYPE)


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator keyed by ``seed`` and an optional stream path.

    Streams with different paths are statistically independent, so per-image
    generators can be created in any order or in any worker.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, stream)])
    return np.random.Generator(np.random.Philox(ss))
