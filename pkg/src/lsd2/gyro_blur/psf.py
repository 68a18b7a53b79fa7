"""Rolling-shutter homographies and point-spread kernels from camera rotation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .rotation import GyroTrack, Intrinsics, Rotation, TrackRangeError

DEFAULT_SAMPLES = 256
DEFAULT_MAX_RADIUS = 64  # kernel side capped at 129 px


class OversizedBlurError(ValueError):
    def __init__(self, required_radius: int, max_radius: int):
        super().__init__(f"blur trail needs kernel radius {required_radius} px, "
                         f"above the limit of {max_radius} px")
        self.required_radius = required_radius
        self.max_radius = max_radius


@dataclass(frozen=True)
class ShutterSpec:
    """Exposure timing. Row ``y`` starts exposing at ``t_f + t_r * y / n_rows``."""

    t_f: float
    t_e: float
    t_r: float
    n_rows: int

    def __post_init__(self):
        if not self.t_e > 0:
            raise ValueError("exposure time must be positive")
        if self.t_r < 0:
            raise ValueError("readout time must be non-negative")
        if self.n_rows < 1:
            raise ValueError("n_rows must be at least 1")

    @property
    def t_end(self) -> float:
        """Time at which the last row stops exposing."""
        return self.t_f + self.t_r * (self.n_rows - 1) / self.n_rows + self.t_e

    def with_start(self, t_f: float) -> "ShutterSpec":
        return ShutterSpec(t_f, self.t_e, self.t_r, self.n_rows)


def row_start_time(shutter: ShutterSpec, y) -> float:
    if not 0 <= y < shutter.n_rows:
        raise ValueError(f"row {y} outside [0, {shutter.n_rows})")
    return shutter.t_f + shutter.t_r * y / shutter.n_rows


def homography_at(K: Intrinsics, R_t: Rotation, R_t1: Rotation) -> np.ndarray:
    """``K R(t) R(t1)^T K^-1`` with the bottom-right entry scaled to 1."""
    H = K.matrix @ R_t.matrix @ R_t1.matrix.T @ K.inverse
    return H / H[2, 2]


@dataclass(frozen=True, eq=False)
class PsfKernel:
    """Unit-sum blur kernel whose center pixel is the start-of-exposure position.

    ``weights[r + dy, r + dx]`` is the fraction of the exposure the point spends
    displaced by ``(dx, dy)``, where ``r = (size - 1) // 2``.
    """

    weights: np.ndarray
    extent: float = 0.0  # largest displacement along the trajectory, px

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def radius(self) -> int:
        return (self.size - 1) // 2

    @property
    def origin(self) -> tuple[int, int]:
        return (self.radius, self.radius)

    def padded(self, radius: int) -> np.ndarray:
        p = radius - self.radius
        if p < 0:
            raise ValueError("cannot pad kernel to a smaller radius")
        return np.pad(self.weights, p)

    def support_bbox(self) -> tuple[int, int, int, int]:
        """``(x_min, x_max, y_min, y_max)`` of non-zero weights, relative to the origin."""
        ys, xs = np.nonzero(self.weights)
        r = self.radius
        return int(xs.min()) - r, int(xs.max()) - r, int(ys.min()) - r, int(ys.max()) - r

    def trail_length(self) -> float:
        x0, x1, y0, y1 = self.support_bbox()
        return float(np.hypot(max(abs(x0), abs(x1)), max(abs(y0), abs(y1))))

    def __eq__(self, other):
        return isinstance(other, PsfKernel) and np.array_equal(self.weights, other.weights)


MAX_STEP_PX = 0.1  # longest sub-step between rasterized points


def _sample_fractions(n_samples: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, n_samples)


def trajectories(track: GyroTrack, K: Intrinsics, shutter: ShutterSpec, points,
                 n_samples: int = DEFAULT_SAMPLES, timing_rows=None) -> np.ndarray:
    """Displacements ``H(t) x - x`` for each point, shape ``(P, n_samples, 2)``.

    The exposure window of each point follows its own row unless
    ``timing_rows`` overrides which row's start time is used.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    rows = pts[:, 1] if timing_rows is None else np.broadcast_to(
        np.asarray(timing_rows, dtype=np.float64), (len(pts),))
    if np.any(rows < 0) or np.any(rows >= shutter.n_rows):
        raise ValueError("row outside the shutter's row range")
    t1 = shutter.t_f + shutter.t_r * rows / shutter.n_rows
    times = t1[:, None] + shutter.t_e * _sample_fractions(n_samples)[None, :]
    if t1.min() < track.start or times.max() > track.end:
        raise TrackRangeError(
            f"exposure window [{t1.min():.6g}, {t1.max() + shutter.t_e:.6g}] "
            f"outside track [{track.start:.6g}, {track.end:.6g}]")
    R_t = track.camera_rotations(times)            # (P, n, 3, 3)
    R_t1 = track.camera_rotations(t1)              # (P, 3, 3)
    M = np.einsum("ij,pnjk,plk,lm->pnim", K.matrix, R_t, R_t1, K.inverse, optimize=True)
    xh = np.concatenate([pts, np.ones((len(pts), 1))], axis=1)
    proj = np.einsum("pnij,pj->pni", M, xh)
    return proj[..., :2] / proj[..., 2:3] - pts[:, None, :]


def _required_radius(disp: np.ndarray) -> int:
    return int(math.ceil(float(np.max(np.abs(disp), initial=0.0)) - 1e-9))


def _snap(v: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    r = np.round(v)
    return np.where(np.abs(v - r) < tol, r, v)


def splat(disp: np.ndarray, radius: int) -> np.ndarray:
    """Bilinear splat of equally weighted displacement points, normalized to unit sum.

    ``disp`` is ``(..., n, 2)``; returns ``(..., 2r+1, 2r+1)``.
    """
    disp = np.asarray(disp, dtype=np.float64)
    lead = disp.shape[:-2]
    n = disp.shape[-2]
    size = 2 * radius + 1
    d = disp.reshape(-1, n, 2)
    # snap round-off so on-grid samples do not leak ~1e-16 weight into neighbours
    px = _snap(d[..., 0] + radius)
    py = _snap(d[..., 1] + radius)
    x0 = np.floor(px)
    y0 = np.floor(py)
    fx = px - x0
    fy = py - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    base = (np.arange(len(d)) * size * size)[:, None]
    out = np.zeros(len(d) * size * size)
    for oy, wy in ((0, 1.0 - fy), (1, fy)):
        for ox, wx in ((0, 1.0 - fx), (1, fx)):
            xi = x0 + ox
            yi = y0 + oy
            w = wx * wy
            ok = (xi >= 0) & (xi < size) & (yi >= 0) & (yi < size)
            if np.any(w[~ok] > 1e-12):
                raise ValueError("displacement outside kernel support")
            out += np.bincount((base + yi * size + xi)[ok], weights=w[ok], minlength=out.size)
    out = out.reshape(len(d), size * size)
    out /= out.sum(axis=1, keepdims=True)
    return out.reshape(lead + (size, size))


def substeps(disp: np.ndarray, max_step: float = MAX_STEP_PX) -> int:
    seg = np.diff(np.asarray(disp, dtype=np.float64), axis=-2)
    longest = float(np.max(np.hypot(seg[..., 0], seg[..., 1]), initial=0.0))
    return max(1, math.ceil(longest / max_step))


def densify(disp: np.ndarray, m: int | None = None) -> np.ndarray:
    """Resample the path through time-uniform samples ``disp`` ``(..., n, 2)``.

    A cubic spline in time interpolates the samples; it is evaluated at the
    midpoints of ``m`` equal sub-steps per sample interval, so the returned
    points are again uniform in time. By default no sub-step spans more than
    ``MAX_STEP_PX`` of the sampled path.
    """
    disp = np.asarray(disp, dtype=np.float64)
    n = disp.shape[-2]
    m = substeps(disp) if m is None else m
    t = np.linspace(0.0, 1.0, n)
    u = (np.arange((n - 1) * m) + 0.5) / ((n - 1) * m)
    return CubicSpline(t, disp, axis=-2)(u)


def psf_at(track: GyroTrack, K: Intrinsics, shutter: ShutterSpec, x,
           n_samples: int = DEFAULT_SAMPLES, max_radius: int = DEFAULT_MAX_RADIUS,
           timing_row=None) -> PsfKernel:
    """Blur kernel of the pixel at ``x = (col, row)``.

    ``timing_row`` evaluates the point with another row's exposure window,
    which isolates the rolling-shutter contribution.
    """
    disp = trajectories(track, K, shutter, [x], n_samples, timing_row)[0]
    pts = densify(disp)
    r = _required_radius(pts)
    if r > max_radius:
        raise OversizedBlurError(r, max_radius)
    extent = float(np.max(np.hypot(pts[:, 0], pts[:, 1])))
    return PsfKernel(splat(pts, r), extent)


def psf_batch(track, K, shutter, points, n_samples=DEFAULT_SAMPLES,
              max_radius=DEFAULT_MAX_RADIUS) -> tuple[np.ndarray, np.ndarray]:
    """Kernels for many points on a common radius: ``(P, 2R+1, 2R+1)`` and extents."""
    disp = trajectories(track, K, shutter, points, n_samples)
    m = substeps(disp)
    step = max(1, 2_000_000 // (m * n_samples))
    pts = [densify(disp[i:i + step], m) for i in range(0, len(disp), step)]
    r = max(_required_radius(p) for p in pts)
    if r > max_radius:
        raise OversizedBlurError(r, max_radius)
    kernels = np.concatenate([splat(p, r) for p in pts])
    extents = np.concatenate([np.max(np.hypot(p[..., 0], p[..., 1]), axis=-1) for p in pts])
    return kernels, extents


def tile_centers(length: int, tile_size: int) -> np.ndarray:
    starts = np.arange(0, length, tile_size)
    ends = np.minimum(starts + tile_size, length)
    return (starts + ends - 1) / 2.0


@dataclass(frozen=True, eq=False)
class PsfField:
    """Kernels evaluated at tile centers, ``grid[row][col]``.

    The generating track, intrinsics, shutter and sample count are kept so the
    per-pixel reference path can recompute kernels exactly.
    """

    tile_size: int
    width: int
    height: int
    grid: list
    track: GyroTrack | None = None
    K: Intrinsics | None = None
    shutter: ShutterSpec | None = None
    n_samples: int = DEFAULT_SAMPLES
    max_radius: int = DEFAULT_MAX_RADIUS

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.grid), len(self.grid[0])

    @property
    def centers_x(self) -> np.ndarray:
        return tile_centers(self.width, self.tile_size)

    @property
    def centers_y(self) -> np.ndarray:
        return tile_centers(self.height, self.tile_size)

    def kernels(self) -> list[PsfKernel]:
        return [k for row in self.grid for k in row]

    def max_radius_used(self) -> int:
        return max(k.radius for k in self.kernels())

    def stats(self) -> dict:
        ext = np.array([k.extent for k in self.kernels()])
        return {"max_trail_px": float(ext.max()), "mean_trail_px": float(ext.mean()),
                "max_kernel_size": int(2 * self.max_radius_used() + 1),
                "grid": list(self.shape), "tile_size": self.tile_size}

    @classmethod
    def uniform(cls, kernel: PsfKernel, width: int, height: int) -> "PsfField":
        """Single kernel covering the whole image."""
        return cls(max(width, height), width, height, [[kernel]])


def psf_field(track: GyroTrack, K: Intrinsics, shutter: ShutterSpec, image_size,
              tile_size: int = 32, n_samples: int = DEFAULT_SAMPLES,
              max_radius: int = DEFAULT_MAX_RADIUS) -> PsfField:
    """Evaluate ``psf_at`` at every tile center of an image of ``(width, height)``."""
    width, height = image_size
    if tile_size < 1:
        raise ValueError("tile_size must be >= 1")
    cx = tile_centers(width, tile_size)
    cy = tile_centers(height, tile_size)
    grid = [[psf_at(track, K, shutter, (x, y), n_samples, max_radius) for x in cx] for y in cy]
    return PsfField(tile_size, width, height, grid, track, K, shutter, n_samples, max_radius)
