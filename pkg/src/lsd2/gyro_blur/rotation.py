"""Quaternion attitude integration from gyroscope logs.

Quaternions are ``(w, x, y, z)`` arrays. The body attitude ``q(t)`` obeys
``dq/dt = 0.5 * q (x) (0, omega)``; angular velocity is held constant between
consecutive gyro samples, so each segment integrates in closed form.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAX_RATE = 20.0  # rad/s, sanity bound on gyro magnitudes


class TrackRangeError(ValueError):
    """Requested time lies outside the gyro track."""


class GyroFormatError(ValueError):
    pass


def quat_mul(p, q):
    """Hamilton product, broadcasting over leading axes."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    pw, px, py, pz = np.moveaxis(p, -1, 0)
    qw, qx, qy, qz = np.moveaxis(q, -1, 0)
    return np.stack([
        pw * qw - px * qx - py * qy - pz * qz,
        pw * qx + px * qw + py * qz - pz * qy,
        pw * qy - px * qz + py * qw + pz * qx,
        pw * qz + px * qy - py * qx + pz * qw,
    ], axis=-1)


def quat_conj(q):
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_exp(rotvec):
    """Quaternion of a rotation vector (axis * angle)."""
    rotvec = np.asarray(rotvec, dtype=np.float64)
    angle = np.linalg.norm(rotvec, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(a/2)/a, series near zero
    k = np.where(angle > 1e-8, np.sin(half) / np.where(angle > 1e-8, angle, 1.0),
                 0.5 - angle ** 2 / 48.0)
    return np.concatenate([np.cos(half), rotvec * k], axis=-1)


def quat_to_matrix(q):
    """Direction cosine matrix ``C`` with ``v_world = C @ v_body``."""
    q = quat_normalize(q)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=-1)
    return m.reshape(q.shape[:-1] + (3, 3))


@dataclass(frozen=True)
class Rotation:
    """Unit quaternion wrapper; ``matrix`` is its direction cosine matrix."""

    q: tuple[float, float, float, float]

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0:
            raise ValueError("rotation quaternion must be finite and non-zero")
        object.__setattr__(self, "q", tuple(float(v) for v in q / n))

    @classmethod
    def identity(cls) -> "Rotation":
        return cls((1.0, 0.0, 0.0, 0.0))

    @classmethod
    def from_rotvec(cls, rotvec) -> "Rotation":
        return cls(tuple(quat_exp(rotvec)))

    @property
    def matrix(self) -> np.ndarray:
        return quat_to_matrix(np.array(self.q))

    @property
    def angle(self) -> float:
        w = min(1.0, abs(self.q[0]))
        v = float(np.linalg.norm(self.q[1:]))
        return 2.0 * float(np.arctan2(v, w))

    def inverse(self) -> "Rotation":
        return Rotation(tuple(quat_conj(self.q)))

    def __mul__(self, other: "Rotation") -> "Rotation":
        return Rotation(tuple(quat_mul(self.q, other.q)))


@dataclass(frozen=True)
class GyroSample:
    t: float
    omega: tuple[float, float, float]


@dataclass(frozen=True, eq=False)
class GyroTrack:
    """Timestamped body-frame angular velocities.

    ``omega[i]`` is held from ``t[i]`` until ``t[i+1]``. ``alignment`` maps gyro
    axes to camera axes (identity by default).
    """

    t: np.ndarray
    omega: np.ndarray
    alignment: np.ndarray | None = None
    max_rate: float = MAX_RATE
    _q: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        t = np.array(self.t, dtype=np.float64)
        omega = np.array(self.omega, dtype=np.float64).reshape(-1, 3)
        if t.ndim != 1 or len(t) < 2 or len(t) != len(omega):
            raise GyroFormatError("a track needs at least 2 samples with matching timestamps")
        if np.any(np.diff(t) <= 0):
            raise GyroFormatError("gyro timestamps must be strictly increasing")
        if not np.all(np.isfinite(omega)):
            raise GyroFormatError("non-finite angular velocity")
        if np.max(np.linalg.norm(omega, axis=1)) > self.max_rate:
            raise GyroFormatError(f"angular velocity exceeds {self.max_rate} rad/s")
        if self.alignment is not None:
            omega = omega @ np.asarray(self.alignment, dtype=np.float64).T
        t.flags.writeable = False
        omega.flags.writeable = False
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "omega", omega)

        # attitude at every sample time, renormalized after each step
        q = np.empty((len(t), 4))
        q[0] = (1.0, 0.0, 0.0, 0.0)
        steps = quat_exp(omega[:-1] * np.diff(t)[:, None])
        for i in range(len(t) - 1):
            q[i + 1] = quat_normalize(quat_mul(q[i], steps[i]))
        q.flags.writeable = False
        object.__setattr__(self, "_q", q)

    @classmethod
    def from_samples(cls, samples, **kw) -> "GyroTrack":
        return cls(np.array([s.t for s in samples]), np.array([s.omega for s in samples]), **kw)

    @property
    def samples(self) -> list[GyroSample]:
        return [GyroSample(float(t), tuple(map(float, w))) for t, w in zip(self.t, self.omega)]

    @property
    def start(self) -> float:
        return float(self.t[0])

    @property
    def end(self) -> float:
        return float(self.t[-1])

    def attitude_quats(self, times) -> np.ndarray:
        """Body attitude quaternions (relative to the track start) at ``times``."""
        times = np.asarray(times, dtype=np.float64)
        if times.size and (times.min() < self.t[0] or times.max() > self.t[-1]):
            raise TrackRangeError(
                f"times [{times.min():.6g}, {times.max():.6g}] outside track "
                f"[{self.start:.6g}, {self.end:.6g}]")
        idx = np.clip(np.searchsorted(self.t, times, side="right") - 1, 0, len(self.t) - 1)
        dt = times - self.t[idx]
        dq = quat_exp(self.omega[idx] * dt[..., None])
        return quat_normalize(quat_mul(self._q[idx], dq))

    def camera_rotations(self, times) -> np.ndarray:
        """World-to-camera rotation matrices ``R(t)`` at ``times``."""
        return np.swapaxes(quat_to_matrix(self.attitude_quats(times)), -1, -2)

    def attitude(self, t: float) -> Rotation:
        """World-to-camera rotation at ``t`` as a Rotation."""
        return Rotation(tuple(quat_conj(self.attitude_quats(np.array([t]))[0])))


def integrate_rotation(track: GyroTrack, t_a: float, t_b: float) -> Rotation:
    """Relative body rotation from the pose at ``t_a`` to the pose at ``t_b``."""
    if t_b < t_a:
        raise TrackRangeError(f"t_b={t_b} precedes t_a={t_a}")
    qa, qb = track.attitude_quats(np.array([t_a, t_b]))
    return Rotation(tuple(quat_normalize(quat_mul(quat_conj(qa), qb))))


def read_gyro_log(path, alignment=None) -> GyroTrack:
    """Parse ``t_ns,omega_x,omega_y,omega_z`` lines; ``#`` lines are comments."""
    ts, ws = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise GyroFormatError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            try:
                ts.append(int(parts[0]))
                ws.append([float(p) for p in parts[1:]])
            except ValueError as exc:
                raise GyroFormatError(f"{path}:{lineno}: {exc}") from None
    t_ns = np.array(ts, dtype=np.int64)
    if len(t_ns) >= 2 and np.any(np.diff(t_ns) <= 0):
        raise GyroFormatError(f"{path}: timestamps must be strictly increasing")
    return GyroTrack((t_ns - t_ns[0]) * 1e-9 if len(t_ns) else t_ns, np.array(ws), alignment=alignment)


def write_gyro_log(path, track: GyroTrack) -> None:
    t_ns = np.round(track.t * 1e9).astype(np.int64)
    with open(path, "w") as fh:
        fh.write("# t_ns,omega_x,omega_y,omega_z\n")
        for t, w in zip(t_ns, track.omega):
            fh.write(f"{t},{w[0]:.9f},{w[1]:.9f},{w[2]:.9f}\n")


def synthetic_shake(rng: np.random.Generator, duration: float = 10.0, rate_hz: float = 200.0,
                    amplitude: float = 0.3) -> GyroTrack:
    """Hand-shake-like track: random sinusoids in the 1-12 Hz band on each axis.

    ``amplitude`` is the approximate RMS angular rate per axis in rad/s; roll
    (z) gets a third of it since handheld shake is mostly pitch and yaw.
    """
    n = int(round(duration * rate_hz)) + 1
    t = np.arange(n) / rate_hz
    omega = np.zeros((n, 3))
    for axis, gain in enumerate((1.0, 1.0, 1.0 / 3.0)):
        freqs = rng.uniform(1.0, 12.0, size=6)
        phases = rng.uniform(0.0, 2 * np.pi, size=6)
        amps = rng.uniform(0.5, 1.0, size=6)
        amps *= amplitude * gain * np.sqrt(2.0 / np.sum(amps ** 2))
        omega[:, axis] = np.sum(amps * np.sin(2 * np.pi * freqs * t[:, None] + phases), axis=1)
    return GyroTrack(t, omega)


def constant_track(omega, duration: float = 1.0, n: int = 2) -> GyroTrack:
    """Track with one constant angular velocity, handy for tests and previews."""
    t = np.linspace(0.0, duration, n)
    return GyroTrack(t, np.tile(np.asarray(omega, dtype=np.float64), (n, 1)))


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse(self) -> np.ndarray:
        return np.array([[1.0 / self.fx, 0.0, -self.cx / self.fx],
                         [0.0, 1.0 / self.fy, -self.cy / self.fy],
                         [0.0, 0.0, 1.0]])

    def check_bounds(self, width: int, height: int) -> None:
        if not (0 <= self.cx <= width and 0 <= self.cy <= height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside {width}x{height} image")

    @classmethod
    def default_for(cls, width: int, height: int, focal_scale: float = 0.8) -> "Intrinsics":
        """Phone-like field of view: focal length ``focal_scale * max(width, height)``."""
        f = focal_scale * max(width, height)
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0)

    @classmethod
    def load(cls, path) -> "Intrinsics":
        with open(path) as fh:
            d = json.load(fh)
        missing = {"fx", "fy", "cx", "cy"} - set(d)
        if missing:
            raise ValueError(f"{path}: missing intrinsics keys {sorted(missing)}")
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps({"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}))
