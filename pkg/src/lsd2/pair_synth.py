"""Synthesis of (short, long, target) training triples from a clean image and a gyro track.

Processing happens in linear light: the sRGB input is gamma-decoded, scaled by a
random exposure factor ``s``, turned into a dark, color-distorted, noisy short
exposure and a blurred, noisy long exposure, and finally gamma re-encoded.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .fileio import atomic_write_json, save_image
from .gyro_blur import (DEFAULT_MAX_RADIUS, DEFAULT_SAMPLES, GyroTrack, Intrinsics, PsfField,
                        ShutterSpec, apply_blur, psf_field)
from .imagecore import (DTYPE, ChannelAffine, InvalidParameterError, affine_channels, as_image,
                        clip, gamma_decode, gamma_encode, scale)

FORMAT_VERSION = 1
LSD2_S_RANGE = (1.0, 3.0)
FUSION_S_RANGE = (1.0 / 3.0, 3.0)


@dataclass(frozen=True)
class SynthParams:
    s_range: tuple[float, float] = LSD2_S_RANGE
    a_bounds: tuple = ((0.02, 0.3),) * 3
    b_bounds: tuple = ((0.0, 0.01),) * 3
    photons_per_unit: float = 1000.0
    short_noise_factor: float = 4.0
    exposure_ratio: float = 1.0 / 30.0
    gamma: float = 2.2
    fusion: bool = False       # targets are the unscaled originals, long stays sharp
    tile_size: int = 32
    n_samples: int = DEFAULT_SAMPLES
    max_radius: int = DEFAULT_MAX_RADIUS

    def __post_init__(self):
        lo, hi = self.s_range
        if not 0 < lo <= hi:
            raise InvalidParameterError(f"invalid s_range {self.s_range}")
        if not self.photons_per_unit > 0:
            raise InvalidParameterError("photons_per_unit must be positive")
        if self.short_noise_factor < 1:
            raise InvalidParameterError("short_noise_factor must be >= 1")
        for lo, hi in self.a_bounds:
            if not 0 <= lo <= hi:
                raise InvalidParameterError(f"invalid gain bounds {(lo, hi)}")
        for lo, hi in self.b_bounds:
            if not 0 <= lo <= hi:
                raise InvalidParameterError(f"invalid offset bounds {(lo, hi)}")

    @classmethod
    def for_fusion(cls, **kw) -> "SynthParams":
        return cls(s_range=FUSION_S_RANGE, fusion=True, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["s_range"] = list(self.s_range)
        d["a_bounds"] = [list(p) for p in self.a_bounds]
        d["b_bounds"] = [list(p) for p in self.b_bounds]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthParams":
        d = dict(d)
        for key in ("a_bounds", "b_bounds"):
            if key in d:
                d[key] = tuple(tuple(p) for p in d[key])
        if "s_range" in d:
            d["s_range"] = tuple(d["s_range"])
        return cls(**d)


@dataclass
class SynthSample:
    short: np.ndarray
    long: np.ndarray
    target: np.ndarray
    meta: dict = field(default_factory=dict)


def add_shot_noise(img, photons_per_unit: float, rng: np.random.Generator) -> np.ndarray:
    """Replace each value ``v`` by ``Poisson(lam * v) / lam``."""
    img = np.asarray(img, dtype=np.float64)
    if img.min(initial=0.0) < 0:
        raise InvalidParameterError("shot noise needs non-negative intensities")
    if not photons_per_unit > 0:
        raise InvalidParameterError("photons_per_unit must be positive")
    counts = rng.poisson(img * photons_per_unit)
    return (counts / photons_per_unit).astype(DTYPE)


def make_target(I_lin, s: float, s_range=LSD2_S_RANGE) -> np.ndarray:
    lo, hi = s_range
    if not lo <= s <= hi:
        raise InvalidParameterError(f"s={s} outside {s_range}")
    return clip(scale(I_lin, s), 1.0)


def short_photons(params: SynthParams) -> float:
    # std of Poisson(lam*v)/lam is sqrt(v/lam): dividing lam by f^2 multiplies it by f
    return params.photons_per_unit / params.short_noise_factor ** 2


def make_short(sI, t: ChannelAffine, params: SynthParams, rng: np.random.Generator) -> np.ndarray:
    dark = affine_channels(sI, t)
    return clip(add_shot_noise(dark, short_photons(params), rng), 1.0)


def make_long(sI, field: PsfField | None, params: SynthParams, rng: np.random.Generator,
              blur_mode: str = "tiled") -> np.ndarray:
    """Blur the unclipped ``sI``, add shot noise, and only then clip at 1."""
    blurred = np.asarray(sI, dtype=DTYPE) if field is None else apply_blur(sI, field, blur_mode)
    return clip(add_shot_noise(blurred, params.photons_per_unit, rng), 1.0)


def draw_exposure_start(track: GyroTrack, shutter: ShutterSpec, rng: np.random.Generator) -> float:
    span = shutter.t_end - shutter.t_f
    latest = track.end - span
    if latest < track.start:
        raise InvalidParameterError(
            f"exposure window of {span:.4g} s does not fit in a {track.end - track.start:.4g} s track")
    return float(rng.uniform(track.start, latest))


def synthesize_pair(I_srgb, track: GyroTrack, K: Intrinsics, shutter: ShutterSpec,
                    params: SynthParams, rng: np.random.Generator, *, seed=None,
                    index=None) -> SynthSample:
    """Full generation pipeline for one image; outputs are gamma-encoded in [0, 1]."""
    img = as_image(I_srgb, check_range=True)
    height, width = img.shape[:2]
    if shutter.n_rows != height:
        shutter = ShutterSpec(shutter.t_f, shutter.t_e, shutter.t_r, height)

    I_lin = gamma_decode(img, params.gamma)
    s = float(rng.uniform(*params.s_range))
    affine = ChannelAffine.sample(rng, params.a_bounds, params.b_bounds)
    t_1 = draw_exposure_start(track, shutter, rng)
    shutter = shutter.with_start(t_1)

    sI = scale(I_lin, s)
    target_lin = clip(I_lin, 1.0) if params.fusion else make_target(I_lin, s, params.s_range)
    short = make_short(sI, affine, params, rng)
    if params.fusion:
        field, kstats = None, None
        long = clip(sI, 1.0)
    else:
        field = psf_field(track, K, shutter, (width, height), params.tile_size,
                          params.n_samples, params.max_radius)
        kstats = field.stats()
        long = make_long(sI, field, params, rng)

    meta = {
        "seed": seed, "index": index, "s": s, "a": list(affine.a), "b": list(affine.b),
        "t_1": t_1, "t_e": shutter.t_e, "t_r": shutter.t_r, "n_rows": shutter.n_rows,
        "photons_long": params.photons_per_unit, "photons_short": short_photons(params),
        "exposure_ratio": params.exposure_ratio, "gamma": params.gamma,
        "fusion": params.fusion, "width": width, "height": height,
        "intrinsics": {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy},
        "kernels": kstats,
    }
    return SynthSample(
        short=gamma_encode(short, params.gamma),
        long=gamma_encode(long, params.gamma),
        target=gamma_encode(target_lin, params.gamma),
        meta=meta,
    )


def sample_stem(index: int) -> str:
    return f"{index:06d}"


def write_sample(directory, index: int, sample: SynthSample, raw_f32: bool = False) -> None:
    """Write the three images and the meta record; meta goes last so it marks completion."""
    ext = ".f32" if raw_f32 else ".png"
    stem = sample_stem(index)
    for name in ("short", "long", "target"):
        save_image(f"{directory}/{stem}_{name}{ext}", getattr(sample, name))
    atomic_write_json(f"{directory}/{stem}_meta.json", sample.meta)


def write_manifest(directory, params: SynthParams, seed: int, sources: list[str],
                   count: int, extra: dict | None = None) -> None:
    manifest = {"format_version": FORMAT_VERSION, "seed": seed, "count": count,
                "params": params.to_dict(), "sources": sources}
    manifest.update(extra or {})
    atomic_write_json(f"{directory}/manifest.json", manifest)
