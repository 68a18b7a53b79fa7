"""PSNR / SSIM scoring and the per-channel color matching used before scoring."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .fileio import IMAGE_SUFFIXES, load_image

PSNR_CAP = 99.0  # reported in place of +inf for identical images
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class ShapeMismatchError(ValueError):
    pass


class UnmatchedFilesError(ValueError):
    def __init__(self, only_pred, only_ref):
        self.only_pred = sorted(only_pred)
        self.only_ref = sorted(only_ref)
        lines = ["prediction and reference directories do not match"]
        lines += [f"  only in predictions: {n}" for n in self.only_pred]
        lines += [f"  only in references:  {n}" for n in self.only_ref]
        super().__init__("\n".join(lines))


def _pair(pred, ref):
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ShapeMismatchError(f"shape mismatch: {pred.shape} vs {ref.shape}")
    return pred, ref


def psnr(pred, ref, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` when the images are identical."""
    pred, ref = _pair(pred, ref)
    # extended precision keeps e.g. a constant 0.1 error from rounding to 0.010000000000000002
    diff = (pred - ref).astype(np.longdouble)
    mse = np.mean(diff * diff)
    if mse == 0:
        return math.inf
    return float(10 * np.log10(np.longdouble(max_val) ** 2 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable 'valid' filtering over the first two axes
    n = len(g)
    x = sliding_window_view(x, n, axis=0) @ g
    return sliding_window_view(x, n, axis=1) @ g


def ssim(pred, ref, data_range: float = 1.0) -> float:
    """Single-scale SSIM, Gaussian 11x11 window (sigma 1.5), averaged over channels."""
    pred, ref = _pair(pred, ref)
    if pred.ndim == 2:
        pred, ref = pred[..., None], ref[..., None]
    if pred.shape[0] < SSIM_WINDOW or pred.shape[1] < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    g = gaussian_window()
    mu_x = _filter_valid(pred, g)
    mu_y = _filter_valid(ref, g)
    sxx = _filter_valid(pred * pred, g) - mu_x * mu_x
    syy = _filter_valid(ref * ref, g) - mu_y * mu_y
    sxy = _filter_valid(pred * ref, g) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    per_channel = np.mean(num / den, axis=(0, 1))
    return float(np.mean(per_channel))


def channel_mean_match(img, ref) -> np.ndarray:
    """Scale each channel of ``img`` so its mean equals that of ``ref``, then clip to [0, 1]."""
    img, ref = _pair(img, ref)
    m_img = img.reshape(-1, img.shape[-1]).mean(axis=0)
    m_ref = ref.reshape(-1, ref.shape[-1]).mean(axis=0)
    gain = np.where(m_img > 0, m_ref / np.where(m_img > 0, m_img, 1.0), 1.0)
    return np.clip(img * gain, 0.0, 1.0).astype(np.float32)


@dataclass
class ImageScore:
    name: str
    psnr_db: float
    ssim: float
    exact: bool = False


@dataclass
class MetricReport:
    images: list[ImageScore] = field(default_factory=list)
    normalized: bool = False

    @property
    def count(self) -> int:
        return len(self.images)

    @property
    def mean_psnr_db(self) -> float:
        return math.fsum(s.psnr_db for s in self.images) / self.count if self.images else math.nan

    @property
    def mean_ssim(self) -> float:
        return math.fsum(s.ssim for s in self.images) / self.count if self.images else math.nan

    @property
    def all_exact(self) -> bool:
        return bool(self.images) and all(s.exact for s in self.images)

    def to_dict(self) -> dict:
        return {
            "images": [asdict(s) for s in self.images],
            "mean_psnr_db": self.mean_psnr_db,
            "mean_ssim": self.mean_ssim,
            "count": self.count,
            "normalized": self.normalized,
            "all_exact": self.all_exact,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        rep = cls([ImageScore(**s) for s in d["images"]], bool(d["normalized"]))
        if rep.count != d["count"]:
            raise ValueError("report count does not match its image records")
        return rep


def score_pair(name: str, pred, ref, normalize: bool = False) -> ImageScore:
    if normalize:
        pred = channel_mean_match(pred, ref)
    p = psnr(pred, ref)
    exact = math.isinf(p)
    return ImageScore(name, PSNR_CAP if exact else p, ssim(pred, ref), exact)


def _score_files(args):
    name, pred_path, ref_path, normalize = args
    return score_pair(name, load_image(pred_path), load_image(ref_path), normalize)


def _image_files(directory, suffix: str = "") -> dict:
    out = {}
    for p in Path(directory).iterdir():
        if p.suffix.lower() in IMAGE_SUFFIXES and p.stem.endswith(suffix):
            out[p.stem[:len(p.stem) - len(suffix)] + p.suffix] = p
    return out


def evaluate_dataset(pred_dir, ref_dir, normalize: bool = False, workers: int = 1,
                     ref_suffix: str = "") -> MetricReport:
    """Score every prediction against the reference with the same name.

    With ``ref_suffix`` only references whose stem ends in it are used, and
    ``NNN.png`` is matched to ``NNN<ref_suffix>.png``.
    """
    pred = _image_files(pred_dir)
    ref = _image_files(ref_dir, ref_suffix)
    if set(pred) != set(ref):
        raise UnmatchedFilesError(set(pred) - set(ref), set(ref) - set(pred))
    jobs = [(n, pred[n], ref[n], normalize) for n in sorted(pred)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            scores = list(pool.map(_score_files, jobs))
    else:
        scores = [_score_files(j) for j in jobs]
    return MetricReport(scores, normalize)
