"""``lsd2`` command line: dataset generation, blur preview, training, evaluation, fusion.

Option values resolve as command-line flag, then ``--config`` JSON, then the
built-in default. The JSON document may set options at top level or inside a
section named after the subcommand; keys are the long option names with
dashes or underscores.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .fileio import atomic_write_json, center_crop_resize, list_images, load_image, save_image
from .gyro_blur import (GyroTrack, Intrinsics, OversizedBlurError, ShutterSpec, TrackRangeError,
                        apply_blur, psf_field, read_gyro_log, synthetic_shake)
from .imagecore import gamma_decode, gamma_encode, make_rng
from .metrics import UnmatchedFilesError, evaluate_dataset
from .neuralnet import (CheckpointError, PairDataset, TrainConfig,
                        TrainingError, fuse, fusion_forward, load_model, train, unet_forward,
                        write_loss_csv)
from .pair_synth import SynthParams, synthesize_pair, write_manifest, write_sample
from .scenes import random_scene

log = logging.getLogger("lsd2")

# rng stream ids under the master seed
STREAM_SAMPLE, STREAM_SCENE, STREAM_GYRO = 0, 2, 3

SYNTHETIC_GYRO_SECONDS = 60.0

DEFAULTS = {
    "common": {"seed": 0, "workers": 1},
    "gen": {"input": None, "output": None, "count": None, "height": 270, "width": 480,
            "gyro": None, "intrinsics": None, "alignment": None, "exposure_ms": 210.0,
            "readout_ms": 30.0, "fusion_mode": False, "raw_f32": False, "photons": 1000.0,
            "tile_size": 32, "samples": 256, "max_radius": 64, "shake_amplitude": 0.6},
    "blur": {"input": None, "output": None, "gyro": None, "intrinsics": None, "alignment": None,
             "exposure_ms": 210.0, "readout_ms": 30.0, "t_start": None, "tile_size": 32,
             "samples": 256, "max_radius": 64, "mode": "tiled", "dump_psfs": None,
             "shake_amplitude": 0.6},
    "train": {"data": None, "output": None, "arch": "lsd2", "lr": None, "epochs": None,
              "lr_halving_period": None, "batch_size": 4, "max_steps": None, "depth": 3,
              "base_features": 32, "resume": None},
    "eval": {"pred": None, "ref": None, "output": None, "color_match": False, "ref_suffix": ""},
    "fuse": {"short": None, "long": None, "checkpoint": None, "output": None, "dump_weights": None},
    "restore": {"short": None, "long": None, "data": None, "checkpoint": None, "output": None},
}

ARCH_DEFAULTS = {"lsd2": TrainConfig.lsd2(), "fusion": TrainConfig.fusion()}


class UsageError(Exception):
    """Bad option values or missing inputs, reported before any work starts."""


# ---------------------------------------------------------------- arguments

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="master random seed (default 0)")
    p.add_argument("--workers", type=int, help="worker processes (default 1)")
    p.add_argument("--config", help="JSON file with option values")


def _add_camera(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gyro", help="gyro log (t_ns,wx,wy,wz per line); synthetic shake if omitted")
    p.add_argument("--intrinsics", help="intrinsics JSON {fx, fy, cx, cy} at the output resolution")
    p.add_argument("--exposure-ms", "--te-ms", dest="exposure_ms", type=float,
                   help="long exposure time in ms (default 210)")
    p.add_argument("--readout-ms", type=float, help="rolling-shutter readout time in ms (default 30)")
    p.add_argument("--tile-size", type=int, help="PSF tile size in px (default 32)")
    p.add_argument("--samples", type=int, help="trajectory samples per PSF (default 256)")
    p.add_argument("--max-radius", type=int, help="largest allowed kernel radius in px (default 64)")
    p.add_argument("--shake-amplitude", type=float,
                   help="RMS angular rate of the synthetic shake in rad/s (default 0.6)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lsd2", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic (short, long, target) dataset",
                       argument_default=argparse.SUPPRESS)
    _add_common(p)
    p.add_argument("--input", help="directory of clean images; procedural scenes if omitted")
    p.add_argument("--output", help="dataset directory")
    p.add_argument("--count", type=int, help="number of samples (default: one per input, or 10)")
    p.add_argument("--height", type=int, help="output height (default 270)")
    p.add_argument("--width", type=int, help="output width (default 480)")
    _add_camera(p)
    p.add_argument("--fusion-mode", action="store_true",
                   help="fusion training data: s in [1/3, 3], unscaled targets, sharp long")
    p.add_argument("--raw-f32", action="store_true", help="write lossless .f32 instead of PNG")
    p.add_argument("--photons", type=float, help="long-exposure photons per unit intensity")

    p = sub.add_parser("blur", help="blur one image with a gyro-driven PSF field",
                       argument_default=argparse.SUPPRESS)
    _add_common(p)
    p.add_argument("--input", help="sharp input image")
    p.add_argument("--output", help="blurred output image")
    _add_camera(p)
    p.add_argument("--t-start", type=float, help="exposure start in seconds into the track")
    p.add_argument("--mode", choices=["tiled", "exact"], help="blur renderer (default tiled)")
    p.add_argument("--dump-psfs", help="write a picture of the tile kernels here")

    p = sub.add_parser("train", help="train the restoration or fusion network",
                       argument_default=argparse.SUPPRESS)
    _add_common(p)
    p.add_argument("--data", help="dataset directory from 'gen'")
    p.add_argument("--output", help="run directory (model.ckpt, loss.csv, loss.png)")
    p.add_argument("--arch", choices=["lsd2", "fusion"])
    p.add_argument("--lr", type=float, help="initial learning rate (lsd2 5e-5, fusion 2e-5)")
    p.add_argument("--epochs", type=int, help="epochs (lsd2 50, fusion 5)")
    p.add_argument("--lr-halving-period", type=int,
                   help="halve the learning rate every N epochs; 0 disables (lsd2 10, fusion 0)")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-steps", type=int, help="stop after this many optimizer steps")
    p.add_argument("--depth", type=int, help="U-Net levels (default 3)")
    p.add_argument("--base-features", type=int, help="U-Net first-level features (default 32)")
    p.add_argument("--resume", help="continue from a checkpoint written by an earlier run")

    p = sub.add_parser("eval", help="PSNR/SSIM of predictions against references",
                       argument_default=argparse.SUPPRESS)
    _add_common(p)
    p.add_argument("--pred", help="directory of predictions")
    p.add_argument("--ref", help="directory of references with matching names")
    p.add_argument("--output", help="report JSON path; a figure is written next to it")
    p.add_argument("--color-match", action="store_true",
                   help="scale prediction channels to the reference channel means first")
    p.add_argument("--ref-suffix", help="match NNN.png to NNN<suffix>.png, e.g. _target")

    p = sub.add_parser("fuse", help="fuse a short and a long image with a fusion checkpoint",
                       argument_default=argparse.SUPPRESS)
    _add_common(p)
    p.add_argument("--short")
    p.add_argument("--long", help="long exposure or its restored version")
    p.add_argument("--checkpoint")
    p.add_argument("--output")
    p.add_argument("--dump-weights", help="write the weight map as a grayscale PNG")

    p = sub.add_parser("restore", help="run a trained restoration network",
                       argument_default=argparse.SUPPRESS)
    _add_common(p)
    p.add_argument("--short")
    p.add_argument("--long")
    p.add_argument("--data", help="restore every sample of a dataset directory instead")
    p.add_argument("--checkpoint")
    p.add_argument("--output", help="output image, or directory with --data")
    return parser


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return doc


def resolve_options(command: str, explicit: dict) -> dict:
    """Merge defaults, the config file and explicit flags (highest precedence)."""
    known = {**DEFAULTS["common"], **DEFAULTS[command]}
    merged = dict(known)
    if explicit.get("config"):
        doc = _load_config(explicit["config"])
        section = doc.get(command, {})
        flat = {k: v for k, v in doc.items() if k not in DEFAULTS}
        for source in (flat, section):
            for key, value in source.items():
                key = key.replace("-", "_")
                if key not in known:
                    raise UsageError(f"config: unknown option {key!r} for '{command}'")
                merged[key] = value
    for key, value in explicit.items():
        if key in known:
            merged[key] = value
    if merged["workers"] < 1:
        raise UsageError("--workers must be >= 1")
    return merged


def _require(opts: dict, *names) -> None:
    missing = [n for n in names if opts.get(n) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _existing(path, what: str, is_dir: bool = False) -> Path:
    p = Path(path)
    if not (p.is_dir() if is_dir else p.is_file()):
        raise UsageError(f"{what} not found: {path}")
    return p


# ---------------------------------------------------------------- camera setup

def _load_track(opts: dict, seed: int) -> GyroTrack:
    alignment = opts.get("alignment")
    if opts.get("gyro"):
        return read_gyro_log(_existing(opts["gyro"], "gyro log"), alignment=alignment)
    track = synthetic_shake(make_rng(seed, STREAM_GYRO), duration=SYNTHETIC_GYRO_SECONDS,
                            amplitude=float(opts["shake_amplitude"]))
    if alignment is not None:
        track = GyroTrack(track.t, track.omega, alignment=alignment)
    return track


def _intrinsics(opts: dict, width: int, height: int) -> Intrinsics:
    if opts.get("intrinsics"):
        K = Intrinsics.load(_existing(opts["intrinsics"], "intrinsics file"))
        K.check_bounds(width, height)
        return K
    return Intrinsics.default_for(width, height)


def _shutter(opts: dict, height: int, t_start: float = 0.0) -> ShutterSpec:
    te = float(opts["exposure_ms"]) / 1000.0
    tr = float(opts["readout_ms"]) / 1000.0
    if te <= 0 or tr < 0:
        raise UsageError("exposure must be positive and readout non-negative")
    return ShutterSpec(t_start, te, tr, height)


# ---------------------------------------------------------------- gen

@dataclass(frozen=True)
class GenJob:
    index: int
    source: str | None
    output: str
    seed: int
    height: int
    width: int
    params: SynthParams
    opts: dict


_track_cache: dict = {}


def _job_track(opts: dict, seed: int) -> GyroTrack:
    key = (opts.get("gyro"), seed, opts.get("shake_amplitude"), json.dumps(opts.get("alignment")))
    if key not in _track_cache:
        _track_cache[key] = _load_track(opts, seed)
    return _track_cache[key]


def _run_gen_job(job: GenJob):
    """Synthesize and write one sample; returns (index, error message or None)."""
    try:
        if job.source is None:
            img = random_scene(make_rng(job.seed, STREAM_SCENE, job.index), job.height, job.width)
        else:
            img = center_crop_resize(load_image(job.source), job.height, job.width)
        track = _job_track(job.opts, job.seed)
        K = _intrinsics(job.opts, job.width, job.height)
        shutter = _shutter(job.opts, job.height)
        sample = synthesize_pair(img, track, K, shutter, job.params,
                                 make_rng(job.seed, STREAM_SAMPLE, job.index),
                                 seed=job.seed, index=job.index)
        if job.source is not None:
            sample.meta["source"] = Path(job.source).name
        write_sample(job.output, job.index, sample, raw_f32=job.opts["raw_f32"])
        return job.index, None
    except (OversizedBlurError, TrackRangeError, ValueError, OSError) as exc:
        return job.index, f"{type(exc).__name__}: {exc}"


def cmd_gen(opts: dict) -> int:
    _require(opts, "output")
    seed = int(opts["seed"])
    sources: list[Path] = []
    if opts.get("input"):
        sources = list_images(_existing(opts["input"], "input directory", is_dir=True))
        if not sources:
            raise UsageError(f"no images in {opts['input']}")
    count = opts["count"] if opts["count"] is not None else (len(sources) or 10)
    height, width = int(opts["height"]), int(opts["width"])
    if count < 1 or height < 1 or width < 1:
        raise UsageError("--count, --height and --width must be positive")
    if opts.get("gyro"):
        _existing(opts["gyro"], "gyro log")
    if opts.get("intrinsics"):
        _intrinsics(opts, width, height)

    base = dict(photons_per_unit=float(opts["photons"]), tile_size=int(opts["tile_size"]),
                n_samples=int(opts["samples"]), max_radius=int(opts["max_radius"]))
    params = SynthParams.for_fusion(**base) if opts["fusion_mode"] else SynthParams(**base)
    out = Path(opts["output"])
    out.mkdir(parents=True, exist_ok=True)

    job_opts = {k: opts[k] for k in ("gyro", "intrinsics", "alignment", "exposure_ms", "readout_ms",
                                     "shake_amplitude", "raw_f32")}
    jobs = [GenJob(i, str(sources[i % len(sources)]) if sources else None, str(out), seed,
                   height, width, params, job_opts) for i in range(count)]
    t0 = time.perf_counter()
    if opts["workers"] > 1:
        with ProcessPoolExecutor(opts["workers"]) as pool:
            results = list(pool.map(_run_gen_job, jobs, chunksize=max(1, count // (4 * opts["workers"]))))
    else:
        results = [_run_gen_job(j) for j in jobs]
    failures = [(i, msg) for i, msg in results if msg]
    for i, msg in failures:
        print(f"sample {i:06d} failed: {msg}", file=sys.stderr)

    done = sorted(i for i, msg in results if not msg)
    gyro = {"source": Path(opts["gyro"]).name} if opts.get("gyro") else {
        "source": "synthetic", "amplitude": float(opts["shake_amplitude"]),
        "duration_s": SYNTHETIC_GYRO_SECONDS}
    extra = {"samples": [f"{i:06d}" for i in done], "failed": [i for i, _ in failures],
             "height": height, "width": width, "gyro": gyro,
             "shutter": {"t_e": float(opts["exposure_ms"]) / 1000.0,
                         "t_r": float(opts["readout_ms"]) / 1000.0},
             "intrinsics": Path(opts["intrinsics"]).name if opts.get("intrinsics") else "default",
             "format": "f32" if opts["raw_f32"] else "png"}
    write_manifest(out, params, seed, [p.name for p in sources] or ["procedural"], len(done), extra)
    print(f"generated {len(done)}/{count} samples in {out} "
          f"({len(failures)} failed, {time.perf_counter() - t0:.1f} s)")
    return 1 if failures else 0


# ---------------------------------------------------------------- blur

def cmd_blur(opts: dict) -> int:
    _require(opts, "input", "output")
    img = load_image(_existing(opts["input"], "input image"))
    height, width = img.shape[:2]
    track = _load_track(opts, int(opts["seed"]))
    K = _intrinsics(opts, width, height)
    shutter = _shutter(opts, height, track.start if opts["t_start"] is None else float(opts["t_start"]))
    try:
        field = psf_field(track, K, shutter, (width, height), int(opts["tile_size"]),
                          int(opts["samples"]), int(opts["max_radius"]))
    except OversizedBlurError as exc:
        print(f"error: {exc} (required radius {exc.required_radius} px; "
              f"raise --max-radius or shorten the exposure)", file=sys.stderr)
        return 2
    except TrackRangeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = gamma_encode(np.clip(apply_blur(gamma_decode(img), field, opts["mode"]), 0.0, 1.0))
    save_image(opts["output"], out)
    stats = field.stats()
    if opts.get("dump_psfs"):
        from .plotting import psf_grid
        psf_grid(field, opts["dump_psfs"])
    print(f"wrote {opts['output']}: max trail {stats['max_trail_px']:.2f} px, "
          f"mean trail {stats['mean_trail_px']:.2f} px, kernel {stats['max_kernel_size']} px")
    return 0


# ---------------------------------------------------------------- train

def _train_config(opts: dict) -> TrainConfig:
    base = ARCH_DEFAULTS[opts["arch"]]
    halving = opts["lr_halving_period"]
    if halving is None:
        halving = base.lr_halving_period
    return TrainConfig(epochs=opts["epochs"] if opts["epochs"] is not None else base.epochs,
                       lr=opts["lr"] if opts["lr"] is not None else base.lr,
                       lr_halving_period=halving or None, batch_size=int(opts["batch_size"]),
                       seed=int(opts["seed"]), max_steps=opts["max_steps"])


def cmd_train(opts: dict) -> int:
    _require(opts, "data", "output")
    data = _existing(opts["data"], "dataset directory", is_dir=True)
    cfg = _train_config(opts)
    manifest = data / "manifest.json"
    if manifest.is_file():
        fusion = json.loads(manifest.read_text()).get("params", {}).get("fusion")
        if fusion is not None and bool(fusion) != (opts["arch"] == "fusion"):
            log.warning("dataset fusion flag is %s but --arch is %s", fusion, opts["arch"])
    dataset = PairDataset.from_directory(data)
    if len(dataset) == 0:
        raise UsageError(f"no samples in {data}")
    out = Path(opts["output"])
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.ckpt"
    model_config = ({"depth": int(opts["depth"]), "base_features": int(opts["base_features"])}
                    if opts["arch"] == "lsd2" else None)
    resume = _existing(opts["resume"], "checkpoint") if opts.get("resume") else None
    t0 = time.perf_counter()

    def report(epoch, loss):
        print(f"epoch {epoch + 1}/{cfg.epochs} lr {cfg.lr_at(epoch):.3g} loss {loss:.6g}", flush=True)

    try:
        result = train(dataset, opts["arch"], cfg, model_config=model_config, resume=resume,
                       checkpoint_path=ckpt, on_epoch=report)
    except TrainingError as exc:
        print(f"error: training failed: {exc}", file=sys.stderr)
        return 1
    write_loss_csv(out / "loss.csv", result.losses)
    from .plotting import loss_curve
    loss_curve(result.losses, out / "loss.png", f"{opts['arch']} training loss")
    print(f"trained {result.state.step} steps in {time.perf_counter() - t0:.1f} s; wrote {ckpt}")
    return 0


# ---------------------------------------------------------------- eval

def cmd_eval(opts: dict) -> int:
    _require(opts, "pred", "ref", "output")
    pred = _existing(opts["pred"], "prediction directory", is_dir=True)
    ref = _existing(opts["ref"], "reference directory", is_dir=True)
    try:
        report = evaluate_dataset(pred, ref, bool(opts["color_match"]), int(opts["workers"]),
                                  opts["ref_suffix"] or "")
    except UnmatchedFilesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if report.count == 0:
        print("error: no images to evaluate", file=sys.stderr)
        return 2
    out = Path(opts["output"])
    atomic_write_json(out, report.to_dict())
    from .plotting import metric_bars
    metric_bars(report, out.with_suffix(".png"))
    print(f"{report.count} images: mean PSNR {report.mean_psnr_db:.3f} dB, "
          f"mean SSIM {report.mean_ssim:.4f}{' (color matched)' if report.normalized else ''}")
    return 0


# ---------------------------------------------------------------- fuse / restore

def _pair_images(opts: dict):
    short = load_image(_existing(opts["short"], "short image"))
    long = load_image(_existing(opts["long"], "long image"))
    if short.shape != long.shape:
        raise UsageError(f"short {short.shape[1]}x{short.shape[0]} and long "
                         f"{long.shape[1]}x{long.shape[0]} differ in size")
    return short, long


def cmd_fuse(opts: dict) -> int:
    _require(opts, "short", "long", "checkpoint", "output")
    short, long = _pair_images(opts)
    model = load_model(_existing(opts["checkpoint"], "checkpoint"), "fusion")
    weight = fusion_forward(short, long, model)
    save_image(opts["output"], fuse(weight, short, long))
    if opts.get("dump_weights"):
        save_image(opts["dump_weights"], weight[..., None])
    print(f"wrote {opts['output']}: mean weight on long {float(weight.mean()):.3f}")
    return 0


def cmd_restore(opts: dict) -> int:
    _require(opts, "checkpoint", "output")
    model = load_model(_existing(opts["checkpoint"], "checkpoint"), "lsd2")
    if opts.get("data"):
        data = _existing(opts["data"], "dataset directory", is_dir=True)
        out = Path(opts["output"])
        out.mkdir(parents=True, exist_ok=True)
        stems = sorted(p.name[:-len("_meta.json")] for p in data.glob("*_meta.json"))
        for stem in stems:
            pair = {}
            for part in ("short", "long"):
                path = next((p for p in (data / f"{stem}_{part}.png", data / f"{stem}_{part}.f32")
                             if p.exists()), None)
                if path is None:
                    raise UsageError(f"{data}: missing {stem}_{part} image")
                pair[part] = load_image(path)
            ext = ".f32" if (data / f"{stem}_short.f32").exists() else ".png"
            save_image(out / f"{stem}{ext}", unet_forward(pair["short"], pair["long"], model))
        print(f"restored {len(stems)} samples into {out}")
        return 0
    _require(opts, "short", "long")
    short, long = _pair_images(opts)
    save_image(opts["output"], unet_forward(short, long, model))
    print(f"wrote {opts['output']}")
    return 0


COMMANDS = {"gen": cmd_gen, "blur": cmd_blur, "train": cmd_train, "eval": cmd_eval,
            "fuse": cmd_fuse, "restore": cmd_restore}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    explicit = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    try:
        opts = resolve_options(args.command, explicit)
        return COMMANDS[args.command](opts)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:  # includes a model-kind mismatch
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
