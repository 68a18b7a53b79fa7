"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict that the terminal summary prints as
``criterion N PASS|FAIL: ...``. Run with ``pytest tests/test_acceptance.py``
or ``python tests/test_acceptance.py``.
"""
import time

import numpy as np
import pytest

from lsd2 import cli, metrics
from lsd2.gyro_blur import (Intrinsics, ShutterSpec, apply_blur, constant_track,
                            homography_at, psf_at, psf_field, row_start_time, synthetic_shake)
from lsd2.imagecore import ChannelAffine, make_rng
from lsd2.neuralnet import (FusionNet, FusionNetConfig, PairDataset, TrainConfig, UNet,
                            UNetConfig, fuse, fusion_forward, layers as L, train, unet_forward)
from lsd2.neuralnet.gradcheck import max_relative_error, network_errors, numerical_grad
from lsd2.pair_synth import SynthParams, make_long, make_short, synthesize_pair
from lsd2.scenes import random_scene

from oracles import ssim_oracle


@pytest.fixture
def verdict(record_property):
    def record(n: int, ok: bool, claim: str, measured: str):
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {claim} [{measured}]"
        record_property("acceptance", line)
        print(line)
        assert ok, line
    return record


# ---------------------------------------------------------------- 1

def test_toy_restoration_beats_both_inputs(verdict):
    size = 64
    K = Intrinsics.default_for(size, size)
    shutter = ShutterSpec(0.0, 0.21, 0.03, size)
    track = synthetic_shake(make_rng(7, 999), duration=10.0, amplitude=0.6)
    samples = []
    for i in range(30):
        rng = make_rng(7, i)
        s = synthesize_pair(random_scene(rng, size, size), track, K, shutter, SynthParams(), rng)
        samples.append((s.short, s.long, s.target))

    t0 = time.perf_counter()
    cfg = TrainConfig(epochs=10 ** 6, lr=1e-3, lr_halving_period=None, batch_size=2, seed=0,
                      max_steps=1500)
    model = train(PairDataset(samples), "lsd2", cfg,
                  model_config={"depth": 2, "base_features": 16}).model
    minutes = (time.perf_counter() - t0) / 60

    out, noisy, blurred = [], [], []
    for short, long, target in samples:
        out.append(metrics.psnr(unet_forward(short, long, model), target))
        # the short frame is dark and tinted: compare it after matching channel means
        noisy.append(metrics.psnr(metrics.channel_mean_match(short, long), target))
        blurred.append(metrics.psnr(long, target))
    out, noisy, blurred = np.mean(out), np.mean(noisy), np.mean(blurred)
    ok = out >= noisy + 2 and out >= blurred + 2 and minutes < 15
    verdict(1, ok, "toy U-Net output PSNR >= both inputs + 2 dB, 1500 steps, < 15 min",
            f"output {out:.2f} dB, noisy {noisy:.2f} dB, blurred {blurred:.2f} dB, {minutes:.1f} min")


# ---------------------------------------------------------------- 2

def _op_errors(rng) -> dict:
    def proj_check(fwd, params_grads, out_shape, h=1e-4):
        proj = rng.standard_normal(out_shape)
        f = lambda: float(np.sum(fwd() * proj))  # noqa: E731
        grads = params_grads(proj)
        return max(max_relative_error(g, numerical_grad(f, p, h)) for p, g in grads)

    def spaced(shape):
        # distinct values far from 0 and from each other relative to h
        v = (rng.permutation(int(np.prod(shape))) + 1.0) * 0.01 * rng.choice([-1, 1], int(np.prod(shape)))
        return v.reshape(shape)

    errs = {}
    for k in (1, 3):
        x = rng.standard_normal((2, 3, 6, 6))
        w = rng.standard_normal((4, 3, k, k))
        b = rng.standard_normal(4)
        errs[f"conv{k}x{k}"] = proj_check(
            lambda: L.conv2d_forward(x, w, b)[0],
            lambda p: zip((x, w, b), L.conv2d_backward(p, L.conv2d_forward(x, w, b)[1])),
            (2, 4, 6, 6))
    x = spaced((2, 3, 4, 4))
    errs["relu"] = proj_check(lambda: L.relu_forward(x)[0],
                              lambda p: [(x, L.relu_backward(p, L.relu_forward(x)[1]))], x.shape)
    z = rng.standard_normal((2, 1, 4, 4)) * 3
    errs["sigmoid"] = proj_check(lambda: L.sigmoid_forward(z)[0],
                                 lambda p: [(z, L.sigmoid_backward(p, L.sigmoid_forward(z)[1]))], z.shape)
    xp = spaced((2, 3, 4, 6))
    errs["maxpool"] = proj_check(
        lambda: L.maxpool2x2_forward(xp)[0],
        lambda p: [(xp, L.maxpool2x2_backward(p, L.maxpool2x2_forward(xp)[1]))], (2, 3, 2, 3))
    xu = rng.standard_normal((2, 3, 3, 2))
    errs["upsample"] = proj_check(lambda: L.upsample2x_forward(xu)[0],
                                  lambda p: [(xu, L.upsample2x_backward(p, xu.shape))], (2, 3, 6, 4))
    pred, target = rng.random((2, 3, 4, 4)), rng.random((2, 3, 4, 4))
    _, dpred = L.l2_loss(pred, target)
    errs["l2"] = max_relative_error(dpred, numerical_grad(lambda: L.l2_loss(pred, target)[0], pred, 1e-4))
    wmap, short, long = rng.random((2, 1, 4, 4)), rng.random((2, 3, 4, 4)), rng.random((2, 3, 4, 4))
    errs["fuse"] = proj_check(lambda: L.fuse_forward(wmap, short, long)[0],
                              lambda p: [(wmap, L.fuse_backward(p, (short, long)))], short.shape)
    return errs


def test_gradient_checks(verdict):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    errs = _op_errors(rng)
    unet = UNet(UNetConfig(depth=2, base_features=4), seed=3, dtype=np.float64)
    x, y = rng.random((1, 6, 8, 8)), rng.random((1, 3, 8, 8))
    errs["unet"] = max(network_errors(unet, x, y, rng, per_tensor=12).values())
    fnet = FusionNet(FusionNetConfig(features=(4, 4, 6, 6, 4, 4)), seed=3, dtype=np.float64)
    errs["fusion net"] = max(network_errors(fnet, x, y, rng, per_tensor=12).values())
    seconds = time.perf_counter() - t0
    worst = max(errs, key=errs.get)
    ok = errs[worst] < 1e-5 and seconds < 60
    verdict(2, ok, f"{len(errs)} ops and both networks, float64 max rel err < 1e-5, < 1 min",
            f"worst {worst} {errs[worst]:.2e}, {seconds:.1f} s")


# ---------------------------------------------------------------- 3

def test_psf_invariants(verdict):
    rng = np.random.default_rng(3)
    size = 64
    K = Intrinsics.default_for(size, size)
    tracks = [synthetic_shake(np.random.default_rng(100 + i), 1.0, amplitude=rng.uniform(0.05, 0.8))
              for i in range(50)]
    worst_sum, worst_h = 0.0, 0.0
    for _ in range(1000):
        track = tracks[rng.integers(len(tracks))]
        t_e, t_r = rng.uniform(0.01, 0.25), rng.uniform(0.0, 0.05)
        shutter = ShutterSpec(rng.uniform(0.0, 1.0 - t_e - t_r), t_e, t_r, size)
        x = rng.uniform(0, size - 1, size=2)
        k = psf_at(track, K, shutter, x, n_samples=64)
        worst_sum = max(worst_sum, abs(float(k.weights.sum()) - 1.0))
        R1 = track.attitude(row_start_time(shutter, x[1]))
        worst_h = max(worst_h, float(np.abs(homography_at(K, R1, R1) - np.eye(3)).max()))

    still = constant_track([0.0, 0.0, 0.0], 1.0)
    deltas = all(
        np.array_equal(psf_at(still, K, ShutterSpec(0.1, te, tr, size), (cx, cy)).weights, [[1.0]])
        for te, tr in ((0.05, 0.0), (0.2, 0.03)) for cx, cy in ((0, 0), (31.5, 20), (63, 63)))
    ok = worst_sum < 1e-6 and deltas and worst_h < 1e-12
    verdict(3, ok, "1000 random PSFs sum to 1 within 1e-6, still camera gives deltas, H(t1) = I",
            f"max |sum-1| {worst_sum:.1e}, deltas {deltas}, max |H(t1)-I| {worst_h:.1e}")


# ---------------------------------------------------------------- 4

def test_global_shutter_rows_share_psf(verdict):
    size = 64
    K = Intrinsics.default_for(size, size)
    track = synthetic_shake(np.random.default_rng(4), 1.0, amplitude=0.6)
    worst, rolling = 0.0, 0.0
    for col in (0.0, 20.0, 47.5, 63.0):
        for t_r, store in ((0.0, "global"), (0.03, "rolling")):
            sh = ShutterSpec(0.3, 0.2, t_r, size)
            ks = [psf_at(track, K, sh, (col, 31.5), timing_row=y) for y in range(size)]
            r = max(k.radius for k in ks)
            ref = ks[0].padded(r)
            diff = max(float(np.abs(k.padded(r) - ref).max()) for k in ks)
            if store == "global":
                worst = max(worst, diff)
            else:
                rolling = max(rolling, diff)
    ok = worst < 1e-9
    verdict(4, ok, "zero readout: per-row PSFs at a fixed column agree within 1e-9",
            f"max weight diff {worst:.1e} (with 30 ms readout: {rolling:.2e})")


# ---------------------------------------------------------------- 5

def test_noise_statistics(verdict):
    img = np.full((1000, 1000, 1), 0.5)
    img3 = np.repeat(img, 3, axis=2)
    params = SynthParams(photons_per_unit=1000.0)
    long = make_long(img3, None, params, np.random.default_rng(50)).astype(np.float64)
    short = make_short(img3, ChannelAffine.identity(), params, np.random.default_rng(51)).astype(np.float64)
    n = long.size
    sigma_long = np.sqrt(0.5 / 1000.0) / np.sqrt(n)
    sigma_short = np.sqrt(0.5 / (1000.0 / 16)) / np.sqrt(n)
    z_long = abs(long.mean() - 0.5) / sigma_long
    z_short = abs(short.mean() - 0.5) / sigma_short
    ratio = short.std() / long.std()
    ok = z_long < 3 and z_short < 3 and abs(ratio - 4.0) < 0.2
    verdict(5, ok, "constant 0.5, lambda=1000: means within 3 sigma, std ratio within 5% of 4",
            f"z long {z_long:.2f}, z short {z_short:.2f}, ratio {ratio:.4f}")


# ---------------------------------------------------------------- 6

def test_metric_oracles(verdict):
    rng = np.random.default_rng(6)
    ref = rng.random((32, 32, 3)) * 0.9
    p_offset = metrics.psnr(ref + 0.1, ref)
    p_const = metrics.psnr(np.full((8, 8, 3), 0.1), np.zeros((8, 8, 3)))
    self_ok = all(metrics.ssim(x, x) == 1.0 for x in rng.random((5, 32, 32, 3)))
    worst = 0.0
    for _ in range(20):
        a, b = rng.random((32, 32, 3)), rng.random((32, 32, 3))
        b = np.clip(0.6 * a + 0.4 * b, 0, 1)
        worst = max(worst, abs(metrics.ssim(a, b) - ssim_oracle(a, b)))
    ok = p_offset == 20.0 and p_const == 20.0 and self_ok and worst < 1e-6
    verdict(6, ok, "PSNR of 0.1 offset == 20 dB, SSIM(x,x) == 1, SSIM oracle within 1e-6",
            f"PSNR {p_offset!r}/{p_const!r}, SSIM self {self_ok}, oracle diff {worst:.1e}")


# ---------------------------------------------------------------- 7

def test_fusion(verdict):
    rng = np.random.default_rng(7)
    short, long = rng.random((16, 16, 3)).astype(np.float32), rng.random((16, 16, 3)).astype(np.float32)
    ident = (np.array_equal(fuse(np.ones((16, 16), np.float32), short, long), long)
             and np.array_equal(fuse(np.zeros((16, 16), np.float32), short, long), short))

    size = 64
    K = Intrinsics.default_for(size, size)
    track = synthetic_shake(make_rng(7, 999), duration=10.0, amplitude=0.6)
    params = SynthParams.for_fusion()
    samples = []
    for i in range(100):
        r = make_rng(7, i)
        s = synthesize_pair(random_scene(r, size, size), track, K,
                            ShutterSpec(0.0, 0.21, 0.03, size), params, r)
        samples.append((s.short, s.long, s.target))
    model = train(PairDataset(samples), "fusion", TrainConfig.fusion(batch_size=1)).model
    fused, p_short, p_long = [], [], []
    for s, l, t in samples:
        fused.append(metrics.psnr(fuse(fusion_forward(s, l, model), s, l), t))
        p_short.append(metrics.psnr(s, t))
        p_long.append(metrics.psnr(l, t))
    fused, p_short, p_long = np.mean(fused), np.mean(p_short), np.mean(p_long)
    ok = ident and fused > p_short and fused > p_long
    verdict(7, ok, "fuse W=1 -> long, W=0 -> short bit-exact; toy fusion net beats both inputs",
            f"identities {ident}, fused {fused:.2f} dB, short {p_short:.2f} dB, long {p_long:.2f} dB")


# ---------------------------------------------------------------- 8

def test_gen_determinism(verdict, tmp_path):
    t0 = time.perf_counter()
    dumps = []
    for run, workers in enumerate((1, 1, 8, 8)):
        out = tmp_path / f"run{run}"
        rc = cli.main(["gen", "--seed", "7", "--count", "20", "--height", "64", "--width", "64",
                       "--workers", str(workers), "--output", str(out)])
        assert rc == 0
        dumps.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    seconds = time.perf_counter() - t0
    same = all(d == dumps[0] for d in dumps[1:])
    ok = same and len(dumps[0]) == 20 * 4 + 1 and seconds < 120
    verdict(8, ok, "gen --seed 7 --count 20 twice with 1 and 8 workers is byte-identical, < 2 min",
            f"identical {same}, {len(dumps[0])} files each, {seconds:.1f} s for all four runs")


# ---------------------------------------------------------------- 9

def test_blur_before_clip(verdict):
    size = 64
    scene = np.full((size, size, 3), 0.02)
    scene[20:24, 20:24] = 4.0    # highlight well above the clipping point
    scene[40:42, 30:44] = 2.5
    track = constant_track([0.4, 0.9, 0.2], 1.0)
    field = psf_field(track, Intrinsics.default_for(size, size), ShutterSpec(0.1, 0.15, 0.03, size),
                      (size, size), tile_size=16)
    quiet = SynthParams(photons_per_unit=1e12)
    ours = make_long(scene, field, quiet, np.random.default_rng(9)).astype(np.float64)
    clip_first = make_long(np.clip(scene, 0, 1), field, quiet, np.random.default_rng(9)).astype(np.float64)
    background = apply_blur(np.full_like(scene, 0.02), field)
    trail = (clip_first > background + 0.01) & (scene < 1.0)
    frac = float(np.mean(ours[trail] > clip_first[trail]))
    ok = trail.sum() > 0 and frac >= 0.9
    verdict(9, ok, "blur-then-clip strictly brighter than clip-then-blur on >= 90% of trail pixels",
            f"{frac * 100:.1f}% of {int(trail.sum())} trail values")


# ---------------------------------------------------------------- 10

def test_tiled_matches_exact(verdict):
    size = 64
    K = Intrinsics.default_for(size, size)
    maes = []
    for k in range(10):
        track = synthetic_shake(make_rng(10, k), 1.0, amplitude=0.6)
        img = random_scene(make_rng(10, 100 + k), size, size)
        field = psf_field(track, K, ShutterSpec(0.2, 0.21, 0.03, size), (size, size), tile_size=8)
        maes.append(float(np.mean(np.abs(apply_blur(img, field, "tiled").astype(np.float64)
                                          - apply_blur(img, field, "exact")))))
    ok = max(maes) < 5e-3
    verdict(10, ok, "tiled vs exact blur MAE < 5e-3 at 64x64, tile 8, 10 tracks",
            f"max MAE {max(maes):.2e}, mean {np.mean(maes):.2e}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
