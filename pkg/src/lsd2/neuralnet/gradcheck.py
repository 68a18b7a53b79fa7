"""Central finite-difference gradient checks."""
from __future__ import annotations

import numpy as np


def numerical_grad(f, x: np.ndarray, h: float = 1e-5, indices=None, pattern=None,
                   retries: int = 3) -> np.ndarray:
    """d f / d x by central differences; ``x`` is perturbed in place and restored.

    With ``indices`` only those flat positions are evaluated (others stay 0).
    ``pattern``, if given, returns a signature of the piecewise-linear branch
    taken by the last ``f()`` call (ReLU masks, pooling argmaxes). When the
    signature at ``x +- h`` differs from the one at ``x`` the difference
    straddles a kink, so ``h`` is reduced tenfold; after ``retries`` failures
    the entry is NaN.
    """
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in (range(flat.size) if indices is None else indices):
        old = flat[i]
        step = h
        if pattern is not None:
            f()
            base = pattern()
        for _ in range(retries + 1):
            flat[i] = old + step
            fp = f()
            sp = pattern() if pattern is not None else None
            flat[i] = old - step
            fm = f()
            sm = pattern() if pattern is not None else None
            flat[i] = old
            if pattern is None or (sp == base and sm == base):
                gflat[i] = (fp - fm) / (2 * step)
                break
            step /= 10
        else:
            gflat[i] = np.nan
    return grad


GRAD_FLOOR = 1e-6  # float64 central differences resolve ~1e-11 absolute


def max_relative_error(analytic, numeric, floor: float = GRAD_FLOOR) -> float:
    """max |a - n| / max(|a|, |n|, floor) over all elements."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    keep = np.isfinite(n)
    a, n = a[keep], n[keep]
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / den)) if a.size else 0.0


def sample_indices(size: int, k: int | None, rng: np.random.Generator):
    if k is None or k >= size:
        return np.arange(size)
    return np.sort(rng.choice(size, size=k, replace=False))


def directional_check(f, params: dict, grads: dict, rng: np.random.Generator,
                      h: float = 1e-6) -> float:
    """Relative error between ``(f(p + h u) - f(p - h u)) / 2h`` and ``grad . u``.

    ``u`` is one random unit direction spanning every parameter tensor at once,
    so the compared quantity has the magnitude of the full gradient norm.
    """
    dirs = {k: rng.standard_normal(v.shape) for k, v in params.items()}
    norm = np.sqrt(sum(float(np.sum(d * d)) for d in dirs.values()))
    dirs = {k: d / norm for k, d in dirs.items()}
    saved = {k: v.copy() for k, v in params.items()}
    try:
        for k in params:
            params[k][...] = saved[k] + h * dirs[k]
        fp = f()
        for k in params:
            params[k][...] = saved[k] - h * dirs[k]
        fm = f()
    finally:
        for k in params:
            params[k][...] = saved[k]
    numeric = (fp - fm) / (2 * h)
    analytic = sum(float(np.sum(grads[k] * dirs[k])) for k in params)
    return abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-300)


def activation_pattern(model) -> bytes:
    """Signature of the ReLU masks and pooling argmaxes cached by the last forward pass."""
    parts = []
    for kind, _, cache in model._caches:
        if kind == "relu":
            parts.append(np.packbits(cache).tobytes())
        elif kind == "pool":
            parts.append(cache[1].astype(np.uint8).tobytes())
    return b"".join(parts)


def network_errors(model, x: np.ndarray, y: np.ndarray, rng: np.random.Generator,
                   per_tensor: int | None = 20, h: float = 1e-4) -> dict[str, float]:
    """Max relative error per parameter tensor of the training loss of ``model`` on (x, y).

    ``per_tensor`` random entries of each tensor are checked (all if None).
    Entries whose perturbation crosses a ReLU or pooling kink are retried with
    smaller steps; with the branch fixed the loss is quadratic in a single
    weight, so the central difference is exact up to rounding.
    """
    from .train import loss_and_grads, objective

    _, grads = loss_and_grads(model, x, y)
    f = lambda: objective(model, x, y)  # noqa: E731
    pattern = lambda: activation_pattern(model)  # noqa: E731
    errors = {}
    for name, value in model.params.items():
        idx = sample_indices(value.size, per_tensor, rng)
        num = numerical_grad(f, value, h, idx, pattern=pattern)
        errors[name] = max_relative_error(grads[name].ravel()[idx], num.ravel()[idx])
    model._caches = []
    return errors
