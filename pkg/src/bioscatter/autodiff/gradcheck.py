"""Central finite-difference check of analytic gradients (float64)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_MAX_RESAMPLE = 20


@dataclass
class GradCheckResult:
    max_rel_err: float = 0.0
    per_param: dict = field(default_factory=dict)
    checked: int = 0
    resampled: int = 0

    def __float__(self):
        return self.max_rel_err


def rel_err(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)


def _central(loss_fn, arr, idx, eps):
    orig = arr[idx]
    arr[idx] = orig + eps
    fp = float(loss_fn().data)
    arr[idx] = orig - eps
    fm = float(loss_fn().data)
    arr[idx] = orig
    return (fp - fm) / (2 * eps)


def grad_check_detail(build, eps: float = 1e-5, trials: int = 5, seed: int = 0,
                      max_coords: int | None = None) -> GradCheckResult:
    """Compare backward() against central differences.

    ``build(rng)`` returns ``(loss_fn, params)``: a zero-argument callable that
    evaluates a scalar Tensor and a dict of float64 leaf tensors it reads.
    For each trial a fresh instance is built. Every parameter tensor is
    checked at all coordinates, or at ``max_coords`` random ones.

    A coordinate whose difference quotients at ``eps`` and ``eps/2`` disagree
    sits on a kink (relu at 0, a max-pool tie) and is swapped for another
    random coordinate.
    """
    rng = np.random.default_rng(seed)
    result = GradCheckResult()
    for _ in range(trials):
        loss_fn, params = build(rng)
        for p in params.values():
            if p.data.dtype != np.float64:
                raise TypeError("gradient checks run in float64")
            p.zero_grad()
        loss = loss_fn()
        loss.backward()
        noise_floor = 1e-9 * max(1.0, abs(float(loss.data)))
        for name, p in params.items():
            analytic = p.grad.copy()
            flat = p.data.reshape(-1)
            size = flat.size
            if max_coords is None or max_coords >= size:
                candidates = list(range(size))
            else:
                candidates = list(rng.choice(size, size=max_coords, replace=False))
            worst = result.per_param.get(name, 0.0)
            for idx in candidates:
                for _attempt in range(_MAX_RESAMPLE):
                    num = _central(loss_fn, flat, idx, eps)
                    half = _central(loss_fn, flat, idx, eps / 2)
                    scale = max(abs(num), abs(half), 1e-12)
                    if abs(num - half) <= 1e-6 * scale + noise_floor:
                        break
                    result.resampled += 1
                    idx = int(rng.integers(size))
                else:
                    continue
                err = rel_err(float(analytic.reshape(-1)[idx]), num)
                worst = max(worst, err)
                result.checked += 1
            result.per_param[name] = worst
            result.max_rel_err = max(result.max_rel_err, worst)
    return result


def grad_check(build, eps: float = 1e-5, trials: int = 5, seed: int = 0, max_coords: int | None = None) -> float:
    """Worst relative error over all checked coordinates; see :func:`grad_check_detail`."""
    return grad_check_detail(build, eps, trials, seed, max_coords).max_rel_err
