"""Compiled vs numpy kernels: raw kernel timings and one U-Net training step.

    python3 bench/bench_kernels.py [--repeat 20]
"""
import argparse
import timeit

import numpy as np

from bioscatter import _kernels
from bioscatter.autodiff import Adam, Tensor, bce_with_logits
from bioscatter.unet import UNetConfig, build_unet


def _cases(rng):
    x = rng.standard_normal((4, 16, 64, 64)).astype(np.float32)
    cols = _kernels.BACKENDS["python"].im2col(x, 3, 3)
    idx = _kernels.BACKENDS["python"].maxpool2_forward(x)[1]
    g = rng.standard_normal(idx.shape).astype(np.float32)
    return {
        "im2col 4x16x64x64 k3": lambda k: k.im2col(x, 3, 3),
        "col2im 4x16x64x64 k3": lambda k: k.col2im(cols, 16, 64, 64, 3, 3),
        "maxpool2 fwd 4x16x64x64": lambda k: k.maxpool2_forward(x),
        "maxpool2 bwd 4x16x32x32": lambda k: k.maxpool2_backward(g, idx),
    }


def _train_step(rng):
    x = Tensor(rng.random((4, 1, 64, 64)).astype(np.float32))
    t = (rng.random((4, 1, 64, 64)) > 0.9).astype(np.float32)
    model = build_unet(UNetConfig(depth=2, base_channels=8), seed=0)
    opt = Adam(model.params)

    def step():
        opt.zero_grad()
        loss = bce_with_logits(model.forward(x), t)
        loss.backward()
        opt.step()

    return step


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    names = sorted(_kernels.BACKENDS)
    print(f"backends: {', '.join(names)} (default {_kernels.BACKEND})")
    print(f"{'case':<28}" + "".join(f"{n + ' ms':>14}" for n in names) + f"{'speedup':>10}")
    rows = [(label, fn) for label, fn in _cases(rng).items()]
    step = _train_step(rng)
    rows.append(("unet train step 4x64x64", lambda k: step()))
    default = _kernels.BACKEND
    try:
        for label, fn in rows:
            times = {}
            for name in names:
                _kernels.use(name)
                kernel = _kernels.BACKENDS[name]
                fn(kernel)  # warm-up
                times[name] = 1e3 * min(timeit.repeat(lambda: fn(kernel), number=1, repeat=args.repeat))
            speed = times["python"] / times["cython"] if "cython" in times else float("nan")
            print(f"{label:<28}" + "".join(f"{times[n]:>14.3f}" for n in names) + f"{speed:>9.2f}x")
    finally:
        _kernels.use(default)


if __name__ == "__main__":
    main()
