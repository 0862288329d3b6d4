"""Time the numba and numpy kernel backends side by side.

    python benchmarks/bench_kernels.py [--repeat 20]

Also times one end-to-end clone step on the 8x8 digits task under each
backend, running each in a subprocess so the STEALLAB_NUMBA flag takes effect.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from steallab.autodiff import _kernels as K

CASES = {
    # name: (shape, kernel, pad) -- shapes from the digits clone/generator at batch 64
    "im2col 64x8x8x8 k3": ((64, 8, 8, 8), 3, 1),
    "im2col 64x16x4x4 k3": ((64, 16, 4, 4), 3, 1),
    "im2col 64x32x8x8 k3": ((64, 32, 8, 8), 3, 1),
}

STEP_SNIPPET = """
import numpy as np, timeit
from steallab.autodiff import Tensor, SGD
from steallab.autodiff import functional as F
from steallab.models import ClassifierSpec, GeneratorSpec, build_classifier, build_generator
clone = build_classifier(ClassifierSpec((1, 8, 8), 10, "small", "conv"), 0)
gen = build_generator(GeneratorSpec((1, 8, 8), num_conv_blocks=3), 0)
opt = SGD(clone.parameters(), lr=0.01)
rng = np.random.default_rng(0)
def step():
    x = gen.generate(gen.sample_latent(64, rng))
    loss = F.softmax(clone.classify(x)).mean(axis=0).log().sum()
    loss.backward()
    gen.zero_grad()
    opt.step()
step()
print(min(timeit.repeat(step, number=5, repeat={repeat})) / 5)
"""


def _best(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=10, repeat=repeat)) / 10


def bench_kernels(repeat: int) -> list[tuple[str, float, float]]:
    rng = np.random.default_rng(0)
    rows = []
    for name, (shape, k, pad) in CASES.items():
        x = rng.normal(size=shape)
        cols = K.im2col_numpy(x, k, k, 1, pad)
        K.im2col_numba(x, k, k, 1, pad)
        K.col2im_numba(cols, shape, k, k, 1, pad)
        rows.append((name, _best(lambda: K.im2col_numpy(x, k, k, 1, pad), repeat),
                     _best(lambda: K.im2col_numba(x, k, k, 1, pad), repeat)))
        rows.append((name.replace("im2col", "col2im"),
                     _best(lambda: K.col2im_numpy(cols, shape, k, k, 1, pad), repeat),
                     _best(lambda: K.col2im_numba(cols, shape, k, k, 1, pad), repeat)))
    x = rng.normal(size=(64, 16, 4, 4))
    g = rng.normal(size=(64, 16, 8, 8))
    K.upsample_bilinear_numba(x, 2)
    K.upsample_bilinear_backward_numba(g, (4, 4), 2)
    rows.append(("bilinear up 64x16x4x4", _best(lambda: K.upsample_bilinear_numpy(x, 2), repeat),
                 _best(lambda: K.upsample_bilinear_numba(x, 2), repeat)))
    rows.append(("bilinear back 64x16x8x8", _best(lambda: K.upsample_bilinear_backward_numpy(g, (4, 4), 2), repeat),
                 _best(lambda: K.upsample_bilinear_backward_numba(g, (4, 4), 2), repeat)))
    return rows


def bench_step(flag: str, repeat: int) -> float:
    env = dict(os.environ, STEALLAB_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(repeat=repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if not K._HAVE_NUMBA:
        sys.exit("numba is not installed")
    print(f"{'kernel':28s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, t_np, t_nb in bench_kernels(args.repeat):
        print(f"{name:28s} {t_np * 1e3:10.3f} {t_nb * 1e3:10.3f} {t_np / t_nb:8.2f}")
    t_np, t_nb = bench_step("0", max(3, args.repeat // 4)), bench_step("1", max(3, args.repeat // 4))
    print(f"{'generator+clone step (N=64)':28s} {t_np * 1e3:10.3f} {t_nb * 1e3:10.3f} {t_np / t_nb:8.2f}")


if __name__ == "__main__":
    main()
