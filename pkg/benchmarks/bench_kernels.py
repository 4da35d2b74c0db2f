"""Time the numba kernels against their pure-numpy fallbacks.

Kernel timings compare both flavours in one process. The end-to-end timing
runs a full multiscale detection in two subprocesses, one of them with
``ACONTRARIO_DISABLE_NUMBA=1``, so it exercises the real backend switch.

Usage::

    python benchmarks/bench_kernels.py [--size 512] [--repeat 5]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from acontrario import kernels
from acontrario.grid import build_kernels

DETECT_SNIPPET = """
import time
import numpy as np
from acontrario import backend, detect_multiscale
from acontrario import synth
img, _ = synth.render_frame(synth.benchmark_scene("A", 4, seed=0, size={size}))
detect_multiscale(img, (2.0, 3.0))
t0 = time.perf_counter()
for _ in range({repeat}):
    detect_multiscale(img, (2.0, 3.0))
print(backend(), (time.perf_counter() - t0) / {repeat})
"""


def best_of(func, repeat):
    func()  # warm-up, includes jit compilation
    return min(timeit.repeat(func, number=1, repeat=repeat))


def dp_inputs(rng, n_triples=200_000, n_pairs=20_000, lmax=16):
    head = np.sort(rng.integers(0, n_pairs, n_triples)).astype(np.int64)
    tail = rng.integers(-1, n_pairs, n_triples).astype(np.int64)
    acc = rng.exponential(1.0, n_triples)
    ok = rng.random(n_triples) < 0.9
    d_prev = np.where(rng.random((n_pairs, lmax)) < 0.5, rng.exponential(1.0, (n_pairs, lmax)), np.inf)
    return head, tail, acc, ok, d_prev, n_pairs, lmax


def kernel_rows(size, repeat):
    rng = np.random.default_rng(0)
    img = rng.normal(100.0, 10.0, (size, size))
    k = build_kernels(3.0, 2.0)
    m = k.margin
    inner, ring = np.ascontiguousarray(k.inner), np.ascontiguousarray(k.ring)
    excluded = np.zeros(img.shape, dtype=np.bool_)
    dp = dp_inputs(rng)
    cases = [
        ("mask_mean_map (disc R=3)", kernels._mask_mean_map_numba, kernels._mask_mean_map_numpy, (img, inner, m)),
        ("ring_mad_map (R=3, alpha=2)", kernels._ring_mad_map_numba, kernels._ring_mad_map_numpy,
         (img, ring, m, excluded)),
        ("dp_layer (200k triples)", kernels._dp_layer_numba, kernels._dp_layer_numpy, dp),
    ]
    rows = []
    for name, fast, slow, args in cases:
        t_fast = best_of(lambda: fast(*args), repeat)
        t_slow = best_of(lambda: slow(*args), repeat)
        rows.append((name, t_fast, t_slow))
    return rows


def detect_rows(size, repeat):
    rows = {}
    for disable in ("0", "1"):
        env = dict(os.environ, ACONTRARIO_DISABLE_NUMBA=disable)
        out = subprocess.run([sys.executable, "-c", DETECT_SNIPPET.format(size=size, repeat=repeat)],
                             env=env, capture_output=True, text=True, check=True).stdout.split()
        rows[out[0]] = float(out[1])
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, default=512, help="image side in pixels")
    parser.add_argument("--repeat", type=int, default=5, help="timed repetitions (best kept)")
    args = parser.parse_args(argv)

    print(f"{'kernel':32s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speed-up':>9s}")
    for name, t_fast, t_slow in kernel_rows(args.size, args.repeat):
        print(f"{name:32s} {t_fast:10.4f} {t_slow:10.4f} {t_slow / t_fast:8.1f}x")
    det = detect_rows(args.size, max(1, args.repeat // 2))
    print(f"{'detect_multiscale radii (2, 3)':32s} {det['numba']:10.4f} {det['numpy']:10.4f} "
          f"{det['numpy'] / det['numba']:8.1f}x")


if __name__ == "__main__":
    main()
