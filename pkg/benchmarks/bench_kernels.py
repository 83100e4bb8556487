"""Time the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each case runs the public simulator entry point with the kernel module
swapped in place, so both backends go through identical call paths. The
first numba call (JIT compile or cache load) is excluded by a warm-up.
"""
import argparse
import time

import numpy as np

from spotsim import kernels
from spotsim.core import LayerKind, LayerSpec, random_feature_map
from spotsim.gemm import ArrayConfig, simulate_gemm
from spotsim.im2col import Im2ColConfig, simulate_im2col
from spotsim.sparse import encode_blocksparse


def _im2col_case(n, c):
    layer = LayerSpec(LayerKind.CONV, n, n, c, 3, 3, 1, 1, 1)
    x = random_feature_map(np.random.default_rng(0), layer.in_shape, zero_frac=0.5)
    return f"im2col 3x3 {c}x{n}x{n}", lambda: simulate_im2col(x, layer, Im2ColConfig())


def _gemm_case(f, length, ntiles):
    rng = np.random.default_rng(1)
    w = rng.integers(-8, 8, (f, length)).astype(np.int16)
    w[:, rng.random(length) < 0.5] = 0
    enc = encode_blocksparse(w, 4)
    tiles = [random_feature_map(rng, (length, 4), zero_frac=0.5) for _ in range(ntiles)]
    return f"gemm {f}x{length}, {ntiles} tiles", lambda: simulate_gemm(enc, tiles)


def bench(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    cases = [_im2col_case(32, 16), _im2col_case(64, 8), _gemm_case(128, 576, 64), _gemm_case(512, 288, 32)]
    impls = kernels.implementations()
    saved = kernels.assemble_patches, kernels.os_gemm
    print(f"{'case':32s}" + "".join(f"{name:>12s}" for name in impls) + f"{'speedup':>10s}")
    try:
        for label, fn in cases:
            times = {}
            for name, mod in impls.items():
                kernels.assemble_patches, kernels.os_gemm = mod.assemble_patches, mod.os_gemm
                times[name] = bench(fn, args.repeat)
            row = f"{label:32s}" + "".join(f"{t * 1e3:10.1f}ms" for t in times.values())
            if "numba" in times:
                row += f"{times['numpy'] / times['numba']:9.1f}x"
            print(row)
    finally:
        kernels.assemble_patches, kernels.os_gemm = saved


if __name__ == "__main__":
    main()
