"""Random layer/weight generators and brute-force oracles shared by tests."""
from __future__ import annotations

import numpy as np

from spotsim.core import LayerKind, LayerSpec


def random_conv(rng, max_hw=32, max_c=8, max_f=160, kernels=(1, 2, 3, 5), square=False,
                strides=None, paddings=(0, 1)) -> LayerSpec:
    """Conv layer whose input size is chosen so the window tiles exactly."""
    while True:
        r = int(rng.choice(kernels))
        s = r if square else int(rng.choice(kernels))
        t_choices = strides if strides is not None else (1, 2, max(r, s))
        t = int(rng.choice(t_choices))
        p = int(rng.choice(paddings))
        c = int(rng.integers(1, max_c + 1))
        f = int(rng.integers(1, max_f + 1))
        oh = int(rng.integers(1, 12))
        ow = int(rng.integers(1, 12))
        h = (oh - 1) * t + r - 2 * p
        w = (ow - 1) * t + s - 2 * p
        if 1 <= h <= max_hw and 1 <= w <= max_hw:
            spec = LayerSpec(LayerKind.CONV, w, h, c, r, s, f, t, p)
            spec.validate()
            return spec


def block_sparse_weights(rng, f, cols, group_size=4, block_sparsity=0.5, lo=-4, hi=4):
    """Random int16 matrix with a fraction of all-zero G x 1 blocks."""
    w = rng.integers(lo, hi + 1, size=(f, cols)).astype(np.int16)
    nb = -(-f // group_size)
    dead = rng.random((nb, cols)) < block_sparsity
    w[np.repeat(dead, group_size, axis=0)[:f]] = 0
    return w


def triple_loop_matmul(a, b):
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m), dtype=np.int64)
    for i in range(n):
        for j in range(m):
            acc = 0
            for t in range(k):
                acc += int(a[i, t]) * int(b[t, j])
            out[i, j] = acc
    return out


def brute_block_bitmap(tile, bz):
    tile = np.asarray(tile)
    L, n = tile.shape
    nb = -(-L // bz)
    out = np.zeros((nb, n), dtype=bool)
    for c in range(n):
        for b in range(nb):
            out[b, c] = any(tile[i, c] != 0 for i in range(b * bz, min((b + 1) * bz, L)))
    return out


def brute_positions(m1, bitmap, bz):
    bitmap = np.asarray(bitmap, dtype=bool)
    return [j for j in range(len(m1)) if m1[j] and any(bitmap[j // bz, c] for c in range(bitmap.shape[1]))]


def has_overlap(layer) -> bool:
    """Some real (non-padding) input element falls inside two or more windows."""
    def max_cover(n, k, out):
        hits = np.zeros(n + 2 * layer.padding, dtype=np.int64)
        for o in range(out):
            hits[o * layer.stride : o * layer.stride + k] += 1
        return int(hits[layer.padding : layer.padding + n].max(initial=0))
    return max_cover(layer.in_w, layer.kernel_w, layer.out_w) * max_cover(layer.in_h, layer.kernel_h, layer.out_h) > 1
