"""Hardware Im2Col unit: input controller, ring of patch units, output controller.

Patches are processed in row-major order. Patch ``(py, px)`` goes to PU
``px % pu_count``; the PUs work on ``pu_count`` horizontally adjacent
patches at a time (one *round*), so a round is ``(py, px // pu_count)``.
Every element of a patch comes from exactly one source:

PAD       outside the input, generated as zero by the input controller
NEIGHBOR  horizontal overlap with the patch to the left, forwarded over
          the ring (the wrap link carries it across round boundaries)
RESERVED  vertical overlap with the patch above (same column, hence same
          PU), kept in that PU's reserved buffer if the column got a slot
NEW       fetched from SRAM

Priority is PAD > NEIGHBOR > RESERVED > NEW.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import LayerKind, LayerSpec, as_int16, trunc_div
from .kernels import NEIGHBOR, NEW, PAD, RESERVED

SOURCE_NAMES = {NEW: "NEW", NEIGHBOR: "NEIGHBOR", RESERVED: "RESERVED", PAD: "PAD"}


@dataclass(frozen=True)
class Im2ColConfig:
    """``None`` buffer capacities mean unbounded. ``reuse=False`` turns the
    unit into a naive gatherer that fetches every element from SRAM."""

    pu_count: int = 4
    reserved_buf_cap: int | None = None
    neighbor_buf_cap: int | None = None
    sram_bandwidth: int = 4
    reuse: bool = True
    allow_bypass: bool = True

    def __post_init__(self):
        if self.pu_count < 1:
            raise ValueError("pu_count must be >= 1")
        if self.sram_bandwidth < 1:
            raise ValueError("sram_bandwidth must be >= 1")
        for cap in (self.reserved_buf_cap, self.neighbor_buf_cap):
            if cap is not None and cap < 0:
                raise ValueError("buffer capacities must be >= 0")


@dataclass
class Im2ColStats:
    sram_reads: int = 0
    neighbor_forwards: int = 0
    reserved_hits: int = 0
    padding_zeros: int = 0
    elements_emitted: int = 0
    reserve_writes: int = 0
    buffer_accesses: int = 0
    metadata_ops: int = 0
    cycles: int = 0
    patches: int = 0
    rounds: int = 0
    bypass: bool = False
    # per-patch (NEW, NEIGHBOR, RESERVED, PAD) counts and per-round timing inputs
    patch_sources: np.ndarray = field(default=None, repr=False)
    round_new: np.ndarray = field(default=None, repr=False)
    round_assembly: np.ndarray = field(default=None, repr=False)
    round_last_patch: np.ndarray = field(default=None, repr=False)

    COUNTERS = (
        "sram_reads", "neighbor_forwards", "reserved_hits", "padding_zeros",
        "elements_emitted", "reserve_writes", "buffer_accesses", "metadata_ops",
        "cycles", "patches", "rounds",
    )

    def counters(self) -> dict:
        return {k: int(getattr(self, k)) for k in self.COUNTERS}

    def __add__(self, other: "Im2ColStats") -> "Im2ColStats":
        out = Im2ColStats(**{k: getattr(self, k) + getattr(other, k) for k in self.COUNTERS})
        out.bypass = self.bypass and other.bypass
        return out


@dataclass(frozen=True)
class PatchSchedule:
    py: np.ndarray
    px: np.ndarray
    pu: np.ndarray
    group: np.ndarray
    round_id: np.ndarray  # dense 0..rounds-1 in processing order


def patch_schedule(layer: LayerSpec, cfg: Im2ColConfig, p0: int = 0, p1: int | None = None) -> PatchSchedule:
    p1 = layer.n_patches if p1 is None else p1
    p = np.arange(p0, p1)
    py, px = np.divmod(p, layer.out_w)
    group = px // cfg.pu_count
    ngroups = -(-layer.out_w // cfg.pu_count)
    key = py * ngroups + group
    _, round_id = np.unique(key, return_inverse=True)
    return PatchSchedule(py, px, px % cfg.pu_count, group, round_id.reshape(-1))


def _neighbor_link_ok(layer: LayerSpec, cfg: Im2ColConfig) -> bool:
    if not cfg.reuse:
        return False
    overlap = layer.channels * layer.kernel_h * max(layer.kernel_w - layer.stride, 0)
    return cfg.neighbor_buf_cap is None or overlap <= cfg.neighbor_buf_cap


def reserve_demand(layer: LayerSpec, cfg: Im2ColConfig) -> np.ndarray:
    """Elements each column's reserved-buffer slot must hold (per column px)."""
    C, R, S, T, P, W = layer.channels, layer.kernel_h, layer.kernel_w, layer.stride, layer.padding, layer.in_w
    left_ok = _neighbor_link_ok(layer, cfg)
    demand = np.zeros(layer.out_w, dtype=np.int64)
    if R <= T:
        return demand
    for px in range(layer.out_w):
        s_lo = max(S - T, 0) if (left_ok and px > 0) else 0
        xs = px * T + np.arange(s_lo, S) - P
        demand[px] = C * (R - T) * int(((xs >= 0) & (xs < W)).sum())
    return demand


def reserve_allocation(layer: LayerSpec, cfg: Im2ColConfig) -> np.ndarray:
    """Columns whose vertical overlap fits in their PU's reserved buffer.

    Each PU hands out slots to its columns left to right until the
    capacity is exhausted; columns without a slot refetch their whole
    vertical overlap from SRAM.
    """
    alloc = np.zeros(layer.out_w, dtype=bool)
    if not cfg.reuse or layer.kernel_h <= layer.stride:
        return alloc
    if cfg.reserved_buf_cap is None:
        alloc[:] = True
        return alloc
    demand = reserve_demand(layer, cfg)
    for pu in range(cfg.pu_count):
        cols = np.arange(pu, layer.out_w, cfg.pu_count)
        alloc[cols] = np.cumsum(demand[cols]) <= cfg.reserved_buf_cap
    return alloc


def classify_sources(patch: int, layer: LayerSpec, cfg: Im2ColConfig, patch_range=None) -> np.ndarray:
    """Source code (NEW/NEIGHBOR/RESERVED/PAD) of every element of one patch.

    Returns a (C, R, S) int8 array. ``patch_range`` is the half-open patch
    interval handled by this Im2Col unit (whole layer by default).
    """
    p0, p1 = patch_range or (0, layer.n_patches)
    if not p0 <= patch < p1:
        raise ValueError("patch outside this unit's range")
    C, R, S, T, P = layer.channels, layer.kernel_h, layer.kernel_w, layer.stride, layer.padding
    py, px = divmod(patch, layer.out_w)
    left = _neighbor_link_ok(layer, cfg) and px > 0 and patch - 1 >= p0
    up = bool(reserve_allocation(layer, cfg)[px]) and py > 0 and patch - layer.out_w >= p0
    src = np.empty((C, R, S), dtype=np.int8)
    for r in range(R):
        y = py * T + r - P
        for s in range(S):
            x = px * T + s - P
            if not (0 <= y < layer.in_h and 0 <= x < layer.in_w):
                code = PAD
            elif left and s < S - T:
                code = NEIGHBOR
            elif up and r < R - T:
                code = RESERVED
            else:
                code = NEW
            src[:, r, s] = code
    return src


def _check_conv_like(x, layer: LayerSpec) -> np.ndarray:
    if layer.kind is LayerKind.FC:
        raise ValueError("Im2Col unit handles windowed layers only")
    x = as_int16(x)
    if x.shape != layer.in_shape:
        raise ValueError(f"feature map shape {x.shape} != layer input {layer.in_shape}")
    return np.ascontiguousarray(x)


def _split_tiles(mat: np.ndarray, width: int) -> list[np.ndarray]:
    return [mat[:, i : i + width] for i in range(0, mat.shape[1], width)]


def simulate_im2col(x, layer: LayerSpec, cfg: Im2ColConfig = Im2ColConfig(), tile_width: int = 4, patch_range=None):
    """Run the PU path. Returns (list of column tiles, Im2ColStats)."""
    x = _check_conv_like(x, layer)
    p0, p1 = patch_range or (0, layer.n_patches)
    alloc = reserve_allocation(layer, cfg)
    mat, counts, reserve_writes = kernels.assemble_patches(
        x, layer.kernel_h, layer.kernel_w, layer.stride, layer.padding,
        layer.out_h, layer.out_w, p0, p1, _neighbor_link_ok(layer, cfg), alloc,
    )
    sched = patch_schedule(layer, cfg, p0, p1)
    nrounds = int(sched.round_id.max()) + 1 if p1 > p0 else 0
    st = Im2ColStats()
    st.patch_sources = counts
    st.sram_reads = int(counts[:, NEW].sum())
    st.neighbor_forwards = int(counts[:, NEIGHBOR].sum())
    st.reserved_hits = int(counts[:, RESERVED].sum())
    st.padding_zeros = int(counts[:, PAD].sum())
    st.elements_emitted = int(counts.sum())
    st.reserve_writes = int(reserve_writes)
    # new-buffer write, ring hop + neighbor-buffer write, reserve write, one read to assemble
    st.buffer_accesses = (
        st.sram_reads + 2 * st.neighbor_forwards + st.reserve_writes
        + (st.elements_emitted - st.padding_zeros)
    )
    st.metadata_ops = st.neighbor_forwards + st.reserve_writes
    st.patches = p1 - p0
    st.rounds = nrounds
    st.round_new = np.bincount(sched.round_id, weights=counts[:, NEW], minlength=nrounds).astype(np.int64)
    st.round_assembly = np.full(nrounds, layer.patch_len, dtype=np.int64)
    last = np.zeros(nrounds, dtype=np.int64)
    np.maximum.at(last, sched.round_id, np.arange(p0, p1))
    st.round_last_patch = last
    st.cycles = estimate_cycles(st, cfg)
    return _split_tiles(mat, tile_width), st


def bypass_legal(layer: LayerSpec) -> bool:
    return layer.stride >= max(layer.kernel_h, layer.kernel_w)


def simulate_bypass(x, layer: LayerSpec, cfg: Im2ColConfig = Im2ColConfig(), tile_width: int = 4, patch_range=None):
    """Input controller straight to the output controller; patches are disjoint."""
    if not bypass_legal(layer):
        raise ValueError("bypass needs stride >= kernel size")
    x = _check_conv_like(x, layer)
    p0, p1 = patch_range or (0, layer.n_patches)
    C, R, S, T, P = layer.channels, layer.kernel_h, layer.kernel_w, layer.stride, layer.padding
    p = np.arange(p0, p1)
    py, px = np.divmod(p, layer.out_w)
    r = np.arange(R)[:, None, None]
    s = np.arange(S)[None, :, None]
    ys = py * T + r - P  # (R, 1, n)
    xs = px * T + s - P  # (1, S, n)
    real = (ys >= 0) & (ys < layer.in_h) & (xs >= 0) & (xs < layer.in_w)  # (R, S, n)
    vals = x[:, np.clip(ys, 0, layer.in_h - 1), np.clip(xs, 0, layer.in_w - 1)]  # (C, R, S, n)
    mat = np.where(real[None], vals, 0).astype(np.int16).reshape(C * R * S, len(p))
    n_real = C * real.reshape(R * S, -1).sum(axis=0)
    counts = np.zeros((len(p), 4), dtype=np.int64)
    counts[:, NEW] = n_real
    counts[:, PAD] = layer.patch_len - n_real
    st = Im2ColStats(bypass=True)
    st.patch_sources = counts
    st.sram_reads = int(counts[:, NEW].sum())
    st.padding_zeros = int(counts[:, PAD].sum())
    st.elements_emitted = int(counts.sum())
    st.patches = len(p)
    st.cycles = estimate_cycles(st, cfg)
    return _split_tiles(mat, tile_width), st


def generate_patches(x, layer: LayerSpec, cfg: Im2ColConfig = Im2ColConfig(), tile_width: int = 4, patch_range=None):
    if cfg.allow_bypass and bypass_legal(layer):
        return simulate_bypass(x, layer, cfg, tile_width, patch_range)
    return simulate_im2col(x, layer, cfg, tile_width, patch_range)


def estimate_cycles(stats: Im2ColStats, cfg: Im2ColConfig) -> int:
    """Delivery vs. assembly bottleneck per round, plus one ring hop per round."""
    if stats.bypass:
        return math.ceil(stats.elements_emitted / cfg.sram_bandwidth)
    if stats.round_new is None or len(stats.round_new) == 0:
        return 0
    bw = cfg.sram_bandwidth
    delivery = (stats.round_new + bw - 1) // bw
    return int(np.maximum(delivery, stats.round_assembly).sum() + len(stats.round_new))


def tile_cycles(stats: Im2ColStats, cfg: Im2ColConfig, tile_width: int, p0: int = 0) -> np.ndarray:
    """Cycles attributed to each output tile (a round counts toward the tile
    holding its last patch)."""
    ntiles = -(-stats.patches // tile_width)
    if stats.bypass:
        per_patch = stats.patch_sources.sum(axis=1)
        tiles = np.add.reduceat(per_patch, np.arange(0, stats.patches, tile_width)) if stats.patches else per_patch
        return (tiles + cfg.sram_bandwidth - 1) // cfg.sram_bandwidth
    bw = cfg.sram_bandwidth
    per_round = np.maximum((stats.round_new + bw - 1) // bw, stats.round_assembly) + 1
    idx = (stats.round_last_patch - p0) // tile_width
    return np.bincount(idx, weights=per_round, minlength=ntiles).astype(np.int64)


def simulate_pool(x, layer: LayerSpec, cfg: Im2ColConfig = Im2ColConfig()):
    """Pooling applied to PU output. Returns ((C, outH, outW) int16, stats)."""
    if not layer.kind.is_pool:
        raise ValueError("simulate_pool needs a pooling layer")
    tiles, st = generate_patches(x, layer, cfg, tile_width=max(layer.n_patches, 1))
    mat = np.concatenate(tiles, axis=1).astype(np.int64)
    per_channel = mat.reshape(layer.channels, layer.kernel_h * layer.kernel_w, -1)
    if layer.kind is LayerKind.MAXPOOL:
        out = per_channel.max(axis=1)
    else:
        out = trunc_div(per_channel.sum(axis=1), layer.kernel_h * layer.kernel_w)
    return out.astype(np.int16).reshape(layer.out_shape), st


