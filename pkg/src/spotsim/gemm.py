"""Output-stationary systolic GEMM unit with zero skipping.

Filter rows enter from the left, Im2Col columns from the top, and every
PE keeps ``regs_per_pe`` output accumulators. Filter ``f`` lives on PE
row ``f % rows`` in register slot ``f // rows``; when a layer has more
filters than ``rows * regs_per_pe`` the tile is streamed again for each
extra pass.

Timing per tile and pass: ``streamed_positions * r + active_rows + cols``,
where ``r`` is the number of filter rows sharing a PE row in that pass.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .compressor import compress_tile, expand_bitmap
from .sparse import BlockSparseWeights


@dataclass(frozen=True)
class ArrayConfig:
    rows: int = 128
    cols: int = 4
    regs_per_pe: int = 4
    split: int = 1
    acc_bits: int | None = None  # e.g. 24 to count accumulator overflows
    max_passes: int = 64

    def __post_init__(self):
        if self.split not in (1, 2, 4):
            raise ValueError("split must be 1, 2 or 4")
        if self.rows % self.split:
            raise ValueError("rows must be divisible by split")
        if min(self.rows, self.cols, self.regs_per_pe, self.max_passes) < 1:
            raise ValueError("array dimensions must be >= 1")
        if self.acc_bits is not None and not 2 <= self.acc_bits <= 63:
            raise ValueError("acc_bits must be in [2, 63]")

    @property
    def sub_rows(self) -> int:
        return self.rows // self.split


@dataclass(frozen=True)
class Placement:
    split: int
    sub_rows: int
    filters: int
    pass_bounds: tuple[tuple[int, int], ...]
    row_occupancy: float
    regs_per_pe: int = 1
    col_ranges: tuple[tuple[int, int], ...] = ()

    @property
    def passes(self) -> int:
        return len(self.pass_bounds)

    def rows_per_pe(self, pass_idx: int = 0) -> int:
        f0, f1 = self.pass_bounds[pass_idx]
        return -(-(f1 - f0) // self.sub_rows)

    def active_rows(self, pass_idx: int = 0) -> int:
        f0, f1 = self.pass_bounds[pass_idx]
        return min(f1 - f0, self.sub_rows)

    def pe_of(self, f: int) -> tuple[int, int, int]:
        """(pe_row, register_slot, pass) holding filter ``f``."""
        p, local = divmod(f, self.sub_rows * self.regs_per_pe)
        return local % self.sub_rows, local // self.sub_rows, p


def configure(cfg: ArrayConfig, filters: int, n_patches: int | None = None) -> Placement:
    """Place ``filters`` weight-matrix rows on the array.

    In split mode every sub-array gets the full weight matrix and a
    contiguous range of output columns.
    """
    if filters < 1:
        raise ValueError("need at least one filter")
    m = cfg.sub_rows
    per_pass = m * cfg.regs_per_pe
    passes = -(-filters // per_pass)
    if passes > cfg.max_passes:
        raise ValueError(
            f"{filters} filters need {passes} passes over a {m}x{cfg.regs_per_pe} placement "
            f"(limit {cfg.max_passes})"
        )
    bounds = tuple((i * per_pass, min((i + 1) * per_pass, filters)) for i in range(passes))
    col_ranges = ()
    if n_patches is not None:
        k = cfg.split
        col_ranges = tuple((i * n_patches // k, (i + 1) * n_patches // k) for i in range(k))
    return Placement(cfg.split, m, filters, bounds, min(filters, m) / m, cfg.regs_per_pe, col_ranges)


def schedule_positions(m1, feature_bitmap, block_size: int) -> np.ndarray:
    """Shared-dimension positions that must enter the array, ascending.

    A position streams when its weight column is non-empty and at least
    one active Im2Col column has a non-zero block covering it.
    """
    m1 = np.asarray(m1, dtype=bool)
    feature_bitmap = np.asarray(feature_bitmap, dtype=bool)
    if feature_bitmap.ndim == 1:
        feature_bitmap = feature_bitmap[:, None]
    live = expand_bitmap(feature_bitmap.any(axis=1, keepdims=True), block_size, len(m1))[:, 0]
    if len(live) != len(m1):
        raise ValueError("feature bitmap does not cover the shared dimension")
    return np.flatnonzero(m1 & live)


@dataclass
class GemmStats:
    cycles: int = 0
    streamed_positions: int = 0
    skipped_by_m1: int = 0
    skipped_by_feature_bitmap: int = 0
    mac_ops: int = 0
    gated_macs: int = 0
    weight_reads: int = 0
    feature_reads: int = 0
    metadata_ops: int = 0
    overflow_events: int = 0
    tiles: int = 0
    passes: int = 0
    pe_cycles: int = 0
    row_occupancy: float = 0.0
    col_occupancy: float = 0.0
    tile_cycles: np.ndarray = field(default=None, repr=False)

    COUNTERS = (
        "cycles", "streamed_positions", "skipped_by_m1", "skipped_by_feature_bitmap",
        "mac_ops", "gated_macs", "weight_reads", "feature_reads", "metadata_ops",
        "overflow_events", "tiles", "passes", "pe_cycles",
    )

    @property
    def mac_active_fraction(self) -> float:
        return self.mac_ops / self.pe_cycles if self.pe_cycles else 0.0

    def counters(self) -> dict:
        d = {k: int(getattr(self, k)) for k in self.COUNTERS}
        d["row_occupancy"] = float(self.row_occupancy)
        d["col_occupancy"] = float(self.col_occupancy)
        d["mac_active_fraction"] = float(self.mac_active_fraction)
        return d


def merge_parallel(parts: list[GemmStats]) -> GemmStats:
    """Combine sub-arrays that ran side by side: counts add, time is the max."""
    out = GemmStats()
    for k in GemmStats.COUNTERS:
        setattr(out, k, sum(getattr(p, k) for p in parts))
    out.cycles = max((p.cycles for p in parts), default=0)
    out.passes = max((p.passes for p in parts), default=0)
    out.row_occupancy = parts[0].row_occupancy if parts else 0.0
    tiles = sum(p.tiles for p in parts)
    out.col_occupancy = sum(p.col_occupancy * p.tiles for p in parts) / tiles if tiles else 0.0
    return out


def simulate_gemm(weights: BlockSparseWeights, stream, cfg: ArrayConfig = ArrayConfig(), block_size: int = 8):
    """Run one (sub-)array over a stream of ``(tile, bitmap)`` pairs.

    ``tile`` is (shared_dim, n) with n <= cfg.cols. Passing a bare tile
    instead of a pair computes its bitmap here. Returns the exact output
    columns (F, total n) as int64 and a :class:`GemmStats`.
    """
    F, L = weights.shape
    place = configure(cfg, F)
    store, col_pos = weights.column_store()
    stored_mask = _stored_mask(weights, col_pos)
    m1 = weights.m1
    nnz_cols = int(m1.sum())
    check = cfg.acc_bits is not None
    lo = -(1 << (cfg.acc_bits - 1)) if check else 0
    hi = (1 << (cfg.acc_bits - 1)) - 1 if check else 0

    st = GemmStats(row_occupancy=place.row_occupancy)
    outs, per_tile, widths = [], [], []
    for item in stream:
        tile, bitmap = item if isinstance(item, tuple) else (item, None)
        tile = np.asarray(tile)
        if tile.ndim != 2 or tile.shape[0] != L:
            raise ValueError(f"tile shape {tile.shape} does not match weight columns {L}")
        n = tile.shape[1]
        if n > cfg.cols:
            raise ValueError(f"tile has {n} columns, array has {cfg.cols}")
        if bitmap is None:
            bitmap = compress_tile(tile, block_size)
        pos = schedule_positions(m1, bitmap, block_size)
        xstream = np.ascontiguousarray(tile[pos])
        wcols = col_pos[pos]
        out = np.zeros((F, n), dtype=np.int64)
        flagged = np.zeros((F, n), dtype=bool)
        cyc = 0
        for pi, (f0, f1) in enumerate(place.pass_bounds):
            wstream = np.ascontiguousarray(store[f0:f1][:, wcols])
            macs, gated = kernels.os_gemm(wstream, xstream, out[f0:f1], flagged[f0:f1], lo, hi, check)
            pass_cycles = len(pos) * place.rows_per_pe(pi) + place.active_rows(pi) + cfg.cols
            cyc += pass_cycles
            st.pe_cycles += place.active_rows(pi) * cfg.cols * pass_cycles
            st.mac_ops += int(macs)
            st.gated_macs += int(gated)
            st.streamed_positions += len(pos)
            st.skipped_by_m1 += L - nnz_cols
            st.skipped_by_feature_bitmap += nnz_cols - len(pos)
            st.weight_reads += int(stored_mask[f0:f1][:, wcols].sum())
            st.feature_reads += len(pos) * n
        st.metadata_ops += L + bitmap.size
        st.overflow_events += int(flagged.sum())
        st.cycles += cyc
        per_tile.append(cyc)
        widths.append(n)
        outs.append(out)
    st.tiles = len(outs)
    st.passes = place.passes
    st.tile_cycles = np.asarray(per_tile, dtype=np.int64)
    st.col_occupancy = float(np.mean(widths) / cfg.cols) if widths else 0.0
    result = np.concatenate(outs, axis=1) if outs else np.zeros((F, 0), dtype=np.int64)
    return result, st


def _stored_mask(weights: BlockSparseWeights, col_pos: np.ndarray) -> np.ndarray:
    """(F, nnz_cols) mask of entries held in a stored block."""
    cols, rows, _, _ = weights.block_index()
    g = weights.group_size
    mask = np.zeros((weights.n_block_rows * g, weights.nnz_cols), dtype=bool)
    if len(rows):
        r = rows[:, None] * g + np.arange(g)
        mask[r, col_pos[cols][:, None]] = True
    return mask[: weights.filters]


def simulate_fc(weights: BlockSparseWeights, x, cfg: ArrayConfig = ArrayConfig(), block_size: int = 8):
    """Fully connected layer on the tall array; batch columns fill array columns."""
    x = np.asarray(x, dtype=np.int16)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != weights.cols:
        raise ValueError(f"input length {x.shape[0]} != weight columns {weights.cols}")
    if x.shape[1] < 1:
        raise ValueError("batch must be >= 1")
    tall = ArrayConfig(cfg.rows, cfg.cols, cfg.regs_per_pe, 1, cfg.acc_bits, cfg.max_passes)
    stream = ((x[:, i : i + tall.cols], compress_tile(x[:, i : i + tall.cols], block_size))
              for i in range(0, x.shape[1], tall.cols))
    return simulate_gemm(weights, stream, tall, block_size)
