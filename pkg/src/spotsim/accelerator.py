"""Per-layer drivers that chain Im2Col, compressor and GEMM units."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .compressor import compress_tile
from .core import LayerKind, LayerSpec, as_int16, requantize, reshape_output
from .gemm import ArrayConfig, GemmStats, configure, merge_parallel, simulate_fc, simulate_gemm
from .im2col import Im2ColConfig, Im2ColStats, generate_patches, simulate_pool, tile_cycles
from .metrics import EnergyCostTable, SimReport, tally
from .pipeline import handshake, pipelined_cycles
from .sparse import BlockSparseWeights, PruneConfig, footprint_blocksparse


@dataclass(frozen=True)
class HardwareConfig:
    array: ArrayConfig = field(default_factory=ArrayConfig)
    im2col: Im2ColConfig = field(default_factory=Im2ColConfig)
    # Im2Col units feeding sub-arrays 1..k-1 in split mode
    secondary_im2col: Im2ColConfig = field(default_factory=lambda: Im2ColConfig(pu_count=2))
    block_size: int = 8
    bank_count: int = 4
    prune: PruneConfig = field(default_factory=PruneConfig)
    energy: EnergyCostTable = field(default_factory=EnergyCostTable)
    auto_split: bool = False

    def __post_init__(self):
        if self.block_size < 1 or self.bank_count < 1:
            raise ValueError("block_size and bank_count must be >= 1")

    def with_(self, **changes) -> "HardwareConfig":
        return replace(self, **changes)


def choose_split(filters: int, array: ArrayConfig) -> int:
    """Smallest split factor whose sub-arrays are fully occupied (else 4)."""
    for k in (1, 2, 4):
        if array.rows % k == 0 and filters >= array.rows // k:
            return k
    return 4 if array.rows % 4 == 0 else 1


@dataclass
class LayerResult:
    output: np.ndarray
    report: SimReport
    acc: np.ndarray | None = None
    im2col: Im2ColStats | None = None
    gemm: GemmStats | None = None


def _report(layer: LayerSpec, layer_id: int, mode: str, hw: HardwareConfig, events: dict,
            cycles: int, ist: Im2ColStats | None, gst: GemmStats | None,
            im2col_cycles: int, gemm_cycles: int) -> SimReport:
    return SimReport(
        layer_id=layer_id,
        name=layer.name or f"layer{layer_id}",
        kind=layer.kind.value,
        mode=mode,
        cycles=int(cycles),
        im2col_cycles=int(im2col_cycles),
        gemm_cycles=int(gemm_cycles),
        im2col=ist.counters() if ist is not None else {},
        gemm=gst.counters() if gst is not None else {},
        events={k: int(v) for k, v in events.items()},
        energy=tally(events, hw.energy),
    )


def _weight_dram_words(weights: BlockSparseWeights) -> int:
    return math.ceil(footprint_blocksparse(weights) / 2)


def simulate_conv_layer(x, weights: BlockSparseWeights, layer: LayerSpec, hw: HardwareConfig = HardwareConfig(),
                        layer_id: int = 0) -> LayerResult:
    if layer.kind is not LayerKind.CONV:
        raise ValueError("simulate_conv_layer needs a conv layer")
    if weights.shape != layer.weight_shape:
        raise ValueError(f"weights {weights.shape} do not match layer {layer.weight_shape}")
    x = as_int16(x)
    arr = hw.array
    if hw.auto_split:
        arr = replace(arr, split=choose_split(layer.filters, arr))
    place = configure(arr, layer.filters, layer.n_patches)
    bz = hw.block_size

    outs, gparts = [], []
    ist_total = Im2ColStats()
    bits = 0
    pipe, i2c_time = [], []
    bypass = True
    for i, (lo, hi) in enumerate(place.col_ranges):
        if hi == lo:
            continue
        icfg = hw.im2col if i == 0 else hw.secondary_im2col
        tiles, ist = generate_patches(x, layer, icfg, tile_width=arr.cols, patch_range=(lo, hi))
        bypass &= ist.bypass
        bitmaps = [compress_tile(t, bz) for t in tiles]
        bits += sum(b.size for b in bitmaps)
        out, gst = simulate_gemm(weights, handshake(zip(tiles, bitmaps)), arr, bz)
        outs.append(out)
        gparts.append(gst)
        ist_total = ist_total + ist
        tc = tile_cycles(ist, icfg, arr.cols, lo)
        i2c_time.append(int(tc.sum()))
        pipe.append(pipelined_cycles(tc, gst.tile_cycles))
    acc = np.concatenate(outs, axis=1)
    gst = merge_parallel(gparts)
    ist_total.bypass = bypass

    events = {
        "dram_reads": _weight_dram_words(weights),
        "sram_reads": ist_total.sram_reads + gst.weight_reads,
        "sram_writes": layer.filters * layer.n_patches,
        # PU buffers, tile writes into the double buffer, tile reads by the array
        "buffer_accesses": ist_total.buffer_accesses + ist_total.elements_emitted + gst.feature_reads,
        "mac_ops": gst.mac_ops,
        "gated_macs": gst.gated_macs,
        "metadata_ops": ist_total.metadata_ops + bits + gst.metadata_ops,
    }
    mode = "tall" if place.split == 1 else f"split{place.split}"
    if bypass:
        mode += "+bypass"
    rep = _report(layer, layer_id, mode, hw, events, max(pipe), ist_total, gst, max(i2c_time), gst.cycles)
    return LayerResult(reshape_output(acc, layer), rep, acc, ist_total, gst)


def simulate_pool_layer(x, layer: LayerSpec, hw: HardwareConfig = HardwareConfig(), layer_id: int = 0) -> LayerResult:
    out, ist = simulate_pool(x, layer, hw.im2col)
    events = {
        "sram_reads": ist.sram_reads,
        "sram_writes": int(np.prod(layer.out_shape)),
        "buffer_accesses": ist.buffer_accesses,
        "metadata_ops": ist.metadata_ops,
    }
    mode = "pool+bypass" if ist.bypass else "pool"
    rep = _report(layer, layer_id, mode, hw, events, ist.cycles, ist, None, ist.cycles, 0)
    return LayerResult(out, rep, None, ist, None)


def simulate_fc_layer(x, weights: BlockSparseWeights, layer: LayerSpec, hw: HardwareConfig = HardwareConfig(),
                      layer_id: int = 0) -> LayerResult:
    """``x`` is the (inputs, B) batch matrix; output is (F, B) int16."""
    if layer.kind is not LayerKind.FC:
        raise ValueError("simulate_fc_layer needs an FC layer")
    x = as_int16(x)
    if x.ndim == 1:
        x = x[:, None]
    acc, gst = simulate_fc(weights, x, hw.array, hw.block_size)
    events = {
        "dram_reads": _weight_dram_words(weights),
        "sram_reads": int(x.size) + gst.weight_reads,
        "sram_writes": int(acc.size),
        "buffer_accesses": int(x.size) + gst.feature_reads,
        "mac_ops": gst.mac_ops,
        "gated_macs": gst.gated_macs,
        "metadata_ops": gst.metadata_ops,
    }
    rep = _report(layer, layer_id, "fc", hw, events, gst.cycles, None, gst, 0, gst.cycles)
    return LayerResult(requantize(acc, layer), rep, acc, None, gst)
