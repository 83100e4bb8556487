"""Acceptance checks, one PASS/FAIL line each.

Under pytest the lines are collected into an "acceptance criteria"
section of the terminal summary. Standalone: ``python3 tests/test_acceptance.py``.

A check returns ``(ok, detail)``. Checks registered with ``known_gap``
describe a target that cannot be met as literally stated; they print
FAIL and are reported by pytest as a strict xfail, so an unexpected
pass would surface as an error.
"""
from __future__ import annotations

import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import block_sparse_weights, brute_block_bitmap, has_overlap, random_conv  # noqa: E402
from spotsim.accelerator import HardwareConfig, simulate_conv_layer  # noqa: E402
from spotsim.compressor import compress_tile  # noqa: E402
from spotsim.core import (LayerKind, LayerSpec, conv_accumulate, conv_reference, random_feature_map,  # noqa: E402
                          unflatten_filters)
from spotsim.gemm import ArrayConfig, configure, schedule_positions, simulate_gemm  # noqa: E402
from spotsim.im2col import Im2ColConfig, generate_patches, patch_schedule, simulate_im2col  # noqa: E402
from spotsim.metrics import compare_reuse_energy, reports_to_csv, reports_to_json  # noqa: E402
from spotsim.runner import parse_config, sweep, sweep_rows  # noqa: E402
from spotsim.sparse import (PruneConfig, decode_blocksparse, encode_blocksparse, footprint_blocksparse,  # noqa: E402
                            footprint_csr, prune_groupwise)
from spotsim.zoo import build_layers, gen_net  # noqa: E402

CHECKS: list[tuple[str, object, str | None]] = []


def check(name, known_gap=None):
    def deco(fn):
        CHECKS.append((name, fn, known_gap))
        return fn
    return deco


@check("oracle equivalence: >=200 random layers bit-exact in < 2 min")
def oracle_equivalence():
    rng = np.random.default_rng(20240501)
    start = time.perf_counter()
    n = 0
    for _ in range(220):
        layer = random_conv(rng, max_hw=32, max_c=8, max_f=160)
        if rng.random() < 0.5:
            bias = tuple(int(b) for b in rng.integers(-20, 20, layer.filters))
            layer = layer.with_(bias=bias)
        layer = layer.with_(relu=bool(rng.random() < 0.5), shift=int(rng.integers(0, 4)))
        g = int(rng.choice([1, 2, 4, 8]))
        w = block_sparse_weights(rng, layer.filters, layer.patch_len, g, 0.9 * rng.random())
        x = random_feature_map(rng, layer.in_shape, zero_frac=0.9 * rng.random())
        split = rng.choice(["1", "2", "4", "auto"])
        hw = HardwareConfig(
            array=ArrayConfig(split=1 if split == "auto" else int(split), regs_per_pe=int(rng.integers(1, 5))),
            im2col=Im2ColConfig(pu_count=int(rng.integers(1, 5)),
                                reserved_buf_cap=rng.choice([None, 0, int(rng.integers(1, 400))]),
                                sram_bandwidth=int(rng.integers(1, 9))),
            block_size=int(rng.choice([1, 2, 4, 8, 16])), bank_count=int(rng.integers(1, 5)),
            auto_split=split == "auto",
        )
        res = simulate_conv_layer(x, encode_blocksparse(w, g, hw.bank_count), layer, hw)
        f = unflatten_filters(w, layer)
        if not (res.acc.reshape(layer.out_shape) == conv_accumulate(x, f, layer)).all():
            return False, f"accumulator mismatch on {layer}"
        if not (res.output == conv_reference(x, f, layer)).all():
            return False, f"output mismatch on {layer}"
        n += 1
    elapsed = time.perf_counter() - start
    return elapsed < 120, f"{n} layers bit-exact (accumulators and int16 outputs) in {elapsed:.1f} s"


def _read_once_layers(rng):
    layers = []
    while len(layers) < 120:
        layer = random_conv(rng, max_hw=32, max_c=8, max_f=4)
        if layer.stride <= min(layer.kernel_h, layer.kernel_w):
            layers.append(layer)
    for net in ("alexnet", "vgg16", "resnet", "googlenet"):
        for spec in build_layers(net)[1]:
            if spec.kind is LayerKind.CONV and spec.stride <= min(spec.kernel_h, spec.kernel_w):
                layers.append(spec)
    return layers


@check("read-once: sramReads == H*W*C with sufficient reserve capacity")
def read_once():
    rng = np.random.default_rng(7)
    layers = _read_once_layers(rng)
    for layer in layers:
        cap = layer.channels * layer.in_w * (layer.kernel_h - layer.stride)
        for cfg in (Im2ColConfig(pu_count=int(rng.integers(1, 5)), reserved_buf_cap=cap), Im2ColConfig()):
            _, st = generate_patches(np.zeros(layer.in_shape, np.int16), layer, cfg)
            if st.sram_reads != layer.in_h * layer.in_w * layer.channels:
                return False, f"{st.sram_reads} reads on {layer} with {cfg}"
    return True, f"{len(layers)} conv layers (random + zoo), capacity C*W*(R-T) and unbounded"


@check("redundant-access ratio without reuse: [8,9] at 64x64, [8.9,9] at 512x512")
def redundant_ratio():
    parts = []
    ok = True
    for n, lo in ((64, 8.0), (512, 8.9)):
        layer = LayerSpec(LayerKind.CONV, n, n, 1, 3, 3, 1, 1, 0)
        _, st = simulate_im2col(np.zeros(layer.in_shape, np.int16), layer, Im2ColConfig(reuse=False))
        ratio = st.sram_reads / (n * n)
        oracle = 9 * layer.out_h * layer.out_w / (n * n)
        ok &= ratio == oracle and lo <= ratio <= 9.0
        parts.append(f"{n}x{n}: {ratio:.4f} (formula {oracle:.4f})")
    return ok, ", ".join(parts)


@check("neighbor-forward count: (R^2 - R*T)*C per non-first same-round patch")
def neighbor_count():
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(150):
        layer = random_conv(rng, max_hw=32, max_c=8, max_f=2, square=True, paddings=(0,))
        if layer.stride > layer.kernel_h:
            continue
        cfg = Im2ColConfig(pu_count=int(rng.integers(1, 6)))
        _, st = simulate_im2col(np.zeros(layer.in_shape, np.int16), layer, cfg)
        sched = patch_schedule(layer, cfg)
        later = sched.px % cfg.pu_count != 0
        r, t, c = layer.kernel_h, layer.stride, layer.channels
        if not (st.patch_sources[later, 1] == (r * r - r * t) * c).all():
            return False, f"wrong neighbor count on {layer}"
        checked += int(later.sum())
    return True, f"{checked} non-first patches, P=0, T<=R"


@check("utilization law: occupancy 1.0 for F=32/64/128 at split 4/2/1, 0.125 for F=16 tall")
def utilization():
    rng = np.random.default_rng(3)
    got = {}
    for f, k in ((32, 4), (64, 2), (128, 1), (16, 1)):
        occ_cfg = configure(ArrayConfig(split=k), f).row_occupancy
        layer = LayerSpec(LayerKind.CONV, 6, 6, 2, 3, 3, f, 1, 0)
        w = block_sparse_weights(rng, f, layer.patch_len)
        res = simulate_conv_layer(random_feature_map(rng, layer.in_shape), encode_blocksparse(w), layer,
                                  HardwareConfig(array=ArrayConfig(split=k)))
        got[(f, k)] = (occ_cfg, res.gemm.row_occupancy)
    ok = all(v == (1.0, 1.0) for key, v in got.items() if key[0] != 16) and got[(16, 1)] == (0.125, 0.125)
    return ok, ", ".join(f"F={f}/k={k}: {v[1]}" for (f, k), v in got.items())


@check("skip soundness + monotonicity on 100 random sparse pairs")
def skip_soundness():
    rng = np.random.default_rng(5)
    for i in range(100):
        f = int(rng.integers(1, 140))
        L = int(rng.integers(1, 300))
        bz = int(rng.choice([1, 2, 4, 8, 16]))
        w = block_sparse_weights(rng, f, L, 4, rng.random())
        tile = random_feature_map(rng, (L, int(rng.integers(1, 5))), zero_frac=rng.random())
        enc = encode_blocksparse(w, 4)
        pos = schedule_positions(enc.m1, compress_tile(tile, bz), bz)
        bits = brute_block_bitmap(tile, bz)
        brute = [j for j in range(L) if w[:, j].any() and any(bits[j // bz, c] for c in range(tile.shape[1]))]
        if pos.tolist() != brute:
            return False, f"pair {i}: schedule differs from brute-force predicate"
        _, base = simulate_gemm(enc, [tile], ArrayConfig(), bz)
        w2, t2 = w.copy(), tile.copy()
        w2[:, rng.random(L) < 0.3] = 0
        t2[rng.random(t2.shape) < 0.3] = 0
        out, sparser = simulate_gemm(encode_blocksparse(w2, 4), [t2], ArrayConfig(), bz)
        if sparser.streamed_positions > base.streamed_positions or sparser.cycles > base.cycles:
            return False, f"pair {i}: more sparsity streamed more positions"
        if not (out == w2.astype(np.int64) @ t2.astype(np.int64)).all():
            return False, f"pair {i}: skipped position changed the product"
    return True, "100 pairs match the brute-force emit set; sparser never streams more"


@check("sparse format round trip + worked footprint example",
       known_gap="the worked block-sparse figure 157,896 B is not what the stated formula gives for a "
                 "128x576 G=4 matrix (149,832 B); see the decisions ledger")
def sparse_format():
    rng = np.random.default_rng(9)
    for _ in range(100):
        g = int(rng.choice([2, 4, 8]))
        w = prune_groupwise(block_sparse_weights(rng, int(rng.integers(1, 64)), int(rng.integers(1, 64)), g,
                                                 rng.random()), PruneConfig(g, int(rng.integers(0, 3))))
        if not (decode_blocksparse(encode_blocksparse(w, g)) == w).all():
            return False, "round trip failed"
    dense = np.ones((128, 576), np.int16)
    bs, csr = footprint_blocksparse(encode_blocksparse(dense, 4)), footprint_csr(dense)
    regime_ok = True
    for _ in range(300):
        g = int(rng.integers(2, 9))
        f = int(rng.integers(g, 64 * g + 1))
        cols = int(rng.integers(1, 32 * f + 1))
        w = block_sparse_weights(rng, f, min(cols, 400), g, rng.uniform(0.5, 1.0), 1, 8)
        nb = -(-f // g)
        if (w.reshape(-1) != 0).sum() > 0.5 * nb * g * w.shape[1]:
            continue
        regime_ok &= footprint_blocksparse(encode_blocksparse(w, g)) < footprint_csr(w)
    detail = (f"round trip 100/100; CSR {csr:,} B (expected 442,884); block-sparse {bs:,} B "
              f"(worked figure 157,896); <CSR with >=50% zero blocks: {'ok' if regime_ok else 'VIOLATED'} "
              f"for dense non-zero blocks")
    return csr == 442_884 and bs == 157_896 and regime_ok, detail


@check("reuse energy: > 0 on overlapping-stride layers, 0 when stride = kernel")
def reuse_energy():
    rng = np.random.default_rng(13)
    savings = []
    for _ in range(150):
        layer = random_conv(rng, max_hw=32, max_c=8, max_f=2)
        e = compare_reuse_energy(layer)
        if has_overlap(layer):
            if not e > 0:
                return False, f"no saving on {layer}"
            savings.append(e)
        elif layer.stride >= max(layer.kernel_h, layer.kernel_w) and e != 0:
            return False, f"non-zero saving {e} on disjoint {layer}"
    for net in ("alexnet", "vgg16", "resnet", "googlenet"):
        for spec in build_layers(net)[1]:
            if spec.kind is LayerKind.CONV and has_overlap(spec):
                savings.append(compare_reuse_energy(spec))
    return all(s > 0 for s in savings), (f"{len(savings)} overlapping layers, mean reduction "
                                         f"{100 * np.mean(savings):.1f}% (reported, not asserted)")


@check("cycle model: 708 cycles dense, 420 with 50% positions skipped")
def cycle_model():
    enc = encode_blocksparse(np.ones((128, 576), np.int16), 4)
    _, dense = simulate_gemm(enc, [np.ones((576, 4), np.int16)])
    tile = np.ones((576, 4), np.int16)
    for b in range(0, 576, 16):
        tile[b : b + 8] = 0
    _, half = simulate_gemm(enc, [tile])
    return (dense.cycles, half.cycles) == (708, 420), f"dense {dense.cycles}, half skipped {half.cycles}"


@check("determinism: repeated sweeps give byte-identical reports")
def determinism():
    cfg = parse_config(gen_net("toy"))
    grid = {"split": [1, 2, 4], "reserved_buf_cap": [0, None], "block_size": [4, 8],
            "group_size": [2, 4], "sram_bandwidth": [2, 8]}
    outs = []
    for jobs in (1, 1, 4):
        rows = sweep_rows(sweep(cfg, grid, jobs=jobs))
        outs.append((reports_to_csv(rows), reports_to_json(rows)))
    same = outs[0] == outs[1] == outs[2]
    return same, f"{len(outs[0][0].splitlines()) - 1} rows, serial x2 and 4 workers identical (CSV and JSON)"


def _run(name, fn):
    ok, detail = fn()
    return ok, f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"


@pytest.mark.parametrize("name,fn,known_gap", CHECKS, ids=[c[0].split(":")[0] for c in CHECKS])
def test_acceptance(name, fn, known_gap, acceptance_log):
    ok, line = _run(name, fn)
    acceptance_log.append(line)
    print(line)
    if known_gap and not ok:
        pytest.xfail(known_gap)
    assert ok, line


def test_known_gap_parts_that_hold():
    # everything in the footprint criterion except the literal worked figure
    dense = np.ones((128, 576), np.int16)
    assert footprint_csr(dense) == 442_884
    assert footprint_blocksparse(encode_blocksparse(dense, 4)) == 72 + 576 * 32 // 8 + 2 * 128 * 576


if __name__ == "__main__":
    failed = 0
    for name, fn, gap in CHECKS:
        ok, line = _run(name, fn)
        print(line + (f"  [known gap: {gap}]" if gap and not ok else ""))
        failed += not ok and not gap
    sys.exit(1 if failed else 0)
