import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import block_sparse_weights, brute_block_bitmap, brute_positions, triple_loop_matmul
from spotsim import kernels
from spotsim.compressor import compress_tile, expand_bitmap
from spotsim.core import accumulator_overflows, gemm_reference
from spotsim.gemm import ArrayConfig, configure, merge_parallel, schedule_positions, simulate_fc, simulate_gemm
from spotsim.sparse import decode_blocksparse, encode_blocksparse


def dense_weights(f, cols, value=1):
    return encode_blocksparse(np.full((f, cols), value, np.int16), 4)


class TestCompressor:
    def test_all_zero_block(self):
        assert compress_tile(np.zeros((4, 1), np.int16), 4).tolist() == [[False]]

    def test_one_nonzero(self):
        assert compress_tile(np.array([[0], [1], [0], [0]]), 4).tolist() == [[True]]

    def test_brute_force(self, rng):
        for _ in range(30):
            tile = rng.integers(-1, 2, (int(rng.integers(1, 40)), int(rng.integers(1, 5))))
            tile[rng.random(tile.shape) < 0.7] = 0
            bz = int(rng.integers(1, 10))
            bm = compress_tile(tile, bz)
            assert bm.shape == (-(-tile.shape[0] // bz), tile.shape[1])
            assert (bm == brute_block_bitmap(tile, bz)).all()

    def test_lossless_gate(self, rng):
        w = rng.integers(-5, 5, (6, 27)).astype(np.int16)
        tile = rng.integers(-5, 5, (27, 4)).astype(np.int16)
        tile[rng.random(tile.shape) < 0.8] = 0
        masked = np.where(expand_bitmap(compress_tile(tile, 4), 4, 27), tile, 0)
        assert (gemm_reference(w, masked) == gemm_reference(w, tile)).all()

    def test_density(self, rng):
        tile = rng.integers(0, 2, (64, 4)) * (rng.random((64, 4)) < 0.2)
        bm = compress_tile(tile, 8)
        zero_blocks = sum(1 for b in range(8) for c in range(4) if not tile[8 * b : 8 * b + 8, c].any())
        assert bm.mean() == 1 - zero_blocks / 32

    def test_bad_block_size(self):
        with pytest.raises(ValueError):
            compress_tile(np.zeros((4, 1)), 0)


class TestConfigure:
    @pytest.mark.parametrize("f,split,occ", [(128, 1, 1.0), (64, 1, 0.5), (64, 2, 1.0), (32, 4, 1.0),
                                             (16, 1, 0.125), (32, 1, 0.25), (32, 2, 0.5), (200, 1, 1.0)])
    def test_occupancy_law(self, f, split, occ):
        assert configure(ArrayConfig(split=split), f).row_occupancy == occ

    def test_512_single_pass(self):
        p = configure(ArrayConfig(), 512)
        assert p.passes == 1 and p.rows_per_pe(0) == 4

    def test_multi_pass(self):
        p = configure(ArrayConfig(), 1100)
        assert p.passes == 3 and p.pass_bounds[-1] == (1024, 1100)
        assert p.active_rows(2) == 76 and p.rows_per_pe(2) == 1

    def test_placement(self):
        p = configure(ArrayConfig(), 300)
        assert p.pe_of(5) == (5, 0, 0)
        assert p.pe_of(133) == (5, 1, 0)

    def test_pass_limit(self):
        with pytest.raises(ValueError):
            configure(ArrayConfig(rows=4, regs_per_pe=1, max_passes=2), 9)

    def test_split_column_ranges(self):
        assert configure(ArrayConfig(split=2), 64, 9).col_ranges == ((0, 4), (4, 9))
        assert configure(ArrayConfig(split=4), 64, 8).col_ranges == ((0, 2), (2, 4), (4, 6), (6, 8))

    def test_invalid_split(self):
        with pytest.raises(ValueError):
            ArrayConfig(split=3)


class TestSchedule:
    def test_empty_weights(self):
        assert len(schedule_positions(np.zeros(16, bool), np.ones((2, 1), bool), 8)) == 0

    def test_second_half_only(self):
        assert schedule_positions(np.ones(16, bool), np.array([[0], [1]], bool), 8).tolist() == list(range(8, 16))

    def test_brute_force(self, rng):
        for _ in range(100):
            L = int(rng.integers(1, 80))
            bz = int(rng.integers(1, 9))
            n = int(rng.integers(1, 5))
            m1 = rng.random(L) < rng.random()
            bm = rng.random((-(-L // bz), n)) < rng.random()
            assert schedule_positions(m1, bm, bz).tolist() == brute_positions(m1, bm, bz)


class TestSimulateGemm:
    def test_dense_708_cycles(self):
        out, st = simulate_gemm(dense_weights(128, 576), [np.ones((576, 4), np.int16)])
        assert st.cycles == 576 * 1 + 128 + 4 == 708
        assert (out == 576).all()

    def test_half_skipped_420_cycles(self):
        tile = np.ones((576, 4), np.int16)
        for b in range(0, 576, 16):
            tile[b : b + 8] = 0  # every other 8-row block all zero
        out, st = simulate_gemm(dense_weights(128, 576), [tile])
        assert st.streamed_positions == 288
        assert st.cycles == 576 // 2 * 1 + 132 == 420
        assert (out == gemm_reference(np.ones((128, 576), np.int16), tile)).all()

    def test_identity(self, rng):
        tile = rng.integers(-9, 9, (32, 4)).astype(np.int16)
        out, _ = simulate_gemm(encode_blocksparse(np.eye(32, dtype=np.int16), 4), [tile])
        assert (out == tile).all()

    @pytest.mark.parametrize("backend", sorted(kernels.implementations()))
    def test_exact_under_sparsity(self, backend, monkeypatch):
        monkeypatch.setattr(kernels, "os_gemm", kernels.implementations()[backend].os_gemm)
        rng = np.random.default_rng(11)
        for _ in range(25):
            f = int(rng.integers(1, 300))
            L = int(rng.integers(1, 120))
            g = int(rng.choice([1, 2, 4, 8]))
            w = block_sparse_weights(rng, f, L, g, rng.random() * 0.9, -200, 200)
            enc = encode_blocksparse(w, g)
            m = rng.integers(-200, 200, (L, int(rng.integers(1, 13)))).astype(np.int16)
            m[rng.random(m.shape) < rng.random()] = 0
            cfg = ArrayConfig(rows=int(rng.choice([8, 16, 128])), cols=4, regs_per_pe=int(rng.integers(1, 5)))
            bz = int(rng.integers(1, 9))
            tiles = [m[:, i : i + 4] for i in range(0, m.shape[1], 4)]
            out, st = simulate_gemm(enc, tiles, cfg, bz)
            assert (out == gemm_reference(decode_blocksparse(enc), m)).all()
            # brute-force MAC accounting over emitted positions
            macs = slots = 0
            for t in tiles:
                pos = brute_positions(enc.m1, brute_block_bitmap(t, bz), bz)
                for j in pos:
                    macs += int(np.count_nonzero(w[:, j])) * int(np.count_nonzero(t[j]))
                slots += len(pos) * f * t.shape[1]
            assert st.mac_ops == macs
            assert st.gated_macs == slots - macs

    def test_skipped_positions_only_contribute_zero(self, rng):
        w = block_sparse_weights(rng, 16, 64, 4, 0.5)
        enc = encode_blocksparse(w, 4)
        tile = rng.integers(-3, 3, (64, 4)).astype(np.int16)
        tile[rng.random(tile.shape) < 0.85] = 0
        pos = schedule_positions(enc.m1, compress_tile(tile, 8), 8)
        skipped = np.setdiff1d(np.arange(64), pos)
        assert (w[:, skipped].astype(np.int64) @ tile[skipped].astype(np.int64) == 0).all()

    def test_monotone_in_sparsity(self, rng):
        w = rng.integers(1, 5, (64, 96)).astype(np.int16)
        tile = rng.integers(1, 5, (96, 4)).astype(np.int16)
        prev = None
        for frac in np.linspace(0, 1, 8):
            w2, t2 = w.copy(), tile.copy()
            w2[:, : int(frac * 96)] = 0
            t2[: int(frac * 48)] = 0
            _, st = simulate_gemm(encode_blocksparse(w2, 4), [t2])
            if prev is not None:
                assert st.streamed_positions <= prev.streamed_positions
                assert st.cycles <= prev.cycles
            prev = st

    def test_rows_per_pe_in_cycles(self):
        _, st = simulate_gemm(dense_weights(512, 10), [np.ones((10, 4), np.int16)])
        assert st.cycles == 10 * 4 + 128 + 4

    def test_multi_pass_cycles(self):
        _, st = simulate_gemm(dense_weights(600, 10), [np.ones((10, 4), np.int16)])
        assert st.passes == 2
        assert st.cycles == (10 * 4 + 128 + 4) + (10 * 1 + 88 + 4)

    def test_overflow_events_match_oracle(self, rng):
        w = rng.integers(-30000, 30000, (8, 40)).astype(np.int16)
        m = rng.integers(-30000, 30000, (40, 4)).astype(np.int16)
        out, st = simulate_gemm(encode_blocksparse(w, 4), [m], ArrayConfig(acc_bits=24))
        assert st.overflow_events == accumulator_overflows(w, m, 24) > 0
        assert (out == gemm_reference(w, m)).all()

    def test_wrong_shape(self):
        with pytest.raises(ValueError):
            simulate_gemm(dense_weights(4, 8), [np.ones((9, 1), np.int16)])
        with pytest.raises(ValueError):
            simulate_gemm(dense_weights(4, 8), [np.ones((8, 5), np.int16)])

    def test_merge_parallel(self):
        _, a = simulate_gemm(dense_weights(8, 8), [np.ones((8, 4), np.int16)] * 3)
        _, b = simulate_gemm(dense_weights(8, 8), [np.ones((8, 4), np.int16)])
        m = merge_parallel([a, b])
        assert m.cycles == a.cycles and m.mac_ops == a.mac_ops + b.mac_ops and m.tiles == 4


class TestFc:
    @pytest.mark.parametrize("batch,occ", [(4, 1.0), (1, 0.25), (6, 0.75)])
    def test_column_occupancy(self, rng, batch, occ):
        w = rng.integers(-9, 9, (20, 30)).astype(np.int16)
        x = rng.integers(-9, 9, (30, batch)).astype(np.int16)
        out, st = simulate_fc(encode_blocksparse(w, 4), x)
        assert st.col_occupancy == occ
        assert (out == triple_loop_matmul(w, x)).all()

    def test_idle_columns_lower_mac_fraction(self, rng):
        w = rng.integers(1, 9, (128, 64)).astype(np.int16)
        x = rng.integers(1, 9, (64, 4)).astype(np.int16)
        _, full = simulate_fc(encode_blocksparse(w, 4), x)
        _, one = simulate_fc(encode_blocksparse(w, 4), x[:, :1])
        assert one.mac_active_fraction < full.mac_active_fraction

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            simulate_fc(dense_weights(4, 8), np.ones((7, 1), np.int16))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(1, 60), st.integers(1, 8), st.integers(0, 2**31))
def test_property_gemm_exact(f, L, bz, seed):
    rng = np.random.default_rng(seed)
    w = block_sparse_weights(rng, f, L, 2, rng.random(), -50, 50)
    m = rng.integers(-50, 50, (L, 4)).astype(np.int16)
    m[rng.random(m.shape) < rng.random()] = 0
    out, _ = simulate_gemm(encode_blocksparse(w, 2), [m], ArrayConfig(rows=8, regs_per_pe=2), bz)
    assert (out == gemm_reference(w, m)).all()
