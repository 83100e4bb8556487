"""Group-wise pruning and the bitmap block-sparse weight format.

A block is ``G`` consecutive rows (filters) of one weight-matrix column.
The encoding keeps three arrays:

``m1``    one bit per column, 0 when the column is entirely zero
``m2``    one bit per block of every non-zero column (column-major,
          blocks top to bottom), 0 when the block is entirely zero
``banks`` the non-zero blocks, ``G`` values each, placed in bank
          ``block_row % bank_count`` in scan order
"""
from __future__ import annotations

import enum
import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import as_int16

SBSW_MAGIC = b"SBSW"
SBSW_VERSION = 1


class Norm(str, enum.Enum):
    MAXABS = "maxabs"
    L2 = "l2"


@dataclass(frozen=True)
class PruneConfig:
    group_size: int = 4
    threshold: int = 0
    norm: Norm = Norm.MAXABS

    def __post_init__(self):
        object.__setattr__(self, "norm", Norm(self.norm))
        if self.group_size < 1:
            raise ValueError("group_size must be >= 1")
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")


def _blocked(w: np.ndarray, g: int) -> np.ndarray:
    """View ``w`` (F, cols) as (n_block_rows, g, cols), zero-padding a ragged tail."""
    f, cols = w.shape
    nb = -(-f // g)
    if nb * g != f:
        w = np.concatenate([w, np.zeros((nb * g - f, cols), dtype=w.dtype)])
    return w.reshape(nb, g, cols)


def block_norms(w, cfg: PruneConfig) -> np.ndarray:
    """Block norm per (block_row, column). L2 is returned squared."""
    b = _blocked(as_int16(w).astype(np.int64), cfg.group_size)
    if cfg.norm is Norm.MAXABS:
        return np.abs(b).max(axis=1)
    return (b * b).sum(axis=1)


def prune_groupwise(w, cfg: PruneConfig) -> np.ndarray:
    """Zero every G x 1 block whose norm is strictly below the threshold."""
    w = as_int16(w)
    if cfg.threshold == 0:
        return w.copy()
    norms = block_norms(w, cfg)
    limit = cfg.threshold if cfg.norm is Norm.MAXABS else cfg.threshold**2
    keep = np.repeat(norms >= limit, cfg.group_size, axis=0)[: w.shape[0]]
    return np.where(keep, w, 0).astype(np.int16)


@dataclass
class BlockSparseWeights:
    filters: int
    cols: int
    group_size: int
    bank_count: int
    m1: np.ndarray  # bool (cols,)
    m2: np.ndarray  # bool (nnz_cols * n_block_rows,)
    banks: list[np.ndarray] = field(default_factory=list)

    @property
    def n_block_rows(self) -> int:
        return -(-self.filters // self.group_size)

    @property
    def nnz_cols(self) -> int:
        return int(self.m1.sum())

    @property
    def stored_values(self) -> int:
        return sum(int(b.size) for b in self.banks)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.filters, self.cols)

    def validate(self) -> None:
        if self.m1.shape != (self.cols,):
            raise ValueError("M1 length does not match the column count")
        if self.m2.size != self.nnz_cols * self.n_block_rows:
            raise ValueError(
                f"M2 has {self.m2.size} bits, expected {self.nnz_cols}*{self.n_block_rows}"
            )
        if len(self.banks) != self.bank_count:
            raise ValueError("bank array count does not match bank_count")
        if self.nnz_cols and not self.m2.reshape(self.nnz_cols, -1).any(axis=1).all():
            raise ValueError("a column flagged non-zero in M1 has no non-zero block in M2")
        counts = self.bank_block_counts_expected()
        for k, bank in enumerate(self.banks):
            if bank.size != counts[k] * self.group_size:
                raise ValueError(
                    f"bank {k} holds {bank.size} values, bitmaps require {counts[k] * self.group_size}"
                )

    def bank_block_counts_expected(self) -> np.ndarray:
        rows = self.block_index()[1]
        return np.bincount(rows % self.bank_count, minlength=self.bank_count)

    def block_index(self):
        """Locate every stored block from the bitmaps alone.

        Returns (column, block_row, bank, offset_in_bank) arrays in scan
        order. Column numbers come from a prefix popcount over M1.
        """
        nb = self.n_block_rows
        nz_cols = np.flatnonzero(self.m1)
        bits = self.m2.reshape(len(nz_cols), nb) if len(nz_cols) else np.zeros((0, nb), bool)
        ci, rows = np.nonzero(bits)  # row-major over (nz column, block row) == scan order
        cols = nz_cols[ci]
        bank = rows % self.bank_count
        offset = np.zeros(len(rows), dtype=np.int64)
        for k in range(self.bank_count):
            sel = bank == k
            offset[sel] = np.arange(int(sel.sum())) * self.group_size
        return cols, rows, bank, offset

    def column_store(self):
        """Unpack stored blocks into an (F, nnz_cols) matrix plus the map
        from dense column to its position in that matrix (-1 if empty)."""
        cols, rows, bank, offset = self.block_index()
        g = self.group_size
        nb = self.n_block_rows
        store = np.zeros((nb * g, self.nnz_cols), dtype=np.int16)
        col_pos = np.full(self.cols, -1, dtype=np.int64)
        col_pos[np.flatnonzero(self.m1)] = np.arange(self.nnz_cols)
        for k in range(self.bank_count):
            sel = bank == k
            if not sel.any():
                continue
            vals = self.banks[k].reshape(-1, g)[offset[sel] // g]
            r = rows[sel][:, None] * g + np.arange(g)
            store[r, col_pos[cols[sel]][:, None]] = vals
        return store[: self.filters], col_pos


def encode_blocksparse(w, group_size: int = 4, bank_count: int = 4) -> BlockSparseWeights:
    w = as_int16(w)
    if w.ndim != 2:
        raise ValueError("weight matrix must be 2-D")
    if group_size < 1 or bank_count < 1:
        raise ValueError("group_size and bank_count must be >= 1")
    f, cols = w.shape
    b = _blocked(w, group_size)  # (nb, g, cols)
    nonzero_block = (b != 0).any(axis=1)  # (nb, cols)
    m1 = nonzero_block.any(axis=0)
    m2 = nonzero_block[:, m1].T.reshape(-1)  # column-major over nonzero columns
    ci, rows = np.nonzero(nonzero_block[:, m1].T)
    cols_idx = np.flatnonzero(m1)[ci]
    values = b[rows, :, cols_idx]  # (n_blocks, g) in scan order
    banks = [values[rows % bank_count == k].reshape(-1).astype(np.int16) for k in range(bank_count)]
    return BlockSparseWeights(f, cols, group_size, bank_count, m1.astype(bool), m2.astype(bool), banks)


def decode_blocksparse(s: BlockSparseWeights) -> np.ndarray:
    s.validate()
    store, col_pos = s.column_store()
    w = np.zeros((s.filters, s.cols), dtype=np.int16)
    nz = np.flatnonzero(s.m1)
    w[:, nz] = store[:, col_pos[nz]]
    return w


def footprint_blocksparse(s: BlockSparseWeights) -> int:
    return (
        math.ceil(s.cols / 8)
        + math.ceil(s.nnz_cols * s.n_block_rows / 8)
        + 2 * s.stored_values
    )


def footprint_csr(w) -> int:
    w = np.asarray(w)
    nnz = int(np.count_nonzero(w))
    return 2 * nnz + 4 * nnz + 4 * (w.shape[0] + 1)


def _pack(bits: np.ndarray) -> bytes:
    return np.packbits(bits.astype(np.uint8), bitorder="little").tobytes()


def _unpack(buf: bytes, n: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(buf, dtype=np.uint8), count=n, bitorder="little").astype(bool)


def dump_sbsw(s: BlockSparseWeights) -> bytes:
    out = io.BytesIO()
    out.write(SBSW_MAGIC + bytes([SBSW_VERSION, 0, 2, 0, 0, 0]))
    out.write(struct.pack("<4I", s.filters, s.cols, s.group_size, s.bank_count))
    out.write(_pack(s.m1))
    out.write(_pack(s.m2))
    out.write(struct.pack(f"<{s.bank_count}I", *(b.size for b in s.banks)))
    for b in s.banks:
        out.write(b.astype("<i2").tobytes())
    return out.getvalue()


def load_sbsw(data: bytes) -> BlockSparseWeights:
    try:
        return _load_sbsw(data)
    except struct.error as e:
        raise ValueError(f"SBSW header truncated: {e}") from None


def _load_sbsw(data: bytes) -> BlockSparseWeights:
    if data[:4] != SBSW_MAGIC:
        raise ValueError("not an SBSW file (bad magic)")
    if len(data) < 10 or data[4] != SBSW_VERSION:
        raise ValueError(f"unsupported SBSW version {data[4] if len(data) > 4 else None}")
    if data[5] != 0 or data[6] != 2 or data[7:10] != b"\0\0\0":
        raise ValueError("SBSW header must declare int16 dtype, rank 2, zero padding")
    pos = 10
    f, cols, g, nbank = struct.unpack_from("<4I", data, pos)
    pos += 16
    n1 = math.ceil(cols / 8)
    m1 = _unpack(data[pos : pos + n1], cols)
    pos += n1
    m2_bits = int(m1.sum()) * -(-f // g)
    n2 = math.ceil(m2_bits / 8)
    m2 = _unpack(data[pos : pos + n2], m2_bits)
    pos += n2
    counts = struct.unpack_from(f"<{nbank}I", data, pos)
    pos += 4 * nbank
    banks = []
    for c in counts:
        end = pos + 2 * c
        if end > len(data):
            raise ValueError("SBSW payload truncated")
        banks.append(np.frombuffer(data[pos:end], dtype="<i2").astype(np.int16))
        pos = end
    if pos != len(data):
        raise ValueError("trailing bytes after SBSW payload")
    s = BlockSparseWeights(f, cols, g, nbank, m1, m2, banks)
    s.validate()
    return s


def write_sbsw(path, s: BlockSparseWeights) -> None:
    Path(path).write_bytes(dump_sbsw(s))


def read_sbsw(path) -> BlockSparseWeights:
    return load_sbsw(Path(path).read_bytes())
