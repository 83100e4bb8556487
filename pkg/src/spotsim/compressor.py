"""Zero-block tagging of the Im2Col output stream."""
from __future__ import annotations

import numpy as np


def n_blocks(length: int, block_size: int) -> int:
    return -(-length // block_size)


def compress_tile(tile, block_size: int = 8) -> np.ndarray:
    """Bitmap of shape (n_blocks, tile columns); False where a block of
    ``block_size`` consecutive rows is all zero in that column."""
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    tile = np.asarray(tile)
    if tile.ndim == 1:
        tile = tile[:, None]
    rows, cols = tile.shape
    nb = n_blocks(rows, block_size)
    padded = np.zeros((nb * block_size, cols), dtype=bool)
    padded[:rows] = tile != 0
    return padded.reshape(nb, block_size, cols).any(axis=1)


def expand_bitmap(bitmap: np.ndarray, block_size: int, length: int) -> np.ndarray:
    """Per-row view of a block bitmap, (length, columns)."""
    return np.repeat(bitmap, block_size, axis=0)[:length]
