import numpy as np
from numba import njit

NEW, NEIGHBOR, RESERVED, PAD = 0, 1, 2, 3


@njit(cache=True)
def assemble_patches(x, R, S, T, P, out_h, out_w, p0, p1, left_ok, alloc):
    C, H, W = x.shape
    L = C * R * S
    n = p1 - p0
    mat = np.empty((L, n), dtype=np.int16)
    counts = np.zeros((n, 4), dtype=np.int64)
    # element value + (y, x) tag, as held by the PU buffers
    win = np.zeros((C, R, S), dtype=np.int16)
    wy = np.zeros((C, R, S), dtype=np.int64)
    wx = np.zeros((C, R, S), dtype=np.int64)
    nbuf = np.zeros((C, R, S), dtype=np.int16)
    ny = np.zeros((C, R, S), dtype=np.int64)
    nx = np.zeros((C, R, S), dtype=np.int64)
    rbuf = np.zeros((out_w, C, R, S), dtype=np.int16)
    ry = np.full((out_w, C, R, S), -1 << 40, dtype=np.int64)
    rx = np.full((out_w, C, R, S), -1 << 40, dtype=np.int64)
    reserve_writes = 0
    for p in range(p0, p1):
        q = p - p0
        py = p // out_w
        px = p % out_w
        left = left_ok and px > 0 and p - 1 >= p0
        up = alloc[px] and py > 0 and p - out_w >= p0
        for c in range(C):
            for r in range(R):
                y = py * T + r - P
                for s in range(S):
                    xx = px * T + s - P
                    if y < 0 or y >= H or xx < 0 or xx >= W:
                        v = np.int16(0)
                        counts[q, PAD] += 1
                    elif left and s < S - T:
                        v = nbuf[c, r, s + T]
                        if ny[c, r, s + T] != y or nx[c, r, s + T] != xx:
                            raise RuntimeError("neighbor buffer coordinate mismatch")
                        counts[q, NEIGHBOR] += 1
                    elif up and r < R - T:
                        v = rbuf[px, c, r + T, s]
                        if ry[px, c, r + T, s] != y or rx[px, c, r + T, s] != xx:
                            raise RuntimeError("reserved buffer coordinate mismatch")
                        counts[q, RESERVED] += 1
                    else:
                        v = x[c, y, xx]
                        counts[q, NEW] += 1
                    mat[c * R * S + r * S + s, q] = v
                    win[c, r, s] = v
                    wy[c, r, s] = y
                    wx[c, r, s] = xx
        # right-hand overlap goes over the ring to the next PU
        nbuf[:, :, :] = win
        ny[:, :, :] = wy
        nx[:, :, :] = wx
        # keep what the patch below (same PU, next row) will not get elsewhere
        if alloc[px] and py + 1 < out_h and p + out_w < p1:
            s_lo = max(S - T, 0) if (left_ok and px > 0) else 0
            for c in range(C):
                for r in range(T, R):
                    for s in range(s_lo, S):
                        y = wy[c, r, s]
                        xx = wx[c, r, s]
                        if y < 0 or y >= H or xx < 0 or xx >= W:
                            continue
                        rbuf[px, c, r, s] = win[c, r, s]
                        ry[px, c, r, s] = y
                        rx[px, c, r, s] = xx
                        reserve_writes += 1
    return mat, counts, reserve_writes


@njit(cache=True)
def os_gemm(wstream, xstream, acc, flagged, acc_lo, acc_hi, check):
    """Stream positions through an output-stationary array.

    ``wstream`` (F, npos), ``xstream`` (npos, ncols); ``acc``/``flagged``
    are updated in place. Returns (mac_ops, gated_macs).
    """
    F, npos = wstream.shape
    ncols = xstream.shape[1]
    macs = 0
    gated = 0
    for j in range(npos):
        for f in range(F):
            w = np.int64(wstream[f, j])
            for c in range(ncols):
                xv = np.int64(xstream[j, c])
                if w == 0 or xv == 0:
                    gated += 1
                    continue
                a = acc[f, c] + w * xv
                acc[f, c] = a
                macs += 1
                if check and (a < acc_lo or a > acc_hi):
                    flagged[f, c] = True
    return macs, gated
