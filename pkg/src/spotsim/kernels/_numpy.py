import numpy as np

NEW, NEIGHBOR, RESERVED, PAD = 0, 1, 2, 3


def assemble_patches(x, R, S, T, P, out_h, out_w, p0, p1, left_ok, alloc):
    C, H, W = x.shape
    n = p1 - p0
    mat = np.empty((C * R * S, n), dtype=np.int16)
    counts = np.zeros((n, 4), dtype=np.int64)
    xp = np.pad(x, ((0, 0), (P, P), (P, P)))
    real = np.pad(np.ones((H, W), dtype=bool), P)
    rr = np.arange(R)[:, None]
    ss = np.arange(S)[None, :]
    nb_zone = np.broadcast_to(ss < S - T, (R, S))
    up_zone = np.broadcast_to(rr < R - T, (R, S))
    # coordinate tags of the padded plane, (2, Hp, Wp)
    tags = np.stack(np.meshgrid(np.arange(-P, H + P), np.arange(-P, W + P), indexing="ij"))

    nbuf = np.zeros((C, R, S), dtype=np.int16)
    ntag = np.zeros((2, R, S), dtype=np.int64)
    rbuf = np.zeros((out_w, C, R, S), dtype=np.int16)
    rtag = np.full((out_w, 2, R, S), -(1 << 40), dtype=np.int64)
    reserve_writes = 0
    for p in range(p0, p1):
        q = p - p0
        py, px = divmod(p, out_w)
        y0, x0 = py * T, px * T
        left = left_ok and px > 0 and p - 1 >= p0
        up = alloc[px] and py > 0 and p - out_w >= p0
        is_real = real[y0 : y0 + R, x0 : x0 + S]
        tag = tags[:, y0 : y0 + R, x0 : x0 + S]
        win = xp[:, y0 : y0 + R, x0 : x0 + S].copy()
        taken = ~is_real
        if left and S > T:
            m = nb_zone & is_real
            shifted = np.zeros((C, R, S), dtype=np.int16)
            shifted[:, :, : S - T] = nbuf[:, :, T:]
            stag = np.zeros((2, R, S), dtype=np.int64)
            stag[:, :, : S - T] = ntag[:, :, T:]
            if not np.array_equal(stag[:, m], tag[:, m]):
                raise RuntimeError("neighbor buffer coordinate mismatch")
            win[:, m] = shifted[:, m]
            counts[q, NEIGHBOR] = C * int(m.sum())
            taken = taken | m
        if up and R > T:
            m = up_zone & ~taken
            shifted = np.zeros((C, R, S), dtype=np.int16)
            shifted[:, : R - T] = rbuf[px, :, T:]
            stag = np.full((2, R, S), -(1 << 40), dtype=np.int64)
            stag[:, : R - T] = rtag[px, :, T:]
            if not np.array_equal(stag[:, m], tag[:, m]):
                raise RuntimeError("reserved buffer coordinate mismatch")
            win[:, m] = shifted[:, m]
            counts[q, RESERVED] = C * int(m.sum())
            taken = taken | m
        counts[q, PAD] = C * int((~is_real).sum())
        counts[q, NEW] = C * int((~taken).sum())
        mat[:, q] = win.reshape(-1)
        nbuf, ntag = win, tag
        if alloc[px] and py + 1 < out_h and p + out_w < p1:
            s_lo = max(S - T, 0) if (left_ok and px > 0) else 0
            keep = np.zeros((R, S), dtype=bool)
            keep[T:, s_lo:] = True
            keep &= is_real
            rbuf[px][:, keep] = win[:, keep]
            rtag[px][:, keep] = tag[:, keep]
            reserve_writes += C * int(keep.sum())
    return mat, counts, reserve_writes


def os_gemm(wstream, xstream, acc, flagged, acc_lo, acc_hi, check):
    w = wstream.astype(np.int64)
    xs = xstream.astype(np.int64)
    nz_w = (w != 0).sum(axis=0)
    nz_x = (xs != 0).sum(axis=1)
    macs = int(nz_w @ nz_x)
    gated = w.shape[0] * w.shape[1] * xs.shape[1] - macs
    if check and w.shape[1]:
        partial = np.cumsum(w[:, :, None] * xs[None, :, :], axis=1) + acc[:, None, :]
        flagged |= ((partial < acc_lo) | (partial > acc_hi)).any(axis=1)
    acc += w @ xs
    return macs, gated
