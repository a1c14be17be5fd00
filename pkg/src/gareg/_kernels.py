"""numba kernels for the hot loops: warping, NCC sums and greedy matching.

All kernels are pure and release the GIL so the fitness evaluation of a
generation can be spread over threads.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

NOGIL = dict(cache=True, nogil=True)
# no nnan/ninf: the kernels rely on NaN comparisons for bounds checks
FAST = dict(NOGIL, fastmath={"reassoc", "contract", "nsz", "arcp"})


@njit(**NOGIL)
def bilinear(data, x, y):
    h, w = data.shape
    if not (x >= 0.0 and y >= 0.0 and x <= w - 1 and y <= h - 1):
        return np.nan
    x0 = min(int(math.floor(x)), max(w - 2, 0))
    y0 = min(int(math.floor(y)), max(h - 2, 0))
    fx = x - x0
    fy = y - y0
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    return ((1.0 - fx) * (1.0 - fy) * data[y0, x0] + fx * (1.0 - fy) * data[y0, x1]
            + (1.0 - fx) * fy * data[y1, x0] + fx * fy * data[y1, x1])


def cell_valid(mask):
    """``ok[y, x]`` is true when all four pixels of the cell at (x, y) carry data.

    Bilinear samples drawn from a cell with a missing corner are treated as
    missing too, so fill values never bleed into a warp.
    """
    m = np.asarray(mask, dtype=bool)
    ok = np.zeros(m.shape, dtype=np.bool_)
    if m.shape[0] >= 2 and m.shape[1] >= 2:
        ok[:-1, :-1] = m[:-1, :-1] & m[1:, :-1] & m[:-1, 1:] & m[1:, 1:]
    return ok


@njit(**NOGIL)
def warp_into(data, src_from_dst, out, mask, cell_ok, use_cells):
    """Fill ``out``/``mask`` by sampling ``data`` at ``src_from_dst @ (x, y, 1)``."""
    oh, ow = out.shape
    h, w = data.shape
    a, b, c = src_from_dst[0, 0], src_from_dst[0, 1], src_from_dst[0, 2]
    d, e, f = src_from_dst[1, 0], src_from_dst[1, 1], src_from_dst[1, 2]
    for r in range(oh):
        for col in range(ow):
            sx = a * col + b * r + c
            sy = d * col + e * r + f
            v = bilinear(data, sx, sy)
            if v == v and use_cells:
                x0 = min(int(math.floor(sx)), max(w - 2, 0))
                y0 = min(int(math.floor(sy)), max(h - 2, 0))
                if not cell_ok[y0, x0]:
                    v = np.nan
            if v == v:
                out[r, col] = v
                mask[r, col] = True
            else:
                out[r, col] = 0.0
                mask[r, col] = False


@njit(**NOGIL)
def masked_ncc(a, b, mask):
    """Two-pass NCC over ``mask``; returns (ncc, overlap_count, var_a, var_b)."""
    h, w = a.shape
    n = 0
    sa = 0.0
    sb = 0.0
    for r in range(h):
        for c in range(w):
            if mask[r, c]:
                n += 1
                sa += a[r, c]
                sb += b[r, c]
    if n == 0:
        return np.nan, 0, 0.0, 0.0
    ma = sa / n
    mb = sb / n
    sab = 0.0
    saa = 0.0
    sbb = 0.0
    for r in range(h):
        for c in range(w):
            if mask[r, c]:
                da = a[r, c] - ma
                db = b[r, c] - mb
                sab += da * db
                saa += da * da
                sbb += db * db
    if saa <= 0.0 or sbb <= 0.0:
        return np.nan, n, saa, sbb
    v = sab / math.sqrt(saa * sbb)
    return min(1.0, max(-1.0, v)), n, saa, sbb


@njit(**NOGIL)
def warp_ncc(ref, sensed, src_from_dst, buf, mask, cell_ok, use_cells):
    warp_into(sensed, src_from_dst, buf, mask, cell_ok, use_cells)
    return masked_ncc(ref, buf, mask)


@njit(**NOGIL)
def greedy_match(p, q):
    """In-order greedy nearest-unassigned matching.

    Returns ``(match_index, dist)`` per row of ``p``; surplus points once ``q``
    is exhausted get index -1 and distance NaN. Ties go to the lower index.
    """
    n = p.shape[0]
    m = q.shape[0]
    taken = np.zeros(m, dtype=np.bool_)
    idx = np.full(n, -1, dtype=np.int64)
    dist = np.full(n, np.nan)
    left = m
    for i in range(n):
        if left == 0:
            break
        best = -1
        best_d2 = np.inf
        px = p[i, 0]
        py = p[i, 1]
        for j in range(m):
            if taken[j]:
                continue
            dx = px - q[j, 0]
            dy = py - q[j, 1]
            d2 = dx * dx + dy * dy
            if d2 < best_d2:
                best_d2 = d2
                best = j
        taken[best] = True
        left -= 1
        idx[i] = best
        dist[i] = math.sqrt(best_d2)
    return idx, dist


@njit(**NOGIL)
def grid_greedy_match(p, q, cell):
    """Same contract as :func:`greedy_match`, backed by a uniform grid index."""
    n = p.shape[0]
    m = q.shape[0]
    idx = np.full(n, -1, dtype=np.int64)
    dist = np.full(n, np.nan)
    if m == 0:
        return idx, dist
    x0 = q[:, 0].min()
    y0 = q[:, 1].min()
    nx = int((q[:, 0].max() - x0) / cell) + 1
    ny = int((q[:, 1].max() - y0) / cell) + 1
    cx = np.empty(m, dtype=np.int64)
    cy = np.empty(m, dtype=np.int64)
    counts = np.zeros(nx * ny + 1, dtype=np.int64)
    for j in range(m):
        cx[j] = min(int((q[j, 0] - x0) / cell), nx - 1)
        cy[j] = min(int((q[j, 1] - y0) / cell), ny - 1)
        counts[cy[j] * nx + cx[j] + 1] += 1
    starts = np.cumsum(counts)
    fill = starts[:-1].copy()
    members = np.empty(m, dtype=np.int64)
    for j in range(m):  # ascending j keeps members sorted inside each cell
        k = cy[j] * nx + cx[j]
        members[fill[k]] = j
        fill[k] += 1
    taken = np.zeros(m, dtype=np.bool_)
    left = m
    maxring = max(nx, ny)
    for i in range(n):
        if left == 0:
            break
        px = p[i, 0]
        py = p[i, 1]
        # cell coordinates of the query, possibly outside the grid
        qcx = int(math.floor((px - x0) / cell))
        qcy = int(math.floor((py - y0) / cell))
        best = -1
        best_d2 = np.inf
        # start from the ring that first touches the grid
        r0 = 0
        if qcx < 0:
            r0 = max(r0, -qcx)
        elif qcx >= nx:
            r0 = max(r0, qcx - nx + 1)
        if qcy < 0:
            r0 = max(r0, -qcy)
        elif qcy >= ny:
            r0 = max(r0, qcy - ny + 1)
        ring = r0
        while True:
            for gy in range(qcy - ring, qcy + ring + 1):
                if gy < 0 or gy >= ny:
                    continue
                edge_row = gy == qcy - ring or gy == qcy + ring
                step = 1 if edge_row else 2 * ring
                gx = qcx - ring
                while gx <= qcx + ring:
                    if gx >= 0 and gx < nx:
                        k = gy * nx + gx
                        for s in range(starts[k], starts[k + 1]):
                            j = members[s]
                            if taken[j]:
                                continue
                            dx = px - q[j, 0]
                            dy = py - q[j, 1]
                            d2 = dx * dx + dy * dy
                            if d2 < best_d2 or (d2 == best_d2 and j < best):
                                best_d2 = d2
                                best = j
                    if step == 0:
                        break
                    gx += step
            # every unseen point lies at least `ring * cell` away, with slack
            # for the offset of the query inside its own cell
            if best >= 0:
                lim = ring * cell
                if lim * lim > best_d2 * (1.0 + 1e-12) + 1e-12:
                    break
            if ring > r0 + maxring + 1:
                break
            ring += 1
        taken[best] = True
        left -= 1
        idx[i] = best
        dist[i] = math.sqrt(best_d2)
    return idx, dist


@njit(**NOGIL)
def median_sorted(values):
    v = np.sort(values)
    k = v.shape[0]
    if k % 2 == 1:
        return v[k // 2]
    return 0.5 * (v[k // 2 - 1] + v[k // 2])


@njit(**NOGIL)
def batch_median_distance(mats, p, q):
    """Median greedy distance for a stack of (2, 3) sensed-to-reference maps."""
    k = mats.shape[0]
    n = p.shape[0]
    out = np.empty(k)
    wp = np.empty((n, 2))
    for t in range(k):
        m = mats[t]
        for i in range(n):
            wp[i, 0] = m[0, 0] * p[i, 0] + m[0, 1] * p[i, 1] + m[0, 2]
            wp[i, 1] = m[1, 0] * p[i, 0] + m[1, 1] * p[i, 1] + m[1, 2]
        _, d = greedy_match(wp, q)
        cnt = 0
        for i in range(n):
            if d[i] == d[i]:
                cnt += 1
        vals = np.empty(cnt)
        cnt = 0
        for i in range(n):
            if d[i] == d[i]:
                vals[cnt] = d[i]
                cnt += 1
        out[t] = median_sorted(vals) if cnt > 0 else np.nan
    return out


@njit(**NOGIL)
def _span(p0, slope, hi, n):
    """Integer range of ``col`` in [0, n) with ``0 <= p0 + slope * col <= hi``."""
    if slope == 0.0:
        if p0 >= 0.0 and p0 <= hi:
            return 0, n
        return 0, 0
    lo_c = (0.0 - p0) / slope
    hi_c = (hi - p0) / slope
    if lo_c > hi_c:
        lo_c, hi_c = hi_c, lo_c
    start = max(0, int(math.ceil(lo_c - 1e-9)))
    stop = min(n, int(math.floor(hi_c + 1e-9)) + 1)
    return start, stop


@njit(**FAST)
def fused_warp_ncc(ref, sensed, m, shift_a, shift_b, ref_ok, cell_ok, use_masks):
    """Warp-and-correlate without materialising the warped image.

    Single pass with sums taken about fixed shifts (close to the image means)
    to keep cancellation harmless. Each row visits only its in-bounds column
    span. With ``use_masks`` a pixel also needs ``ref_ok`` and a fully valid
    sensed cell. Returns (ncc, overlap_count).
    """
    h, w = ref.shape
    sh, sw = sensed.shape
    xmax = sw - 1.0
    ymax = sh - 1.0
    a, b, c = m[0, 0], m[0, 1], m[0, 2]
    d, e, f = m[1, 0], m[1, 1], m[1, 2]
    n = 0
    sa = 0.0
    sb = 0.0
    saa = 0.0
    sbb = 0.0
    sab = 0.0
    for r in range(h):
        sx = b * r + c
        sy = e * r + f
        c0, c1 = _span(sx, a, xmax, w)
        c2, c3 = _span(sy, d, ymax, w)
        start = max(c0, c2)
        stop = min(c1, c3)
        for col in range(start, stop):
            x = min(max(sx + a * col, 0.0), xmax)
            y = min(max(sy + d * col, 0.0), ymax)
            x0 = min(int(x), sw - 2)
            y0 = min(int(y), sh - 2)
            if use_masks:
                if not (ref_ok[r, col] and cell_ok[y0, x0]):
                    continue
                n += 1
            fx = x - x0
            fy = y - y0
            top = sensed[y0, x0] + fx * (sensed[y0, x0 + 1] - sensed[y0, x0])
            bot = sensed[y0 + 1, x0] + fx * (sensed[y0 + 1, x0 + 1] - sensed[y0 + 1, x0])
            vb = top + fy * (bot - top) - shift_b
            va = ref[r, col] - shift_a
            sa += va
            sb += vb
            saa += va * va
            sbb += vb * vb
            sab += va * vb
        if stop > start and not use_masks:
            n += stop - start
    if n == 0:
        return np.nan, 0
    cov = sab - sa * sb / n
    var_a = saa - sa * sa / n
    var_b = sbb - sb * sb / n
    if var_a <= 0.0 or var_b <= 0.0:
        return np.nan, n
    v = cov / math.sqrt(var_a * var_b)
    return min(1.0, max(-1.0, v)), n


@njit(**NOGIL)
def batch_warp_ncc(ref, sensed, src_from_dst_stack, ref_ok, cell_ok, use_masks):
    """NCC and overlap fraction for each (2, 3) reference-to-sensed map."""
    k = src_from_dst_stack.shape[0]
    h, w = ref.shape
    shift_a = ref.mean()
    shift_b = sensed.mean()
    ncc = np.empty(k)
    frac = np.empty(k)
    for t in range(k):
        m = src_from_dst_stack[t]
        ok = True
        for i in range(2):
            for j in range(3):
                if not np.isfinite(m[i, j]):
                    ok = False
        if not ok or sensed.shape[0] < 2 or sensed.shape[1] < 2:
            ncc[t] = np.nan
            frac[t] = 0.0
            continue
        v, n = fused_warp_ncc(ref, sensed, m, shift_a, shift_b, ref_ok, cell_ok, use_masks)
        ncc[t] = v
        frac[t] = n / (h * w)
    return ncc, frac
