"""Numpy implementations of the grid kernels.

These are the reference semantics; the compiled extension in ``_gridcore``
mirrors them exactly and is preferred at import time when available.

Conventions shared by both implementations:

* cells are half-open boxes ``[x0+(jx-1)dx, x0+jx*dx) x [y0+(jy-1)dy, y0+jy*dy)``
  with 1-based indices;
* a cell is covered by a rectangle iff the overlap has positive area
  (separating-axis test with strict inequalities, so edge grazing does not
  count);
* bitmap rows hold one time slab, bit ``(jy-1)*nx + (jx-1)`` in row word
  ``bit >> 6``, mask ``1 << (bit & 63)``.
"""

import numpy as np


def rect_cover_cells(cx, cy, ct, st, hl, hw, x0, y0, dx, dy, nx, ny):
    """Cells overlapping a rotated rectangle with positive area.

    The rectangle is centered at (cx, cy) with unit axis (ct, st), half
    length hl along the axis and half width hw across it. Returns an
    (m, 2) int64 array of (jx, jy) pairs clipped to the grid.
    """
    rx = hl * abs(ct) + hw * abs(st)
    ry = hl * abs(st) + hw * abs(ct)
    jx_min = max(1, int(np.floor((cx - rx - x0) / dx)) + 1)
    jx_max = min(int(nx), int(np.floor((cx + rx - x0) / dx)) + 1)
    jy_min = max(1, int(np.floor((cy - ry - y0) / dy)) + 1)
    jy_max = min(int(ny), int(np.floor((cy + ry - y0) / dy)) + 1)
    if jx_min > jx_max or jy_min > jy_max:
        return np.empty((0, 2), dtype=np.int64)
    jxs = np.arange(jx_min, jx_max + 1, dtype=np.int64)
    jys = np.arange(jy_min, jy_max + 1, dtype=np.int64)
    jx_g, jy_g = np.meshgrid(jxs, jys, indexing="ij")
    ex = x0 + (jx_g - 0.5) * dx - cx
    ey = y0 + (jy_g - 0.5) * dy - cy
    hx = 0.5 * dx
    hy = 0.5 * dy
    ok = np.abs(ex) < hl * abs(ct) + hw * abs(st) + hx
    ok &= np.abs(ey) < hl * abs(st) + hw * abs(ct) + hy
    ok &= np.abs(ex * ct + ey * st) < hl + hx * abs(ct) + hy * abs(st)
    ok &= np.abs(-ex * st + ey * ct) < hw + hx * abs(st) + hy * abs(ct)
    return np.stack([jx_g[ok], jy_g[ok]], axis=1)


def rect_cover_bits(cx, cy, ct, st, hl, hw, x0, y0, dx, dy, nx, ny, row):
    """OR the bits of the covered cells into a uint64 bitmap row."""
    cells = rect_cover_cells(cx, cy, ct, st, hl, hw, x0, y0, dx, dy, nx, ny)
    if len(cells) == 0:
        return 0
    bits = (cells[:, 1] - 1) * int(nx) + (cells[:, 0] - 1)
    masks = np.uint64(1) << (bits & 63).astype(np.uint64)
    np.bitwise_or.at(row, bits >> 6, masks)
    return len(cells)


def first_disjoint_shift(cand, cand_lo, pre, start):
    """Smallest slab shift k >= start with cand & pre empty on every slab.

    ``cand`` holds the candidate occupancy relative to entry (row i is slab
    cand_lo + i before shifting); ``pre`` holds the committed occupancy with
    row i being absolute slab i + 1. Shifts that would push any candidate
    row before slab 1 are skipped.
    """
    cand = np.ascontiguousarray(cand, dtype=np.uint64)
    pre = np.ascontiguousarray(pre, dtype=np.uint64)
    n_cand = cand.shape[0]
    n_pre = pre.shape[0]
    k = max(int(start), 1 - int(cand_lo))
    if n_cand == 0 or n_pre == 0:
        return k
    while True:
        lo = cand_lo + k          # absolute slab of cand row 0
        i0 = lo - 1               # pre row aligned with cand row 0
        if i0 >= n_pre:
            return k
        n = min(n_cand, n_pre - i0)
        if not np.bitwise_and(cand[:n], pre[i0:i0 + n]).any():
            return k
        k += 1


def any_overlap(a, a_lo, b, b_lo):
    """True iff two absolute-slab bitmap stacks share a set bit."""
    lo = max(int(a_lo), int(b_lo))
    hi = min(int(a_lo) + a.shape[0], int(b_lo) + b.shape[0])
    if lo >= hi:
        return False
    return bool(
        np.bitwise_and(a[lo - a_lo:hi - a_lo], b[lo - b_lo:hi - b_lo]).any()
    )
