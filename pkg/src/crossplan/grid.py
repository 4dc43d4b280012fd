"""Space-time resource grid: blocks, occupancy sets, disjointness.

A block is a half-open box [ (jx-1)dx, jx dx ) x [ (jy-1)dy, jy dy ) x
[ (jt-1)dt, jt dt ) with 1-based indices, anchored at the conflict-zone
corner (x0, y0) and t = 0. Occupancy sets store one bitmap row per time
slab; spatial bit (jy-1)*nx + (jx-1).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from ._kernels import any_overlap, first_disjoint_shift, rect_cover_bits, rect_cover_cells

#: relative snap applied before flooring time onto the slab grid, so entry
#: times that are exact grid multiples never land one slab short
TIME_SNAP = 1e-9


@dataclass(frozen=True)
class GridSpec:
    x0: float
    y0: float
    dx: float
    dy: float
    dt: float
    nx: int
    ny: int

    def __post_init__(self):
        if min(self.dx, self.dy, self.dt) <= 0:
            raise ValueError("dx, dy, dt must be positive")
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid extents must be at least one cell")

    @classmethod
    def for_intersection(cls, config, dx: float = 0.2, dy: float = 0.2,
                         dt: float = 0.2) -> "GridSpec":
        side = config.zone_side
        return cls(x0=-config.zone_half, y0=-config.zone_half,
                   dx=dx, dy=dy, dt=dt,
                   nx=int(round(side / dx)), ny=int(round(side / dy)))

    @property
    def words(self) -> int:
        return (self.nx * self.ny + 63) // 64

    def spatial_block(self, x: float, y: float):
        """(jx, jy) of the cell containing the point, or None outside."""
        fx = (x - self.x0) / self.dx
        fy = (y - self.y0) / self.dy
        if fx < 0 or fy < 0 or fx >= self.nx or fy >= self.ny:
            return None
        return int(fx) + 1, int(fy) + 1

    def slab_of(self, t: float):
        if t < 0:
            return None
        return int(math.floor(t / self.dt + TIME_SNAP)) + 1

    def block_of(self, x: float, y: float, t: float):
        """(jx, jy, jt) of the containing block, or None when out of area."""
        sp = self.spatial_block(x, y)
        jt = self.slab_of(t)
        if sp is None or jt is None:
            return None
        return sp[0], sp[1], jt

    def slab_offset(self, t_e: float) -> int:
        """Whole-slab shift floor(t_e / dt) with roundoff snapping."""
        return int(math.floor(t_e / self.dt + TIME_SNAP))

    def cell_center(self, jx: int, jy: int):
        return (self.x0 + (jx - 0.5) * self.dx, self.y0 + (jy - 0.5) * self.dy)

    def cell_centers(self, cells: np.ndarray) -> np.ndarray:
        cells = np.asarray(cells)
        return np.stack([self.x0 + (cells[:, 0] - 0.5) * self.dx,
                         self.y0 + (cells[:, 1] - 0.5) * self.dy], axis=1)


def _require_same_grid(a: "OccupancySet", b: "OccupancySet"):
    if a.grid != b.grid:
        raise ValueError("occupancy sets live on different grids")


class OccupancySet:
    """Immutable set of occupied blocks for one vehicle (or one slab stack).

    bits[i] is the bitmap of absolute time slab jt_lo + i. Rows may be all
    zero; jt bounds always refer to rows actually present.
    """

    __slots__ = ("grid", "jt_lo", "bits", "owner")

    def __init__(self, grid: GridSpec, jt_lo: int, bits: np.ndarray, owner=None):
        self.grid = grid
        self.jt_lo = int(jt_lo)
        self.bits = np.ascontiguousarray(bits, dtype=np.uint64)
        self.owner = owner

    @classmethod
    def empty(cls, grid: GridSpec, owner=None) -> "OccupancySet":
        return cls(grid, 1, np.zeros((0, grid.words), dtype=np.uint64), owner)

    @classmethod
    def from_cells(cls, grid: GridSpec, cells, owner=None) -> "OccupancySet":
        cells = list(cells)
        if not cells:
            return cls.empty(grid, owner)
        jts = [c[2] for c in cells]
        jt_lo, jt_hi = min(jts), max(jts)
        if jt_lo < 1:
            raise ValueError("time slabs are 1-based")
        bits = np.zeros((jt_hi - jt_lo + 1, grid.words), dtype=np.uint64)
        for jx, jy, jt in cells:
            if not (1 <= jx <= grid.nx and 1 <= jy <= grid.ny):
                raise ValueError(f"cell ({jx}, {jy}) outside the grid")
            b = (jy - 1) * grid.nx + (jx - 1)
            bits[jt - jt_lo, b >> 6] |= np.uint64(1) << np.uint64(b & 63)
        return cls(grid, jt_lo, bits, owner)

    @property
    def n_slabs(self) -> int:
        return self.bits.shape[0]

    @property
    def jt_hi(self) -> int:
        return self.jt_lo + self.n_slabs - 1

    def count(self) -> int:
        return int(np.bitwise_count(self.bits).sum())

    def __len__(self) -> int:
        return self.count()

    def slab_cells(self, jt: int) -> np.ndarray:
        """(m, 2) array of (jx, jy) occupied in absolute slab jt."""
        i = jt - self.jt_lo
        if i < 0 or i >= self.n_slabs:
            return np.empty((0, 2), dtype=np.int64)
        return bits_to_cells(self.bits[i], self.grid.nx)

    def cells(self):
        """All blocks as a frozenset of (jx, jy, jt) triples."""
        out = []
        for i in range(self.n_slabs):
            for jx, jy in bits_to_cells(self.bits[i], self.grid.nx):
                out.append((int(jx), int(jy), self.jt_lo + i))
        return frozenset(out)

    def shifted(self, k: int) -> "OccupancySet":
        """Same spatial pattern, translated k slabs in time (bits shared).

        Slab indices below 1 are allowed here (relative occupancies use
        them); committing such a set to a ledger is what fails.
        """
        return OccupancySet(self.grid, self.jt_lo + k, self.bits, self.owner)

    def intersects(self, other: "OccupancySet") -> bool:
        _require_same_grid(self, other)
        return any_overlap(self.bits, self.jt_lo, other.bits, other.jt_lo)

    def max_jt(self) -> int:
        """Largest occupied slab index (0 when empty)."""
        nz = np.flatnonzero(self.bits.any(axis=1))
        return 0 if len(nz) == 0 else self.jt_lo + int(nz[-1])

    def min_jt(self) -> int:
        nz = np.flatnonzero(self.bits.any(axis=1))
        return 0 if len(nz) == 0 else self.jt_lo + int(nz[0])


def bits_to_cells(row: np.ndarray, nx: int) -> np.ndarray:
    """Decode one bitmap row into (m, 2) cell indices (jx, jy), 1-based."""
    flat = np.unpackbits(row.view(np.uint8), bitorder="little")
    idx = np.flatnonzero(flat)
    jx = idx % nx + 1
    jy = idx // nx + 1
    return np.stack([jx, jy], axis=1).astype(np.int64)


def cells_to_bits(cells: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Pack (m, 2) spatial cells into a single bitmap row."""
    row = np.zeros(grid.words, dtype=np.uint64)
    cells = np.asarray(cells, dtype=np.int64)
    if len(cells):
        bits = (cells[:, 1] - 1) * grid.nx + (cells[:, 0] - 1)
        masks = np.uint64(1) << (bits & 63).astype(np.uint64)
        np.bitwise_or.at(row, bits >> 6, masks)
    return row


def disjoint(a: OccupancySet, b: OccupancySet) -> bool:
    """True iff the two occupancy sets share no block."""
    _require_same_grid(a, b)
    return not a.intersects(b)


def rasterize_footprint(grid: GridSpec, x: float, y: float, theta: float,
                        vspec, inflate: bool = True) -> np.ndarray:
    """Cells covered by the vehicle rectangle at a pose.

    With inflate=True the body is grown by the safety margins r_long/r_lat.
    Every cell sharing positive area with the rectangle is returned; cells
    merely touched along an edge are not (the margins absorb grazing
    contact).
    """
    hl = vspec.half_len if inflate else vspec.length / 2.0
    hw = vspec.half_wid if inflate else vspec.width / 2.0
    return rect_cover_cells(x, y, math.cos(theta), math.sin(theta), hl, hw,
                            grid.x0, grid.y0, grid.dx, grid.dy, grid.nx, grid.ny)


def footprint_bits(grid: GridSpec, x: float, y: float, theta: float,
                   hl: float, hw: float, row: np.ndarray) -> int:
    return rect_cover_bits(x, y, math.cos(theta), math.sin(theta), hl, hw,
                           grid.x0, grid.y0, grid.dx, grid.dy, grid.nx,
                           grid.ny, row)


def occupancy_sample_step(grid: GridSpec, v_max: float) -> float:
    """Pose sampling period that cannot skip a cell between samples."""
    return min(grid.dt / 4.0, grid.dx / (2.0 * max(v_max, 1e-6)))


def trajectory_occupancy(traj, vspec, grid: GridSpec, t_e: float,
                         sub_dt: float | None = None) -> OccupancySet:
    """Blocks swept by the inflated footprint along a trajectory entered at t_e.

    The relative occupancy (entry at t = 0) is rasterized once per
    (grid, body, sampling) key and cached on the trajectory; a request at
    entry time t_e reuses it shifted by floor(t_e / dt) slabs, which is exact
    for entry times on the dt grid. The sampled window includes the lead-in
    and tail-out margins during which the inflated body overlaps the zone
    while the center is still outside.

    Raises ValueError if the center path leaves the zone strictly inside the
    crossing window (that is a geometry bug, not an occupancy).
    """
    if sub_dt is None:
        sub_dt = occupancy_sample_step(grid, getattr(vspec, "v_max", 10.0))
    key = (grid, vspec.key(), round(sub_dt, 9))
    memo = getattr(traj, "_occupancy_memo", None)
    if memo is None:
        memo = {}
        try:
            traj._occupancy_memo = memo
        except AttributeError:
            pass
    rel = memo.get(key)
    if rel is None:
        rel = _relative_occupancy(traj, vspec, grid, sub_dt)
        memo[key] = rel
    k = grid.slab_offset(t_e)
    occ = rel.shifted(k)
    occ.owner = getattr(traj, "owner", None)
    return occ


def _relative_occupancy(traj, vspec, grid: GridSpec, sub_dt: float) -> OccupancySet:
    lead, tail = traj.occupancy_window
    duration = traj.duration
    t0 = -lead
    t1 = duration + tail
    n = max(2, int(math.ceil((t1 - t0) / sub_dt)) + 1)
    taus = np.linspace(t0, t1, n)

    jt_lo = int(math.floor(t0 / grid.dt + TIME_SNAP)) + 1
    jt_hi = int(math.floor(t1 / grid.dt + TIME_SNAP)) + 1
    bits = np.zeros((jt_hi - jt_lo + 1, grid.words), dtype=np.uint64)

    hl, hw = vspec.half_len, vspec.half_wid
    zone = max(abs(grid.x0), abs(grid.y0), abs(grid.x0 + grid.nx * grid.dx),
               abs(grid.y0 + grid.ny * grid.dy))
    for tau in taus:
        x, y, th = traj.occupancy_pose(float(tau))
        if 0.0 < tau < duration and not (
                grid.x0 <= x <= grid.x0 + grid.nx * grid.dx
                and grid.y0 <= y <= grid.y0 + grid.ny * grid.dy):
            raise ValueError(
                f"path center leaves the zone at tau={tau:.3f} ({x:.2f}, {y:.2f})")
        if max(abs(x), abs(y)) > zone + hl + hw + 1.0:
            continue
        jt = int(math.floor(tau / grid.dt + TIME_SNAP)) + 1
        rect_cover_bits(x, y, math.cos(th), math.sin(th), hl, hw,
                        grid.x0, grid.y0, grid.dx, grid.dy, grid.nx, grid.ny,
                        bits[jt - jt_lo])
    nz = np.flatnonzero(bits.any(axis=1))
    if len(nz) == 0:
        return OccupancySet.empty(grid)
    bits = bits[nz[0]: nz[-1] + 1]
    return OccupancySet(grid, jt_lo + int(nz[0]), bits)


class ReservationLedger:
    """Union of all granted occupancies, organized for fast entry searches."""

    def __init__(self, grid: GridSpec):
        self.grid = grid
        self.bits = np.zeros((64, grid.words), dtype=np.uint64)
        self._max_jt = 0

    def _grow(self, jt_hi: int):
        if jt_hi > self.bits.shape[0]:
            new = np.zeros((max(jt_hi + 64, 2 * self.bits.shape[0]),
                            self.grid.words), dtype=np.uint64)
            new[: self.bits.shape[0]] = self.bits
            self.bits = new

    def add(self, occ: OccupancySet):
        if occ.grid != self.grid:
            raise ValueError("occupancy grid does not match the ledger")
        if occ.n_slabs == 0 or occ.count() == 0:
            return
        if occ.min_jt() < 1:
            raise ValueError("cannot commit occupancy before slab 1")
        first = max(occ.jt_lo, 1)
        self._grow(occ.jt_hi)
        self.bits[first - 1: occ.jt_hi] |= occ.bits[first - occ.jt_lo:]
        self._max_jt = max(self._max_jt, occ.max_jt())

    @property
    def max_jt(self) -> int:
        return self._max_jt

    def intersects(self, occ: OccupancySet) -> bool:
        return any_overlap(self.bits, 1, occ.bits, occ.jt_lo)

    def earliest_shift(self, occ_rel: OccupancySet, start: int) -> int:
        """Smallest slab shift >= start keeping occ_rel disjoint from the ledger."""
        return int(first_disjoint_shift(occ_rel.bits, occ_rel.jt_lo,
                                        self.bits, int(start)))


def occupancy_to_csv(occ: OccupancySet, path):
    """Dump blocks as sorted (jx, jy, jt) rows."""
    rows = sorted(occ.cells(), key=lambda c: (c[2], c[1], c[0]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["jx", "jy", "jt"])
        for jx, jy, jt in rows:
            w.writerow([jx, jy, jt])
