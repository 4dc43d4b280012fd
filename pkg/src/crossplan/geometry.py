"""Intersection layout and canonical crossing paths.

Four single-entry, single-exit roads meet at a square conflict zone whose
side equals the total pavement width (two lanes). Roads are numbered so that
a left turn exits via the next road index, straight via the index after
that, and a right turn via the previous index, all cyclic. With road 1
approaching from the west this puts road 2 north, road 3 east and road 4
south.

Lane centerlines sit half a lane off the road axis (right-hand traffic), so
for the default 4 m lanes the entry lane of road 1 runs along y = -2 and its
exit lane along y = +2.

The canonical path for a maneuver is a straight chord for crossings and, for
turns, a circular arc tangent to the entry and exit lane centerlines, joined
to the zone boundary with straight stubs when the tangent points fall inside
the zone. With the default geometry the stubs are empty: the left turn is a
single quarter arc of radius 6 m and the right turn one of radius 2 m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class GeometryError(ValueError):
    pass


class Maneuver(Enum):
    LEFT = "left"
    STRAIGHT = "straight"
    RIGHT = "right"

    @classmethod
    def parse(cls, value) -> "Maneuver":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise GeometryError(f"unknown maneuver {value!r}") from None


N_ROADS = 4


def road_target(road: int, maneuver: Maneuver, n_roads: int = N_ROADS) -> int:
    """Exit road for a maneuver starting on ``road`` (roads are 1-based)."""
    if not 1 <= road <= n_roads:
        raise GeometryError(f"road index {road} outside 1..{n_roads}")
    maneuver = Maneuver.parse(maneuver)
    if maneuver is Maneuver.LEFT:
        return road % n_roads + 1
    if maneuver is Maneuver.STRAIGHT:
        return (road + 1) % n_roads + 1
    return (road + 2) % n_roads + 1


@dataclass(frozen=True)
class IntersectionConfig:
    """Geometric parameters of the crossing.

    lane_width: width of one lane [m]
    buffer_length: speed-adjustment stretch upstream of the zone [m]
    approach_length: how far upstream of the buffer vehicles spawn [m]
    """

    lane_width: float = 4.0
    buffer_length: float = 8.0
    approach_length: float = 12.0

    def __post_init__(self):
        if self.lane_width <= 0 or self.buffer_length <= 0:
            raise GeometryError("lane_width and buffer_length must be positive")

    @property
    def zone_half(self) -> float:
        """Half side of the square conflict zone."""
        return N_ROADS * self.lane_width / 4.0

    @property
    def zone_side(self) -> float:
        return 2.0 * self.zone_half

    def arm_direction(self, road: int) -> np.ndarray:
        """Unit vector from the zone center toward road ``road``'s arm."""
        if not 1 <= road <= N_ROADS:
            raise GeometryError(f"road index {road} outside 1..{N_ROADS}")
        ang = math.pi - (road - 1) * math.pi / 2.0
        return np.array([math.cos(ang), math.sin(ang)])

    def entry_heading(self, road: int) -> float:
        u = self.arm_direction(road)
        return math.atan2(-u[1], -u[0])

    def entry_pose(self, road: int):
        """(x, y, theta) where the entry lane centerline meets the zone."""
        u = self.arm_direction(road)
        d = -u
        right = np.array([d[1], -d[0]])
        pos = u * self.zone_half + right * (self.lane_width / 2.0)
        return float(pos[0]), float(pos[1]), math.atan2(d[1], d[0])

    def exit_pose(self, road: int):
        """(x, y, theta) where the exit lane centerline leaves the zone."""
        u = self.arm_direction(road)
        right = np.array([u[1], -u[0]])
        pos = u * self.zone_half + right * (self.lane_width / 2.0)
        return float(pos[0]), float(pos[1]), math.atan2(float(u[1]), float(u[0]))

    def entry_lane_point(self, road: int, upstream: float):
        """Point ``upstream`` meters before the zone on the entry lane."""
        x, y, th = self.entry_pose(road)
        return x - upstream * math.cos(th), y - upstream * math.sin(th)

    def exit_lane_point(self, road: int, downstream: float):
        x, y, th = self.exit_pose(road)
        return x + downstream * math.cos(th), y + downstream * math.sin(th)

    def contains(self, x: float, y: float) -> bool:
        h = self.zone_half
        return -h <= x <= h and -h <= y <= h


@dataclass
class StandardPath:
    """Canonical in-zone path, sampled at (approximately) fixed arc spacing.

    segments: list of ("line", p0, p1) and ("arc", center, radius, a0, a1)
    tuples; arcs sweep from angle a0 to a1 (signed, |a1 - a0| <= pi).
    """

    road_from: int
    road_to: int
    maneuver: Maneuver
    segments: list
    total_length: float
    entry_pose: tuple
    exit_pose: tuple
    sample_ds: float
    samples_s: np.ndarray = field(repr=False, default=None)
    samples_xy: np.ndarray = field(repr=False, default=None)

    def _segment_lengths(self):
        out = []
        for seg in self.segments:
            if seg[0] == "line":
                out.append(float(np.linalg.norm(np.asarray(seg[2]) - np.asarray(seg[1]))))
            else:
                _, _, radius, a0, a1 = seg
                out.append(abs(a1 - a0) * radius)
        return out

    def position(self, s):
        """Exact position at arc length s (scalar or array)."""
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.empty((len(s_arr), 2))
        lengths = self._segment_lengths()
        bounds = np.concatenate([[0.0], np.cumsum(lengths)])
        s_clip = np.clip(s_arr, 0.0, self.total_length)
        idx = np.clip(np.searchsorted(bounds, s_clip, side="right") - 1,
                      0, len(self.segments) - 1)
        for k, seg in enumerate(self.segments):
            m = idx == k
            if not m.any():
                continue
            local = s_clip[m] - bounds[k]
            if seg[0] == "line":
                p0 = np.asarray(seg[1])
                p1 = np.asarray(seg[2])
                d = (p1 - p0) / max(lengths[k], 1e-12)
                out[m] = p0 + local[:, None] * d
            else:
                _, center, radius, a0, a1 = seg
                ang = a0 + np.sign(a1 - a0) * local / radius
                out[m] = np.asarray(center) + radius * np.stack(
                    [np.cos(ang), np.sin(ang)], axis=1)
        return out if np.ndim(s) else out[0]

    def heading(self, s):
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.empty(len(s_arr))
        lengths = self._segment_lengths()
        bounds = np.concatenate([[0.0], np.cumsum(lengths)])
        s_clip = np.clip(s_arr, 0.0, self.total_length)
        idx = np.clip(np.searchsorted(bounds, s_clip, side="right") - 1,
                      0, len(self.segments) - 1)
        for k, seg in enumerate(self.segments):
            m = idx == k
            if not m.any():
                continue
            local = s_clip[m] - bounds[k]
            if seg[0] == "line":
                p0 = np.asarray(seg[1])
                p1 = np.asarray(seg[2])
                out[m] = math.atan2(p1[1] - p0[1], p1[0] - p0[0])
            else:
                _, _, radius, a0, a1 = seg
                sgn = np.sign(a1 - a0)
                ang = a0 + sgn * local / radius
                out[m] = ang + sgn * math.pi / 2.0
        return out if np.ndim(s) else float(out[0])

    @property
    def max_curvature(self) -> float:
        k = 0.0
        for seg in self.segments:
            if seg[0] == "arc":
                k = max(k, 1.0 / seg[2])
        return k


def standard_path(config: IntersectionConfig, road: int, maneuver,
                  sample_ds: float = 0.5) -> StandardPath:
    """Build the canonical path for (road, maneuver) and sample it.

    Raises GeometryError for degenerate layouts (a turn whose tangent arc
    would have nonpositive radius).
    """
    maneuver = Maneuver.parse(maneuver)
    target = road_target(road, maneuver)
    ex, ey, eth = config.entry_pose(road)
    xx, xy, xth = config.exit_pose(target)
    e_pt = np.array([ex, ey])
    x_pt = np.array([xx, xy])
    d = np.array([math.cos(eth), math.sin(eth)])
    e = np.array([math.cos(xth), math.sin(xth)])

    if maneuver is Maneuver.STRAIGHT:
        off = x_pt - e_pt
        if abs(off[0] * d[1] - off[1] * d[0]) > 1e-9:
            raise GeometryError("straight chord is not aligned with the entry lane")
        segments = [("line", e_pt, x_pt)]
        total = float(np.linalg.norm(off))
    else:
        # corner point where the entry and exit lane lines meet
        den = d[0] * e[1] - d[1] * e[0]
        if abs(den) < 1e-12:
            raise GeometryError("entry and exit lanes are parallel; no tangent arc")
        rhs = x_pt - e_pt
        t1 = (rhs[0] * e[1] - rhs[1] * e[0]) / den
        t2 = (d[0] * rhs[1] - d[1] * rhs[0]) / den
        if t1 <= 0 or t2 <= 0:
            raise GeometryError("turn corner lies behind the lane endpoints")
        corner = e_pt + t1 * d
        radius = min(t1, t2)
        p1 = corner - radius * d
        p2 = corner + radius * e
        if maneuver is Maneuver.LEFT:
            center = p1 + radius * np.array([-d[1], d[0]])
            sweep = math.pi / 2.0
        else:
            center = p1 + radius * np.array([d[1], -d[0]])
            sweep = -math.pi / 2.0
        a0 = math.atan2(p1[1] - center[1], p1[0] - center[0])
        segments = []
        if np.linalg.norm(p1 - e_pt) > 1e-9:
            segments.append(("line", e_pt, p1))
        segments.append(("arc", center, radius, a0, a0 + sweep))
        if np.linalg.norm(x_pt - p2) > 1e-9:
            segments.append(("line", p2, x_pt))
        total = 0.0
        for seg in segments:
            if seg[0] == "line":
                total += float(np.linalg.norm(np.asarray(seg[2]) - np.asarray(seg[1])))
            else:
                total += abs(seg[4] - seg[3]) * seg[2]

    path = StandardPath(
        road_from=road,
        road_to=target,
        maneuver=maneuver,
        segments=segments,
        total_length=total,
        entry_pose=(ex, ey, eth),
        exit_pose=(xx, xy, xth),
        sample_ds=sample_ds,
    )
    n_samples = max(2, int(round(total / sample_ds)) + 1)
    path.samples_s = np.linspace(0.0, total, n_samples)
    path.samples_xy = path.position(path.samples_s)
    return path
