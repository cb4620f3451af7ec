"""Planar geometry for a four-way intersection: reference paths, lane
corridors, signed distances to corridor boundaries and circle coverings of
rectangular vehicle footprints.

Conventions: x east, y north, angles in radians measured CCW from +x.
Right-hand traffic. All lengths in meters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

# Entry ids, counterclockwise starting from the west arm.
ENTRY_NAMES = ("W", "S", "E", "N")
MANEUVERS = ("left", "straight", "right")


@dataclass(frozen=True)
class MapConfig:
    """Geometry of the intersection. Defaults give a small-scale (cm-level)
    four-way crossing with two lanes per direction."""

    lane_width: float = 0.3
    arm_length: float = 2.0          # from the central box edge to the map edge
    lanes_per_direction: int = 2
    left_turn_radius: float = 0.45   # center-line radius of left-turn arcs
    right_turn_radius: float = 0.3   # center-line radius of right-turn arcs
    entry_region_length: float = 0.9   # outer stretch of each arm used for spawning
    path_end_margin: float = 0.3     # paths stop this far before the map edge
    arc_step_deg: float = 5.0        # max angular step when discretizing arcs

    @property
    def half_box(self) -> float:
        """Half-width of the central intersection box."""
        return self.lanes_per_direction * self.lane_width

    @property
    def half_extent(self) -> float:
        """Distance from the center to the outer edge of an arm."""
        return self.half_box + self.arm_length


@dataclass(frozen=True)
class Polyline:
    """Open polyline with an orientation telling which side of the travel
    direction is the drivable-corridor side ('left' or 'right')."""

    points: np.ndarray          # (M, 2)
    orientation: str            # corridor side relative to vertex order

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
            raise ValueError("polyline needs at least two 2-d points")
        seg = np.diff(pts, axis=0)
        if np.any(np.einsum("ij,ij->i", seg, seg) < 1e-18):
            raise ValueError("polyline has a zero-length segment")
        if self.orientation not in ("left", "right"):
            raise ValueError(f"bad orientation {self.orientation!r}")
        object.__setattr__(self, "points", pts)

    @property
    def n_segments(self) -> int:
        return self.points.shape[0] - 1


@dataclass(frozen=True)
class NearestFeature:
    """Nearest point of a polyline to a query point.

    ``t`` is the parameter along the active segment (0 and 1 are the segment
    endpoints, anything in between is the segment interior).
    """

    distance: float             # signed; positive on the corridor side
    segment: int                # active segment index (ties -> lower index)
    t: float
    closest: np.ndarray         # (2,) nearest point on the polyline


def pseudo_distance(point, polyline: Polyline) -> tuple[float, int]:
    """Signed distance from ``point`` to a corridor boundary polyline.

    Positive on the corridor side of the boundary, negative beyond it,
    zero on the line. Returns ``(distance, active_segment_index)``; ties in
    the segment minimization break toward the lower index. The unsigned part
    is the plain euclidean distance to the nearest segment, so the value is
    1-Lipschitz in the query point.
    """
    f = nearest_feature(point, polyline)
    return f.distance, f.segment


def nearest_feature(point, polyline: Polyline) -> NearestFeature:
    """Like :func:`pseudo_distance` but keeps the full nearest-feature data
    needed for frozen-feature differentiation."""
    p = np.asarray(point, dtype=float)
    pts = polyline.points
    a = pts[:-1]
    e = pts[1:] - a                              # (S, 2) segment vectors
    ap = p[None, :] - a
    ee = np.einsum("ij,ij->i", e, e)
    t = np.einsum("ij,ij->i", ap, e) / ee
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[:, None] * e
    diff = p[None, :] - closest
    d2 = np.einsum("ij,ij->i", diff, diff)
    idx = int(np.argmin(d2))                     # first minimum -> lowest index
    dist = math.sqrt(d2[idx])
    # Side of the active segment: positive cross product = left of travel.
    cross = e[idx, 0] * (p[1] - a[idx, 1]) - e[idx, 1] * (p[0] - a[idx, 0])
    if polyline.orientation == "left":
        sign = 1.0 if cross >= 0.0 else -1.0
    else:
        sign = 1.0 if cross <= 0.0 else -1.0
    return NearestFeature(sign * dist, idx, float(t[idx]), closest[idx])


@dataclass(frozen=True)
class CircleDecomposition:
    """Covering of a length x width rectangle by equal circles spaced along
    the long axis."""

    offsets: np.ndarray         # (n,) signed offsets from the center
    radius: float
    length: float
    width: float

    @property
    def n(self) -> int:
        return self.offsets.shape[0]


def decompose_rectangle(length: float, width: float, n_circles: int) -> CircleDecomposition:
    """Cover a rectangle with ``n_circles`` equal circles centered on its long
    axis. Each circle circumscribes one of the n equal slices, so the union
    of circles contains the rectangle."""
    if length <= 0.0 or width <= 0.0:
        raise ValueError("rectangle sides must be positive")
    if n_circles < 1:
        raise ValueError("need at least one circle")
    spacing = length / n_circles
    offsets = -0.5 * length + spacing * (np.arange(n_circles) + 0.5)
    radius = math.hypot(0.5 * spacing, 0.5 * width)
    return CircleDecomposition(offsets, radius, float(length), float(width))


def circle_centers(pose, decomp: CircleDecomposition) -> np.ndarray:
    """Circle centers for a vehicle pose. ``pose`` is any array whose first
    three entries are (x, y, heading); the full dynamic state can be passed
    as-is. Returns an (n, 2) array."""
    x, y, th = float(pose[0]), float(pose[1]), float(pose[2])
    d = np.array([math.cos(th), math.sin(th)])
    return np.array([x, y]) + decomp.offsets[:, None] * d[None, :]


def rect_corners(x: float, y: float, heading: float, length: float, width: float) -> np.ndarray:
    """Corners of a centered, rotated rectangle, CCW order, shape (4, 2)."""
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([x, y])


def segments_intersect(p1, p2, q1, q2) -> bool:
    """True when segments [p1,p2] and [q1,q2] intersect (touching counts)."""
    p1 = np.asarray(p1, float); p2 = np.asarray(p2, float)
    q1 = np.asarray(q1, float); q2 = np.asarray(q2, float)

    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if v > 1e-15:
            return 1
        if v < -1e-15:
            return -1
        return 0

    def on_seg(a, b, c):
        return (min(a[0], b[0]) - 1e-15 <= c[0] <= max(a[0], b[0]) + 1e-15
                and min(a[1], b[1]) - 1e-15 <= c[1] <= max(a[1], b[1]) + 1e-15)

    o1 = orient(p1, p2, q1)
    o2 = orient(p1, p2, q2)
    o3 = orient(q1, q2, p1)
    o4 = orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_seg(p1, p2, q1):
        return True
    if o2 == 0 and on_seg(p1, p2, q2):
        return True
    if o3 == 0 and on_seg(q1, q2, p1):
        return True
    if o4 == 0 and on_seg(q1, q2, p2):
        return True
    return False


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def contains(self, point) -> bool:
        return (self.xmin - 1e-12 <= point[0] <= self.xmax + 1e-12
                and self.ymin - 1e-12 <= point[1] <= self.ymax + 1e-12)


@dataclass
class ReferencePath:
    """Center-line of one maneuver through the intersection, as a polyline
    with arclength parameterization."""

    waypoints: np.ndarray       # (K, 2)
    maneuver: str               # 'left' | 'straight' | 'right'
    entry: int                  # entry arm id, index into ENTRY_NAMES
    exit: int                   # exit arm id
    cum_length: np.ndarray = field(init=False)   # (K,) arclength at each waypoint

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=float)
        seg = np.diff(self.waypoints, axis=0)
        seglen = np.sqrt(np.einsum("ij,ij->i", seg, seg))
        if np.any(seglen < 1e-12):
            raise ValueError("reference path has a zero-length segment")
        self.cum_length = np.concatenate([[0.0], np.cumsum(seglen)])

    @property
    def length(self) -> float:
        return float(self.cum_length[-1])

    def project(self, point) -> tuple[float, int, np.ndarray]:
        """Project a position onto the path.

        Returns ``(s, segment_index, closest_point)`` where ``s`` is the
        absolute arclength of the nearest path point, clamped to
        [0, length]. Ties break toward the lower segment index.
        """
        p = np.asarray(point, dtype=float)
        pts = self.waypoints
        a = pts[:-1]
        e = pts[1:] - a
        ee = np.einsum("ij,ij->i", e, e)
        t = np.clip(np.einsum("ij,ij->i", p[None, :] - a, e) / ee, 0.0, 1.0)
        closest = a + t[:, None] * e
        diff = p[None, :] - closest
        d2 = np.einsum("ij,ij->i", diff, diff)
        idx = int(np.argmin(d2))
        s = self.cum_length[idx] + t[idx] * math.sqrt(ee[idx])
        return float(s), idx, closest[idx]

    def progress(self, point) -> float:
        """Normalized arclength of the projection, in [0, 1]."""
        s, _, _ = self.project(point)
        return s / self.length

    def point_at(self, s: float) -> np.ndarray:
        """Point at absolute arclength ``s``, clamped to the path ends."""
        s = min(max(s, 0.0), self.length)
        idx = int(np.searchsorted(self.cum_length, s, side="right")) - 1
        idx = min(max(idx, 0), self.waypoints.shape[0] - 2)
        seg = self.waypoints[idx + 1] - self.waypoints[idx]
        seglen = self.cum_length[idx + 1] - self.cum_length[idx]
        t = (s - self.cum_length[idx]) / seglen
        return self.waypoints[idx] + t * seg

    def tangent_angle(self, segment: int) -> float:
        seg = self.waypoints[segment + 1] - self.waypoints[segment]
        return math.atan2(seg[1], seg[0])

    def pose_at(self, s: float) -> tuple[np.ndarray, float, int]:
        """Point, tangent angle and segment index at absolute arclength."""
        s = min(max(s, 0.0), self.length)
        idx = int(np.searchsorted(self.cum_length, s, side="right")) - 1
        idx = min(max(idx, 0), self.waypoints.shape[0] - 2)
        seg = self.waypoints[idx + 1] - self.waypoints[idx]
        seglen = self.cum_length[idx + 1] - self.cum_length[idx]
        t = (s - self.cum_length[idx]) / seglen
        return self.waypoints[idx] + t * seg, math.atan2(seg[1], seg[0]), idx


def sample_reference_points(path: ReferencePath, position, n_points: int,
                            spacing: float) -> np.ndarray:
    """Sample ``n_points`` look-ahead points on the path, spaced ``spacing``
    apart in arclength ahead of the projection of ``position``, clamped to
    the path end. Returns an (n_points, 2) array."""
    if spacing <= 0.0:
        raise ValueError("spacing must be positive")
    s0, _, _ = path.project(position)
    out = np.empty((n_points, 2))
    for m in range(n_points):
        out[m] = path.point_at(s0 + (m + 1) * spacing)
    return out


# ---------------------------------------------------------------------------
# Intersection construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Straight:
    p0: np.ndarray
    p1: np.ndarray


@dataclass(frozen=True)
class _Arc:
    center: np.ndarray
    radius: float
    a0: float                   # start angle, radians
    a1: float                   # end angle; a1 > a0 means CCW travel


def _piece_points(piece, arc_step_deg: float, radius_shift: float = 0.0,
                  lateral: float = 0.0) -> np.ndarray:
    """Discretize a piece, optionally offset: ``lateral`` shifts a straight
    along its left normal, ``radius_shift`` is added to an arc's radius."""
    if isinstance(piece, _Straight):
        d = piece.p1 - piece.p0
        n = np.array([-d[1], d[0]]) / math.hypot(d[0], d[1])   # left normal
        return np.array([piece.p0 + lateral * n, piece.p1 + lateral * n])
    sweep = piece.a1 - piece.a0
    n_seg = max(1, int(math.ceil(abs(sweep) / math.radians(arc_step_deg))))
    ang = piece.a0 + sweep * np.arange(n_seg + 1) / n_seg
    r = piece.radius + radius_shift
    return piece.center[None, :] + r * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def _pieces_polyline(pieces, arc_step_deg: float) -> np.ndarray:
    chunks = [_piece_points(p, arc_step_deg) for p in pieces]
    pts = [chunks[0]]
    for ch in chunks[1:]:
        pts.append(ch[1:] if np.allclose(ch[0], pts[-1][-1], atol=1e-9) else ch)
    return np.vstack(pts)


def _pieces_offset_polyline(pieces, offset: float, arc_step_deg: float) -> np.ndarray:
    """Offset curve of a piece chain; positive offset is to the left of
    travel. Pieces are tangent-continuous so the per-piece offsets join."""
    chunks = []
    for p in pieces:
        if isinstance(p, _Straight):
            chunks.append(_piece_points(p, arc_step_deg, lateral=offset))
        else:
            ccw = p.a1 > p.a0
            shift = -offset if ccw else offset
            chunks.append(_piece_points(p, arc_step_deg, radius_shift=shift))
    pts = [chunks[0]]
    for ch in chunks[1:]:
        pts.append(ch[1:] if np.allclose(ch[0], pts[-1][-1], atol=1e-9) else ch)
    return np.vstack(pts)


def _rot90(points: np.ndarray, k: int) -> np.ndarray:
    """Rotate points by k*90 degrees CCW about the origin."""
    c, s = [(1, 0), (0, 1), (-1, 0), (0, -1)][k % 4]
    rot = np.array([[c, -s], [s, c]], dtype=float)
    return points @ rot.T


def _rot_rect(r: Rect, k: int) -> Rect:
    corners = np.array([[r.xmin, r.ymin], [r.xmax, r.ymax]])
    rc = _rot90(corners, k)
    return Rect(float(rc[:, 0].min()), float(rc[:, 0].max()),
                float(rc[:, 1].min()), float(rc[:, 1].max()))


@dataclass
class IntersectionMap:
    """Four-way intersection: 12 reference paths (3 maneuvers per entry),
    per-path corridor boundaries, and entry/exit regions per arm."""

    config: MapConfig
    paths: list                 # list[ReferencePath], entry-major order
    corridors: list             # list[(Polyline left, Polyline right)] per path
    entry_regions: list         # list[Rect], one per entry arm
    exit_regions: list          # list[Rect], one per exit arm

    def paths_from_entry(self, entry: int) -> list:
        return [p for p in self.paths if p.entry == entry]

    def to_json(self) -> str:
        doc = {
            "lane_width": self.config.lane_width,
            "half_extent": self.config.half_extent,
            "entry_names": list(ENTRY_NAMES),
            "paths": [
                {
                    "maneuver": p.maneuver,
                    "entry": p.entry,
                    "exit": p.exit,
                    "waypoints": p.waypoints.tolist(),
                }
                for p in self.paths
            ],
            "corridors": [
                {"left": l.points.tolist(), "right": r.points.tolist()}
                for l, r in self.corridors
            ],
            "entry_regions": [vars(r) for r in self.entry_regions],
            "exit_regions": [vars(r) for r in self.exit_regions],
        }
        return json.dumps(doc, indent=1)


def build_intersection(config: MapConfig = MapConfig()) -> IntersectionMap:
    """Construct the intersection map from its configuration.

    Raises ValueError for geometrically infeasible configurations (turn radii
    below the lane width, arms shorter than the entry region, or turn arcs
    that would not fit the arm).
    """
    cfg = config
    w = cfg.lane_width
    if w <= 0.0 or cfg.arm_length <= 0.0:
        raise ValueError("lane width and arm length must be positive")
    if cfg.lanes_per_direction != 2:
        raise ValueError("only two lanes per direction are supported")
    if cfg.left_turn_radius < w or cfg.right_turn_radius < w:
        raise ValueError("turn radius below lane width is infeasible")
    if cfg.entry_region_length + cfg.path_end_margin >= cfg.arm_length:
        raise ValueError("arm too short for entry region plus end margin")

    hb = cfg.half_box
    he = cfg.half_extent
    inner = 0.5 * w              # inner lane center offset from the road axis
    outer = 1.5 * w              # outer lane center offset
    end = he - cfg.path_end_margin

    # Right-turn tangent points must stay on the arm.
    if cfg.right_turn_radius + outer > he - cfg.entry_region_length:
        raise ValueError("right-turn arc reaches into the entry region")

    # Pieces for the three west-entry maneuvers (traveling east, +x).
    rl = cfg.left_turn_radius
    rr = cfg.right_turn_radius
    west_pieces = {
        # inner lane -> CCW quarter arc -> north arm inner lane
        "left": [
            _Straight(np.array([-he, -inner]), np.array([inner - rl, -inner])),
            _Arc(np.array([inner - rl, -inner + rl]), rl, -0.5 * math.pi, 0.0),
            _Straight(np.array([inner, -inner + rl]), np.array([inner, end])),
        ],
        # outer lane straight through
        "straight": [
            _Straight(np.array([-he, -outer]), np.array([end, -outer])),
        ],
        # outer lane -> CW quarter arc -> south arm outer lane
        "right": [
            _Straight(np.array([-he, -outer]), np.array([-outer - rr, -outer])),
            _Arc(np.array([-outer - rr, -outer - rr]), rr, 0.5 * math.pi, 0.0),
            _Straight(np.array([-outer, -outer - rr]), np.array([-outer, -end])),
        ],
    }
    exit_of = {"left": 3, "straight": 2, "right": 1}   # from the west entry

    paths: list[ReferencePath] = []
    corridors: list[tuple[Polyline, Polyline]] = []
    for entry in range(4):
        for man in MANEUVERS:
            pieces = west_pieces[man]
            center = _pieces_polyline(pieces, cfg.arc_step_deg)
            left = _pieces_offset_polyline(pieces, +0.5 * w, cfg.arc_step_deg)
            right = _pieces_offset_polyline(pieces, -0.5 * w, cfg.arc_step_deg)
            paths.append(ReferencePath(
                _rot90(center, entry), man, entry, (exit_of[man] + entry) % 4))
            corridors.append((
                # corridor lies right of the left boundary and left of the right
                Polyline(_rot90(left, entry), "right"),
                Polyline(_rot90(right, entry), "left"),
            ))

    lo, hi = -he, -he + cfg.entry_region_length
    entry_w = Rect(lo, hi, -hb, 0.0)
    exit_w = Rect(lo, hi, 0.0, hb)
    entry_regions = [_rot_rect(entry_w, k) for k in range(4)]
    exit_regions = [_rot_rect(exit_w, k) for k in range(4)]

    return IntersectionMap(cfg, paths, corridors, entry_regions, exit_regions)
