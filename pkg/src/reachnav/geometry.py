"""Exact planar primitives over points, segments and polygonal regions.

Points are length-2 float arrays (tuples are accepted everywhere). A
``PolygonRegion`` is a closed set bounded by simple rings; with
``exterior=True`` it denotes the closure of the complement of the polygon,
which is how the area outside a bounded workspace is represented.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from . import kernels

TOL_ANGLE = 1e-3


class GeometryError(ValueError):
    """Raised on degenerate or non-finite geometric input."""


def as_point(p) -> NDArray[np.float64]:
    a = np.asarray(p, dtype=np.float64).reshape(2)
    if not np.all(np.isfinite(a)):
        raise GeometryError(f"non-finite point {p!r}")
    return a


def _signed_area(ring: NDArray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True)
class Segment:
    a: NDArray[np.float64]
    b: NDArray[np.float64]

    def __init__(self, a, b):
        object.__setattr__(self, "a", as_point(a))
        object.__setattr__(self, "b", as_point(b))


@dataclass(frozen=True, eq=False)
class PolygonRegion:
    rings: tuple
    exterior: bool = False
    segments: NDArray[np.float64] = field(init=False, repr=False)

    def __init__(self, rings: Sequence, exterior: bool = False):
        fixed = []
        for k, r in enumerate(rings):
            arr = np.asarray(r, dtype=np.float64).reshape(-1, 2)
            if len(arr) > 1 and np.array_equal(arr[0], arr[-1]):
                arr = arr[:-1]
            if len(arr) < 3:
                raise GeometryError("ring needs at least 3 vertices")
            if not np.all(np.isfinite(arr)):
                raise GeometryError("non-finite ring vertex")
            area = _signed_area(arr)
            # outer ring counter-clockwise, holes clockwise
            if (k == 0 and area < 0) or (k > 0 and area > 0):
                arr = arr[::-1]
            arr.setflags(write=False)
            fixed.append(arr)
        if not fixed:
            raise GeometryError("empty region")
        object.__setattr__(self, "rings", tuple(fixed))
        object.__setattr__(self, "exterior", bool(exterior))
        segs = np.concatenate([np.hstack([r, np.roll(r, -1, axis=0)]) for r in fixed])
        segs = np.ascontiguousarray(segs)
        segs.setflags(write=False)
        object.__setattr__(self, "segments", segs)

    @property
    def outer(self) -> NDArray[np.float64]:
        return self.rings[0]

    def bounds(self) -> tuple[float, float, float, float]:
        r = self.rings[0]
        return float(r[:, 0].min()), float(r[:, 1].min()), float(r[:, 0].max()), float(r[:, 1].max())

    def area(self) -> float:
        a = sum(_signed_area(r) for r in self.rings)
        return math.inf if self.exterior else a

    def contains(self, p) -> bool:
        """Closed-set membership."""
        p = as_point(p)
        inside = kernels.point_in_rings(p[0], p[1], self.segments)
        if self.exterior:
            if not inside:
                return True
            return kernels.nearest_segment(p[0], p[1], self.segments)[0] <= 1e-12
        if inside:
            return True
        return kernels.nearest_segment(p[0], p[1], self.segments)[0] <= 1e-12

    def contains_strict(self, p) -> bool:
        p = as_point(p)
        if kernels.nearest_segment(p[0], p[1], self.segments)[0] <= 1e-12:
            return False
        inside = kernels.point_in_rings(p[0], p[1], self.segments)
        return (not inside) if self.exterior else inside

    def to_json(self) -> dict:
        out = {"rings": [r.tolist() for r in self.rings]}
        if self.exterior:
            out["exterior"] = True
        return out


def disk_polygon(center, radius: float, n: int = 128) -> PolygonRegion:
    c = as_point(center)
    t = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    return PolygonRegion([c + radius * np.c_[np.cos(t), np.sin(t)]])


def box_polygon(xmin: float, ymin: float, xmax: float, ymax: float) -> PolygonRegion:
    return PolygonRegion([[(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)]])


def is_convex(region: PolygonRegion, tol: float = 1e-12) -> bool:
    if region.exterior or len(region.rings) != 1:
        return False
    r = region.outer
    e = np.roll(r, -1, axis=0) - r
    cr = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
    return bool(np.all(cr >= -tol))


def _regions(region) -> list[PolygonRegion]:
    if isinstance(region, PolygonRegion):
        return [region]
    regs = list(region)
    return regs


def boundary_segments(region) -> NDArray[np.float64]:
    regs = _regions(region)
    if not regs:
        return np.zeros((0, 4))
    if len(regs) == 1:
        return regs[0].segments
    return np.ascontiguousarray(np.concatenate([r.segments for r in regs]))


def region_contains(region, p) -> bool:
    return any(r.contains(p) for r in _regions(region))


def distance_to_region(x, region) -> float:
    """Euclidean distance from ``x`` to a closed region (0 inside)."""
    regs = _regions(region)
    if not regs:
        raise GeometryError("empty region")
    x = as_point(x)
    if any(r.contains(x) for r in regs):
        return 0.0
    return float(kernels.nearest_segment(x[0], x[1], boundary_segments(regs))[0])


@dataclass
class ProjectionResult:
    distance: float
    points: list
    unique: bool

    @property
    def point(self) -> NDArray[np.float64]:
        if not self.unique:
            raise GeometryError("projection is not unique")
        return self.points[0]


def cluster_directions(angles: NDArray, tol_angle: float) -> list[list[int]]:
    """Group indices whose bearings chain together with gaps <= tol_angle.

    Wrap-around at +-pi is honoured so a cluster may straddle the cut.
    """
    n = len(angles)
    if n == 0:
        return []
    order = np.argsort(angles)
    a = np.asarray(angles)[order]
    gaps = np.diff(np.r_[a, a[0] + 2 * np.pi])
    breaks = np.nonzero(gaps > tol_angle)[0]
    if len(breaks) == 0:
        return [order.tolist()]
    start = (breaks[-1] + 1) % n
    groups, cur = [], []
    for k in range(n):
        i = (start + k) % n
        cur.append(int(order[i]))
        if gaps[i] > tol_angle:
            groups.append(cur)
            cur = []
    if cur:
        groups.append(cur)
    return groups


def projection_set(x, region, tol_dist: float | None = None,
                   tol_angle: float = TOL_ANGLE) -> ProjectionResult:
    """Closest boundary points of ``region`` to ``x``, one per direction cluster."""
    regs = _regions(region)
    if not regs:
        raise GeometryError("empty region")
    x = as_point(x)
    if any(r.contains(x) for r in regs):
        return ProjectionResult(0.0, [x.copy()], True)
    segs = boundary_segments(regs)
    d, t = kernels.seg_distances(x[0], x[1], segs)
    dmin = float(d.min())
    if tol_dist is None:
        tol_dist = 1e-9 * (1.0 + dmin)
    sel = np.nonzero(d <= dmin + tol_dist)[0]
    feet = segs[sel, 0:2] + t[sel, None] * (segs[sel, 2:4] - segs[sel, 0:2])
    ang = np.arctan2(feet[:, 1] - x[1], feet[:, 0] - x[0])
    groups = cluster_directions(ang, tol_angle)
    pts = []
    for g in groups:
        k = g[int(np.argmin(d[sel[g]]))]
        pts.append(feet[k].copy())
    return ProjectionResult(dmin, pts, len(pts) == 1)


def signed_angle(p, q) -> float:
    """Counter-clockwise angle from ``p`` to ``q`` in (-pi, pi]."""
    p = as_point(p)
    q = as_point(q)
    if not (np.any(p) and np.any(q)):
        raise GeometryError("zero vector has no direction")
    cr = p[0] * q[1] - p[1] * q[0]
    dt = p[0] * q[0] + p[1] * q[1]
    if cr == 0.0 and dt < 0.0:
        return math.pi
    a = math.atan2(cr, dt)
    return math.pi if a == -math.pi else a


def wrap_2pi(a: float) -> float:
    """Map an angle to [0, 2pi)."""
    a = math.fmod(a, 2 * math.pi)
    return a + 2 * math.pi if a < 0 else a


def wrap_pi(a: float) -> float:
    """Map an angle to [-pi, pi)."""
    return (a + math.pi) % (2 * math.pi) - math.pi


def _segment_params(seg: Segment, segs: NDArray) -> list[float]:
    a, b = seg.a, seg.b
    e = b - a
    ts = [0.0, 1.0]
    L2 = float(e @ e)
    if L2 == 0.0:
        return [0.0]
    for cx, cy, dx, dy in segs:
        f = np.array([dx - cx, dy - cy])
        den = e[0] * f[1] - e[1] * f[0]
        w = np.array([cx - a[0], cy - a[1]])
        if abs(den) > 1e-15:
            t = (w[0] * f[1] - w[1] * f[0]) / den
            u = (w[0] * e[1] - w[1] * e[0]) / den
            if -1e-12 <= u <= 1 + 1e-12 and 0.0 < t < 1.0:
                ts.append(float(t))
        for v in ((cx, cy), (dx, dy)):
            t = float((np.array(v) - a) @ e / L2)
            if 0.0 < t < 1.0:
                ts.append(t)
    return sorted(set(ts))


def segment_intersects_interior(seg: Segment, region) -> bool:
    """True iff the segment meets the open interior of the region."""
    for r in _regions(region):
        segs = r.segments
        d = kernels.segment_min_distance(seg.a[0], seg.a[1], seg.b[0], seg.b[1], segs)
        if d > 0.0:
            # no boundary contact: either fully inside or fully outside
            if r.contains_strict(seg.a):
                return True
            continue
        ts = _segment_params(seg, segs)
        probes = ts + [0.5 * (u + v) for u, v in zip(ts[:-1], ts[1:])]
        e = seg.b - seg.a
        for t in probes:
            if r.contains_strict(seg.a + t * e):
                return True
    return False


def segment_distance_to_segments(seg: Segment, segs: NDArray) -> float:
    return float(kernels.segment_min_distance(seg.a[0], seg.a[1], seg.b[0], seg.b[1], segs))


def angular_span(angles) -> tuple[float, float]:
    """Smallest counter-clockwise arc ``(start, width)`` covering all bearings."""
    a = np.sort(np.asarray(angles, dtype=np.float64))
    gaps = np.diff(np.r_[a, a[0] + 2 * np.pi])
    k = int(np.argmax(gaps))
    return float(a[(k + 1) % len(a)]), float(2 * np.pi - gaps[k])


def conic_hull_contains(vertex, generators: Sequence, query, tol: float = 1e-12) -> bool:
    """Membership of ``query`` in the convex cone at ``vertex`` spanned by generators."""
    v = as_point(vertex)
    gens = [as_point(g) - v for g in generators]
    if not gens:
        raise GeometryError("no generators")
    if any(not np.any(g) for g in gens):
        raise GeometryError("generator coincides with the vertex")
    q = as_point(query) - v
    if not np.any(q):
        return True
    ang = np.array([math.atan2(g[1], g[0]) for g in gens])
    start, width = angular_span(ang)
    aq = math.atan2(q[1], q[0])
    rel = wrap_2pi(aq - start)
    if rel > 2 * np.pi - tol:
        rel = 0.0
    if width < np.pi - tol:
        return rel <= width + tol
    if width > np.pi + tol:
        # not contained in any half-plane: the cone is the whole plane
        return True
    # exactly opposite extremes: a line, or a half-plane if anything lies between
    rel_g = np.array([wrap_2pi(x - start) for x in ang])
    between = np.any((rel_g > tol) & (rel_g < np.pi - tol))
    if between:
        return rel <= np.pi + tol
    return rel <= tol or abs(rel - np.pi) <= tol


def ray_cast(x, theta: float, region, max_range: float) -> float:
    """Distance along bearing ``theta`` to the first boundary crossing."""
    if max_range <= 0:
        raise GeometryError("max_range must be positive")
    regs = _regions(region)
    if not regs:
        return float(max_range)
    x = as_point(x)
    if any(r.contains(x) for r in regs):
        return 0.0
    th = np.array([theta], dtype=np.float64)
    return float(kernels.ray_cast(x[0], x[1], th, boundary_segments(regs), float(max_range))[0])


def ray_cast_many(x, thetas: NDArray, segs: NDArray, max_range: float) -> NDArray:
    x = as_point(x)
    return kernels.ray_cast(x[0], x[1], np.ascontiguousarray(thetas, dtype=np.float64),
                            segs, float(max_range))


def cluster_points(pts: NDArray, link: float) -> list[NDArray]:
    """Single-linkage groups of points closer than ``link`` (index arrays)."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    if n <= 1:
        return [np.arange(n)] if n else []
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components
    from scipy.spatial import cKDTree

    pairs = cKDTree(pts).query_pairs(link, output_type="ndarray")
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    k, lab = connected_components(g, directed=False)
    return [np.nonzero(lab == i)[0] for i in range(k)]
