"""Range-bearing sensing and the virtual-ring reconstruction used without a map.

The sensed boundary is the hit cloud of one scan, with consecutive hits linked
into short segments when they are close enough to belong to the same surface.
Arcs of virtual rings can be overlaid on it; they act as extra boundary for the
move-to-target checks until the robot leaves the avoidance shell.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from . import kernels
from .controller import (ControllerParams, HybridState, JumpKind, Region,
                         classify_from_projection)
from .environment import Projection
from .geometry import (TOL_ANGLE, angular_span, as_point, boundary_segments, cluster_directions,
                       cluster_points, conic_hull_contains, wrap_2pi)
from .morphology import WorkspaceModel


class SensorError(RuntimeError):
    pass


@dataclass(frozen=True)
class SensorConfig:
    R_s: float
    ray_count: int = 360
    noise_sigma: float = 0.0

    def validate(self, alpha: float | None = None) -> None:
        if not self.R_s > 0:
            raise ValueError("sensor range must be > 0")
        if self.ray_count < 8:
            raise ValueError("ray_count must be >= 8")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if alpha is not None and not self.R_s > 2 * alpha:
            raise ValueError("sensor range must exceed 2*alpha")

    @property
    def spacing(self) -> float:
        return 2 * math.pi / self.ray_count

    def thetas(self) -> NDArray[np.float64]:
        return -math.pi + self.spacing * np.arange(self.ray_count)


_WORLD_CACHE: dict[int, tuple[WorkspaceModel, NDArray, list]] = {}


def world_segments(model: WorkspaceModel) -> NDArray[np.float64]:
    """Packed boundary segments of the obstacle-occupied workspace (cached per model)."""
    hit = _WORLD_CACHE.get(id(model))
    if hit is None or hit[0] is not model:
        regs = model.occupied_regions()
        hit = (model, boundary_segments(regs), regs)
        _WORLD_CACHE[id(model)] = hit
    return hit[1]


def _world_regions(model: WorkspaceModel) -> list:
    world_segments(model)
    return _WORLD_CACHE[id(model)][2]


def true_clearance(x, model: WorkspaceModel) -> float:
    """Exact distance from ``x`` to the obstacle-occupied workspace (0 inside)."""
    x = as_point(x)
    segs = world_segments(model)
    if len(segs) == 0:
        return math.inf
    if any(r.contains(x) for r in _world_regions(model)):
        return 0.0
    return float(kernels.nearest_segment(x[0], x[1], segs)[0])


@dataclass
class Scan:
    origin: NDArray[np.float64]
    thetas: NDArray[np.float64]
    ranges: NDArray[np.float64]
    R_s: float
    sigma: float = 0.0

    @property
    def hits(self) -> NDArray[np.bool_]:
        return self.ranges < self.R_s

    @property
    def spacing(self) -> float:
        return 2 * math.pi / len(self.thetas)

    def points(self, only_hits: bool = True) -> NDArray[np.float64]:
        th, r = self.thetas, self.ranges
        if only_hits:
            m = self.hits
            th, r = th[m], r[m]
        return self.origin + r[:, None] * np.column_stack([np.cos(th), np.sin(th)])


def scan(x, model: WorkspaceModel, cfg: SensorConfig, rng_seed=None) -> Scan:
    """Simulated 2D scan; noise goes on returns that hit something."""
    x = as_point(x)
    if any(r.contains_strict(x) for r in _world_regions(model)):
        raise SensorError(f"sensor origin {x} lies inside an obstacle")
    th = cfg.thetas()
    segs = world_segments(model)
    if len(segs):
        r = kernels.ray_cast(x[0], x[1], th, segs, float(cfg.R_s))
    else:
        r = np.full(len(th), float(cfg.R_s))
    if cfg.noise_sigma > 0:
        rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
        hit = r < cfg.R_s
        r = r.copy()
        r[hit] = np.clip(r[hit] + rng.normal(0.0, cfg.noise_sigma, int(hit.sum())), 0.0, cfg.R_s)
    return Scan(x, th, r, float(cfg.R_s), float(cfg.noise_sigma))


def nearest_from_scan(scan: Scan, tol_angle: float | None = None,
                      tol_dist: float | None = None):
    """Closest sensed point(s); bearings of near-minimal returns are clustered."""
    from .geometry import ProjectionResult

    hit = np.nonzero(scan.hits)[0]
    if len(hit) == 0:
        return ProjectionResult(float(scan.R_s), [], False)
    r = scan.ranges[hit]
    dmin = float(r.min())
    if tol_dist is None:
        tol_dist = 1e-9 * (1.0 + dmin) + 3.0 * scan.sigma
    if tol_angle is None:
        tol_angle = max(TOL_ANGLE, 2.5 * scan.spacing)
    sel = hit[r <= dmin + tol_dist]
    groups = cluster_directions(scan.thetas[sel], tol_angle)
    pts = []
    for g in groups:
        members = sel[g]
        th = scan.thetas[members]
        phi = math.atan2(np.sin(th).sum(), np.cos(th).sum())
        rr = float(scan.ranges[members].min())
        pts.append(scan.origin + rr * np.array([math.cos(phi), math.sin(phi)]))
    return ProjectionResult(dmin, pts, len(pts) == 1)


def collision_corridor(x, r_a: float) -> NDArray[np.float64]:
    """Rectangle vertices ``x_{+1}, x_{-1}, 0_{-1}, 0_{+1}`` around the segment to the origin."""
    x = as_point(x)
    th = math.pi / 2 + math.atan2(x[1], x[0])
    o = r_a * np.array([math.cos(th), math.sin(th)])
    return np.array([x + o, x - o, -o, o])


def collision_corridor_blocked(x, points, r_a: float, gap: float = 0.0) -> bool:
    """Whether any sensed point falls inside the corridor from ``x`` to the origin.

    ``gap`` widens the corridor by ``gap * |p - x|`` per point, the spacing of
    neighbouring rays at that range; the exit test uses it so that a corner
    falling between two rays cannot make the corridor look clear.
    """
    x = as_point(x)
    L = math.hypot(x[0], x[1])
    if L == 0.0:
        return False
    pts = points.points() if isinstance(points, Scan) else np.asarray(points, dtype=np.float64)
    if len(pts) == 0:
        return False
    u = x / L
    along = pts @ u
    perp = np.abs(pts[:, 0] * u[1] - pts[:, 1] * u[0])
    lim = r_a
    if gap > 0.0:
        lim = r_a + gap * np.hypot(pts[:, 0] - x[0], pts[:, 1] - x[1])
    return bool(np.any((along >= 0.0) & (along <= L) & (perp < lim)))


@dataclass
class Arc:
    """Counter-clockwise arc of the circle (center, radius) from ``start`` over ``width``."""

    center: NDArray[np.float64]
    radius: float
    start: float
    width: float

    def __post_init__(self):
        self.center = as_point(self.center)

    @classmethod
    def spanning(cls, center, radius: float, points) -> "Arc":
        c = as_point(center)
        ang = [math.atan2(p[1] - c[1], p[0] - c[0]) for p in points]
        start, width = angular_span(ang)
        if width > math.pi + 1e-12:
            # contacts not inside any half-plane: the hull is the whole plane
            start, width = 0.0, 2 * math.pi
        return cls(c, float(radius), start, width)

    def contains_bearing(self, phi: float) -> bool:
        return wrap_2pi(phi - self.start) <= self.width + 1e-12

    def endpoints(self) -> NDArray[np.float64]:
        a = np.array([self.start, self.start + self.width])
        return self.center + self.radius * np.column_stack([np.cos(a), np.sin(a)])

    def project(self, x) -> tuple[float, NDArray[np.float64]]:
        x = as_point(x)
        u = x - self.center
        n = math.hypot(u[0], u[1])
        if n > 0 and self.contains_bearing(math.atan2(u[1], u[0])):
            p = self.center + self.radius * u / n
            return abs(self.radius - n), p
        e = self.endpoints()
        de = np.hypot(e[:, 0] - x[0], e[:, 1] - x[1])
        k = int(np.argmin(de))
        return float(de[k]), e[k]

    def samples(self, step: float) -> NDArray[np.float64]:
        n = max(2, int(math.ceil(self.width * self.radius / max(step, 1e-9))) + 1)
        a = self.start + np.linspace(0.0, self.width, n)
        return self.center + self.radius * np.column_stack([np.cos(a), np.sin(a)])


@dataclass
class VirtualRing:
    center: NDArray[np.float64]
    radius: float
    active: bool = True
    arc: Arc | None = None  # set while the ring is held at a multi-contact pose

    def __post_init__(self):
        self.center = as_point(self.center)

    @property
    def held(self) -> bool:
        return self.arc is not None

    def slack(self, x, r_a: float) -> float:
        """``|x - c| + r_a - v_r``; nonpositive while the body is enclosed."""
        x = as_point(x)
        return float(math.hypot(*(x - self.center)) + r_a - self.radius)


class SensedBoundary:
    """One scan's hit cloud as a polyline set, plus overlay arcs."""

    def __init__(self, scan: Scan, overlays=(), link_factor: float = 4.0):
        self.scan = scan
        self.overlays: list[Arc] = list(overlays)
        self.sigma = scan.sigma
        self.spacing = scan.spacing
        idx = np.nonzero(scan.hits)[0]
        pts_all = scan.points(only_hits=False)
        self.points = pts_all[idx]
        self.idx = idx
        n = len(scan.ranges)
        hits = scan.hits
        j = (idx + 1) % n
        ok = hits[j] & (j != idx)
        a, b = idx[ok], j[ok]
        gap = np.hypot(*(pts_all[b] - pts_all[a]).T)
        reach = link_factor * np.maximum(scan.ranges[a], scan.ranges[b]) * self.spacing + 4 * self.sigma
        lk = gap <= reach
        a, b = a[lk], b[lk]
        used = np.zeros(n, dtype=bool)
        used[a] = used[b] = True
        lone = idx[~used[idx]]
        segs = np.vstack([np.hstack([pts_all[a], pts_all[b]]),
                          np.hstack([pts_all[lone], pts_all[lone]])])
        self.segs = np.ascontiguousarray(segs.reshape(-1, 4))

    @property
    def empty(self) -> bool:
        return len(self.segs) == 0 and not self.overlays

    def _link(self, d: float) -> float:
        return 3.0 * (d + 1e-3) * self.spacing + 6.0 * self.sigma + 1e-9

    def _tol(self, d: float) -> float:
        return 1e-9 * (1.0 + d) + 3.0 * self.sigma

    def nearest_cloud_point(self, x) -> tuple[float, NDArray[np.float64] | None]:
        if len(self.segs) == 0:
            return math.inf, None
        x = as_point(x)
        d, i, t = kernels.nearest_segment(x[0], x[1], self.segs)
        s = self.segs[i]
        return float(d), np.array([s[0] + t * (s[2] - s[0]), s[1] + t * (s[3] - s[1])])

    def _cloud_feet(self, x, extra: float = 0.0):
        d, t = kernels.seg_distances(x[0], x[1], self.segs)
        dmin = float(d.min())
        sel = np.nonzero(d <= dmin + self._tol(dmin) + extra)[0]
        s = self.segs[sel]
        feet = s[:, 0:2] + t[sel, None] * (s[:, 2:4] - s[:, 0:2])
        return dmin, d[sel], feet

    def project(self, x, include_overlays: bool = True) -> Projection | None:
        """Nearest point over cloud and overlays; ``chain`` is -1 for the cloud, else overlay index."""
        x = as_point(x)
        cand_d, cand_p, cand_src = [], [], []
        if len(self.segs):
            dmin, dd, feet = self._cloud_feet(x)
            cand_d.extend(dd)
            cand_p.extend(feet)
            cand_src.extend([-1] * len(dd))
        if include_overlays:
            for k, arc in enumerate(self.overlays):
                da, pa = arc.project(x)
                cand_d.append(da)
                cand_p.append(pa)
                cand_src.append(k)
        if not cand_d:
            return None
        cd = np.array(cand_d)
        cp = np.array(cand_p)
        dmin = float(cd.min())
        keep = np.nonzero(cd <= dmin + self._tol(dmin))[0]
        groups = cluster_points(cp[keep], self._link(dmin))
        reps = [keep[g[int(np.argmin(cd[keep[g]]))]] for g in groups]
        best = keep[int(np.argmin(cd[keep]))]
        return Projection(dmin, cp[best].copy(), len(groups) == 1, int(cand_src[best]),
                          [cp[r].copy() for r in reps])

    def contacts(self, c, radius: float, extra: float = 0.0) -> tuple[float, list]:
        """Distance from ``c`` to the cloud and the contact clusters near ``radius``."""
        c = as_point(c)
        if len(self.segs) == 0:
            return math.inf, []
        d, t = kernels.seg_distances(c[0], c[1], self.segs)
        dmin = float(d.min())
        lim = max(radius, dmin) + self._tol(radius) + extra
        sel = np.nonzero(d <= lim)[0]
        if len(sel) == 0:
            return dmin, []
        s = self.segs[sel]
        feet = s[:, 0:2] + t[sel, None] * (s[:, 2:4] - s[:, 0:2])
        groups = cluster_points(feet, self._link(radius))
        return dmin, [feet[g[int(np.argmin(d[sel[g]]))]] for g in groups]

    def ring_valid(self, c, radius: float) -> bool:
        c = as_point(c)
        if len(self.segs) == 0:
            return True
        return float(kernels.nearest_segment(c[0], c[1], self.segs)[0]) >= radius - self._tol(radius)

    def unique_contact(self, c, radius: float) -> bool:
        dmin, groups = self.contacts(c, radius)
        return dmin >= radius - self._tol(radius) and len(groups) == 1

    def sample_points(self, arcs=None) -> NDArray[np.float64]:
        arcs = self.overlays if arcs is None else arcs
        parts = [self.points]
        step = max(self.spacing * 0.5, 1e-3)
        for a in arcs:
            parts.append(a.samples(step * a.radius))
        return np.concatenate(parts) if parts else np.zeros((0, 2))

    def chain_points(self, p, link: float) -> NDArray[np.float64]:
        """Cloud points single-linked (gap < link) to the one nearest ``p``."""
        if len(self.points) == 0:
            return self.points
        groups = cluster_points(self.points, link)
        p = as_point(p)
        k = int(np.argmin(np.hypot(self.points[:, 0] - p[0], self.points[:, 1] - p[1])))
        for g in groups:
            if k in g:
                return self.points[g]
        return self.points[[k]]


def _unit(v) -> NDArray[np.float64]:
    n = math.hypot(v[0], v[1])
    if n == 0:
        raise SensorError("zero-length normal")
    return np.asarray(v, dtype=np.float64) / n


def place_ring_on_landing(x, nearest: Projection, params: ControllerParams, beta: float,
                          boundary: SensedBoundary, retries: int = 8):
    """Case A ring (or reuse of an overlay ring); ``None`` when no radius gives one contact.

    Returns ``(ring, gamma)``.
    """
    x = as_point(x)
    ra = params.r_a
    if nearest.chain >= 0:
        arc = boundary.overlays[nearest.chain]
        # any larger ring tangent inside this arc would cross it
        return VirtualRing(arc.center.copy(), arc.radius, True, arc), arc.radius - ra
    n = _unit(x - nearest.point)
    lo = beta - ra
    g0 = 0.5 * (lo + (params.alpha - ra))
    for k in range(retries + 1):
        g = lo + (g0 - lo) / 2 ** k
        vr = ra + g
        c = nearest.point + vr * n
        if boundary.unique_contact(c, vr):
            return VirtualRing(c, vr, True, None), g
    return None


def case_b_arc(x, boundary: SensedBoundary, d: float, widen: float = 0.0) -> Arc | None:
    """Arc of the ring centred at ``x`` with radius ``d`` spanning its contact fan."""
    dmin, groups = boundary.contacts(x, d, extra=widen)
    pts = list(groups)
    for arc in boundary.overlays:
        da, pa = arc.project(x)
        if da <= d + boundary._tol(d) + widen:
            pts.append(pa)
    if len(pts) < 2:
        return None
    return Arc.spanning(x, d, pts)


def ring_track(x, boundary: SensedBoundary, ring: VirtualRing, iters: int = 40):
    """Move the ring with the robot; hold it where it would touch the cloud twice.

    Returns ``(ring, effective_projection)``. The effective projection is the
    cloud projection while tracking and the projection onto the held arc
    otherwise; it is always a single point.
    """
    x = as_point(x)
    vr = ring.radius
    d, p = boundary.nearest_cloud_point(x)
    if p is not None and d > 0:
        n = (x - p) / d
        c_new = p + vr * n
        proj = boundary.project(x, include_overlays=False)
        if proj.unique and boundary.unique_contact(c_new, vr):
            return VirtualRing(c_new, vr, True, None), Projection(d, p, True, -1, [p])
    if ring.held:
        da, pa = ring.arc.project(x)
        return ring, Projection(da, pa, True, -2, [pa])
    if p is None or d == 0:
        da = abs(vr - math.hypot(*(x - ring.center)))
        pa = ring.center + vr * _unit(x - ring.center)
        return ring, Projection(da, pa, True, -2, [pa])
    # last valid centre between the previous one and the candidate
    lo, hi = 0.0, 1.0
    c0 = ring.center
    if not boundary.ring_valid(c0, vr):
        lo = None
    if lo is not None:
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if boundary.ring_valid(c0 + mid * (c_new - c0), vr):
                lo = mid
            else:
                hi = mid
        c_hold = c0 + lo * (c_new - c0)
    else:
        c_hold = c0
    dmin, groups = boundary.contacts(c_hold, vr, extra=max(2e-3 * vr, 3 * boundary.sigma))
    if not groups:
        groups = [p]
    arc = Arc.spanning(c_hold, vr, groups)
    held = VirtualRing(c_hold, vr, True, arc)
    da, pa = arc.project(x)
    return held, Projection(da, pa, True, -2, [pa])


@dataclass
class SensorEvent:
    kind: str                      # "jump" or "augment"
    jump: JumpKind | None = None
    ring: VirtualRing | None = None
    gamma: float | None = None
    gamma_s: float | None = None
    arc: Arc | None = None
    proj: Projection | None = None


@dataclass
class EncounterState:
    """Mutable per-run state of the sensor-based mode logic."""

    beta: float
    overlays: list = field(default_factory=list)
    ring: VirtualRing | None = None
    gamma: float | None = None
    gamma_s: float | None = None

    def inside_overlay(self, x, r_a: float) -> Arc | None:
        for arc in self.overlays:
            if math.hypot(*(as_point(x) - arc.center)) + r_a <= arc.radius + 1e-9:
                return arc
        return None


def identify(state: HybridState, boundary: SensedBoundary, enc: EncounterState,
             params: ControllerParams) -> SensorEvent | None:
    """Event (jump or boundary augmentation) at the current state; never mutates."""
    x = state.x
    ra = params.r_a
    if state.m == 0:
        if boundary.empty:
            return None
        proj = boundary.project(x)
        if proj is None:
            return None
        holder = enc.inside_overlay(x, ra)
        beta = 0.5 * (holder.radius + ra) if holder is not None else enc.beta
        if proj.distance > beta:
            return None
        if proj.unique:
            inner = float(x @ (x - proj.point))
            if inner < 0 or not collision_corridor_blocked(x, boundary.sample_points(), ra):
                return None
            placed = place_ring_on_landing(x, proj, params, beta, boundary)
            if placed is not None:
                ring, gamma = placed
                return SensorEvent("jump", JumpKind.LANDING, ring, gamma, beta - ra, proj=proj)
            if holder is None:
                widen = (params.alpha - beta) * 2.0 ** -7
                arc = case_b_arc(x, boundary, proj.distance, widen)
                if arc is not None:
                    return SensorEvent("augment", arc=arc, proj=proj)
            ring = VirtualRing(x.copy(), proj.distance, True, None)
            return SensorEvent("jump", JumpKind.LANDING, ring, proj.distance - ra, beta - ra, proj=proj)
        if holder is not None:
            return None
        if conic_hull_contains(x, proj.points, np.zeros(2)):
            arc = Arc.spanning(x, proj.distance, proj.points)
            return SensorEvent("augment", arc=arc, proj=proj)
        return None

    if float(np.hypot(*x)) <= params.delta:
        return SensorEvent("jump", JumpKind.NEAR_TARGET)
    ring, proj = ring_track(x, boundary, enc.ring)
    if proj.distance >= ra + params.alpha:
        return SensorEvent("jump", JumpKind.LEFT_SHELL)
    if float(np.hypot(*state.h)) - float(np.hypot(*x)) < params.epsilon:
        return None
    cloud_p = boundary.nearest_cloud_point(x)[1]
    pts = boundary.chain_points(cloud_p if cloud_p is not None else proj.point, 2 * params.alpha)
    if ring.held:
        pts = np.concatenate([pts, ring.arc.samples(boundary.spacing * ring.radius)])
    blocked = collision_corridor_blocked(x, pts, ra, boundary.spacing)
    region = classify_from_projection(x, proj.point, blocked, state.m)
    own = Region.EXIT_CW if state.m == 1 else Region.EXIT_CCW
    if region in (Region.EXIT_ALWAYS, own):
        return SensorEvent("jump", JumpKind.EXIT, proj=proj)
    return None


def sensor_jump_identification(state: HybridState, scan: Scan, ring: VirtualRing | None,
                               params: ControllerParams, beta: float | None = None,
                               overlays=()) -> JumpKind | None:
    """Jump decision from one scan (augmentations are reported as no jump)."""
    if beta is None:
        beta = 0.5 * (params.r_a + params.alpha)
    boundary = SensedBoundary(scan, overlays)
    enc = EncounterState(beta, list(overlays), ring)
    if state.m != 0 and ring is None:
        raise SensorError("avoidance mode needs an active ring")
    ev = identify(state, boundary, enc, params)
    return ev.jump if ev is not None and ev.kind == "jump" else None


def save_scan_csv(s: Scan, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# x={float(s.origin[0])!r} y={float(s.origin[1])!r} R_s={float(s.R_s)!r}\n")
        fh.write("theta_rad,range_m\n")
        for th, r in zip(s.thetas, s.ranges):
            fh.write(f"{float(th)!r},{float(r)!r}\n")


def load_scan_csv(path) -> Scan:
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().lstrip("#").split()
        kv = dict(p.split("=", 1) for p in head)
        fh.readline()
        rows = [tuple(map(float, ln.split(","))) for ln in fh if ln.strip()]
    arr = np.array(rows, dtype=np.float64).reshape(-1, 2)
    return Scan(np.array([float(kv["x"]), float(kv["y"])]), arr[:, 0].copy(), arr[:, 1].copy(),
                float(kv["R_s"]))
