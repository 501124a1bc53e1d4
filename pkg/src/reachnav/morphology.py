"""Grid morphology for obstacle reshaping.

The occupancy grid stores ``bits[row, col]`` with row 0 at the lowest y.
Dilation and erosion use the closed discrete disk and are computed by
thresholding exact squared distance transforms, so they form an adjunction
on the finite grid: dilation treats off-grid cells as free and erosion
treats them as occupied. That pairing keeps the closing exactly
idempotent, extensive and increasing, including at the grid edge.
"""
from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.stats import qmc

from . import kernels
from .geometry import PolygonRegion, is_convex


class MorphologyError(ValueError):
    pass


class NoFeasibleAlpha(MorphologyError):
    pass


@dataclass(eq=False)
class GridMask:
    origin: tuple[float, float]
    resolution: float
    bits: NDArray[np.bool_]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.resolution > 0:
            raise MorphologyError("resolution must be positive")
        self.bits = np.ascontiguousarray(self.bits, dtype=bool)
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def like(self, bits) -> "GridMask":
        return GridMask(self.origin, self.resolution, bits, dict(self.meta))

    def cell_of(self, p) -> tuple[int, int]:
        """(row, col) of the cell containing point ``p``."""
        c = int(math.floor((p[0] - self.origin[0]) / self.resolution))
        r = int(math.floor((p[1] - self.origin[1]) / self.resolution))
        return r, c

    def in_grid(self, rc) -> bool:
        return 0 <= rc[0] < self.height and 0 <= rc[1] < self.width

    def centers(self, rows=None, cols=None) -> NDArray[np.float64]:
        """World coordinates of cell centers for index arrays."""
        x = self.origin[0] + (np.asarray(cols) + 0.5) * self.resolution
        y = self.origin[1] + (np.asarray(rows) + 0.5) * self.resolution
        return np.stack([x, y], axis=-1)

    def __eq__(self, other):
        return (isinstance(other, GridMask) and self.origin == other.origin
                and self.resolution == other.resolution
                and np.array_equal(self.bits, other.bits))


@dataclass(eq=False)
class WorkspaceModel:
    """Ground-truth world: a workspace polygon (None when unbounded) and obstacles."""

    workspace: PolygonRegion | None
    obstacles: list[PolygonRegion]
    r: float
    r_s: float = 0.0
    extent: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        if self.r < 0 or self.r_s < 0:
            raise MorphologyError("radii must be nonnegative")

    @property
    def r_a(self) -> float:
        return self.r + self.r_s

    @property
    def bounded(self) -> bool:
        return self.workspace is not None

    def occupied_regions(self) -> list[PolygonRegion]:
        """Obstacles plus the area outside the workspace as a closed set."""
        regs = list(self.obstacles)
        if self.workspace is not None:
            regs.append(PolygonRegion(self.workspace.rings[:1], exterior=True))
        return regs

    def bounds(self) -> tuple[float, float, float, float]:
        if self.workspace is not None:
            return self.workspace.bounds()
        boxes = [o.bounds() for o in self.obstacles]
        if self.extent is not None:
            boxes.append(tuple(self.extent))
        boxes.append((0.0, 0.0, 0.0, 0.0))
        b = np.array(boxes)
        return float(b[:, 0].min()), float(b[:, 1].min()), float(b[:, 2].max()), float(b[:, 3].max())


def _scanline_fill(ring_sets: Sequence[np.ndarray], ys: NDArray, xs0: float,
                   res: float, width: int) -> NDArray[np.bool_]:
    """Even-odd fill of cell centers, one row per entry of ``ys``."""
    out = np.zeros((len(ys), width), dtype=bool)
    segs = np.concatenate([np.hstack([r, np.roll(r, -1, axis=0)]) for r in ring_sets])
    ay, by = segs[:, 1], segs[:, 3]
    for i, y in enumerate(ys):
        m = (ay > y) != (by > y)
        if not m.any():
            continue
        s = segs[m]
        xc = np.sort(s[:, 0] + (y - s[:, 1]) * (s[:, 2] - s[:, 0]) / (s[:, 3] - s[:, 1]))
        for x0, x1 in zip(xc[0::2], xc[1::2]):
            # centers strictly left of a crossing flip parity (crossing-number rule)
            c0 = int(math.ceil((x0 - xs0) / res - 0.5))
            c1 = int(math.ceil((x1 - xs0) / res - 0.5))
            c0 = max(c0, 0)
            c1 = min(c1, width)
            if c1 > c0:
                out[i, c0:c1] = True
    return out


def _overlap_cells(mask: NDArray, segs: NDArray, origin, res: float) -> None:
    """Mark cells whose square is touched by any segment (Liang-Barsky per cell)."""
    h, w = mask.shape
    for ax, ay, bx, by in segs:
        c0 = max(int(math.floor((min(ax, bx) - origin[0]) / res)), 0)
        c1 = min(int(math.floor((max(ax, bx) - origin[0]) / res)), w - 1)
        r0 = max(int(math.floor((min(ay, by) - origin[1]) / res)), 0)
        r1 = min(int(math.floor((max(ay, by) - origin[1]) / res)), h - 1)
        if c1 < c0 or r1 < r0:
            continue
        rr, cc = np.mgrid[r0:r1 + 1, c0:c1 + 1]
        xlo = origin[0] + cc * res
        ylo = origin[1] + rr * res
        dx, dy = bx - ax, by - ay
        t0 = np.zeros(rr.shape)
        t1 = np.ones(rr.shape)
        ok = np.ones(rr.shape, dtype=bool)
        for p, q in ((-dx, ax - xlo), (dx, xlo + res - ax), (-dy, ay - ylo), (dy, ylo + res - ay)):
            if p == 0:
                ok &= q >= 0
                continue
            t = q / p
            if p < 0:
                t0 = np.maximum(t0, t)
            else:
                t1 = np.minimum(t1, t)
        ok &= t0 <= t1
        mask[rr[ok], cc[ok]] = True


def rasterize(model: WorkspaceModel, resolution: float, margin: float | None = None,
              conservative: bool = False) -> GridMask:
    """Occupancy of the obstacle-occupied workspace sampled at cell centers.

    ``margin`` pads the workspace bounding box; outside a bounded workspace
    the padding is occupied, in an unbounded world it is free.
    """
    if not resolution > 0:
        raise MorphologyError("resolution must be positive")
    if margin is None:
        margin = 20 * resolution
    xmin, ymin, xmax, ymax = model.bounds()
    ox = math.floor((xmin - margin) / resolution) * resolution
    oy = math.floor((ymin - margin) / resolution) * resolution
    width = int(math.ceil((xmax + margin - ox) / resolution))
    height = int(math.ceil((ymax + margin - oy) / resolution))
    ys = oy + (np.arange(height) + 0.5) * resolution
    bits = np.zeros((height, width), dtype=bool)
    for obs in model.obstacles:
        bits |= _scanline_fill(obs.rings, ys, ox, resolution, width)
    if model.workspace is not None:
        bits |= ~_scanline_fill(model.workspace.rings[:1], ys, ox, resolution, width)
    if conservative:
        for reg in model.occupied_regions():
            _overlap_cells(bits, reg.segments, (ox, oy), resolution)
    meta: dict = {"warnings": []}
    feature = min_feature_size(model)
    if resolution > feature:
        meta["warnings"].append(f"resolution {resolution:g} exceeds smallest obstacle feature {feature:g}")
    return GridMask((ox, oy), resolution, bits, meta)


def min_feature_size(model: WorkspaceModel) -> float:
    """Crude thickness estimate 2*area/perimeter over obstacles."""
    best = math.inf
    for o in model.obstacles:
        per = float(np.hypot(o.segments[:, 2] - o.segments[:, 0], o.segments[:, 3] - o.segments[:, 1]).sum())
        if per > 0:
            best = min(best, 2.0 * abs(o.area()) / per)
    return best


def _radius_sq_cells(mask: GridMask, radius: float) -> float:
    if radius < 0:
        raise MorphologyError("radius must be nonnegative")
    R = radius / mask.resolution
    return R * R * (1 + 1e-12) + 1e-12


def dilate_disk(mask: GridMask, radius: float) -> GridMask:
    """Minkowski sum with the closed disk of the given radius."""
    R2 = _radius_sq_cells(mask, radius)
    if radius == 0:
        return mask.like(mask.bits.copy())
    d2 = kernels.edt_sq(mask.bits.view(np.uint8))
    return mask.like(d2 <= R2)


def erode_disk(mask: GridMask, radius: float) -> GridMask:
    """Minkowski difference with the closed disk; off-grid cells count as occupied."""
    R2 = _radius_sq_cells(mask, radius)
    if radius == 0:
        return mask.like(mask.bits.copy())
    d2 = kernels.edt_sq((~mask.bits).view(np.uint8))
    return mask.like(mask.bits & (d2 > R2))


def closing(mask: GridMask, alpha: float) -> GridMask:
    """Dilate then erode by the disk of radius ``alpha``."""
    if alpha < 0:
        raise MorphologyError("alpha must be nonnegative")
    return erode_disk(dilate_disk(mask, alpha), alpha)


def free_space(mask: GridMask, y: float) -> GridMask:
    """Cells farther than ``y`` from every occupied cell."""
    if y < 0:
        raise MorphologyError("y must be nonnegative")
    return mask.like(~dilate_disk(mask, y).bits)


def closing_by_duality(mask: GridMask, alpha: float) -> GridMask:
    """Same set as ``closing``, built as the complement of the dilated eroded free space."""
    w_alpha = free_space(mask, alpha)
    return mask.like(~dilate_disk(w_alpha, alpha).bits)


# -- connectivity --------------------------------------------------------

FREE_STRUCT = np.ones((3, 3), dtype=bool)           # 8-connected free space
OBSTACLE_STRUCT = ndimage.generate_binary_structure(2, 1)  # 4-connected obstacles


def label_free(bits: NDArray) -> tuple[NDArray, int]:
    return ndimage.label(bits, structure=FREE_STRUCT)


def label_obstacles(bits: NDArray) -> tuple[NDArray, int]:
    return ndimage.label(bits, structure=OBSTACLE_STRUCT)


def check_assumption_connectivity(model: WorkspaceModel, resolution: float,
                                  margin: float | None = None) -> bool:
    """Whether the robot-center free space is one component holding the origin."""
    mask = rasterize(model, resolution, margin=margin)
    rc = mask.cell_of((0.0, 0.0))
    if not mask.in_grid(rc):
        raise MorphologyError("origin outside grid")
    free = free_space(mask, model.r_a).bits
    lab, n = label_free(free)
    return n == 1 and bool(free[rc])


def check_modified_connectivity(model: WorkspaceModel, alpha: float, resolution: float,
                                mask: GridMask | None = None) -> bool:
    """Whether the free space of the reshaped obstacles eroded by r_a is one piece holding the origin."""
    if mask is None:
        mask = rasterize(model, resolution, margin=2 * alpha + model.r_a + 4 * resolution)
    rc = mask.cell_of((0.0, 0.0))
    if not mask.in_grid(rc):
        raise MorphologyError("origin outside grid")
    free = free_space(closing(mask, alpha), model.r_a).bits
    _, n = label_free(free)
    return n == 1 and bool(free[rc])


# -- alpha chains ----------------------------------------------------------

@dataclass
class AlphaChainPartition:
    groups: list[list[int]]

    def group_of(self, idx: int) -> list[int]:
        for g in self.groups:
            if idx in g:
                return g
        raise KeyError(idx)


def region_distance(a: PolygonRegion, b: PolygonRegion) -> float:
    """Boundary-to-boundary distance of two disjoint regions."""
    sb = b.segments
    best = math.inf
    for ax, ay, bx, by in a.segments:
        best = min(best, kernels.segment_min_distance(ax, ay, bx, by, sb))
        if best == 0.0:
            break
    return best


def _indexed_regions(model: WorkspaceModel) -> dict[int, PolygonRegion]:
    regs = {i + 1: o for i, o in enumerate(model.obstacles)}
    if model.workspace is not None:
        regs[0] = PolygonRegion(model.workspace.rings[:1], exterior=True)
    return regs


def pairwise_distances(model: WorkspaceModel) -> dict[tuple[int, int], float]:
    regs = _indexed_regions(model)
    keys = sorted(regs)
    return {(i, j): region_distance(regs[i], regs[j])
            for k, i in enumerate(keys) for j in keys[k + 1:]}


def alpha_chains(model: WorkspaceModel, alpha: float) -> AlphaChainPartition:
    """Transitive closure of ``d(O_k, O_j) < 2 alpha`` over obstacle indices."""
    if not alpha > 0:
        raise MorphologyError("alpha must be positive")
    keys = sorted(_indexed_regions(model))
    parent = {k: k for k in keys}

    def find(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    for (i, j), d in pairwise_distances(model).items():
        if d < 2 * alpha:
            parent[find(i)] = find(j)
    groups: dict[int, list[int]] = {}
    for k in keys:
        groups.setdefault(find(k), []).append(k)
    return AlphaChainPartition(sorted(groups.values()))


# -- reach certificate -----------------------------------------------------

def boundary_cells(bits: NDArray) -> NDArray[np.bool_]:
    """Occupied cells with a free 4-neighbour."""
    inner = ndimage.binary_erosion(bits, structure=OBSTACLE_STRUCT, border_value=1)
    return bits & ~inner


@dataclass
class ReachCertificate:
    passed: bool
    samples: int
    multi_cluster: int
    band_failures: int
    failures: list = field(default_factory=list)

    def __bool__(self):
        return self.passed


def _cluster_count(pts: NDArray, link: float, core: NDArray | None = None) -> int:
    """Single-linkage groups among boundary points; only groups holding a core point count."""
    if len(pts) <= 1:
        return len(pts)
    pairs = cKDTree(pts).query_pairs(link, output_type="ndarray")
    n = len(pts)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    labels = connected_components(graph, directed=False)[1]
    if core is None:
        return len(np.unique(labels))
    return len(np.unique(labels[core]))


def projection_clusters_on_mask(closed: GridMask, pts: NDArray,
                                tol_dist: float | None = None,
                                tree: tuple | None = None,
                                link_dist: float | None = None) -> tuple[NDArray, NDArray]:
    """Distance to the mask boundary and number of projection clusters per point.

    Candidates are boundary cell centers within ``tol_dist`` (default one
    cell) of the minimum.  Two candidates are one projection when a chain of
    adjacent boundary cells joins them without straying more than
    ``link_dist`` (default three cells) beyond the minimum, which bridges the
    staircase of a rasterized arc but not a boundary that bends away.
    """
    if tree is None:
        tree = _boundary_tree(closed)
    kd, rc = tree
    res = closed.resolution
    if tol_dist is None:
        tol_dist = res
    if link_dist is None:
        link_dist = 3.0 * res
    d, _ = kd.query(pts)
    counts = np.empty(len(pts), dtype=int)
    for k, (p, dm) in enumerate(zip(pts, d)):
        idx = np.asarray(kd.query_ball_point(p, dm + max(link_dist, tol_dist)), dtype=int)
        near = kd.data[idx]
        core = np.hypot(*(near - p).T) <= dm + tol_dist
        counts[k] = _cluster_count(near, 1.5 * res, core)
    return d, counts


def _boundary_tree(closed: GridMask):
    rc = np.argwhere(boundary_cells(closed.bits))
    if len(rc) == 0:
        raise MorphologyError("mask has no boundary")
    return cKDTree(closed.centers(rc[:, 0], rc[:, 1])), rc


def check_assumption_reach(model: WorkspaceModel, alpha: float, samples: int = 10_000,
                           resolution: float | None = None, seed: int = 0,
                           band_cells: float = 2.0, mask: GridMask | None = None) -> ReachCertificate:
    """Sampling certificate that projections onto the closed set are unique in its alpha-shell."""
    if not alpha > 0:
        raise MorphologyError("alpha must be positive")
    if mask is None:
        res = resolution if resolution is not None else alpha / 20.0
        mask = rasterize(model, res, margin=2 * alpha + 4 * res)
    res = mask.resolution
    if not free_space(mask, alpha).bits.any():
        raise MorphologyError("eroded free space is empty for this alpha")
    closed = closing(mask, alpha)
    tree = _boundary_tree(closed)
    h, w = closed.bits.shape
    lo = np.array(closed.origin)
    span = np.array([w, h]) * res
    sampler = qmc.Halton(d=2, scramble=True, seed=seed)
    pts_ok = []
    n_ok = 0
    band = band_cells * res
    while n_ok < samples:
        cand = lo + sampler.random(max(4 * samples, 4096)) * span
        rows = np.floor((cand[:, 1] - lo[1]) / res).astype(int)
        cols = np.floor((cand[:, 0] - lo[0]) / res).astype(int)
        free_cell = ~closed.bits[rows.clip(0, h - 1), cols.clip(0, w - 1)]
        cand = cand[free_cell]
        d, _ = tree[0].query(cand)
        # with cell centers as the boundary proxy, distance is offset by half a cell
        cand = cand[(d > 0) & (d <= alpha)]
        pts_ok.append(cand)
        n_ok += len(cand)
    pts = np.concatenate(pts_ok)[:samples]
    d, counts = projection_clusters_on_mask(closed, pts, tree=tree)
    multi = counts > 1
    # the outer edge is excluded too: at distance alpha from a closing arc of
    # radius alpha every arc point is nearly equidistant
    in_band = (d < band) | (d > alpha - band)
    failures = pts[multi & ~in_band]
    return ReachCertificate(passed=len(failures) == 0, samples=len(pts),
                            multi_cluster=int(multi.sum()),
                            band_failures=int((multi & in_band).sum()),
                            failures=failures.tolist()[:20])


# -- parameter selection ---------------------------------------------------

def select_alpha(model: WorkspaceModel, candidates: Sequence[float],
                 resolution: float | None = None, samples: int = 10_000) -> float:
    """Largest candidate satisfying connectivity, origin proximity and the reach certificate."""
    cands = list(candidates)
    if any(a <= model.r_a for a in cands):
        raise MorphologyError("every candidate must exceed r_a")
    if cands != sorted(cands, reverse=True):
        raise MorphologyError("candidates must be sorted descending")
    for alpha in cands:
        res = resolution if resolution is not None else alpha / 20.0
        mask = rasterize(model, res, margin=2 * alpha + 4 * res)
        w_alpha = free_space(mask, alpha)
        if not w_alpha.bits.any():
            continue
        _, n = label_free(w_alpha.bits)
        if n != 1:
            continue
        rc = np.argwhere(w_alpha.bits)
        d0 = float(np.min(np.hypot(*mask.centers(rc[:, 0], rc[:, 1]).T)))
        if w_alpha.in_grid(mask.cell_of((0, 0))) and w_alpha.bits[mask.cell_of((0, 0))]:
            d0 = 0.0
        if not d0 < alpha - model.r_a:
            continue
        if check_assumption_reach(model, alpha, samples=samples, mask=mask):
            return alpha
    raise NoFeasibleAlpha("no feasible alpha")


def bar_alpha_convex(model: WorkspaceModel) -> float:
    """Half the smallest pairwise distance between convex obstacles (workspace included)."""
    if not all(is_convex(o) for o in model.obstacles):
        raise MorphologyError("bar_alpha_convex requires convex obstacles")
    if model.workspace is not None and not is_convex(model.workspace):
        raise MorphologyError("bar_alpha_convex requires a convex workspace")
    dists = pairwise_distances(model)
    if not dists:
        return math.inf
    return min(dists.values()) / 2.0


def epsilon_upper_bound(d0: float, r_a: float) -> float:
    """Largest admissible hysteresis: sqrt(d0^2 - r_a^2) - (d0 - r_a).

    Evaluated as ``r_a (s + d0 - r_a) / (s + d0)`` with
    ``s = sqrt((d0 - r_a)(d0 + r_a))``, which has no cancellation.
    """
    if not r_a > 0:
        raise MorphologyError("r_a must be positive")
    if not d0 > r_a:
        raise MorphologyError("d0 must exceed r_a")
    s = math.sqrt((d0 - r_a) * (d0 + r_a))
    return r_a * (s + (d0 - r_a)) / (s + d0)


# -- boundary extraction ----------------------------------------------------

def distance_field_to_free(mask: GridMask, alpha: float) -> NDArray[np.float64]:
    """Signed field ``dist(cell, W_alpha) - alpha`` in meters (positive inside the closing)."""
    w_alpha = free_space(mask, alpha).bits
    d2 = kernels.edt_sq(w_alpha.view(np.uint8)).astype(np.float64)
    d2[d2 >= kernels.EDT_NONE] = np.inf
    return np.sqrt(d2) * mask.resolution - alpha


def contours_of_field(field_: NDArray, mask: GridMask, level: float = 0.0) -> list[NDArray]:
    from skimage import measure
    out = []
    for c in measure.find_contours(field_, level):
        xy = np.c_[mask.origin[0] + (c[:, 1] + 0.5) * mask.resolution,
                   mask.origin[1] + (c[:, 0] + 0.5) * mask.resolution]
        out.append(xy)
    return out


def roll_ring_boundary(group_mask: GridMask, alpha: float) -> NDArray[np.float64]:
    """Boundary traced by a disk of radius ``alpha`` rolled around the group.

    Returns the longest closed loop as an (n, 2) array with first == last.
    Where the disk touches several points at once the curve follows the disk
    itself, which is the arc between the contact directions.
    """
    if alpha < group_mask.resolution:
        warnings.warn("alpha is smaller than one cell; boundary is degenerate")
    # pad so the eroded free space surrounds the group even on a tight crop
    pad = int(math.ceil(2 * alpha / group_mask.resolution)) + 2
    res = group_mask.resolution
    group_mask = GridMask((group_mask.origin[0] - pad * res, group_mask.origin[1] - pad * res), res,
                          np.pad(group_mask.bits, pad))
    field_ = distance_field_to_free(group_mask, alpha)
    finite = np.where(np.isfinite(field_), field_, alpha)
    loops = contours_of_field(finite, group_mask)
    if not loops:
        raise MorphologyError("no boundary found")
    loop = max(loops, key=len)
    if not np.allclose(loop[0], loop[-1]):
        loop = np.vstack([loop, loop[:1]])
    return loop


# -- PGM exchange ------------------------------------------------------------

def save_pgm(mask: GridMask, path: str | os.PathLike) -> None:
    """Write P5 (0 free, 255 occupied, first image row = highest y) plus JSON sidecar."""
    path = os.fspath(path)
    img = np.where(mask.bits[::-1], 255, 0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii"))
        f.write(img.tobytes())
    side = {"origin": [mask.origin[0], mask.origin[1]], "resolution": mask.resolution,
            "width": mask.width, "height": mask.height}
    with open(path + ".json", "w", encoding="utf-8") as f:
        json.dump(side, f, indent=2, sort_keys=True)
        f.write("\n")


def load_pgm(path: str | os.PathLike) -> GridMask:
    path = os.fspath(path)
    with open(path, "rb") as f:
        data = f.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end].decode("ascii"))
        pos = end
    pos += 1
    if tokens[0] != "P5":
        raise MorphologyError("not a binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    img = np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w)
    with open(path + ".json", encoding="utf-8") as f:
        side = json.load(f)
    return GridMask(tuple(side["origin"]), float(side["resolution"]), img[::-1] > 127)
