"""Known-map view of the reshaped obstacles.

The closed mask is turned into polylines by contouring the field
``dist(cell, W_alpha) - alpha`` at zero, which places the boundary with
sub-cell accuracy. Each 4-connected component of the closed mask (one per
fused alpha-chain) keeps its own segment set so the controller can reason
about the nearest chain only.
"""
from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np
from numpy.typing import NDArray

from . import kernels
from .geometry import TOL_ANGLE, as_point, cluster_directions
from .morphology import (GridMask, WorkspaceModel, closing, contours_of_field,
                         distance_field_to_free, label_obstacles, rasterize)


@dataclass
class Projection:
    """Nearest-point query result used by the controller."""

    distance: float
    point: NDArray[np.float64]
    unique: bool
    chain: int
    points: list


class AmbiguousProjection(RuntimeError):
    pass


def _loops_to_segments(loops: list[NDArray]) -> NDArray[np.float64]:
    segs = [np.hstack([lp[:-1], lp[1:]]) for lp in loops if len(lp) >= 2]
    if not segs:
        return np.zeros((0, 4))
    s = np.concatenate(segs)
    keep = np.hypot(s[:, 2] - s[:, 0], s[:, 3] - s[:, 1]) > 0
    return np.ascontiguousarray(s[keep])


def _merge_close(groups: list, pts: NDArray, link: float) -> list:
    if len(groups) < 2:
        return groups
    parent = list(range(len(groups)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a in range(len(groups)):
        for b in range(a + 1, len(groups)):
            pa, pb = pts[groups[a]], pts[groups[b]]
            gap = np.min(np.hypot(pa[:, None, 0] - pb[None, :, 0], pa[:, None, 1] - pb[None, :, 1]))
            if gap <= link:
                parent[find(a)] = find(b)
    out: dict[int, list] = {}
    for i, g in enumerate(groups):
        out.setdefault(find(i), []).extend(list(g))
    return [np.array(v) for v in out.values()]


class ModifiedEnvironment:
    def __init__(self, mask: GridMask, closed: GridMask, chains: list[NDArray[np.float64]],
                 loops: list[list[NDArray]], alpha: float):
        self.mask = mask
        self.closed = closed
        self.alpha = alpha
        self.chain_segments = chains
        self.chain_loops = loops
        sizes = [len(c) for c in chains]
        self.segments = np.ascontiguousarray(np.concatenate(chains)) if chains else np.zeros((0, 4))
        self.owner = np.repeat(np.arange(len(chains)), sizes)

    @classmethod
    def build(cls, model: WorkspaceModel, alpha: float, resolution: float | None = None,
              margin: float | None = None) -> "ModifiedEnvironment":
        res = resolution if resolution is not None else alpha / 20.0
        if margin is None:
            margin = 2 * alpha + model.r_a + 6 * res
        mask = rasterize(model, res, margin=margin)
        return cls.from_mask(mask, alpha)

    @classmethod
    def from_mask(cls, mask: GridMask, alpha: float) -> "ModifiedEnvironment":
        closed = closing(mask, alpha)
        field_ = distance_field_to_free(mask, alpha)
        big = float(np.nanmax(np.where(np.isfinite(field_), field_, -np.inf), initial=0.0))
        field_ = np.where(np.isfinite(field_), field_, big + alpha)
        lab, n = label_obstacles(closed.bits)
        chains, loops = [], []
        neg = -mask.resolution
        for k in range(1, n + 1):
            fk = np.where((lab == k) | (lab == 0), field_, neg)
            lk = contours_of_field(fk, mask)
            segs = _loops_to_segments(lk)
            if len(segs):
                chains.append(segs)
                loops.append(lk)
        return cls(mask, closed, chains, loops, alpha)

    @property
    def resolution(self) -> float:
        return self.mask.resolution

    def inside(self, x) -> bool:
        rc = self.closed.cell_of(x)
        if not self.closed.in_grid(rc):
            # off-grid: the closed set continues the grid edge convention
            return False
        return bool(self.closed.bits[rc])

    def distance(self, x) -> float:
        x = as_point(x)
        if len(self.segments) == 0:
            return math.inf
        return float(kernels.nearest_segment(x[0], x[1], self.segments)[0])

    def project(self, x, tol_dist: float | None = None, tol_angle: float = TOL_ANGLE,
                link: float | None = None) -> Projection:
        """Nearest point on the reshaped boundary.

        Feet are grouped by bearing (``tol_angle``) and then merged when they sit
        within ``link`` of each other (default 3 cells): contour vertices placed
        symmetrically around a smooth arc tie exactly but are one projection.
        """
        x = as_point(x)
        if len(self.segments) == 0:
            return Projection(math.inf, None, True, -1, [])
        d, t = kernels.seg_distances(x[0], x[1], self.segments)
        i = int(np.argmin(d))
        dmin = float(d[i])
        if tol_dist is None:
            tol_dist = 1e-9 * (1.0 + dmin)
        sel = np.nonzero(d <= dmin + tol_dist)[0]
        s = self.segments
        feet = s[sel, 0:2] + t[sel, None] * (s[sel, 2:4] - s[sel, 0:2])
        if len(sel) == 1:
            return Projection(dmin, feet[0], True, int(self.owner[i]), [feet[0]])
        ang = np.arctan2(feet[:, 1] - x[1], feet[:, 0] - x[0])
        groups = cluster_directions(ang, tol_angle)
        if link is None:
            link = 3.0 * self.resolution
        groups = _merge_close(groups, feet, link)
        pts = [feet[g[int(np.argmin(d[sel[g]]))]] for g in groups]
        k = int(np.argmin(d[sel]))
        return Projection(dmin, feet[k], len(groups) == 1, int(self.owner[sel[k]]), pts)

    def segment_blocked(self, x, chain: int, r_a: float) -> bool:
        """Whether the segment from ``x`` to the origin meets the open r_a-dilation of a chain."""
        x = as_point(x)
        d = kernels.segment_min_distance(x[0], x[1], 0.0, 0.0, self.chain_segments[chain])
        return d < r_a

    def distance_to_origin(self) -> float:
        return self.distance((0.0, 0.0))
