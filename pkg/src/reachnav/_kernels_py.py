"""Numpy implementations of the compiled kernels (same signatures)."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

EDT_NONE = 1 << 62


def _feet(px, py, seg):
    a = seg[:, 0:2]
    e = seg[:, 2:4] - a
    L2 = np.einsum("ij,ij->i", e, e)
    w = np.array([px, py]) - a
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(L2 > 0, np.einsum("ij,ij->i", w, e) / np.where(L2 > 0, L2, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    q = a + t[:, None] * e
    d = np.hypot(q[:, 0] - px, q[:, 1] - py)
    return d, t


def seg_distances(px: float, py: float, seg: np.ndarray):
    if len(seg) == 0:
        return np.empty(0), np.empty(0)
    return _feet(px, py, seg)


def nearest_segment(px: float, py: float, seg: np.ndarray):
    if len(seg) == 0:
        return np.inf, -1, 0.0
    d, t = _feet(px, py, seg)
    i = int(np.argmin(d))
    return float(d[i]), i, float(t[i])


def point_in_rings(px: float, py: float, seg: np.ndarray) -> bool:
    if len(seg) == 0:
        return False
    ax, ay, bx, by = seg.T
    straddle = (ay > py) != (by > py)
    with np.errstate(invalid="ignore", divide="ignore"):
        xc = ax + (py - ay) * (bx - ax) / np.where(straddle, by - ay, 1.0)
    return bool(np.count_nonzero(straddle & (px < xc)) % 2)


def ray_cast(ox: float, oy: float, thetas: np.ndarray, seg: np.ndarray,
             max_range: float) -> np.ndarray:
    out = np.full(len(thetas), float(max_range))
    if len(seg) == 0:
        return out
    c = np.cos(thetas)[:, None]
    s = np.sin(thetas)[:, None]
    ex = (seg[:, 2] - seg[:, 0])[None, :]
    ey = (seg[:, 3] - seg[:, 1])[None, :]
    wx = (seg[:, 0] - ox)[None, :]
    wy = (seg[:, 1] - oy)[None, :]
    den = c * ey - s * ex
    ok = np.abs(den) >= 1e-15
    safe = np.where(ok, den, 1.0)
    t = (wx * ey - wy * ex) / safe
    u = (wx * s - wy * c) / safe
    # a ray through a vertex touches the closed set; allow rounding on u
    hit = ok & (t >= 0) & (u >= -1e-12) & (u <= 1 + 1e-12) & (t < max_range)
    t = np.where(hit, t, np.inf)
    return np.minimum(out, t.min(axis=1))


def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


def segment_min_distance(ax: float, ay: float, bx: float, by: float,
                         seg: np.ndarray) -> float:
    if len(seg) == 0:
        return np.inf
    cx, cy, dx, dy = seg.T
    d1 = _cross(bx - ax, by - ay, cx - ax, cy - ay)
    d2 = _cross(bx - ax, by - ay, dx - ax, dy - ay)
    d3 = _cross(dx - cx, dy - cy, ax - cx, ay - cy)
    d4 = _cross(dx - cx, dy - cy, bx - cx, by - cy)
    proper = ((d1 > 0) != (d2 > 0)) & ((d3 > 0) != (d4 > 0))
    proper &= (d1 != 0) & (d2 != 0) & (d3 != 0) & (d4 != 0)
    if proper.any():
        return 0.0
    best = min(_feet(ax, ay, seg)[0].min(), _feet(bx, by, seg)[0].min())
    ends = np.concatenate([seg[:, 0:2], seg[:, 2:4]])
    best = min(best, _points_to_segment(ends, ax, ay, bx, by).min())
    return float(best)


def _points_to_segment(pts, ax, ay, bx, by):
    e = np.array([bx - ax, by - ay])
    L2 = e @ e
    w = pts - np.array([ax, ay])
    t = np.clip(w @ e / L2, 0.0, 1.0) if L2 > 0 else np.zeros(len(pts))
    q = np.array([ax, ay]) + t[:, None] * e
    return np.hypot(*(q - pts).T)


def edt_sq(feature: np.ndarray) -> np.ndarray:
    feature = np.asarray(feature, dtype=bool)
    if not feature.any():
        return np.full(feature.shape, EDT_NONE, dtype=np.int64)
    idx = ndimage.distance_transform_edt(~feature, return_distances=False,
                                         return_indices=True)
    ii, jj = np.indices(feature.shape)
    di = (idx[0] - ii).astype(np.int64)
    dj = (idx[1] - jj).astype(np.int64)
    return di * di + dj * dj
