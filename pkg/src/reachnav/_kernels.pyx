# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled geometry and distance-transform kernels.

Segments are packed as rows ``[ax, ay, bx, by]`` of a C-contiguous float64
array. Every function here has a numpy twin in ``_kernels_py`` with the same
signature and results.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, cos, sin, INFINITY

cnp.import_array()

cdef long long EDT_NONE = 1 << 62


cdef inline double _pt_seg(double px, double py, double ax, double ay,
                           double bx, double by, double *tout) nogil:
    cdef double dx = bx - ax, dy = by - ay
    cdef double L2 = dx * dx + dy * dy
    cdef double t = 0.0
    if L2 > 0.0:
        t = ((px - ax) * dx + (py - ay) * dy) / L2
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
    cdef double qx = ax + t * dx - px, qy = ay + t * dy - py
    tout[0] = t
    return sqrt(qx * qx + qy * qy)


def seg_distances(double px, double py, const double[:, ::1] seg):
    """Distance from (px, py) to every segment, with the foot parameter t."""
    cdef Py_ssize_t n = seg.shape[0], i
    d_arr = np.empty(n, dtype=np.float64)
    t_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] d = d_arr
    cdef double[::1] tt = t_arr
    cdef double t
    with nogil:
        for i in range(n):
            d[i] = _pt_seg(px, py, seg[i, 0], seg[i, 1], seg[i, 2], seg[i, 3], &t)
            tt[i] = t
    return d_arr, t_arr


def nearest_segment(double px, double py, const double[:, ::1] seg):
    """Return (distance, index, t) of the closest segment; index -1 if empty."""
    cdef Py_ssize_t n = seg.shape[0], i, best = -1
    cdef double bd = INFINITY, bt = 0.0, d, t
    with nogil:
        for i in range(n):
            d = _pt_seg(px, py, seg[i, 0], seg[i, 1], seg[i, 2], seg[i, 3], &t)
            if d < bd:
                bd = d
                best = i
                bt = t
    return bd, best, bt


def point_in_rings(double px, double py, const double[:, ::1] seg):
    """Even-odd crossing test over all ring edges (holes handled naturally)."""
    cdef Py_ssize_t n = seg.shape[0], i
    cdef bint inside = False
    cdef double ax, ay, bx, by
    with nogil:
        for i in range(n):
            ax = seg[i, 0]; ay = seg[i, 1]; bx = seg[i, 2]; by = seg[i, 3]
            if (ay > py) != (by > py):
                if px < ax + (py - ay) * (bx - ax) / (by - ay):
                    inside = not inside
    return inside


def ray_cast(double ox, double oy, const double[::1] thetas, const double[:, ::1] seg,
             double max_range):
    """First crossing distance along each bearing, clamped at max_range."""
    cdef Py_ssize_t m = thetas.shape[0], n = seg.shape[0], k, i
    out_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double c, s, ex, ey, wx, wy, den, t, u, best
    with nogil:
        for k in range(m):
            c = cos(thetas[k]); s = sin(thetas[k])
            best = max_range
            for i in range(n):
                ex = seg[i, 2] - seg[i, 0]
                ey = seg[i, 3] - seg[i, 1]
                den = c * ey - s * ex
                if fabs(den) < 1e-15:
                    continue
                wx = seg[i, 0] - ox
                wy = seg[i, 1] - oy
                t = (wx * ey - wy * ex) / den
                u = (wx * s - wy * c) / den
                if t >= 0.0 and u >= -1e-12 and u <= 1.0 + 1e-12 and t < best:
                    best = t
            out[k] = best
    return out_arr


cdef inline double _cross(double ax, double ay, double bx, double by) nogil:
    return ax * by - ay * bx


cdef inline bint _seg_cross(double ax, double ay, double bx, double by,
                            double cx, double cy, double dx, double dy) nogil:
    cdef double d1 = _cross(bx - ax, by - ay, cx - ax, cy - ay)
    cdef double d2 = _cross(bx - ax, by - ay, dx - ax, dy - ay)
    cdef double d3 = _cross(dx - cx, dy - cy, ax - cx, ay - cy)
    cdef double d4 = _cross(dx - cx, dy - cy, bx - cx, by - cy)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and \
        d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0


def segment_min_distance(double ax, double ay, double bx, double by,
                         const double[:, ::1] seg):
    """Smallest distance between the query segment and any segment."""
    cdef Py_ssize_t n = seg.shape[0], i
    cdef double best = INFINITY, d, t
    cdef double cx, cy, dx, dy
    with nogil:
        for i in range(n):
            cx = seg[i, 0]; cy = seg[i, 1]; dx = seg[i, 2]; dy = seg[i, 3]
            if _seg_cross(ax, ay, bx, by, cx, cy, dx, dy):
                best = 0.0
                break
            d = _pt_seg(ax, ay, cx, cy, dx, dy, &t)
            if d < best: best = d
            d = _pt_seg(bx, by, cx, cy, dx, dy, &t)
            if d < best: best = d
            d = _pt_seg(cx, cy, ax, ay, bx, by, &t)
            if d < best: best = d
            d = _pt_seg(dx, dy, ax, ay, bx, by, &t)
            if d < best: best = d
    return best


cdef void _envelope(long long *f, long long *out, Py_ssize_t n,
                    Py_ssize_t *v, double *z) nogil:
    # Lower envelope of parabolas q -> f[q] + (p - q)^2 over finite f only.
    cdef Py_ssize_t k = -1, q, p
    cdef double s
    for q in range(n):
        if f[q] >= EDT_NONE:
            continue
        while k >= 0:
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        if k == 0:
            z[k] = -INFINITY
        else:
            z[k] = ((f[q] + q * q) - (f[v[k - 1]] + v[k - 1] * v[k - 1])) / \
                (2.0 * (q - v[k - 1]))
        z[k + 1] = INFINITY
    if k < 0:
        for p in range(n):
            out[p] = EDT_NONE
        return
    cdef Py_ssize_t j = 0
    for p in range(n):
        while z[j + 1] < p:
            j += 1
        out[p] = (p - v[j]) * (p - v[j]) + f[v[j]]


def edt_sq(const cnp.uint8_t[:, ::1] feature):
    """Exact squared Euclidean distance (in cells) to the nearest nonzero cell.

    Cells with no feature anywhere in the grid get ``EDT_NONE``.
    """
    cdef Py_ssize_t h = feature.shape[0], w = feature.shape[1], i, j
    g_arr = np.empty((h, w), dtype=np.int64)
    cdef long long[:, ::1] g = g_arr
    cdef Py_ssize_t nmax = h if h > w else w
    col = np.empty(nmax, dtype=np.int64)
    colo = np.empty(nmax, dtype=np.int64)
    vv = np.empty(nmax + 1, dtype=np.intp)
    zz = np.empty(nmax + 2, dtype=np.float64)
    cdef long long[::1] cf = col
    cdef long long[::1] co = colo
    cdef Py_ssize_t[::1] v = vv
    cdef double[::1] z = zz
    with nogil:
        for j in range(w):
            for i in range(h):
                cf[i] = 0 if feature[i, j] else EDT_NONE
            _envelope(&cf[0], &co[0], h, &v[0], &z[0])
            for i in range(h):
                g[i, j] = co[i]
        for i in range(h):
            for j in range(w):
                cf[j] = g[i, j]
            _envelope(&cf[0], &co[0], w, &v[0], &z[0])
            for j in range(w):
                g[i, j] = co[j]
    return g_arr
