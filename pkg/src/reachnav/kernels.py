"""Kernel backend selection.

The compiled extension is used when it imported cleanly; set
``REACHNAV_PURE=1`` to force the numpy implementations.
"""
from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("REACHNAV_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "compiled"

EDT_NONE = _kernels_py.EDT_NONE
seg_distances = _impl.seg_distances
nearest_segment = _impl.nearest_segment
point_in_rings = _impl.point_in_rings
ray_cast = _impl.ray_cast
segment_min_distance = _impl.segment_min_distance
edt_sq = _impl.edt_sq
