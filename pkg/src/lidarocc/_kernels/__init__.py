"""Hot numeric kernels: compiled core with a pure-Python fallback.

The compiled module is optional; if the build was skipped or the wheel has
no extension for this platform, the Python twin takes over with identical
semantics (see ``benchmarks/bench_kernels.py`` for the speed gap).
"""

try:
    from lidarocc._kernels import _rectclip as _impl

    BACKEND = "compiled"
except ImportError:  # pragma: no cover - depends on build environment
    from lidarocc._kernels import _rectclip_py as _impl

    BACKEND = "python"

rect_areas = _impl.rect_areas
rect_intersection_areas = _impl.rect_intersection_areas
rect_intersection_matrix = _impl.rect_intersection_matrix

__all__ = [
    "BACKEND",
    "rect_areas",
    "rect_intersection_areas",
    "rect_intersection_matrix",
]
