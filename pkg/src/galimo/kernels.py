"""Hot-kernel dispatch.

The compiled extension is preferred; the numpy fallback is selected when it
cannot be imported or when ``GALIMO_PURE_PYTHON`` is set to a non-empty value
other than ``0``.  ``BACKEND`` names the active implementation.
"""

import os

from . import _kernels_py as python_backend

compiled_backend = None
if os.environ.get("GALIMO_PURE_PYTHON", "0") in ("", "0"):
    try:
        from . import _kernels as compiled_backend  # type: ignore[no-redef]
    except ImportError:  # pragma: no cover - depends on the build
        compiled_backend = None

_active = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if compiled_backend is not None else "python"

max_area_triangle = _active.max_area_triangle
kitti_segment_errors = _active.kitti_segment_errors
reprojection_jacobians = _active.reprojection_jacobians

__all__ = [
    "BACKEND",
    "compiled_backend",
    "python_backend",
    "max_area_triangle",
    "kitti_segment_errors",
    "reprojection_jacobians",
]
