"""Hot inner loops: nearest-neighbour search and farthest-point sampling.

The compiled extension is used when it was built and importable; otherwise
the numpy fallback is selected. Set ``SOFTSHAPE_PURE_PYTHON=1`` to force the
fallback. ``BACKEND`` names the active implementation.
"""
import os

import numpy as np

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("SOFTSHAPE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ext as _compiled
    except ImportError:  # extension not built
        _compiled = None
    else:
        _impl = _compiled
        BACKEND = "compiled"
else:
    _compiled = None


def _as_points(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) point array, got shape {x.shape}")
    return x


def nearest_sqdist(a, b, backend=None):
    """For each row of `a`, the squared distance to and index of its nearest row in `b`."""
    a, b = _as_points(a), _as_points(b)
    if b.shape[0] == 0:
        raise ValueError("nearest-neighbour target set is empty")
    return _select(backend).nearest_sqdist(a, b)


def farthest_point_indices(pts, n_samples, start, backend=None):
    """Indices chosen by greedy farthest-point sampling, in selection order."""
    pts = _as_points(pts)
    if not 0 <= n_samples <= pts.shape[0]:
        raise ValueError(f"cannot select {n_samples} of {pts.shape[0]} points")
    return _select(backend).farthest_point_indices(pts, int(n_samples), int(start))


def _select(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _fallback
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available in this build")
        return _compiled
    raise ValueError(f"unknown backend {backend!r}")


def available_backends():
    return ["python"] + (["compiled"] if _compiled is not None else [])
