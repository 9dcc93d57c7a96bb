"""Low-level geometric features.

* 3D elliptic Fourier descriptors of ordered marker curves.
* Farthest-point resampling and the Chamfer pseudo-distance for clouds.
* The pooled coefficient of determination used to score reconstructions.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .shapes import MarkerShape, PointCloud, ShapeDataset

KDTREE_MIN_POINTS = 256


@dataclass(frozen=True, eq=False)
class FourierDescriptor:
    """Truncated per-axis Fourier series of a closed 3D path.

    ``coefficients[n-1] = (a_n, b_n, c_n, d_n, e_n, f_n)``: cosine/sine pairs
    for x, y and z at harmonic ``n``. ``bias = (a0, c0, e0)``. ``period`` is the
    path length ``L``; the angular frequency is ``2 pi / L``.
    """

    bias: np.ndarray
    coefficients: np.ndarray
    period: float
    params: np.ndarray = field(default=None)
    over_parameterized: bool = False

    @property
    def n_harmonics(self) -> int:
        return self.coefficients.shape[0]

    def to_vector(self) -> np.ndarray:
        """``3 + 6N`` entries: ``a0, c0, e0`` then ``a_n..f_n`` for n = 1..N."""
        return np.concatenate([self.bias, self.coefficients.reshape(-1)])

    @classmethod
    def from_vector(cls, vec, period=1.0) -> "FourierDescriptor":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.ndim != 1 or (vec.size - 3) % 6 or vec.size < 9:
            raise ValueError(f"a descriptor vector has 3 + 6N entries, got {vec.size}")
        return cls(vec[:3].copy(), vec[3:].reshape(-1, 6).copy(), float(period))

    def __call__(self, l):
        return eval_fourier(self, l)


def _closed_path(points, closure):
    if closure == "mirror":
        return np.concatenate([points, points[-2::-1]])
    if closure == "closed":
        return np.concatenate([points, points[:1]])
    raise ValueError(f"unknown closure {closure!r}")


def fit_fourier(shape, n_harmonics: int, closure: str = "mirror",
                method: str = "integral") -> FourierDescriptor:
    """Fourier coefficients of the closed polyline through the markers.

    The open marker curve is closed by walking it forward and back
    (``closure="mirror"``) or by joining the last marker to the first
    (``"closed"``). The path is parameterized by chord length.

    ``method="integral"`` gives the exact Fourier integrals of the
    piecewise-linear coordinate functions. ``method="lstsq"`` instead
    least-squares fits the truncated series to the path vertices (each
    interior marker appears twice on the mirrored path). Its model spaces are
    nested, so the residual summed over those vertices never grows with
    ``n_harmonics``. Neither method makes that promise for the forward
    markers alone.
    """
    points = shape.points if isinstance(shape, MarkerShape) else np.asarray(shape, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] < 3:
        raise ValueError("fit_fourier needs at least 3 ordered 3D markers")
    if n_harmonics < 1:
        raise ValueError("n_harmonics must be at least 1")
    path = _closed_path(points, closure)
    delta = np.diff(path, axis=0)
    dt = np.linalg.norm(delta, axis=1)
    if np.any(dt == 0.0):
        bad = int(np.flatnonzero(dt == 0.0)[0])
        raise ValueError(f"coincident consecutive path points at segment {bad}")
    t = np.concatenate([[0.0], np.cumsum(dt)])
    period = t[-1]
    slope = delta / dt[:, None]

    over = 3 + 6 * n_harmonics > 3 * points.shape[0]
    if method == "lstsq":
        return _fit_lstsq(path, t, n_harmonics, points.shape[0], over)
    if method != "integral":
        raise ValueError(f"unknown method {method!r}")

    n = np.arange(1, n_harmonics + 1)[:, None]
    phase = 2.0 * np.pi * n * t[None, :] / period
    dcos = np.diff(np.cos(phase), axis=1)
    dsin = np.diff(np.sin(phase), axis=1)
    scale = period / (2.0 * np.pi**2 * n**2)
    cos_coef = scale * (dcos @ slope)
    sin_coef = scale * (dsin @ slope)
    coef = np.empty((n_harmonics, 6))
    coef[:, 0::2] = cos_coef
    coef[:, 1::2] = sin_coef

    bias = (0.5 * dt[:, None] * (path[:-1] + path[1:])).sum(axis=0) / period
    return FourierDescriptor(bias, coef, float(period), params=t[: points.shape[0]].copy(),
                             over_parameterized=over)


def _fit_lstsq(path, t, n_harmonics, q, over):
    period = t[-1]
    tv, pv = t[:-1], path[:-1]  # last vertex repeats the first
    n = np.arange(1, n_harmonics + 1)
    arg = 2.0 * np.pi * tv[:, None] * n[None, :] / period
    basis = np.empty((tv.size, 1 + 2 * n_harmonics))
    basis[:, 0] = 1.0
    basis[:, 1::2] = np.cos(arg)
    basis[:, 2::2] = np.sin(arg)
    sol = np.linalg.lstsq(basis, pv, rcond=None)[0]
    coef = np.empty((n_harmonics, 6))
    coef[:, 0::2] = sol[1::2]
    coef[:, 1::2] = sol[2::2]
    return FourierDescriptor(sol[0].copy(), coef, float(period), params=t[:q].copy(),
                             over_parameterized=over)


def eval_fourier(desc: FourierDescriptor, l):
    """Evaluate the three series at arc parameter(s) ``l`` (reduced mod the period)."""
    l = np.asarray(l, dtype=np.float64)
    scalar = l.ndim == 0
    l = np.mod(np.atleast_1d(l), desc.period)
    w = 2.0 * np.pi / desc.period
    n = np.arange(1, desc.n_harmonics + 1)
    arg = w * l[:, None] * n[None, :]
    c, s = np.cos(arg), np.sin(arg)
    co = desc.coefficients
    out = np.empty((l.size, 3))
    for axis in range(3):
        out[:, axis] = desc.bias[axis] + c @ co[:, 2 * axis] + s @ co[:, 2 * axis + 1]
    return out[0] if scalar else out


def reconstruct_markers(desc: FourierDescriptor) -> np.ndarray:
    """Series evaluated at the markers' own path parameters."""
    if desc.params is None:
        raise ValueError("descriptor carries no marker parameters")
    return eval_fourier(desc, desc.params)


def descriptor_to_markers(vec, q: int) -> np.ndarray:
    """Markers from a bare descriptor vector of a mirror-closed curve.

    Assumes equal chord spacing, so marker ``i`` sits at fraction
    ``i / (2 (q - 1))`` of the period.
    """
    desc = FourierDescriptor.from_vector(vec, period=1.0)
    return eval_fourier(desc, np.arange(q) / (2.0 * (q - 1)))


def fourier_features(shapes, n_harmonics: int, method: str = "integral") -> np.ndarray:
    """``p x (3 + 6N)`` descriptor matrix of a marker dataset."""
    if isinstance(shapes, ShapeDataset) and shapes.kind != "markers":
        raise ValueError("Fourier descriptors need ordered marker shapes")
    return np.stack([fit_fourier(s, n_harmonics, method=method).to_vector() for s in shapes])


def r_squared(observed, predicted) -> float:
    """``1 - SS_res / SS_tot`` pooled over every feature column.

    ``SS_tot`` is taken about each column's own mean.
    """
    y = np.asarray(observed, dtype=np.float64)
    f = np.asarray(predicted, dtype=np.float64)
    if y.shape != f.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {f.shape}")
    if y.ndim == 1:
        y, f = y[:, None], f[:, None]
    if y.shape[0] < 2:
        raise ValueError("r_squared needs at least 2 rows")
    ss_tot = ((y - y.mean(axis=0)) ** 2).sum()
    if ss_tot == 0.0:
        raise ValueError("observed data has zero total variance")
    return float(1.0 - ((y - f) ** 2).sum() / ss_tot)


def fourier_r2(shape, n_harmonics: int, method: str = "integral") -> float:
    """R^2 of the series reconstruction at the marker positions."""
    desc = fit_fourier(shape, n_harmonics, method=method)
    pts = shape.points if isinstance(shape, MarkerShape) else np.asarray(shape)
    return r_squared(pts, reconstruct_markers(desc))


# --------------------------------------------------------------------------
# point clouds

def _points(x):
    return x.points if isinstance(x, PointCloud) else np.asarray(x, dtype=np.float64)


def farthest_point_sample(cloud, n: int, mode: str = "lexmin", seed: int = 0,
                          backend=None) -> PointCloud:
    """Resample a cloud to exactly ``n`` points by farthest-point selection.

    The first point is the lexicographically smallest one (``mode="lexmin"``)
    or a seeded random one (``mode="random"``). Ties go to the lower index.
    Output order is selection order.
    """
    pts = _points(cloud)
    if pts.shape[0] < n:
        raise ValueError(f"cloud has {pts.shape[0]} points, fewer than the requested {n}")
    if mode == "lexmin":
        start = int(np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))[0])
    elif mode == "random":
        start = int(np.random.default_rng(seed).integers(pts.shape[0]))
    else:
        raise ValueError(f"unknown FPS mode {mode!r}")
    idx = kernels.farthest_point_indices(pts, n, start, backend=backend)
    label = cloud.label if isinstance(cloud, PointCloud) else None
    return PointCloud(pts[idx], label)


def _exact_sq(a, b):
    dx = a[:, 0] - b[:, 0]
    dy = a[:, 1] - b[:, 1]
    dz = a[:, 2] - b[:, 2]
    return dx * dx + dy * dy + dz * dz


def nearest_neighbors(a, b, method: str = "auto", backend=None):
    """Squared distance from every point of ``a`` to its nearest point of ``b``, and its index.

    ``"auto"`` uses a k-d tree once ``b`` has at least 256 points and brute
    force below that. Tree results are re-measured with the brute-force
    arithmetic, so both routes return identical distances.
    """
    a, b = _points(a), _points(b)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("nearest-neighbour search needs nonempty point sets")
    if method == "auto":
        method = "kdtree" if b.shape[0] >= KDTREE_MIN_POINTS else "brute"
    if method == "brute":
        return kernels.nearest_sqdist(a, b, backend=backend)
    if method == "kdtree":
        _, idx = cKDTree(b).query(a, k=1, workers=1)
        idx = idx.astype(np.int64)
        return _exact_sq(a, b[idx]), idx
    raise ValueError(f"unknown method {method!r}")


def chamfer_distance(a, b, method: str = "auto", backend=None) -> float:
    """Sum of squared nearest-neighbour distances in both directions (not averaged)."""
    d_ab, _ = nearest_neighbors(a, b, method, backend)
    d_ba, _ = nearest_neighbors(b, a, method, backend)
    return float(d_ab.sum() + d_ba.sum())


def chamfer_with_grad(pred, target, method: str = "auto"):
    """Chamfer value and its gradient with respect to ``pred``.

    Nearest-neighbour correspondences are held fixed at the evaluation point.
    Returns ``(value, grad, (idx_pred_to_target, idx_target_to_pred))``.
    """
    p, t = _points(pred), _points(target)
    d_pt, i_pt = nearest_neighbors(p, t, method)
    d_tp, i_tp = nearest_neighbors(t, p, method)
    grad = 2.0 * (p - t[i_pt])
    np.add.at(grad, i_tp, 2.0 * (p[i_tp] - t))
    return float(d_pt.sum() + d_tp.sum()), grad, (i_pt, i_tp)


def chamfer_fixed(pred, target, i_pt, i_tp) -> float:
    """Chamfer sum with correspondences frozen to the given index maps."""
    p, t = _points(pred), _points(target)
    return float(((p - t[i_pt]) ** 2).sum() + ((p[i_tp] - t) ** 2).sum())


def worker_count() -> int:
    """Thread cap from ``SOFTSHAPE_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("SOFTSHAPE_THREADS", "1")))
    except ValueError:
        return 1


def chamfer_batch(clouds_a, clouds_b, threads=None) -> np.ndarray:
    """Pairwise Chamfer distances ``d(a_i, b_i)``; result independent of scheduling."""
    if len(clouds_a) != len(clouds_b):
        raise ValueError("batches must have equal length")
    threads = worker_count() if threads is None else max(1, int(threads))
    pairs = list(zip(clouds_a, clouds_b))
    if threads == 1:
        return np.array([chamfer_distance(a, b) for a, b in pairs])
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return np.array(list(pool.map(lambda ab: chamfer_distance(*ab), pairs)))
