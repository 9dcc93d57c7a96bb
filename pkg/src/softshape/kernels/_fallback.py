"""Pure-numpy versions of the compiled kernels.

Each squared distance is accumulated as ``(dx*dx + dy*dy) + dz*dz``, the same
order the compiled kernel uses, so the two backends agree bit for bit.
"""
import numpy as np

_CHUNK = 256


def _sq(a, b):
    dx = a[:, None, 0] - b[None, :, 0]
    dy = a[:, None, 1] - b[None, :, 1]
    dz = a[:, None, 2] - b[None, :, 2]
    return dx * dx + dy * dy + dz * dz


def nearest_sqdist(a, b):
    n = a.shape[0]
    out_d = np.empty(n, dtype=np.float64)
    out_i = np.empty(n, dtype=np.int64)
    for lo in range(0, n, _CHUNK):
        d = _sq(a[lo:lo + _CHUNK], b)
        idx = np.argmin(d, axis=1)
        out_i[lo:lo + _CHUNK] = idx
        out_d[lo:lo + _CHUNK] = d[np.arange(d.shape[0]), idx]
    return out_d, out_i


def _sq_to(pts, p):
    dx = pts[:, 0] - p[0]
    dy = pts[:, 1] - p[1]
    dz = pts[:, 2] - p[2]
    return dx * dx + dy * dy + dz * dz


def farthest_point_indices(pts, n_samples, start):
    out = np.empty(n_samples, dtype=np.int64)
    if n_samples == 0:
        return out
    cur = int(start)
    out[0] = cur
    mind = _sq_to(pts, pts[cur])
    for s in range(1, n_samples):
        cur = int(np.argmax(mind))
        out[s] = cur
        np.minimum(mind, _sq_to(pts, pts[cur]), out=mind)
    return out
