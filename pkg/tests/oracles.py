"""Reference solutions used only by the tests."""
import functools
import math

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra as sp_dijkstra

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def paraboloid_segment_length(p, d):
    """Length of the paraboloid image of the latent segment p + s d, s in [0, 1]."""
    s = 0.5 * (_GL_X + 1.0)
    z = p[..., None, :] + s[:, None] * d[..., None, :]
    dz = 2.0 * (z * d[..., None, :]).sum(-1)
    speed = np.sqrt((d * d).sum(-1)[..., None] + dz * dz)
    return 0.5 * (speed * _GL_W).sum(-1)


@functools.lru_cache(maxsize=4)
def _mesh_geodesic(a, b, half_width, n, radius):
    """Shortest path on a latent grid graph whose edges join each node to all
    primitive offsets within ``radius``; edge weights are exact ambient
    lengths of the decoded straight segments. Returns the latent polyline.
    """
    xs = np.linspace(-half_width, half_width, n)
    h = xs[1] - xs[0]
    idx = np.arange(n * n).reshape(n, n)
    offsets = [(i, j) for i in range(-radius, radius + 1) for j in range(-radius, radius + 1)
               if (i, j) != (0, 0) and i * i + j * j <= radius * radius and math.gcd(abs(i), abs(j)) == 1]
    rows, cols, w = [], [], []
    I, J = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    for di, dj in offsets:
        ok = (I + di >= 0) & (I + di < n) & (J + dj >= 0) & (J + dj < n)
        i0, j0 = I[ok], J[ok]
        p = np.stack([xs[i0], xs[j0]], axis=1)
        d = np.broadcast_to(np.array([di * h, dj * h]), p.shape)
        rows.append(idx[i0, j0])
        cols.append(idx[i0 + di, j0 + dj])
        w.append(paraboloid_segment_length(p, d))
    G = coo_matrix((np.concatenate(w), (np.concatenate(rows), np.concatenate(cols))), shape=(n * n, n * n)).tocsr()

    def node(z):
        return idx[int(round((z[0] + half_width) / h)), int(round((z[1] + half_width) / h))]

    s, t = node(a), node(b)
    dist, pred = sp_dijkstra(G, indices=s, return_predecessors=True)
    path = [t]
    while path[-1] != s:
        path.append(pred[path[-1]])
    path = path[::-1]
    return np.stack([xs[np.array(path) // n], xs[np.array(path) % n]], axis=1), float(dist[t])


def paraboloid_mesh_geodesic(a, b, half_width=1.25, n=401, radius=5):
    poly, length = _mesh_geodesic(tuple(map(float, a)), tuple(map(float, b)), half_width, n, radius)
    return poly.copy(), length


def resample_constant_speed(poly, n_segments):
    """Points at equal ambient (paraboloid) arc length along a latent polyline."""
    seg = paraboloid_segment_length(poly[:-1], np.diff(poly, axis=0))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, cum[-1], n_segments + 1)
    out = np.empty((n_segments + 1, 2))
    for k, s in enumerate(targets):
        i = min(np.searchsorted(cum, s, side="right") - 1, len(seg) - 1)
        f = 0.0 if seg[i] == 0 else (s - cum[i]) / seg[i]
        out[k] = poly[i] + f * (poly[i + 1] - poly[i])
    return out


def all_pairs_brute_force(adj):
    """Cheapest cost between every ordered pair by enumerating every simple path."""
    best = {}
    for s in adj:
        best[(s, s)] = 0.0
        stack = [(s, 0.0, frozenset([s]))]
        while stack:
            u, c, seen = stack.pop()
            for v, w in adj[u].items():
                if v in seen:
                    continue
                cv = c + w
                if cv < best.get((s, v), np.inf):
                    best[(s, v)] = cv
                stack.append((v, cv, seen | {v}))
    return best
