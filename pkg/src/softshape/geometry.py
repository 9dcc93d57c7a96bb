"""Pullback geometry of a decoder ``g: Z -> X`` and discrete geodesics.

A decoder here is any object with ``decode(z)``, ``jacobian(z)`` (``n x k``),
``latent_dim`` and ``is_linear``. Decoded values are flattened, so marker
vectors and ``N x 3`` clouds are handled alike.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class LinearDecoder:
    """``g(z) = W z + b``."""

    is_linear = True

    def __init__(self, W, b=None):
        self.W = np.atleast_2d(np.asarray(W, dtype=np.float64))
        self.b = np.zeros(self.W.shape[0]) if b is None else np.asarray(b, dtype=np.float64)

    @property
    def latent_dim(self):
        return self.W.shape[1]

    def decode(self, z):
        return self.W @ np.asarray(z, dtype=np.float64) + self.b

    def jacobian(self, z):
        return self.W.copy()


class IdentityDecoder(LinearDecoder):
    def __init__(self, k):
        super().__init__(np.eye(k))


class ParaboloidDecoder:
    """``g(z1, z2) = (z1, z2, z1^2 + z2^2)``."""

    is_linear = False
    latent_dim = 2

    def decode(self, z):
        z = np.asarray(z, dtype=np.float64)
        return np.array([z[0], z[1], z[0] ** 2 + z[1] ** 2])

    def jacobian(self, z):
        z = np.asarray(z, dtype=np.float64)
        return np.array([[1.0, 0.0], [0.0, 1.0], [2 * z[0], 2 * z[1]]])


def _g(decoder, z):
    return np.asarray(decoder.decode(z), dtype=np.float64).reshape(-1)


def _J(decoder, z):
    return np.asarray(decoder.jacobian(np.asarray(z, dtype=np.float64)), dtype=np.float64)


def metric_tensor(decoder, z) -> np.ndarray:
    """Pullback metric ``G(z) = J^T J``, symmetrized against rounding."""
    J = _J(decoder, z)
    G = J.T @ J
    return 0.5 * (G + G.T)


def tangent_inner_product(decoder, z, u, v) -> float:
    return float(np.asarray(u, dtype=np.float64) @ metric_tensor(decoder, z) @ np.asarray(v, dtype=np.float64))


@dataclass
class LatentCurve:
    nodes: np.ndarray  # (N + 1, k); the first and last rows are the fixed endpoints

    def __post_init__(self):
        self.nodes = np.atleast_2d(np.asarray(self.nodes, dtype=np.float64))
        if self.nodes.shape[0] < 2:
            raise ValueError("a latent curve needs at least two nodes")
        if not np.all(np.isfinite(self.nodes)):
            raise ValueError("latent curve nodes must be finite")

    @property
    def n_segments(self) -> int:
        return self.nodes.shape[0] - 1

    @property
    def dt(self) -> float:
        return 1.0 / self.n_segments

    @classmethod
    def linear(cls, z_start, z_end, n_segments) -> "LatentCurve":
        if n_segments < 1:
            raise ValueError("need at least one segment")
        a = np.asarray(z_start, dtype=np.float64)
        b = np.asarray(z_end, dtype=np.float64)
        if a.shape != b.shape or a.ndim != 1:
            raise ValueError("endpoints must be vectors of equal length")
        t = np.arange(n_segments + 1)[:, None] / n_segments
        nodes = a + t * (b - a)
        nodes[-1] = b
        return cls(nodes)


def _nodes(curve):
    return curve.nodes if isinstance(curve, LatentCurve) else LatentCurve(curve).nodes


def _images(decoder, nodes):
    return np.stack([_g(decoder, z) for z in nodes])


def _energy_from_images(imgs):
    n = imgs.shape[0] - 1
    d = np.diff(imgs, axis=0)
    return 0.5 * n * float(np.einsum("ij,ij->", d, d))


def curve_energy(decoder, curve) -> float:
    """Discrete energy ``(1/2) sum_{i<N} ||g(z_{i+1}) - g(z_i)||^2 / dt`` with ``dt = 1/N``."""
    return _energy_from_images(_images(decoder, _nodes(curve)))


def _node_gradient(J, prev_img, img, next_img, n):
    return -n * (J.T @ (next_img - 2.0 * img + prev_img))


def energy_gradient(decoder, curve, i) -> np.ndarray:
    """Gradient of the discrete energy with respect to interior node ``i``."""
    nodes = _nodes(curve)
    n = nodes.shape[0] - 1
    if not 1 <= i <= n - 1:
        raise IndexError(f"node {i} is an endpoint or out of range; interior nodes are 1..{n - 1}")
    return _node_gradient(_J(decoder, nodes[i]), _g(decoder, nodes[i - 1]), _g(decoder, nodes[i]),
                          _g(decoder, nodes[i + 1]), n)


def manifold_arc_length(decoder, curve) -> float:
    """Ambient polyline length ``sum ||g(z_{i+1}) - g(z_i)||``."""
    imgs = _images(decoder, _nodes(curve))
    return float(np.linalg.norm(np.diff(imgs, axis=0), axis=1).sum())


def local_distortion(decoder, z0, delta1, delta2):
    """True squared ambient distance of two nearby codes and its first-order metric estimate."""
    z0 = np.asarray(z0, dtype=np.float64)
    d1 = np.asarray(delta1, dtype=np.float64)
    d2 = np.asarray(delta2, dtype=np.float64)
    diff = _g(decoder, z0 + d1) - _g(decoder, z0 + d2)
    D = d1 - d2
    return float(diff @ diff), float(D @ metric_tensor(decoder, z0) @ D)


# --------------------------------------------------------------------------
# Algorithm: discrete geodesic by gradient descent on the curve energy

class GeodesicDivergence(RuntimeError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class GeodesicConfig:
    n_segments: int = 16
    learning_rate: float = 1e-2
    tolerance: float = 1e-6
    max_iter: int = 5000
    jacobi: bool = False
    restore_after: int = 5
    max_rejections: int = 10

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.n_segments < 2:
            raise ValueError("need at least 2 segments")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")


@dataclass
class GeodesicReport:
    status: str  # converged | max_iter | stalled
    iterations: int
    grad_norm_sq: float
    initial_energy: float
    final_energy: float
    energy_log: list = field(default_factory=list)  # energy after every accepted iteration
    rejected: int = 0
    final_learning_rate: float = 0.0

    @property
    def converged(self):
        return self.status == "converged"


def _all_grads(decoder, nodes, imgs):
    n = nodes.shape[0] - 1
    return np.stack([_node_gradient(_J(decoder, nodes[i]), imgs[i - 1], imgs[i], imgs[i + 1], n)
                     for i in range(1, n)])


def geodesic_path(decoder, z_start, z_end, config: GeodesicConfig = None, initial=None):
    """Relax a linearly initialized curve towards a discrete geodesic.

    Interior nodes move by ``z_i <- z_i - alpha * grad_i E``, sweeping in index
    order with already-updated neighbours (or all at once with
    ``config.jacobi``). A sweep that raises the energy is rejected and
    ``alpha`` halved; ``alpha`` returns to its configured value after
    ``restore_after`` accepted sweeps in a row. ``max_rejections`` rejections
    in a row abort with :class:`GeodesicDivergence`, unless the energy rise is
    at rounding level, in which case the curve is returned as ``stalled``.

    Returns ``(LatentCurve, GeodesicReport)``.
    """
    cfg = config or GeodesicConfig()
    if initial is None:
        curve = LatentCurve.linear(z_start, z_end, cfg.n_segments)
    else:
        curve = LatentCurve(np.array(initial, dtype=np.float64))
        if curve.n_segments != cfg.n_segments:
            raise ValueError("initial curve does not have config.n_segments segments")
    nodes = curve.nodes.copy()
    if nodes.shape[1] != decoder.latent_dim:
        raise ValueError(f"endpoints have dimension {nodes.shape[1]}; decoder expects {decoder.latent_dim}")
    n = cfg.n_segments
    imgs = _images(decoder, nodes)
    energy = _energy_from_images(imgs)
    report = GeodesicReport("max_iter", 0, float("nan"), energy, energy, [energy])
    alpha = cfg.learning_rate
    stable = rejections = 0

    for it in range(cfg.max_iter + 1):
        grads = _all_grads(decoder, nodes, imgs)
        gsq = float(np.einsum("ij,ij->", grads, grads))
        report.grad_norm_sq = gsq
        report.iterations = it
        if gsq <= cfg.tolerance:
            report.status = "converged"
            break
        if it == cfg.max_iter:
            break
        trial = nodes.copy()
        timgs = imgs.copy()
        if cfg.jacobi:
            trial[1:n] -= alpha * grads
            for i in range(1, n):
                timgs[i] = _g(decoder, trial[i])
        else:
            for i in range(1, n):
                gi = grads[0] if i == 1 else _node_gradient(_J(decoder, trial[i]), timgs[i - 1], timgs[i],
                                                            timgs[i + 1], n)
                trial[i] = trial[i] - alpha * gi
                timgs[i] = _g(decoder, trial[i])
        new_energy = _energy_from_images(timgs)
        if new_energy <= energy:
            nodes, imgs, energy = trial, timgs, new_energy
            report.energy_log.append(energy)
            rejections = 0
            stable += 1
            if stable >= cfg.restore_after and alpha < cfg.learning_rate:
                alpha = cfg.learning_rate
                stable = 0
        else:
            report.rejected += 1
            rejections += 1
            stable = 0
            alpha *= 0.5
            if rejections >= cfg.max_rejections:
                if new_energy - energy <= 1e-12 * max(energy, 1e-300) + 1e-300:
                    report.status = "stalled"
                    break
                report.final_energy = energy
                report.final_learning_rate = alpha
                raise GeodesicDivergence(
                    f"energy rose on {rejections} consecutive sweeps (last {energy:.6g} -> {new_energy:.6g}, "
                    f"alpha now {alpha:.3g})", report)
    report.final_energy = energy
    report.final_learning_rate = alpha
    return LatentCurve(nodes), report
