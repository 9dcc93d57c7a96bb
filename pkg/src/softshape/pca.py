"""PCA as an invertible linear latent map for ordered shape features.

Row-sample layout throughout: a feature matrix is ``p x n`` (one shape per
row), latent codes are ``z = P (x - mean)`` and reconstructions are
``x = P^T z + mean`` with the rows of ``P`` orthonormal.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .shapes import ShapeDataset


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # all fitted components, one per row, descending variance
    variances: np.ndarray  # length n; zero-padded past the fitted components
    k: int

    is_linear = True

    @property
    def n_features(self) -> int:
        return self.mean.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.k

    @property
    def basis(self) -> np.ndarray:
        """The retained ``k x n`` projection matrix."""
        return self.components[: self.k]

    def with_k(self, k: int) -> "PcaModel":
        if not 1 <= k <= self.components.shape[0]:
            raise ValueError(f"k must lie in [1, {self.components.shape[0]}]")
        return replace(self, k=int(k))

    def encode(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {x.shape[-1]}")
        return (x - self.mean) @ self.basis.T

    def decode(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.k:
            raise ValueError(f"expected a {self.k}-dim latent code, got {z.shape[-1]}")
        return z @ self.basis + self.mean

    def jacobian(self, z=None) -> np.ndarray:
        """Decoder Jacobian: the constant ``n x k`` matrix ``P^T``."""
        return self.basis.T.copy()

    def to_dict(self) -> dict:
        return {
            "type": "pca",
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "variances": self.variances.tolist(),
            "k": self.k,
        }

    @classmethod
    def from_dict(cls, d) -> "PcaModel":
        return cls(np.asarray(d["mean"], dtype=np.float64),
                   np.asarray(d["components"], dtype=np.float64).reshape(-1, len(d["mean"])),
                   np.asarray(d["variances"], dtype=np.float64), int(d["k"]))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "PcaModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _fix_signs(comps):
    # largest-magnitude entry of each component made positive (first one on ties)
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(comps.shape[0]), pivot])
    signs[signs == 0] = 1.0
    return comps * signs[:, None]


def fit_pca(X, k=None) -> PcaModel:
    """Fit PCA by SVD of the mean-centred data.

    When features outnumber samples the smaller Gram matrix ``Xc Xc^T`` is
    diagonalized instead; only components with nonzero variance are kept
    then, and the remaining variances are reported as zero. ``k`` defaults to
    all fitted components.
    """
    if isinstance(X, ShapeDataset):
        if X.kind != "markers":
            raise ValueError("PCA needs ordered features; unordered point clouds are not supported")
        X = X.feature_matrix()
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2 or X.shape[1] < 1:
        raise ValueError("fit_pca needs a p x n matrix with p >= 2 and n >= 1")
    p, n = X.shape
    mean = X.mean(axis=0)
    Xc = X - mean
    if n <= p:
        _, s, vt = np.linalg.svd(Xc, full_matrices=False)
        comps, sv = vt, s
    else:
        evals, evecs = np.linalg.eigh(Xc @ Xc.T)
        order = np.argsort(evals)[::-1]
        evals = np.clip(evals[order], 0.0, None)
        sv = np.sqrt(evals)
        keep = evals > evals[0] * 1e-12  # Gram eigenvalues carry absolute error ~eps * largest
        if not keep.any():
            raise ValueError("data has no variance")
        sv = sv[keep]
        comps = (evecs[:, order][:, keep].T @ Xc) / sv[:, None]
    comps = _fix_signs(comps)
    variances = np.zeros(n)
    variances[: sv.size] = sv**2 / (p - 1)
    k = comps.shape[0] if k is None else int(k)
    return PcaModel(mean, comps, variances, 1).with_k(k)


def explained_variance(model: PcaModel, k: int) -> float:
    """Fraction of the total variance carried by the first ``k`` components."""
    v = model.variances
    if not 1 <= k <= v.size:
        raise ValueError(f"k must lie in [1, {v.size}]")
    total = v.sum()
    if total == 0.0:
        raise ValueError("all variances are zero")
    return float(v[:k].sum() / total)


def encode_pca(model: PcaModel, x):
    return model.encode(x)


def decode_pca(model: PcaModel, z):
    return model.decode(z)
