"""Shape-level wrappers pairing an encoder/decoder with its feature map.

A codec takes shapes (``MarkerShape``, ``PointCloud`` or raw arrays) to
latent codes and back. It also exposes the decoder protocol used by the
geometry module (``decode``, ``jacobian``, ``latent_dim``, ``is_linear``) in
the space where distances are measured:

* ``PcaCodec``: Fourier-descriptor space (the PCA decoder is linear there),
* ``AutoencoderCodec``: the normalized marker or cloud coordinates the
  network was trained on.
"""
from __future__ import annotations

import json

import numpy as np

from .autoencoder import AutoencoderModel
from .descriptors import descriptor_to_markers, fit_fourier
from .pca import PcaModel
from .shapes import MarkerShape, PointCloud


def _points(x):
    if isinstance(x, (MarkerShape, PointCloud)):
        return np.asarray(x.points, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(-1, 3) if x.ndim == 1 else x


class PcaCodec:
    is_linear = True

    def __init__(self, model: PcaModel, n_harmonics: int, q: int, method: str = "integral"):
        self.model = model
        self.n_harmonics = int(n_harmonics)
        self.q = int(q)
        self.method = method

    @property
    def latent_dim(self):
        return self.model.k

    def features(self, x) -> np.ndarray:
        pts = _points(x)
        if pts.shape[0] != self.q:
            raise ValueError(f"shape has {pts.shape[0]} markers; model expects {self.q}")
        return fit_fourier(MarkerShape(pts), self.n_harmonics, method=self.method).to_vector()

    def encode(self, x):
        return self.model.encode(self.features(x))

    def decode(self, z):
        return self.model.decode(z)

    def jacobian(self, z):
        return self.model.jacobian(z)

    def to_shape_array(self, feature_vec):
        return descriptor_to_markers(feature_vec, self.q)

    def to_dict(self):
        return {"format": "softshape-pca", "pca": self.model.to_dict(), "n_harmonics": self.n_harmonics,
                "q": self.q, "method": self.method}

    @classmethod
    def from_dict(cls, d):
        return cls(PcaModel.from_dict(d["pca"]), d["n_harmonics"], d["q"], d.get("method", "integral"))


class AutoencoderCodec:
    is_linear = False

    def __init__(self, model: AutoencoderModel):
        if model.normalization is None:
            raise ValueError("autoencoder checkpoint carries no normalization record")
        self.model = model
        self.norm = model.normalization
        self.is_cloud = len(model.input_shape) == 2

    @property
    def latent_dim(self):
        return self.model.latent_dim

    def features(self, x) -> np.ndarray:
        pts = _points(x)
        if self.is_cloud:
            return self.norm.apply(pts)
        return self.norm.apply(pts.reshape(-1))

    def encode(self, x):
        return self.model.encode(self.features(x))

    def decode(self, z):
        return self.model.decode(z).reshape(-1)

    def jacobian(self, z):
        return self.model.decoder_jacobian(z)

    def to_shape_array(self, feature_vec):
        f = np.asarray(feature_vec, dtype=np.float64)
        if self.is_cloud:
            return self.norm.invert(f.reshape(-1, 3))
        return self.norm.invert(f).reshape(-1, 3)

    def to_dict(self):
        return self.model.to_dict()


def load_codec(path):
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    fmt = d.get("format")
    if fmt == "softshape-pca":
        return PcaCodec.from_dict(d)
    if fmt == "softshape-autoencoder":
        return AutoencoderCodec(AutoencoderModel.from_dict(d))
    raise ValueError(f"{path}: unrecognized model file (format={fmt!r})")


def save_codec(codec, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(codec.to_dict(), fh)
