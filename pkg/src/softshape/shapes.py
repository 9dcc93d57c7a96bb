"""Shape types, synthetic deformation families and feature normalization.

Two shape kinds are supported: ordered marker curves (a deformable bar
tracked by ``q`` markers) and unordered point clouds (a deformable sheet).
Synthetic generators reproduce the category taxonomy of both objects with
parametric families that have closed-form geometry, which the tests use as
oracles.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

BAR_CATEGORIES = ("line", "arch+", "arch-", "s+", "s-", "helix+", "helix-")
SHEET_CATEGORIES = (
    "plane",
    "bend1+", "bend1-", "bend2+", "bend2-",
    "fold1+", "fold1-", "fold2+", "fold2-",
)

DEFAULT_Q = 8
DEFAULT_RESOLUTION = 512
BAR_LENGTH = 1.0
SHEET_SIZE = (1.0, 0.6)

# Documented magnitude ranges (absolute values) of the bar dofs per family.
ARCH_CURVATURE_RANGE = (0.5, 3.0)
S_AMPLITUDE_RANGE = (0.4, 1.2)
HELIX_CURVATURE_RANGE = (3.0, 8.0)
HELIX_TORSION_RANGE = (3.0, 8.0)
BEND_CURVATURE_RANGE = (0.5, 6.0)
FOLD_ANGLE_RANGE = (0.1, 2.5)


def _frozen(a, ndim=2):
    a = np.array(a, dtype=np.float64)
    if a.ndim != ndim or (ndim == 2 and a.shape[-1] != 3):
        raise ValueError(f"expected points with shape (n, 3), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("shape coordinates must be finite")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MarkerShape:
    """Ordered 3D marker positions along a deformable bar."""

    points: np.ndarray
    label: Optional[str] = None

    def __post_init__(self):
        pts = _frozen(self.points)
        if pts.shape[0] < 2:
            raise ValueError("a marker shape needs at least 2 markers")
        object.__setattr__(self, "points", pts)

    @property
    def q(self) -> int:
        return self.points.shape[0]

    def features(self) -> np.ndarray:
        """Flattened ``x1, y1, z1, ..., xq, yq, zq`` row."""
        return self.points.reshape(-1).copy()

    @classmethod
    def from_features(cls, row, label=None) -> "MarkerShape":
        return cls(np.asarray(row, dtype=np.float64).reshape(-1, 3), label)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Unordered 3D points sampled from a sheet surface."""

    points: np.ndarray
    label: Optional[str] = None

    def __post_init__(self):
        pts = _frozen(self.points)
        if pts.shape[0] < 1:
            raise ValueError("a point cloud needs at least one point")
        object.__setattr__(self, "points", pts)

    @property
    def size(self) -> int:
        return self.points.shape[0]


Shape = Union[MarkerShape, PointCloud]


@dataclass(frozen=True, eq=False)
class NormalizationRecord:
    """Per-feature statistics that make a normalization exactly invertible.

    ``mode`` is ``"minmax"`` (map each feature onto ``[lo, hi]``) or ``"mean"``
    (subtract the per-feature mean). Constant features under min-max map to
    the midpoint of the range and are flagged in ``constant``.
    """

    mode: str
    minimum: Optional[np.ndarray] = None
    maximum: Optional[np.ndarray] = None
    mean: Optional[np.ndarray] = None
    lo: float = 0.1
    hi: float = 0.9
    constant: Optional[np.ndarray] = None

    @property
    def n_features(self) -> int:
        ref = self.mean if self.mode == "mean" else self.minimum
        return int(ref.shape[0])

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.mode == "mean":
            return x - self.mean
        span = self.maximum - self.minimum
        safe = np.where(self.constant, 1.0, span)
        y = self.lo + (x - self.minimum) / safe * (self.hi - self.lo)
        return np.where(self.constant, 0.5 * (self.lo + self.hi), y)

    def invert(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if self.mode == "mean":
            return y + self.mean
        span = self.maximum - self.minimum
        x = self.minimum + (y - self.lo) / (self.hi - self.lo) * span
        return np.where(self.constant, self.minimum, x)

    def scale(self) -> np.ndarray:
        """d(normalized)/d(raw) per feature; zero for constant features."""
        if self.mode == "mean":
            return np.ones(self.n_features)
        span = self.maximum - self.minimum
        return np.where(self.constant, 0.0, (self.hi - self.lo) / np.where(self.constant, 1.0, span))

    def to_dict(self) -> dict:
        d = {"mode": self.mode}
        if self.mode == "mean":
            d["mean"] = self.mean.tolist()
        else:
            d.update(minimum=self.minimum.tolist(), maximum=self.maximum.tolist(),
                     lo=self.lo, hi=self.hi, constant=self.constant.tolist())
        return d

    @classmethod
    def from_dict(cls, d) -> "NormalizationRecord":
        if d["mode"] == "mean":
            return cls("mean", mean=np.asarray(d["mean"], dtype=np.float64))
        return cls(
            "minmax",
            minimum=np.asarray(d["minimum"], dtype=np.float64),
            maximum=np.asarray(d["maximum"], dtype=np.float64),
            lo=float(d["lo"]), hi=float(d["hi"]),
            constant=np.asarray(d["constant"], dtype=bool),
        )


def fit_normalization(x, mode="minmax", lo=0.1, hi=0.9) -> NormalizationRecord:
    """Fit normalization statistics on the rows of a feature matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("normalization needs a nonempty 2D feature matrix")
    if mode == "mean":
        return NormalizationRecord("mean", mean=x.mean(axis=0))
    if mode != "minmax":
        raise ValueError(f"unknown normalization mode {mode!r}")
    if not hi > lo:
        raise ValueError("min-max range needs hi > lo")
    mn, mx = x.min(axis=0), x.max(axis=0)
    return NormalizationRecord("minmax", minimum=mn, maximum=mx, lo=float(lo), hi=float(hi),
                               constant=(mx - mn) == 0.0)


@dataclass(frozen=True, eq=False)
class ShapeDataset:
    """A homogeneous collection of marker shapes or point clouds."""

    items: tuple
    normalization: Optional[NormalizationRecord] = None
    kind: str = field(init=False)

    def __post_init__(self):
        items = tuple(self.items)
        if not items:
            raise ValueError("a dataset needs at least one shape")
        if all(isinstance(s, MarkerShape) for s in items):
            kind = "markers"
            q = items[0].q
            for i, s in enumerate(items):
                if s.q != q:
                    raise ValueError(f"shape {i} has q={s.q}, dataset declares q={q}")
        elif all(isinstance(s, PointCloud) for s in items):
            kind = "cloud"
        else:
            raise ValueError("dataset items must all be MarkerShape or all PointCloud")
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "kind", kind)

    def __len__(self):
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i]

    def __iter__(self):
        return iter(self.items)

    @property
    def labels(self) -> list:
        return [s.label for s in self.items]

    @property
    def categories(self) -> dict:
        """Label -> count, unlabeled shapes counted under ``None``."""
        return dict(Counter(self.labels))

    @property
    def q(self) -> int:
        if self.kind != "markers":
            raise AttributeError("q is defined for marker datasets only")
        return self.items[0].q

    def feature_matrix(self) -> np.ndarray:
        """``p x 3q`` matrix of flattened marker rows."""
        if self.kind != "markers":
            raise ValueError("feature_matrix needs an ordered marker dataset")
        return np.stack([s.features() for s in self.items])

    def point_tensor(self) -> np.ndarray:
        """``p x N x 3`` stack of equally sized clouds."""
        sizes = {s.points.shape[0] for s in self.items}
        if len(sizes) != 1:
            raise ValueError(f"clouds have differing sizes {sorted(sizes)}; resample first")
        return np.stack([s.points for s in self.items])


def normalize(dataset: ShapeDataset, mode="minmax", lo=0.1, hi=0.9):
    """Normalize a dataset, returning the new dataset and the record to invert it.

    Marker datasets are normalized per flattened feature. Point clouds are
    unordered, so statistics are per coordinate axis over all points.
    """
    if dataset.kind == "markers":
        rec = fit_normalization(dataset.feature_matrix(), mode, lo, hi)
        items = [MarkerShape.from_features(rec.apply(s.features()), s.label) for s in dataset]
    else:
        rec = fit_normalization(np.concatenate([s.points for s in dataset]), mode, lo, hi)
        items = [PointCloud(rec.apply(s.points), s.label) for s in dataset]
    return ShapeDataset(items, normalization=rec), rec


def denormalize(dataset: ShapeDataset, record: NormalizationRecord) -> ShapeDataset:
    if dataset.kind == "markers":
        items = [MarkerShape.from_features(record.invert(s.features()), s.label) for s in dataset]
    else:
        items = [PointCloud(record.invert(s.points), s.label) for s in dataset]
    return ShapeDataset(items)


# --------------------------------------------------------------------------
# synthetic bar family

def _gauss_legendre(order=16):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def _planar_curve(s, theta):
    """Integrate the unit tangent (cos theta, sin theta) from 0 to each s."""
    x, w = _gauss_legendre()
    out = np.zeros((s.size, 3))
    acc = np.zeros(2)
    for j in range(1, s.size):
        a, b = s[j - 1], s[j]
        t = 0.5 * (b - a) * x + 0.5 * (a + b)
        th = theta(t)
        acc = acc + 0.5 * (b - a) * np.array([np.dot(w, np.cos(th)), np.dot(w, np.sin(th))])
        out[j, :2] = acc
    return out


def helix_points(curvature, torsion, s):
    """Helix starting at the origin with tangent +x, principal normal +y.

    Positive torsion gives a right-handed helix. Its axis points along
    ``(torsion, 0, curvature) / omega`` with ``omega = hypot(curvature, torsion)``.
    """
    k, tau = float(curvature), float(torsion)
    om = np.hypot(k, tau)
    t = om * np.asarray(s, dtype=np.float64)
    radius, rise = k / om**2, tau / om**2
    x = (k / om) * radius * np.sin(t) + (tau / om) * rise * t
    y = radius * (1.0 - np.cos(t))
    z = -(tau / om) * radius * np.sin(t) + (k / om) * rise * t
    return np.stack([x, y, z], axis=1)


def _rot_z(psi):
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _check_range(name, value, rng, sign):
    lo, hi = rng
    if not lo <= abs(value) <= hi or (sign and np.sign(value) != sign):
        want = f"{'+' if sign > 0 else '-'}[{lo}, {hi}]" if sign else f"[{lo}, {hi}]"
        raise ValueError(f"{name}={value} outside documented range {want}")


def generate_bar_shape(category: str, dof: Sequence[float], q: int = DEFAULT_Q, seed: int = 0,
                       noise: float = 0.0, length: float = BAR_LENGTH) -> MarkerShape:
    """Sample ``q`` markers at equal arc-length steps along a bar deformation.

    ``dof = (bend, s_amplitude, torsion, yaw)`` shared by all families:

    - ``line``: bend = s_amplitude = torsion = 0.
    - ``arch±``: planar circular arc, signed curvature ``bend``.
    - ``s±``: planar curve with tangent angle ``s_amplitude * cos(2 pi s / length)``.
    - ``helix±``: constant curvature ``bend > 0`` and torsion whose sign gives
      the handedness (+ right-handed).

    ``yaw`` rotates the whole shape about +z. The curve starts at the origin
    heading along +x (before yaw). ``seed`` only drives the optional
    Gaussian marker noise.
    """
    if category not in BAR_CATEGORIES:
        raise ValueError(f"unknown bar category {category!r}; expected one of {BAR_CATEGORIES}")
    if q < 2:
        raise ValueError("q must be at least 2")
    dof = np.asarray(dof, dtype=np.float64)
    if dof.shape != (4,):
        raise ValueError("bar shapes take 4 dofs: (bend, s_amplitude, torsion, yaw)")
    bend, amp, tau, yaw = dof
    sign = -1 if category.endswith("-") else 1
    family = category.rstrip("+-")
    unused = {"line": (bend, amp, tau), "arch": (amp, tau), "s": (bend, tau), "helix": (amp,)}[family]
    if any(u != 0.0 for u in unused):
        raise ValueError(f"{category} requires its unused dofs to be zero, got {tuple(dof)}")

    s = np.linspace(0.0, length, q)
    if family == "line":
        pts = np.stack([s, np.zeros(q), np.zeros(q)], axis=1)
    elif family == "arch":
        _check_range("bend", bend, ARCH_CURVATURE_RANGE, sign)
        pts = np.stack([np.sin(bend * s) / bend, (1.0 - np.cos(bend * s)) / bend, np.zeros(q)], axis=1)
    elif family == "s":
        _check_range("s_amplitude", amp, S_AMPLITUDE_RANGE, sign)
        pts = _planar_curve(s, lambda t: amp * np.cos(2.0 * np.pi * t / length))
    else:
        _check_range("bend", bend, HELIX_CURVATURE_RANGE, 1)
        _check_range("torsion", tau, HELIX_TORSION_RANGE, sign)
        pts = helix_points(bend, tau, s)
    pts = pts @ _rot_z(yaw).T
    if noise > 0.0:
        pts = pts + np.random.default_rng(seed).normal(scale=noise, size=pts.shape)
    return MarkerShape(pts, category)


def sample_bar_dof(category: str, rng: np.random.Generator, yaw_range: float = 0.3) -> np.ndarray:
    """Draw a dof vector uniformly from the documented range of a category."""
    sign = -1.0 if category.endswith("-") else 1.0
    family = category.rstrip("+-")
    yaw = rng.uniform(-yaw_range, yaw_range)
    if family == "line":
        return np.array([0.0, 0.0, 0.0, yaw])
    if family == "arch":
        return np.array([sign * rng.uniform(*ARCH_CURVATURE_RANGE), 0.0, 0.0, yaw])
    if family == "s":
        return np.array([0.0, sign * rng.uniform(*S_AMPLITUDE_RANGE), 0.0, yaw])
    if family == "helix":
        return np.array([rng.uniform(*HELIX_CURVATURE_RANGE), 0.0,
                         sign * rng.uniform(*HELIX_TORSION_RANGE), yaw])
    raise ValueError(f"unknown bar category {category!r}")


def generate_bar_dataset(per_class: int, q: int = DEFAULT_Q, seed: int = 0,
                         categories: Sequence[str] = BAR_CATEGORIES,
                         yaw_range: float = 0.3, noise: float = 0.0) -> ShapeDataset:
    rng = np.random.default_rng(seed)
    items = []
    for cat in categories:
        for _ in range(per_class):
            dof = sample_bar_dof(cat, rng, yaw_range)
            items.append(generate_bar_shape(cat, dof, q, seed=int(rng.integers(2**31)), noise=noise))
    return ShapeDataset(items)


# --------------------------------------------------------------------------
# synthetic sheet family

def generate_sheet_cloud(category: str, dof: Sequence[float] = (), n_raw: int = 2048,
                         seed: int = 0, size=SHEET_SIZE) -> PointCloud:
    """Sample ``n_raw`` random points from a deformed rectangular sheet.

    The flat sheet spans ``u in [-w/2, w/2]`` along x and ``v in [-h/2, h/2]``
    along y. ``dof = (magnitude, offset)``:

    - ``bend1±`` rolls u onto a cylinder of radius ``1/magnitude`` whose axis is
      parallel to y and sits at ``z = ±radius``; ``bend2±`` does the same for v.
    - ``fold1±`` creases along ``u = offset`` so that the two halves' normals meet
      at angle ``magnitude``; ``fold2±`` creases along ``v = offset``.

    The deformations are isometric, so the sampling density stays uniform.
    """
    if category not in SHEET_CATEGORIES:
        raise ValueError(f"unknown sheet category {category!r}; expected one of {SHEET_CATEGORIES}")
    if n_raw < 64:
        raise ValueError("n_raw must be at least 64")
    dof = np.zeros(2) if len(dof) == 0 else np.asarray(dof, dtype=np.float64)
    if dof.shape == (1,):
        dof = np.array([dof[0], 0.0])
    if dof.shape != (2,):
        raise ValueError("sheet shapes take up to 2 dofs: (magnitude, offset)")
    mag, off = dof
    w, h = size
    rng = np.random.default_rng(seed)
    u = rng.uniform(-w / 2, w / 2, n_raw)
    v = rng.uniform(-h / 2, h / 2, n_raw)
    sign = -1.0 if category.endswith("-") else 1.0
    family = category[:-1] if category != "plane" else "plane"

    if family == "plane":
        if mag != 0.0 or off != 0.0:
            raise ValueError("plane takes zero dofs")
        pts = np.stack([u, v, np.zeros(n_raw)], axis=1)
    elif family in ("bend1", "bend2"):
        _check_range("curvature", mag, BEND_CURVATURE_RANGE, 0)
        r = 1.0 / abs(mag)
        a = u if family == "bend1" else v
        along = r * np.sin(a / r)
        lift = sign * r * (1.0 - np.cos(a / r))
        pts = (np.stack([along, v, lift], axis=1) if family == "bend1"
               else np.stack([u, along, lift], axis=1))
    else:
        _check_range("fold angle", mag, FOLD_ANGLE_RANGE, 0)
        half = 0.5 * abs(mag)
        a = (u if family == "fold1" else v) - off
        along = off + a * np.cos(half)
        lift = sign * np.abs(a) * np.sin(half)
        pts = (np.stack([along, v, lift], axis=1) if family == "fold1"
               else np.stack([u, along, lift], axis=1))
    return PointCloud(pts, category)


def sample_sheet_dof(category: str, rng: np.random.Generator) -> np.ndarray:
    if category == "plane":
        return np.zeros(2)
    family = category[:-1]
    if family.startswith("bend"):
        return np.array([rng.uniform(*BEND_CURVATURE_RANGE), 0.0])
    extent = SHEET_SIZE[0] if family == "fold1" else SHEET_SIZE[1]
    return np.array([rng.uniform(*FOLD_ANGLE_RANGE), rng.uniform(-0.15, 0.15) * extent])


def generate_sheet_dataset(per_class: int, n_raw: int = 2048, resolution: int = DEFAULT_RESOLUTION,
                           seed: int = 0, categories: Sequence[str] = SHEET_CATEGORIES) -> ShapeDataset:
    """Sheet clouds for every category, resampled to ``resolution`` points by FPS."""
    from .descriptors import farthest_point_sample

    rng = np.random.default_rng(seed)
    items = []
    for cat in categories:
        for _ in range(per_class):
            cloud = generate_sheet_cloud(cat, sample_sheet_dof(cat, rng), n_raw,
                                         seed=int(rng.integers(2**31)))
            items.append(farthest_point_sample(cloud, resolution))
    return ShapeDataset(items)
