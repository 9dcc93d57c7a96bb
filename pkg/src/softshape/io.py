"""Dataset files (JSON with optional float32 sidecar) and CSV export."""
from __future__ import annotations

import csv
import json
import os

import numpy as np

from .shapes import MarkerShape, PointCloud, ShapeDataset


class FormatError(ValueError):
    pass


def save_shapes(dataset: ShapeDataset, path, sidecar: bool = False):
    """Write a dataset as JSON.

    With ``sidecar=True`` (clouds only) the coordinates go to
    ``<path>.f32`` as little-endian float32 and each shape records its
    point count and offset instead of inline points.
    """
    path = os.fspath(path)
    if dataset.kind == "markers":
        doc = {"kind": "markers", "q": dataset.q,
               "shapes": [{"label": s.label, "points": s.points.tolist()} for s in dataset]}
    else:
        doc = {"kind": "cloud"}
        if sidecar:
            name = os.path.basename(path) + ".f32"
            blob = np.concatenate([s.points for s in dataset]).astype("<f4")
            blob.tofile(os.path.join(os.path.dirname(path) or ".", name))
            shapes, off = [], 0
            for s in dataset:
                shapes.append({"label": s.label, "count": s.size, "offset": off})
                off += s.size
            doc["sidecar"] = name
            doc["shapes"] = shapes
        else:
            doc["shapes"] = [{"label": s.label, "points": s.points.tolist()} for s in dataset]
    if dataset.normalization is not None:
        doc["normalization"] = dataset.normalization.to_dict()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def _points_array(raw, where):
    try:
        pts = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{where}: points are not numeric ({exc})") from None
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise FormatError(f"{where}: points must be a list of [x, y, z] triples")
    return pts


def load_shapes(path) -> ShapeDataset:
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed JSON ({exc})") from None
    if not isinstance(doc, dict) or doc.get("kind") not in ("markers", "cloud") or "shapes" not in doc:
        raise FormatError(f"{path}: expected an object with kind 'markers' or 'cloud' and a shapes list")
    shapes = doc["shapes"]
    if not shapes:
        raise FormatError(f"{path}: no shapes")
    items = []
    if doc["kind"] == "markers":
        q = doc.get("q")
        for i, rec in enumerate(shapes):
            pts = _points_array(rec.get("points"), f"{path}: shape {i}")
            if q is not None and pts.shape[0] != q:
                raise FormatError(f"{path}: shape {i} has q={pts.shape[0]} but the dataset declares q={q}")
            try:
                items.append(MarkerShape(pts, rec.get("label")))
            except ValueError as exc:
                raise FormatError(f"{path}: shape {i}: {exc}") from None
    else:
        blob = None
        if "sidecar" in doc:
            side = os.path.join(os.path.dirname(path) or ".", doc["sidecar"])
            blob = np.fromfile(side, dtype="<f4").astype(np.float64).reshape(-1, 3)
        for i, rec in enumerate(shapes):
            if blob is not None and "points" not in rec:
                lo, n = int(rec["offset"]), int(rec["count"])
                if lo + n > blob.shape[0]:
                    raise FormatError(f"{path}: shape {i} runs past the end of the sidecar")
                pts = blob[lo:lo + n]
            else:
                pts = _points_array(rec.get("points"), f"{path}: shape {i}")
            try:
                items.append(PointCloud(pts, rec.get("label")))
            except ValueError as exc:
                raise FormatError(f"{path}: shape {i}: {exc}") from None
    norm = None
    if doc.get("normalization"):
        from .shapes import NormalizationRecord
        norm = NormalizationRecord.from_dict(doc["normalization"])
    return ShapeDataset(items, normalization=norm)


def export_csv(dataset: ShapeDataset, path):
    """One shape per row: flattened coordinates, label last."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for s in dataset:
            w.writerow([repr(float(v)) for v in s.points.reshape(-1)] + ["" if s.label is None else s.label])


def write_matrix_csv(path, rows, header=None, labels=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(header)
        for i, row in enumerate(np.atleast_2d(rows)):
            extra = [] if labels is None else ["" if labels[i] is None else labels[i]]
            w.writerow([repr(float(v)) for v in row] + extra)


def read_vector_csv(path) -> np.ndarray:
    """A latent code from a CSV file: all numeric cells of the first data row."""
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            cells = [c.strip() for c in row if c.strip()]
            try:
                return np.array([float(c) for c in cells])
            except ValueError:
                continue  # header line
    raise FormatError(f"{path}: no numeric row found")
