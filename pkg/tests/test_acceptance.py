"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (with wall time against its budget) that
pytest prints in an "acceptance criteria" section at the end of the run.
"""
import contextlib
import csv
import json
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import all_pairs_brute_force, paraboloid_mesh_geodesic, resample_constant_speed
from softshape.autoencoder import build_model, pointnet_features
from softshape.cli import run
from softshape.codec import PcaCodec
from softshape.descriptors import chamfer_distance, fourier_features, fourier_r2
from softshape.geometry import (GeodesicConfig, LatentCurve, ParaboloidDecoder, curve_energy, geodesic_path,
                                manifold_arc_length)
from softshape.io import load_shapes
from softshape.kernels import available_backends
from softshape.pca import explained_variance, fit_pca
from softshape.semantic import build_graph, dijkstra, knn_classify, plan_shape_path, select_k_cv
from softshape.shapes import generate_bar_dataset, generate_sheet_dataset, normalize


@contextlib.contextmanager
def criterion(number, title, budget):
    t0 = time.perf_counter()
    status = "FAIL"
    try:
        yield
        status = "PASS"
    finally:
        dt = time.perf_counter() - t0
        if status == "PASS" and dt > budget:
            status = "FAIL"
        ACCEPTANCE_LINES.append(f"criterion {number:2d} {status}  {title}  ({dt:.1f} s, budget {budget:g} s)")
    assert dt <= budget, f"took {dt:.1f} s, budget {budget} s"


def rel_err(a, b):
    return np.abs(a - b).max() / np.abs(b).max()


# ---------------------------------------------------------------------------

def test_01_fourier_r2_monotone_and_ordered():
    with criterion(1, "Fourier R^2 monotone in N; S/helix need more harmonics than line/arch", 30):
        classes = ["line", "arch+", "s+", "helix+"]
        ds = generate_bar_dataset(20, seed=0, categories=classes)
        first = {}
        for method in ("integral", "lstsq"):
            for cat in classes:
                R = np.array([[fourier_r2(s, n, method) for n in range(1, 13)] for s in ds if s.label == cat])
                med = np.median(R, axis=0)
                assert np.all(np.diff(med) >= -1e-9), (method, cat, med)
                if method == "integral":
                    first[cat] = int(np.argmax(med >= 0.95)) + 1
                    assert med.max() >= 0.95
        assert min(first["s+"], first["helix+"]) > max(first["line"], first["arch+"]), first


def test_02_pca_explained_variance():
    with criterion(2, "PCA v_exp(4) >= 0.95 on bar Fourier features", 10):
        ds = generate_bar_dataset(40, seed=0)
        model = fit_pca(fourier_features(ds, 8))
        v = explained_variance(model, 4)
        assert v >= 0.95, v


def _fd_jacobian(model, z, h=1e-5):
    cols = []
    for j in range(z.size):
        e = np.zeros_like(z)
        e[j] = h
        cols.append((model.decode(z + e).ravel() - model.decode(z - e).ravel()) / (2 * h))
    return np.stack(cols, axis=1)


def _loss_fd_check(model, x, loss, rng, n_dir=4, n_coord=12, h=1e-6):
    """Analytic loss gradient against central differences of the true loss,
    along random directions and individual coordinates."""
    theta0 = model.get_vector()
    model.loss_and_grad(x, loss)
    g = model.gradient_vector()

    def f(theta):
        model.set_vector(theta)
        return model.batch_loss(x, loss)[0]

    dirs = [d / np.linalg.norm(d) for d in rng.normal(size=(n_dir, theta0.size))]
    for i in rng.choice(theta0.size, n_coord, replace=False):
        e = np.zeros_like(theta0)
        e[i] = 1.0
        dirs.append(e)
    def central(d):
        # Chamfer and max-pool are piecewise smooth: if a nearest neighbour or
        # argmax flips inside the probe interval, the h and h/10 estimates
        # disagree and the step shrinks until the interval is on one piece
        step = h
        est = (f(theta0 + step * d) - f(theta0 - step * d)) / (2 * step)
        while step > 1e-8:
            finer = (f(theta0 + 0.1 * step * d) - f(theta0 - 0.1 * step * d)) / (0.2 * step)
            if abs(finer - est) <= 2e-5 * max(abs(finer), 1e-2):
                break
            step, est = 0.1 * step, finer
        return est

    analytic = np.array([g @ d for d in dirs])
    numeric = np.array([central(d) for d in dirs])
    model.set_vector(theta0)
    return rel_err(analytic, numeric)


def test_03_gradient_exactness():
    with criterion(3, "decoder Jacobians and MSE/Chamfer loss gradients match central differences", 60):
        rng = np.random.default_rng(3)
        bars, _ = normalize(generate_bar_dataset(10, seed=3))
        xb = bars.feature_matrix()
        sheets, _ = normalize(generate_sheet_dataset(1, n_raw=700, resolution=512, seed=3))
        xs = sheets.point_tensor()
        worst = {}
        for point in range(10):
            marker = build_model("marker", seed=100 + point)
            cloud = build_model("cloud", seed=200 + point)
            for name, m in (("marker", marker), ("cloud", cloud)):
                z = rng.normal(size=m.latent_dim)
                worst[name + " jacobian"] = max(worst.get(name + " jacobian", 0),
                                                rel_err(m.decoder_jacobian(z), _fd_jacobian(m, z)))
            batch = xb[rng.choice(len(xb), 8, replace=False)]
            worst["marker mse"] = max(worst.get("marker mse", 0), _loss_fd_check(marker, batch, "mse", rng))
            clouds = xs[rng.choice(len(xs), 2, replace=False)]
            worst["cloud chamfer"] = max(worst.get("cloud chamfer", 0),
                                         _loss_fd_check(cloud, clouds, "chamfer", rng))
        print(worst)
        assert max(worst.values()) < 1e-4, worst


def test_04_chamfer_oracle():
    with criterion(4, "accelerated Chamfer equals brute force within 1e-12 on 100 pairs", 10):
        rng = np.random.default_rng(4)
        for _ in range(100):
            a = rng.uniform(-1, 1, size=(int(rng.integers(1, 101)), 3))
            b = rng.uniform(-1, 1, size=(int(rng.integers(1, 101)), 3))
            d = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
            ref = d.min(1).sum() + d.min(0).sum()
            for backend in available_backends():
                assert abs(chamfer_distance(a, b, backend=backend) - ref) <= 1e-12
            assert abs(chamfer_distance(a, b, method="kdtree") - ref) <= 1e-12


def test_05_paraboloid_geodesic_against_mesh_oracle():
    with criterion(5, "paraboloid geodesic from the straight start matches the mesh-Dijkstra oracle", 60):
        a, b = np.array([-1.0, 0.0]), np.array([1.0, 0.0])
        dec = ParaboloidDecoder()
        curve, rep = geodesic_path(dec, a, b, GeodesicConfig(n_segments=16))
        assert rep.converged and rep.grad_norm_sq <= 1e-6
        assert rep.final_energy <= curve_energy(dec, LatentCurve.linear(a, b, 16))
        poly, oracle_len = paraboloid_mesh_geodesic(a, b)
        ref = resample_constant_speed(poly, 16)
        gap = min(np.linalg.norm(curve.nodes - r, axis=1).max() for r in (ref, ref * [1.0, -1.0]))
        print(f"max node gap {gap:.4f}; arc length {manifold_arc_length(dec, curve):.4f} vs oracle {oracle_len:.4f}")
        assert gap <= 2e-2


def _fleet():
    """Every geodesic run of the fleet: (name, decoder, start, end, config, initial)."""
    bars = generate_bar_dataset(15, seed=6)
    pca = PcaCodec(fit_pca(fourier_features(bars, 8), 4), 8, 8)
    runs = []
    for k, (a, b) in enumerate([((-1, 0), (1, 0)), ((-1, 0.3), (0.8, -0.6)), ((0.2, 0.9), (-0.7, -0.4))]):
        for jacobi in (False, True):
            runs.append((f"paraboloid-{k}-{'jacobi' if jacobi else 'gs'}", ParaboloidDecoder(), np.array(a, float),
                         np.array(b, float), GeodesicConfig(n_segments=12, jacobi=jacobi)))
    for i, j in [(0, 20), (3, 60), (30, 95)]:
        runs.append((f"pca-{i}-{j}", pca, pca.encode(bars[i]), pca.encode(bars[j]), GeodesicConfig()))
    return runs


def test_06_energy_monotone_and_shorter_than_linear(trained_marker, trained_smooth, normalized_bars):
    with criterion(6, "accepted iterations never raise energy; geodesic arc <= linear arc + 1e-6", 120):
        runs = _fleet()
        nds, _ = normalized_bars
        x = nds.feature_matrix()
        for name, m in (("marker", trained_marker), ("smooth", trained_smooth)):
            Z = m.encode(x)
            for i, j in [(0, 40), (10, 150), (70, 250), (5, 270)]:
                runs.append((f"ae-{name}-{i}-{j}", m, Z[i], Z[j], GeodesicConfig()))
        for name, dec, a, b, cfg in runs:
            curve, rep = geodesic_path(dec, a, b, cfg)
            log = np.asarray(rep.energy_log)
            assert np.all(np.diff(log) <= 0.0), name
            lin = manifold_arc_length(dec, LatentCurve.linear(a, b, cfg.n_segments))
            assert manifold_arc_length(dec, curve) <= lin + 1e-6, name
        print(f"{len(runs)} geodesic runs checked")


def test_07_flat_metric_degeneracy(bar_dataset):
    with criterion(7, "PCA decoder: geodesic keeps the straight start; planner geodesic equals linear", 20):
        pca = PcaCodec(fit_pca(fourier_features(bar_dataset, 8), 4), 8, 8)
        Z = np.stack([pca.encode(s) for s in bar_dataset])
        for i, j in [(0, 100), (40, 250), (17, 18)]:
            curve, _ = geodesic_path(pca, Z[i], Z[j])
            assert np.abs(curve.nodes - LatentCurve.linear(Z[i], Z[j], 16).nodes).max() <= 1e-8
        g = build_graph(Z, bar_dataset.labels, 6, 3, connect=True)
        res = plan_shape_path(g, pca, bar_dataset[0], bar_dataset[200], 16)
        assert np.abs(res.geodesic.codes - res.linear.codes).max() <= 1e-10


def test_08_planning_pipeline(tmp_path):
    with criterion(8, "CLI pipeline on 2100 bars: geodesic shortest and inside the inflated bounding box", 600):
        p = {k: str(tmp_path / k) for k in ("bars.json", "ae.json", "graph.json", "table.csv", "traces.json")}
        assert run(["gen-data", "--kind", "bar", "--per-class", "300", "--seed", "0", "--out", p["bars.json"]]) == 0
        ds = load_shapes(p["bars.json"])
        assert len(ds) >= 2000
        assert run(["train-ae", "--in", p["bars.json"], "--epochs", "200", "--out", p["ae.json"]]) == 0
        res = json.load(open(p["ae.json"] + ".manifest.json"))["results"]
        assert res["final_train_loss"] < 0.1 * res["initial_train_loss"], res
        assert run(["build-graph", "--model", p["ae.json"], "--in", p["bars.json"], "--connect",
                    "--out", p["graph.json"]]) == 0
        assert run(["compare-interp", "--model", p["ae.json"], "--graph", p["graph.json"], "--in", p["bars.json"],
                    "--from-label", "line", "--to-label", "s+", "--traces-out", p["traces.json"],
                    "--out", p["table.csv"]]) == 0
        table = {m: float(v) for m, v in list(csv.reader(open(p["table.csv"])))[1:]}
        print(table)
        assert table["geodesic"] <= table["linear"]
        assert table["geodesic"] <= table["shortest-path"]
        pts = np.concatenate([s.points for s in ds])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        pad = 0.1 * (hi - lo)
        geo = next(t for t in json.load(open(p["traces.json"]))["traces"] if t["provenance"] == "geodesic")
        for node in geo["nodes"]:
            shape = np.asarray(node["shape"])
            assert np.all(shape >= lo - pad) and np.all(shape <= hi + pad)


def test_09_knn_cv_dijkstra(marker_codec, bar_dataset):
    with criterion(9, "CV curves repeat, kNN ignores data order, Dijkstra equals exhaustive search", 60):
        Z = np.stack([marker_codec.encode(s) for s in bar_dataset])
        labels = bar_dataset.labels
        cv1 = select_k_cv(Z, labels, range(1, 21), seed=9)
        cv2 = select_k_cv(Z, labels, range(1, 21), seed=9)
        assert cv1.errors == cv2.errors and cv1.best_k == cv2.best_k
        rng = np.random.default_rng(9)
        queries = Z[rng.choice(len(Z), 40)] + rng.normal(scale=0.05, size=(40, Z.shape[1]))
        for k in (1, 3, 7):
            ref = [knn_classify(Z, q, k, labels).label for q in queries]
            for _ in range(5):
                p = rng.permutation(len(Z))
                assert [knn_classify(Z[p], q, k, [labels[i] for i in p]).label for q in queries] == ref
        for _ in range(50):
            n = int(rng.integers(1, 11))
            density = rng.uniform(0.15, 0.5)
            adj = {i: {} for i in range(n)}
            for i in range(n):
                for j in range(i + 1, n):
                    if rng.uniform() < density:
                        adj[i][j] = adj[j][i] = float(rng.uniform(0.1, 3.0))
            best = all_pairs_brute_force(adj)
            for s in range(n):
                for t in range(n):
                    path, cost = dijkstra(adj, s, t)
                    if (s, t) not in best:
                        assert path == [] and cost == np.inf
                    else:
                        assert abs(cost - best[(s, t)]) <= 1e-12
                        assert abs(sum(adj[u][v] for u, v in zip(path, path[1:])) - cost) <= 1e-12


def test_10_pointnet_permutation_invariance():
    with criterion(10, "PointNet encoder features bit-identical under 20 permutations", 30):
        model = build_model("cloud", seed=10)
        cloud = normalize(generate_sheet_dataset(1, n_raw=700, resolution=512, seed=10))[0][2].points
        ref_feat, ref_code = pointnet_features(model, cloud), model.encode(cloud)
        rng = np.random.default_rng(10)
        for _ in range(20):
            p = rng.permutation(cloud.shape[0])
            assert np.array_equal(pointnet_features(model, cloud[p]), ref_feat)
            assert np.array_equal(model.encode(cloud[p]), ref_code)
