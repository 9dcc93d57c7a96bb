"""``softshape`` command-line interface.

Every subcommand writes ``<output>.manifest.json`` next to its main output
with the full argument list, package versions and SHA-256 hashes of inputs
and outputs. Exit status: 0 success, 1 runtime error, 2 usage error.
"""
from __future__ import annotations

import os

# SOFTSHAPE_THREADS also caps BLAS threads; only effective before numpy loads
if os.environ.get("SOFTSHAPE_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["SOFTSHAPE_THREADS"])

import argparse
import csv
import hashlib
import json
import platform
import sys
import time

import numpy as np

from . import __version__


class UsageError(Exception):
    pass


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(args, argv, inputs, outputs, extra=None):
    import scipy

    from .kernels import BACKEND
    main = outputs[0]
    doc = {
        "subcommand": args.command,
        "argv": list(argv),
        "config": {k: v for k, v in vars(args).items() if k != "func"},
        "seed": getattr(args, "seed", None),
        "versions": {"softshape": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version(), "kernel_backend": BACKEND},
        "inputs": {p: _sha256(p) for p in inputs if p and os.path.exists(p)},
        "outputs": {p: _sha256(p) for p in outputs if p and os.path.exists(p)},
        "created_unix": time.time(),
    }
    if extra:
        doc["results"] = extra
    with open(main + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)


def _dump(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1)


def _load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _merge(label):
    return label.rstrip("+-") if isinstance(label, str) else label


def _pick(dataset, index, label):
    if label is not None:
        for i, s in enumerate(dataset):
            if s.label == label:
                return i, s
        raise UsageError(f"no shape labelled {label!r}; labels present: {sorted(dataset.categories, key=str)}")
    if not 0 <= index < len(dataset):
        raise UsageError(f"index {index} out of range for {len(dataset)} shapes")
    return index, dataset[index]


def _geo_config(args):
    from .geometry import GeodesicConfig
    return GeodesicConfig(n_segments=max(2, args.steps if hasattr(args, "steps") else args.segments),
                          learning_rate=args.lr, tolerance=args.tol, max_iter=args.max_iter, jacobi=args.jacobi)


def _add_geo_flags(p):
    p.add_argument("--lr", type=float, default=1e-2, help="geodesic step size alpha (default 1e-2)")
    p.add_argument("--tol", type=float, default=1e-6, help="stop when sum ||grad E||^2 <= tol (default 1e-6)")
    p.add_argument("--max-iter", type=int, default=5000, help="geodesic iteration cap (default 5000)")
    p.add_argument("--jacobi", action="store_true", help="simultaneous instead of sweeping node updates")


# --------------------------------------------------------------------------
# subcommands

def cmd_gen_data(args):
    from .io import save_shapes
    from .shapes import generate_bar_dataset, generate_sheet_dataset
    if args.kind == "bar":
        ds = generate_bar_dataset(args.per_class, q=args.q, seed=args.seed, noise=args.noise)
    else:
        ds = generate_sheet_dataset(args.per_class, n_raw=args.n_raw, resolution=args.resolution, seed=args.seed)
    save_shapes(ds, args.out, sidecar=args.sidecar)
    outs = [args.out] + ([args.out + ".f32"] if args.sidecar and args.kind == "sheet" else [])
    print(f"wrote {len(ds)} shapes ({', '.join(f'{k}: {v}' for k, v in ds.categories.items())}) to {args.out}")
    return [], outs, {"categories": ds.categories}


def cmd_fit_fourier(args):
    from .descriptors import fourier_features, fourier_r2
    from .io import load_shapes, write_matrix_csv
    ds = load_shapes(args.inp)
    F = fourier_features(ds, args.harmonics, method=args.method)
    write_matrix_csv(args.out, F, labels=ds.labels)
    outs = [args.out]
    result = {}
    if args.r2_out:
        by_class = {}
        for s in ds:
            by_class.setdefault(s.label, []).append(s)
        curves = {str(lab): [float(np.median([fourier_r2(s, n, args.method) for s in shapes]))
                             for n in range(1, args.harmonics + 1)] for lab, shapes in by_class.items()}
        _dump(args.r2_out, {"harmonics": list(range(1, args.harmonics + 1)), "median_r2": curves})
        outs.append(args.r2_out)
        result["median_r2"] = curves
    print(f"wrote {F.shape[0]} x {F.shape[1]} descriptor matrix to {args.out}")
    return [args.inp], outs, result


def cmd_fit_pca(args):
    from .codec import PcaCodec, save_codec
    from .descriptors import fourier_features
    from .io import load_shapes
    from .pca import explained_variance, fit_pca
    ds = load_shapes(args.inp)
    if ds.kind != "markers":
        raise UsageError("fit-pca needs a marker dataset (PCA requires ordered features)")
    F = fourier_features(ds, args.harmonics, method=args.method)
    model = fit_pca(F, args.latent)
    codec = PcaCodec(model, args.harmonics, ds.q, args.method)
    save_codec(codec, args.out)
    ev = explained_variance(model, args.latent)
    print(f"explained variance with k={args.latent}: {ev:.4f}")
    return [args.inp], [args.out], {"explained_variance": ev}


def cmd_train_ae(args):
    from .autoencoder import TrainConfig, build_model, train
    from .io import load_shapes
    from .shapes import normalize
    ds = load_shapes(args.inp)
    if ds.kind == "markers" and args.arch == "cloud":
        raise UsageError("arch 'cloud' needs a point-cloud dataset")
    if ds.kind == "cloud" and args.arch != "cloud":
        raise UsageError(f"arch {args.arch!r} needs a marker dataset")
    nds, rec = normalize(ds, "minmax", 0.1, 0.9)
    if ds.kind == "markers":
        model = build_model(args.arch, args.latent, seed=args.seed, q=ds.q)
    else:
        model = build_model("cloud", args.latent, seed=args.seed, resolution=ds[0].size)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.learning_rate,
                      optimizer=args.optimizer, seed=args.seed, validation_fraction=args.val_fraction,
                      loss=args.loss)

    def progress(epoch, tr, va):
        if args.verbose and (epoch % max(1, args.epochs // 10) == 0 or epoch == args.epochs):
            print(f"epoch {epoch}: train {tr:.6g}" + ("" if va is None else f", val {va:.6g}"), file=sys.stderr)

    log = train(model, nds, cfg, progress)
    model.normalization = rec
    model.save(args.out)
    ratio = log.final_train_loss / log.initial_train_loss
    print(f"train loss {log.initial_train_loss:.6g} -> {log.final_train_loss:.6g} ({100 * ratio:.2f}% of initial)")
    return [args.inp], [args.out], {"initial_train_loss": log.initial_train_loss,
                                    "final_train_loss": log.final_train_loss}


def _encode_dataset(codec, ds):
    return np.stack([codec.encode(s) for s in ds])


def cmd_build_graph(args):
    from .codec import load_codec
    from .io import load_shapes, write_matrix_csv
    from .semantic import build_graph, select_k_cv
    codec = load_codec(args.model)
    ds = load_shapes(args.inp)
    Z = _encode_dataset(codec, ds)
    labels = [_merge(l) for l in ds.labels] if args.merge_signs else ds.labels
    outs = [args.out]
    result = {}
    k_cls = args.k_classify
    if k_cls is None:
        cv = select_k_cv(Z, labels, range(1, args.max_k + 1), folds=5, seed=args.seed)
        k_cls = cv.best_k
        result["cv"] = {"ks": list(cv.ks), "errors": list(cv.errors), "best_k": cv.best_k}
        if args.cv_out:
            with open(args.cv_out, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["k", "cv_error"])
                w.writerows([k, repr(e)] for k, e in zip(cv.ks, cv.errors))
            outs.append(args.cv_out)
        print(f"5-fold CV selected k={k_cls} (error {min(cv.errors):.4f})")
    g = build_graph(Z, labels, args.k_graph, k_cls, decoder=codec, weights=args.weights, connect=args.connect)
    _dump(args.out, g.to_dict())
    if args.codes_out:
        write_matrix_csv(args.codes_out, Z, labels=labels)
        outs.append(args.codes_out)
    n_comp = len(g.components())
    print(f"graph: {g.n_nodes} nodes, {n_comp} component(s), k_graph={args.k_graph}, k_classify={k_cls}")
    result["components"] = n_comp
    return [args.model, args.inp], outs, result


def _load_graph(path):
    from .semantic import ShapeGraph
    return ShapeGraph.from_dict(_load_json(path))


def cmd_classify(args):
    from .codec import load_codec
    from .io import load_shapes
    from .semantic import knn_classify
    codec = load_codec(args.model)
    g = _load_graph(args.graph)
    ds = load_shapes(args.inp)
    rows = []
    correct = 0
    for i, s in enumerate(ds):
        c = knn_classify(g, codec.encode(s), args.k)
        truth = _merge(s.label) if args.merge_signs else s.label
        correct += c.label == truth
        rows.append({"index": i, "label": c.label, "votes": c.votes, "true_label": truth})
    _dump(args.out, {"predictions": rows})
    acc = correct / len(ds)
    print(f"classified {len(ds)} shapes; agreement with file labels {acc:.4f}")
    return [args.model, args.graph, args.inp], [args.out], {"agreement": acc}


def _svg_for_trace(trace, path, ordered):
    from .svg import write_svg
    shapes = trace.shapes if trace.shapes is not None else list(trace.features)
    titles = [f"{i}" + ("" if trace.labels is None else f" {trace.labels[i]}") for i in range(len(trace))]
    write_svg(path, shapes, titles, ordered)


def cmd_sweep(args):
    from .codec import load_codec
    from .io import load_shapes
    from .semantic import semantic_feature_sweep
    codec = load_codec(args.model)
    ds = load_shapes(args.inp)
    _, x0 = _pick(ds, args.index, args.label)
    g = _load_graph(args.graph) if args.graph else None
    if not 0 <= args.dim < codec.latent_dim:
        raise UsageError(f"--dim must lie in [0, {codec.latent_dim})")
    cfg = _geo_config(args)
    trace = semantic_feature_sweep(codec, x0, args.dim, args.step, args.steps, cfg, g, refine=not args.no_refine)
    _dump(args.out, trace.to_dict())
    outs = [args.out]
    if args.svg:
        _svg_for_trace(trace, args.svg, ordered=ds.kind == "markers")
        outs.append(args.svg)
    print(f"sweep of dimension {args.dim}: {len(trace)} nodes, manifold arc length {trace.arc_length:.6g}")
    return [args.model, args.inp] + ([args.graph] if args.graph else []), outs, {"arc_length": trace.arc_length}


def _plan(args, codec, g, x0, x1):
    from .semantic import plan_shape_path
    return plan_shape_path(g, codec, x0, x1, args.steps, _geo_config(args))


def _plan_doc(res):
    return {"traces": [res.shortest_path.to_dict(), res.linear.to_dict(), res.geodesic.to_dict()],
            "graph_path": res.graph_path, "graph_cost": res.graph_cost,
            "table": [{"method": m, "arc_length": a} for m, a in res.table()],
            "geodesic_status": None if res.geodesic_report is None else res.geodesic_report.status}


def cmd_plan(args):
    from .codec import load_codec
    from .io import load_shapes
    codec = load_codec(args.model)
    g = _load_graph(args.graph)
    _, x0 = _pick(load_shapes(args.from_), args.from_index, None)
    _, x1 = _pick(load_shapes(args.to), args.to_index, None)
    res = _plan(args, codec, g, x0, x1)
    _dump(args.out, _plan_doc(res))
    for m, a in res.table():
        print(f"{m:14s} {a:.6g}")
    return [args.model, args.graph, args.from_, args.to], [args.out], {"table": dict(res.table())}


def cmd_geodesic(args):
    from .codec import load_codec
    from .geometry import LatentCurve, geodesic_path, manifold_arc_length
    from .io import read_vector_csv, write_matrix_csv
    codec = load_codec(args.model)
    z0, z1 = read_vector_csv(args.from_), read_vector_csv(args.to)
    for name, z in (("--from", z0), ("--to", z1)):
        if z.shape != (codec.latent_dim,):
            raise UsageError(f"{name} code has {z.size} entries; model latent dimension is {codec.latent_dim}")
    if args.segments < 2:
        raise UsageError("--segments must be at least 2")
    curve, rep = geodesic_path(codec, z0, z1, _geo_config(args))
    write_matrix_csv(args.out, curve.nodes, header=[f"z{j}" for j in range(codec.latent_dim)])
    lin = manifold_arc_length(codec, LatentCurve.linear(z0, z1, args.segments))
    geo = manifold_arc_length(codec, curve)
    report = {"status": rep.status, "iterations": rep.iterations, "grad_norm_sq": rep.grad_norm_sq,
              "initial_energy": rep.initial_energy, "final_energy": rep.final_energy,
              "energy_log": rep.energy_log, "arc_length_linear": lin, "arc_length_geodesic": geo}
    rpath = args.report or os.path.splitext(args.out)[0] + ".report.json"
    _dump(rpath, report)
    print(f"{rep.status} after {rep.iterations} iterations; arc length linear {lin:.6g}, geodesic {geo:.6g}")
    return [args.model, args.from_, args.to], [args.out, rpath], {k: v for k, v in report.items()
                                                                   if k != "energy_log"}


def cmd_compare_interp(args):
    from .codec import load_codec
    from .io import load_shapes
    codec = load_codec(args.model)
    g = _load_graph(args.graph)
    ds = load_shapes(args.inp)
    i0, x0 = _pick(ds, args.from_index, args.from_label)
    i1, x1 = _pick(ds, args.to_index, args.to_label)
    res = _plan(args, codec, g, x0, x1)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "arc_length"])
        for m, a in res.table():
            w.writerow([m, repr(a)])
    outs = [args.out]
    if args.traces_out:
        _dump(args.traces_out, _plan_doc(res))
        outs.append(args.traces_out)
    print(f"{'method':14s} arc_length   (shape {i0} -> shape {i1})")
    for m, a in res.table():
        print(f"{m:14s} {a:.6g}")
    return [args.model, args.graph, args.inp], outs, {"table": dict(res.table()), "from": i0, "to": i1}


def cmd_report(args):
    from .semantic import DeformationTrace
    doc = _load_json(args.trace)
    docs = doc["traces"] if "traces" in doc else [doc]
    traces = [DeformationTrace.from_dict(d) for d in docs]
    if args.which is not None:
        traces = [t for t in traces if t.provenance == args.which]
        if not traces:
            raise UsageError(f"no trace with provenance {args.which!r} in {args.trace}")
    from .svg import write_svg
    shapes, titles = [], []
    for t in traces:
        for i in range(len(t)):
            shapes.append(t.shapes[i])
            titles.append(f"{t.provenance} {i}" + ("" if t.labels is None or t.labels[i] is None
                                                  else f" {t.labels[i]}"))
    ordered = not (shapes and np.asarray(shapes[0]).reshape(-1, 3).shape[0] > 64)
    write_svg(args.out, shapes, titles, ordered)
    print(f"wrote {len(shapes)} panels to {args.out}")
    return [args.trace], [args.out], {"panels": len(shapes)}


# --------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="softshape", description="Latent shape spaces for deformable objects.")
    p.add_argument("--version", action="version", version=f"softshape {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="generate a synthetic labelled dataset")
    s.add_argument("--kind", choices=["bar", "sheet"], required=True)
    s.add_argument("--per-class", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--q", type=int, default=8, help="markers per bar shape")
    s.add_argument("--noise", type=float, default=0.0, help="marker noise std (bar only)")
    s.add_argument("--n-raw", type=int, default=2048, help="raw samples per sheet before resampling")
    s.add_argument("--resolution", type=int, default=512, help="points per sheet after farthest-point sampling")
    s.add_argument("--sidecar", action="store_true", help="store cloud coordinates in a float32 sidecar")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("fit-fourier", help="Fourier descriptors of a marker dataset")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--harmonics", type=int, default=8)
    s.add_argument("--method", choices=["integral", "lstsq"], default="integral")
    s.add_argument("--r2-out", help="also write per-class median R^2 for 1..harmonics")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_fourier)

    s = sub.add_parser("fit-pca", help="PCA latent model on Fourier descriptors")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--harmonics", type=int, default=8)
    s.add_argument("--method", choices=["integral", "lstsq"], default="integral")
    s.add_argument("--latent", type=int, default=4)
    s.add_argument("--seed", type=int, default=0, help="recorded for the manifest; PCA is deterministic")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_pca)

    s = sub.add_parser("train-ae", help="train an autoencoder")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--arch", choices=["marker", "marker-smooth", "cloud"], default="marker")
    s.add_argument("--latent", type=int, default=None, help="latent size (preset default: 4 marker, 64 cloud)")
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--batch-size", type=int, default=32)
    s.add_argument("--learning-rate", type=float, default=1e-3)
    s.add_argument("--optimizer", choices=["adam", "sgd", "sgd-momentum"], default="adam")
    s.add_argument("--loss", choices=["mse", "chamfer"], default=None)
    s.add_argument("--val-fraction", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--verbose", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_ae)

    s = sub.add_parser("build-graph", help="kNN shape graph over encoded shapes")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--k-graph", type=int, default=6)
    s.add_argument("--k-classify", type=int, default=None, help="omit to choose by 5-fold CV")
    s.add_argument("--max-k", type=int, default=20, help="largest k tried by CV")
    s.add_argument("--weights", choices=["latent", "ambient"], default="latent")
    s.add_argument("--connect", action="store_true", help="bridge disconnected components")
    s.add_argument("--merge-signs", action="store_true", help="merge +/- subclasses (arch+/arch- -> arch)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--cv-out", help="CSV of CV error versus k")
    s.add_argument("--codes-out", help="CSV of latent codes with labels")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build_graph)

    s = sub.add_parser("classify", help="kNN labels for shapes")
    s.add_argument("--model", required=True)
    s.add_argument("--graph", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--k", type=int, default=None, help="override the graph's k_classify")
    s.add_argument("--merge-signs", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("sweep", help="semantic sweep of one latent dimension")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="inp", required=True, help="dataset holding the start shape")
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--label", help="use the first shape with this label instead of --index")
    s.add_argument("--graph", help="graph for labelling nodes")
    s.add_argument("--dim", type=int, required=True)
    s.add_argument("--step", type=float, required=True)
    s.add_argument("--steps", type=int, default=5)
    s.add_argument("--no-refine", action="store_true", help="skip geodesic refinement")
    _add_geo_flags(s)
    s.add_argument("--svg")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("plan", help="shortest-path, linear and geodesic plans between two shapes")
    s.add_argument("--model", required=True)
    s.add_argument("--graph", required=True)
    s.add_argument("--from", dest="from_", required=True)
    s.add_argument("--from-index", type=int, default=0)
    s.add_argument("--to", required=True)
    s.add_argument("--to-index", type=int, default=0)
    s.add_argument("--steps", type=int, default=16)
    _add_geo_flags(s)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("geodesic", help="discrete geodesic between two latent codes")
    s.add_argument("--model", required=True)
    s.add_argument("--from", dest="from_", required=True)
    s.add_argument("--to", required=True)
    s.add_argument("--segments", type=int, default=16)
    _add_geo_flags(s)
    s.add_argument("--report", help="JSON report path (default <out>.report.json)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_geodesic)

    s = sub.add_parser("compare-interp", help="arc-length table: shortest path vs linear vs geodesic")
    s.add_argument("--model", required=True)
    s.add_argument("--graph", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--from-label")
    s.add_argument("--to-label")
    s.add_argument("--from-index", type=int, default=0)
    s.add_argument("--to-index", type=int, default=0)
    s.add_argument("--steps", type=int, default=16)
    _add_geo_flags(s)
    s.add_argument("--traces-out", help="JSON with all three traces")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_compare_interp)

    s = sub.add_parser("report", help="SVG small multiples of a trace file")
    s.add_argument("--trace", required=True)
    s.add_argument("--which", choices=["shortest-path", "linear", "geodesic", "feature-sweep"])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        inputs, outputs, extra = args.func(args)
        _write_manifest(args, argv, inputs, outputs, extra)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"softshape {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # every runtime failure becomes a one-line diagnostic
        print(f"softshape {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
