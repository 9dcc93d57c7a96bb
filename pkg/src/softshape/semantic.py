"""Latent-space classification, semantic sweeps and shape planning.

"Model" below means any encoder/decoder pair exposing ``encode(x)``,
``decode(z)``, ``jacobian(z)``, ``latent_dim`` and ``is_linear`` (a PCA or
autoencoder codec).
"""
from __future__ import annotations

import heapq
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import GeodesicConfig, LatentCurve, geodesic_path, manifold_arc_length


def _label_key(label):
    # None sorts first; everything else by its string form
    return (label is not None, "" if label is None else str(label))


def _sorted_labels(labels):
    return sorted(set(labels), key=_label_key)


def _distances(codes, z):
    diff = codes - z
    return np.sqrt((diff * diff).sum(axis=1))


def _neighbor_order(codes, labels, z, label_rank):
    """Indices sorted by (distance, label, coordinates): independent of storage order."""
    d = _distances(codes, z)
    keys = [codes[:, j] for j in range(codes.shape[1] - 1, -1, -1)]
    keys.append(np.array([label_rank[lab] for lab in labels]))
    keys.append(d)
    return np.lexsort(keys), d


@dataclass
class ShapeGraph:
    codes: np.ndarray
    labels: list
    indices: np.ndarray
    k_graph: int
    edges: dict  # node -> {neighbor: weight}
    k_classify: int = 1
    weight_mode: str = "latent"

    @property
    def n_nodes(self):
        return self.codes.shape[0]

    @property
    def label_order(self):
        return _sorted_labels(self.labels)

    def degree(self, i):
        return len(self.edges[i])

    def neighbors(self, i):
        return self.edges[i]

    def components(self):
        seen = [-1] * self.n_nodes
        comps = []
        for s in range(self.n_nodes):
            if seen[s] >= 0:
                continue
            stack, comp = [s], []
            seen[s] = len(comps)
            while stack:
                u = stack.pop()
                comp.append(u)
                for v in self.edges[u]:
                    if seen[v] < 0:
                        seen[v] = len(comps)
                        stack.append(v)
            comps.append(sorted(comp))
        return comps

    def nearest_node(self, z):
        rank = {lab: i for i, lab in enumerate(self.label_order)}
        order, _ = _neighbor_order(self.codes, self.labels, np.asarray(z, dtype=np.float64), rank)
        return int(order[0])

    def to_dict(self):
        edge_list = sorted((i, j, w) for i, nb in self.edges.items() for j, w in nb.items() if i < j)
        return {
            "format": "softshape-graph",
            "codes": self.codes.tolist(),
            "labels": list(self.labels),
            "indices": self.indices.tolist(),
            "k_graph": self.k_graph,
            "k_classify": self.k_classify,
            "weight_mode": self.weight_mode,
            "edges": [[i, j, w] for i, j, w in edge_list],
        }

    @classmethod
    def from_dict(cls, d):
        n = len(d["codes"])
        edges = {i: {} for i in range(n)}
        for i, j, w in d["edges"]:
            edges[int(i)][int(j)] = float(w)
            edges[int(j)][int(i)] = float(w)
        return cls(np.asarray(d["codes"], dtype=np.float64).reshape(n, -1), list(d["labels"]),
                   np.asarray(d["indices"], dtype=np.int64), int(d["k_graph"]), edges,
                   int(d.get("k_classify", 1)), d.get("weight_mode", "latent"))


def build_graph(codes, labels=None, k_graph=6, k_classify=1, decoder=None, weights="latent",
                indices=None, connect=False) -> ShapeGraph:
    """Symmetrized kNN graph over latent codes.

    Each node links to its ``k_graph`` nearest other nodes (ties by index);
    edges are then made undirected. Weights are latent distances, or decoded
    ambient distances ``||g(z_a) - g(z_b)||`` with ``weights="ambient"``.
    ``connect=True`` additionally bridges separate components with the
    shortest possible inter-component edges (Kruskal over all pairs).
    """
    codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    m = codes.shape[0]
    labels = [None] * m if labels is None else list(labels)
    if len(labels) != m:
        raise ValueError("labels and codes differ in length")
    if not 1 <= k_graph < m:
        raise ValueError(f"k_graph must lie in [1, {m - 1}] for {m} nodes")
    if weights not in ("latent", "ambient"):
        raise ValueError("weights must be 'latent' or 'ambient'")
    if weights == "ambient" and decoder is None:
        raise ValueError("ambient edge weights need a decoder")
    edges = {i: {} for i in range(m)}
    for i in range(m):
        d = _distances(codes, codes[i])
        d[i] = np.inf
        for j in np.argsort(d, kind="stable")[:k_graph]:
            j = int(j)
            if d[j] == 0.0:
                raise ValueError(f"nodes {i} and {j} have identical latent codes")
            edges[i][j] = float(d[j])
            edges[j][i] = float(d[j])
    if connect:
        _bridge_components(codes, edges)
    if weights == "ambient":
        imgs = [np.asarray(decoder.decode(z), dtype=np.float64).reshape(-1) for z in codes]
        for i in edges:
            for j in edges[i]:
                edges[i][j] = float(np.linalg.norm(imgs[i] - imgs[j]))
    idx = np.arange(m) if indices is None else np.asarray(indices, dtype=np.int64)
    return ShapeGraph(codes, labels, idx, k_graph, edges, k_classify, weights)


def _bridge_components(codes, edges):
    m = codes.shape[0]
    parent = list(range(m))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, nb in edges.items():
        for j in nb:
            parent[find(i)] = find(j)
    n_comp = len({find(i) for i in range(m)})
    if n_comp == 1:
        return
    root = np.array([find(i) for i in range(m)])
    iu, ju = np.triu_indices(m, 1)
    cross = root[iu] != root[ju]
    iu, ju = iu[cross], ju[cross]
    d = np.sqrt(((codes[iu] - codes[ju]) ** 2).sum(axis=1))
    for e in np.lexsort((ju, iu, d)):
        a, b = find(int(iu[e])), find(int(ju[e]))
        if a != b:
            i, j = int(iu[e]), int(ju[e])
            edges[i][j] = edges[j][i] = float(d[e])
            parent[a] = b
            n_comp -= 1
            if n_comp == 1:
                return


# --------------------------------------------------------------------------
# classification

@dataclass(frozen=True)
class Classification:
    label: object
    votes: dict
    neighbors: tuple


def _vote(labels, dists, order, k, label_rank):
    top = order[:k]
    votes = Counter(labels[i] for i in top)
    total = {}
    for i in top:  # summed in sorted-neighbour order
        total[labels[i]] = total.get(labels[i], 0.0) + float(dists[i])
    best = min(votes, key=lambda lab: (-votes[lab], total[lab], label_rank[lab]))
    return best, dict(votes), tuple(int(i) for i in top)


def knn_classify(graph_or_codes, z, k=None, labels=None) -> Classification:
    """Majority vote among the ``k`` nearest codes.

    Vote ties go to the label whose voters have the smaller total distance,
    then to the label that sorts first.
    """
    if isinstance(graph_or_codes, ShapeGraph):
        codes, labs = graph_or_codes.codes, graph_or_codes.labels
        k = graph_or_codes.k_classify if k is None else k
    else:
        codes, labs = np.atleast_2d(np.asarray(graph_or_codes, dtype=np.float64)), list(labels)
        k = 1 if k is None else k
    if not 1 <= k <= codes.shape[0]:
        raise ValueError(f"k_classify={k} exceeds the {codes.shape[0]} available nodes")
    z = np.asarray(z, dtype=np.float64)
    if z.shape != codes.shape[1:]:
        raise ValueError(f"code has shape {z.shape}; graph codes have dimension {codes.shape[1]}")
    rank = {lab: i for i, lab in enumerate(_sorted_labels(labs))}
    order, d = _neighbor_order(codes, labs, z, rank)
    label, votes, nb = _vote(labs, d, order, k, rank)
    return Classification(label, votes, nb)


@dataclass(frozen=True)
class CrossValidation:
    best_k: int
    ks: tuple
    errors: tuple  # mean misclassification rate per k


def stratified_folds(labels, folds=5, seed=0):
    """Fold id per sample; each class is shuffled and dealt round-robin."""
    labels = list(labels)
    counts = Counter(labels)
    short = {lab: c for lab, c in counts.items() if c < folds}
    if short:
        raise ValueError(f"classes with fewer samples than folds ({folds}): {short}")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(labels), dtype=np.int64)
    for lab in _sorted_labels(labels):
        members = np.array([i for i, l in enumerate(labels) if l == lab])
        members = members[rng.permutation(members.size)]
        fold_of[members] = np.arange(members.size) % folds
    return fold_of


def select_k_cv(codes, labels, candidate_ks: Sequence[int] = tuple(range(1, 21)), folds=5,
                seed=0) -> CrossValidation:
    """Pick the kNN ``k`` with the lowest stratified ``folds``-fold CV error (smaller k on ties)."""
    codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    labels = list(labels)
    ks = tuple(sorted(set(int(k) for k in candidate_ks)))
    if not ks or ks[0] < 1:
        raise ValueError("candidate ks must be positive")
    fold_of = stratified_folds(labels, folds, seed)
    errs = np.zeros(len(ks))
    for f in range(folds):
        train = np.flatnonzero(fold_of != f)
        test = np.flatnonzero(fold_of == f)
        if ks[-1] > train.size:
            raise ValueError(f"k={ks[-1]} exceeds the {train.size} training samples of a fold")
        tc = codes[train]
        tl = [labels[i] for i in train]
        rank = {lab: i for i, lab in enumerate(_sorted_labels(tl))}
        wrong = np.zeros(len(ks))
        for t in test:
            order, d = _neighbor_order(tc, tl, codes[t], rank)
            for ki, k in enumerate(ks):
                if _vote(tl, d, order, k, rank)[0] != labels[t]:
                    wrong[ki] += 1
        errs += wrong / test.size
    errs /= folds
    best = ks[int(np.argmin(errs))]  # argmin keeps the first, i.e. smallest, k
    return CrossValidation(best, ks, tuple(float(e) for e in errs))


# --------------------------------------------------------------------------
# shortest paths

def dijkstra(graph, source, target):
    """Shortest path on a ``ShapeGraph`` or a ``{node: {neighbor: weight}}`` map.

    Returns ``(node list, cost)``; ``([], inf)`` when unreachable.
    """
    adj = graph.edges if isinstance(graph, ShapeGraph) else graph
    dist = {source: 0.0}
    prev = {}
    heap = [(0.0, source)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == target:
            break
        for v, w in adj[u].items():
            if w < 0:
                raise ValueError("negative edge weight")
            nd = d + w
            if v not in dist or nd < dist[v]:
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    if target not in done:
        return [], float("inf")
    path = [target]
    while path[-1] != source:
        path.append(prev[path[-1]])
    return path[::-1], dist[target]


# --------------------------------------------------------------------------
# traces

@dataclass
class DeformationTrace:
    provenance: str  # shortest-path | linear | geodesic | feature-sweep
    codes: np.ndarray
    features: np.ndarray  # decoded, flattened
    labels: Optional[list] = None
    tags: Optional[list] = None
    arc_length: float = 0.0
    energy_log: list = field(default_factory=list)
    shapes: Optional[list] = None  # de-normalized point arrays, when the model knows how

    def __post_init__(self):
        if self.codes.shape[0] == 0:
            raise ValueError("a trace needs at least one node")

    def __len__(self):
        return self.codes.shape[0]

    def to_dict(self):
        nodes = []
        for i in range(len(self)):
            node = {"z": self.codes[i].tolist(),
                    "shape": (self.shapes[i] if self.shapes is not None else self.features[i]).tolist(),
                    "label": None if self.labels is None else self.labels[i]}
            if self.tags is not None:
                node["tag"] = self.tags[i]
            nodes.append(node)
        return {"provenance": self.provenance, "nodes": nodes,
                "arc_length_manifold": self.arc_length, "energy_log": list(self.energy_log)}

    @classmethod
    def from_dict(cls, d):
        nodes = d["nodes"]
        codes = np.asarray([n["z"] for n in nodes], dtype=np.float64)
        shapes = [np.asarray(n["shape"], dtype=np.float64) for n in nodes]
        feats = np.stack([s.reshape(-1) for s in shapes])
        labels = [n.get("label") for n in nodes]
        tags = [n["tag"] for n in nodes] if nodes and "tag" in nodes[0] else None
        return cls(d["provenance"], codes, feats, labels, tags, float(d.get("arc_length_manifold", 0.0)),
                   list(d.get("energy_log", [])), shapes)


def _make_trace(model, provenance, codes, graph=None, tags=None, energy_log=()):
    codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    feats = np.stack([np.asarray(model.decode(z), dtype=np.float64).reshape(-1) for z in codes])
    labels = [knn_classify(graph, z).label for z in codes] if graph is not None else None
    length = float(np.linalg.norm(np.diff(feats, axis=0), axis=1).sum()) if len(codes) > 1 else 0.0
    shapes = [model.to_shape_array(f) for f in feats] if hasattr(model, "to_shape_array") else None
    return DeformationTrace(provenance, codes, feats, labels, tags, length, list(energy_log), shapes)


def _encode(model, x):
    return np.asarray(model.encode(x), dtype=np.float64)


def _refine(model, za, zb, n_steps, config):
    if n_steps < 2 or model.is_linear:
        return LatentCurve.linear(za, zb, n_steps).nodes, []
    cfg = GeodesicConfig(n_steps, config.learning_rate, config.tolerance, config.max_iter, config.jacobi,
                         config.restore_after, config.max_rejections)
    curve, report = geodesic_path(model, za, zb, cfg)
    return curve.nodes, report.energy_log


def semantic_feature_sweep(model, x0, p, delta, n_steps, config: GeodesicConfig = None, graph=None,
                           refine=True) -> DeformationTrace:
    """Decode codes swept along latent dimension ``p`` in both directions.

    Nodes run from ``z0 - n*delta*e_p`` through ``z0`` to ``z0 + n*delta*e_p``
    and are tagged ``decreasing``/``origin``/``increasing``. For nonlinear
    decoders each half is relaxed to a geodesic with fixed endpoints.
    """
    config = config or GeodesicConfig()
    k = model.latent_dim
    if not 0 <= p < k:
        raise ValueError(f"dimension {p} outside [0, {k})")
    if delta == 0:
        raise ValueError("step must be nonzero")
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    z0 = _encode(model, x0)
    if n_steps == 0:
        return _make_trace(model, "feature-sweep", z0[None], graph, ["origin"])
    e = np.zeros(k)
    e[p] = 1.0
    ends = {s: z0 + s * n_steps * delta * e for s in (-1, 1)}
    halves = {}
    log = []
    for s in (-1, 1):
        if refine and not model.is_linear:
            nodes, elog = _refine(model, z0, ends[s], n_steps, config)
            log.extend(elog)
        else:
            nodes = z0 + (s * delta * np.arange(n_steps + 1))[:, None] * e
        halves[s] = nodes
    codes = np.concatenate([halves[-1][::-1], halves[1][1:]])
    tags = ["decreasing"] * n_steps + ["origin"] + ["increasing"] * n_steps
    return _make_trace(model, "feature-sweep", codes, graph, tags, log)


class DisconnectedGraphError(RuntimeError):
    pass


@dataclass
class PlanResult:
    shortest_path: DeformationTrace
    linear: DeformationTrace
    geodesic: DeformationTrace
    graph_path: list  # graph node ids along the shortest path
    graph_cost: float
    geodesic_report: object = None

    def table(self):
        return [("shortest-path", self.shortest_path.arc_length), ("linear", self.linear.arc_length),
                ("geodesic", self.geodesic.arc_length)]


def _dedupe(codes):
    keep = [0] + [i for i in range(1, len(codes)) if not np.array_equal(codes[i], codes[i - 1])]
    return codes[keep]


def plan_codes(graph, model, z0, z1, n_steps=16, config: GeodesicConfig = None) -> PlanResult:
    """Plan between two latent codes (see :func:`plan_shape_path`)."""
    config = config or GeodesicConfig()
    z0 = np.asarray(z0, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    if np.array_equal(z0, z1):
        single = {p: _make_trace(model, p, z0[None], graph) for p in ("shortest-path", "linear", "geodesic")}
        return PlanResult(single["shortest-path"], single["linear"], single["geodesic"], [], 0.0)
    a, b = graph.nearest_node(z0), graph.nearest_node(z1)
    path, cost = dijkstra(graph, a, b)
    if not path:
        comps = graph.components()
        which = {i: ci for ci, comp in enumerate(comps) for i in comp}
        raise DisconnectedGraphError(
            f"start node {a} (component {which[a]}) and goal node {b} (component {which[b]}) are not "
            f"connected; components: " + "; ".join(f"#{ci}: {len(c)} nodes starting {c[:5]}"
                                                   for ci, c in enumerate(comps)))
    sp_codes = _dedupe(np.vstack([z0, graph.codes[path], z1]))
    shortest = _make_trace(model, "shortest-path", sp_codes, graph)
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    lin_nodes = LatentCurve.linear(z0, z1, n_steps).nodes
    linear = _make_trace(model, "linear", lin_nodes, graph)
    report = None
    if model.is_linear or n_steps < 2:
        geo_nodes, log = lin_nodes.copy(), []
    else:
        cfg = GeodesicConfig(n_steps, config.learning_rate, config.tolerance, config.max_iter, config.jacobi,
                             config.restore_after, config.max_rejections)
        curve, report = geodesic_path(model, z0, z1, cfg)
        geo_nodes, log = curve.nodes, report.energy_log
    geodesic = _make_trace(model, "geodesic", geo_nodes, graph, energy_log=log)
    return PlanResult(shortest, linear, geodesic, path, cost, report)


def plan_shape_path(graph, model, x_current, x_target, n_steps=16, config: GeodesicConfig = None) -> PlanResult:
    """Dataset shortest path, linear interpolation and geodesic between two shapes.

    Both shapes are encoded; each attaches to its single nearest graph node,
    and the shortest-path trace runs ``z0``, graph path, ``z*``.
    """
    return plan_codes(graph, model, _encode(model, x_current), _encode(model, x_target), n_steps, config)


def trace_labels(trace: DeformationTrace, graph: ShapeGraph) -> list:
    """Category itinerary: node labels with consecutive repeats collapsed."""
    labels = trace.labels if trace.labels is not None else [knn_classify(graph, z).label for z in trace.codes]
    out = []
    for lab in labels:
        if not out or out[-1] != lab:
            out.append(lab)
    return out


def arc_length(model, codes) -> float:
    return manifold_arc_length(model, LatentCurve(codes))
