"""Undirected graphs, dataset ingestion, edge masking and sampling.

Edges are always stored canonically as an ``(m, 2)`` int64 array of
``u < v`` pairs in lexicographic order. Every randomized function takes an
explicit seed and is a pure function of its arguments.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import EmptyTestSplit, FileMissing, InsufficientNonEdges, MalformedInput


def canonical_edges(pairs, num_nodes=None):
    """Return unique ``u < v`` pairs, sorted, with self-loops dropped."""
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if arr.min() < 0 or (num_nodes is not None and arr.max() >= num_nodes):
        raise ValueError("edge endpoint out of range")
    lo = np.minimum(arr[:, 0], arr[:, 1])
    hi = np.maximum(arr[:, 0], arr[:, 1])
    keep = lo != hi
    lo, hi = lo[keep], hi[keep]
    n = int(hi.max()) + 1 if num_nodes is None and hi.size else (num_nodes or 1)
    codes = np.unique(lo * n + hi)
    return np.stack([codes // n, codes % n], axis=1).astype(np.int64)


def _pair_codes(edges, n):
    return edges[:, 0] * n + edges[:, 1]


def adjacency_matrix(edges, num_nodes):
    """Symmetric CSR adjacency (float64, unit weights) from canonical edges."""
    if len(edges) == 0:
        return sp.csr_matrix((num_nodes, num_nodes), dtype=np.float64)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    data = np.ones(rows.size, dtype=np.float64)
    adj = sp.csr_matrix((data, (rows, cols)), shape=(num_nodes, num_nodes))
    adj.sort_indices()
    return adj


@dataclass(frozen=True, eq=False)
class Graph:
    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None = None
    num_classes: int | None = None
    _adj: sp.csr_matrix = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        edges = canonical_edges(self.edges, self.num_nodes)
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != self.num_nodes:
            raise ValueError(
                f"feature matrix must have {self.num_nodes} rows, got shape {feats.shape}"
            )
        labels = self.labels
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (self.num_nodes,):
                raise ValueError("labels must have one entry per node")
        edges.setflags(write=False)
        feats = feats.copy()
        feats.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_adj", adjacency_matrix(edges, self.num_nodes))

    @property
    def num_edges(self):
        return len(self.edges)

    @property
    def feature_dim(self):
        return self.features.shape[1]

    @property
    def adjacency(self):
        return self._adj

    def degrees(self):
        return np.asarray(self._adj.sum(axis=1)).ravel()

    def neighbors(self, v):
        a = self._adj
        return a.indices[a.indptr[v]:a.indptr[v + 1]]

    def with_edges(self, edges):
        """Same nodes, features and labels over a different edge set."""
        return Graph(self.num_nodes, edges, self.features, self.labels, self.num_classes)

    def fingerprint(self):
        """Bytes that change iff the graph content changes."""
        parts = [np.int64(self.num_nodes).tobytes(), self.edges.tobytes(), self.features.tobytes()]
        if self.labels is not None:
            parts.append(self.labels.tobytes())
        return b"".join(parts)


@dataclass(frozen=True, eq=False)
class MaskedGraph:
    base: Graph
    visible_edges: np.ndarray
    masked_edges: np.ndarray
    mask_rate: float

    @property
    def num_nodes(self):
        return self.base.num_nodes

    def visible_adjacency(self):
        return adjacency_matrix(self.visible_edges, self.base.num_nodes)


# ---------------------------------------------------------------------------
# ingestion


def _read_edge_file(path):
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) != 2:
                raise MalformedInput(f"expected 'u v', got {text!r}", path, lineno)
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise MalformedInput(f"non-integer node id in {text!r}", path, lineno) from None
            if u < 0 or v < 0:
                raise MalformedInput("negative node id", path, lineno)
            pairs.append((u, v))
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def _read_features(path):
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                continue
            try:
                row = [float(tok) for tok in text.split(",")]
            except ValueError:
                raise MalformedInput(f"non-numeric feature value in {text[:40]!r}", path, lineno) from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise MalformedInput(f"expected {width} columns, got {len(row)}", path, lineno)
            rows.append(row)
    if not rows:
        raise MalformedInput("feature file is empty", path)
    feats = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(feats)):
        raise MalformedInput("non-finite feature value", path)
    return feats


def _read_labels(path):
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                continue
            try:
                out.append(int(text))
            except ValueError:
                raise MalformedInput(f"non-integer label {text!r}", path, lineno) from None
    return np.asarray(out, dtype=np.int64)


def load_graph(manifest_path):
    """Load a graph from a JSON manifest.

    The manifest names ``edges`` (whitespace-separated ``u v`` lines),
    ``features`` (CSV, one row per node) and optionally ``labels`` (one int
    per line) and ``num_classes``. Relative paths resolve against the
    manifest's directory. Duplicate and reversed edges collapse to one
    undirected pair.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise FileMissing(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedInput(str(exc), manifest_path, exc.lineno) from None
    if not isinstance(manifest, dict) or "edges" not in manifest or "features" not in manifest:
        raise MalformedInput("manifest needs 'edges' and 'features' entries", manifest_path)

    def resolve(key):
        p = Path(manifest[key])
        if not p.is_absolute():
            p = manifest_path.parent / p
        if not p.is_file():
            raise FileMissing(f"{key} file not found: {p}")
        return p

    edge_path, feat_path = resolve("edges"), resolve("features")
    label_path = resolve("labels") if manifest.get("labels") else None

    pairs = _read_edge_file(edge_path)
    feats = _read_features(feat_path)
    n = feats.shape[0]
    if pairs.size and pairs.max() >= n:
        raise MalformedInput(
            f"edge endpoint {int(pairs.max())} needs {int(pairs.max()) + 1} feature rows, "
            f"found {n}",
            feat_path,
        )
    labels = None
    if label_path is not None:
        labels = _read_labels(label_path)
        if labels.shape[0] != n:
            raise MalformedInput(f"expected {n} labels, got {labels.shape[0]}", label_path)
    num_classes = manifest.get("num_classes")
    if num_classes is None and labels is not None:
        num_classes = int(labels.max()) + 1
    return Graph(n, canonical_edges(pairs, n), feats, labels, num_classes)


def save_graph(graph, manifest_path):
    """Write ``graph`` as a manifest plus edge/feature/label files alongside it."""
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    stem = manifest_path.stem
    edge_name, feat_name = f"{stem}.edges.txt", f"{stem}.features.csv"
    with open(manifest_path.parent / edge_name, "w") as fh:
        for u, v in graph.edges:
            fh.write(f"{u} {v}\n")
    np.savetxt(manifest_path.parent / feat_name, graph.features, delimiter=",", fmt="%.17g")
    manifest = {"edges": edge_name, "features": feat_name}
    if graph.labels is not None:
        label_name = f"{stem}.labels.txt"
        np.savetxt(manifest_path.parent / label_name, graph.labels, fmt="%d")
        manifest["labels"] = label_name
    if graph.num_classes is not None:
        manifest["num_classes"] = int(graph.num_classes)
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


# ---------------------------------------------------------------------------
# generators and samplers


def generate_sbm(n, k, p_in, p_out, feat_dim, feat_noise, seed):
    """Stochastic block model with ``k`` equal contiguous communities.

    Each community gets a random unit mean vector; node features are that
    mean plus isotropic Gaussian noise scaled by ``feat_noise``.
    """
    if k < 1 or n % k != 0:
        raise ValueError(f"n={n} is not divisible by k={k}")
    for p in (p_in, p_out):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability {p} outside [0, 1]")
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.int64) // (n // k)
    iu, ju = np.triu_indices(n, k=1)
    probs = np.where(labels[iu] == labels[ju], p_in, p_out)
    hit = rng.random(iu.size) < probs
    edges = np.stack([iu[hit], ju[hit]], axis=1).astype(np.int64)

    means = rng.standard_normal((k, feat_dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    feats = means[labels] + feat_noise * rng.standard_normal((n, feat_dim))
    return Graph(n, edges, feats, labels, k)


def mask_edges(graph, rate, seed):
    """Hide ``floor(rate * |E|)`` uniformly chosen edges from the encoder."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"mask rate {rate} outside [0, 1]")
    m = graph.num_edges
    n_mask = math.floor(rate * m)
    rng = np.random.default_rng(seed)
    order = rng.permutation(m)
    masked_idx = np.sort(order[:n_mask])
    visible_idx = np.sort(order[n_mask:])
    return MaskedGraph(graph, graph.edges[visible_idx], graph.edges[masked_idx], float(rate))


def sample_negatives(graph, count, exclude=None, seed=0):
    """Uniformly sample ``count`` distinct non-edges avoiding ``exclude``.

    Returns canonical ``u < v`` pairs in draw order.
    """
    n = graph.num_nodes
    forbidden = _pair_codes(graph.edges, n)
    if exclude is not None and len(exclude):
        forbidden = np.union1d(forbidden, _pair_codes(canonical_edges(exclude, n), n))
    total_pairs = n * (n - 1) // 2
    available = total_pairs - forbidden.size
    if count > available:
        raise InsufficientNonEdges(f"requested {count} negatives but only {available} non-edges exist")
    if count == 0:
        return np.zeros((0, 2), dtype=np.int64)
    rng = np.random.default_rng(seed)

    if available <= 4 * count or total_pairs <= 200_000:
        # dense enough that enumeration beats rejection
        iu, ju = np.triu_indices(n, k=1)
        codes = iu.astype(np.int64) * n + ju
        codes = codes[~np.isin(codes, forbidden, assume_unique=True)]
        pick = codes[rng.choice(codes.size, size=count, replace=False)]
        return np.stack([pick // n, pick % n], axis=1)

    chosen = np.zeros(0, dtype=np.int64)
    while chosen.size < count:
        need = count - chosen.size
        draw = int(need * 1.3) + 16
        u = rng.integers(0, n, size=draw)
        v = rng.integers(0, n, size=draw)
        ok = u != v
        lo, hi = np.minimum(u[ok], v[ok]), np.maximum(u[ok], v[ok])
        codes = lo * n + hi
        codes = codes[~np.isin(codes, forbidden)]
        codes = codes[~np.isin(codes, chosen)]
        _, first = np.unique(codes, return_index=True)
        codes = codes[np.sort(first)]
        chosen = np.concatenate([chosen, codes[:need]])
    return np.stack([chosen // n, chosen % n], axis=1)


def split_link_eval(graph, train_frac, seed):
    """Hold out edges for link prediction.

    Returns ``(train_edges, test_pos, test_neg)`` where ``test_neg`` holds as
    many sampled non-edges of the full graph as there are held-out edges.
    """
    if not 0.0 < train_frac < 1.0:
        raise ValueError(f"train_frac {train_frac} outside (0, 1)")
    m = graph.num_edges
    n_train = math.floor(train_frac * m + 1e-9)
    if m - n_train == 0:
        raise EmptyTestSplit(f"train_frac={train_frac} leaves no test edges out of {m}")
    rng = np.random.default_rng([seed, 1])
    order = rng.permutation(m)
    train = graph.edges[np.sort(order[:n_train])]
    test_pos = graph.edges[np.sort(order[n_train:])]
    test_neg = sample_negatives(graph, len(test_pos), seed=int(rng.integers(2**63)))
    return train, test_pos, test_neg
