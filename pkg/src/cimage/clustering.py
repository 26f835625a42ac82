"""Modularity, the differentiable clustering loss and pseudo-label extraction."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad

FALLBACK_FRACTION = 0.2


def modularity_hard(edges, num_nodes, assignment):
    """Newman modularity of a hard partition, ``-0.5 <= Q <= 1``.

    Computed per community as ``sum_c (m_c / m - (d_c / 2m)^2)``.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    assignment = np.asarray(assignment)
    if assignment.shape != (num_nodes,):
        raise ValueError("assignment needs one cluster id per node")
    m = len(edges)
    if m == 0:
        raise ValueError("modularity is undefined on a graph without edges")
    _, comm = np.unique(assignment, return_inverse=True)
    deg = np.bincount(edges.ravel(), minlength=num_nodes).astype(np.float64)
    deg_c = np.bincount(comm, weights=deg)
    same = comm[edges[:, 0]] == comm[edges[:, 1]]
    intra_c = np.bincount(comm[edges[same, 0]], minlength=deg_c.size).astype(np.float64)
    return float(np.sum(intra_c / m - (deg_c / (2.0 * m)) ** 2))


def clustering_loss(adjacency, z, batch_size=None):
    """Negative soft modularity ``-(1/2m) Tr((A - d d^T / 2m) Z Z^T)``.

    ``z`` is any ``(N, ...)`` tensor, flattened per node. The ``N x N``
    modularity matrix is never formed: the adjacency term is a sparse
    product over node batches and the degree term is rank one.
    """
    adj = sp.csr_matrix(adjacency)
    z = ad.as_tensor(z)
    n = z.shape[0]
    flat = z.reshape(n, -1)
    two_m = float(adj.sum())
    if two_m <= 0:
        raise ValueError("clustering loss needs at least one visible edge")
    deg = np.asarray(adj.sum(axis=1)).ravel()

    if batch_size is None or batch_size >= n:
        adj_term = (flat * ad.spmm(adj, flat)).sum()
    else:
        adj_term = None
        for start in range(0, n, batch_size):
            rows = np.arange(start, min(start + batch_size, n))
            part = (ad.take(flat, rows, axis=0) * ad.spmm(adj[rows], flat)).sum()
            adj_term = part if adj_term is None else adj_term + part
    pooled = ad.matmul(ad.Tensor(deg[None, :]), flat)  # d^T Z
    deg_term = (pooled * pooled).sum() * (1.0 / two_m)
    return (adj_term - deg_term) * (-1.0 / two_m)


@dataclass
class PseudoLabels:
    node_ids: np.ndarray
    labels: np.ndarray
    confidences: np.ndarray
    num_clusters: int
    fallback: bool = False
    threshold: float = 0.99

    def __len__(self):
        return len(self.node_ids)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_clusters)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_id", "label", "confidence"])
            for v, c, p in zip(self.node_ids, self.labels, self.confidences):
                w.writerow([int(v), int(c), repr(float(p))])

    @classmethod
    def from_csv(cls, path, num_clusters=None):
        ids, labels, conf = [], [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                ids.append(int(row["node_id"]))
                labels.append(int(row["label"]))
                conf.append(float(row["confidence"]))
        labels = np.asarray(labels, dtype=np.int64)
        if num_clusters is None:
            num_clusters = int(labels.max()) + 1 if labels.size else 0
        return cls(np.asarray(ids, dtype=np.int64), labels, np.asarray(conf), num_clusters)


def _kmeanspp(x, k, rng):
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    closest = np.full(n, np.inf)
    for _ in range(1, k):
        closest = np.minimum(closest, ((x - centers[-1]) ** 2).sum(axis=1))
        total = closest.sum()
        if total <= 0:
            centers.append(x[rng.integers(n)])
            continue
        centers.append(x[rng.choice(n, p=closest / total)])
    return np.array(centers)


def spherical_kmeans(x, k, seed, n_init=10, max_iter=100):
    """Cosine k-means on unit rows; returns ``(assignment, centers)``.

    Keeps the restart with the largest summed cosine to its center.
    """
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        centers = _kmeanspp(x, k, rng)
        centers = _unit_rows(centers)
        assign = None
        for _ in range(max_iter):
            sim = x @ centers.T
            new = sim.argmax(axis=1)
            if assign is not None and np.array_equal(new, assign):
                break
            assign = new
            for c in range(k):
                members = x[assign == c]
                if len(members):
                    centers[c] = members.sum(axis=0)
                else:
                    # re-seed an empty cluster at the worst-served point
                    centers[c] = x[np.argmin(sim[np.arange(len(x)), assign])]
            centers = _unit_rows(centers)
        score = float((x @ centers.T)[np.arange(len(x)), assign].sum())
        if best is None or score > best[0] + 1e-12:
            best = (score, assign.copy(), centers.copy())
    return best[1], best[2]


def _unit_rows(x):
    norm = np.linalg.norm(x, axis=1, keepdims=True)
    return np.where(norm > 1e-12, x / np.where(norm > 1e-12, norm, 1.0), 0.0)


def extract_pseudo_labels(z, num_clusters, threshold=0.99, min_labeled=1, seed=0, fallback_fraction=FALLBACK_FRACTION):
    """Cluster node representations and keep the confident nodes.

    A node's confidence is its mean cosine similarity to the other members
    of its spherical k-means cluster. Nodes above ``threshold`` are kept;
    when fewer than ``min_labeled`` pass, the top ``fallback_fraction`` of
    every cluster by confidence is kept instead and ``fallback`` is set.
    """
    z = np.asarray(z.data if isinstance(z, ad.Tensor) else z, dtype=np.float64)
    n = z.shape[0]
    if num_clusters < 2:
        raise ValueError("need at least two clusters")
    if num_clusters > n:
        raise ValueError(f"num_clusters={num_clusters} exceeds node count {n}")
    x = _unit_rows(z.reshape(n, -1))
    assign, _ = spherical_kmeans(x, num_clusters, seed)

    sums = np.zeros((num_clusters, x.shape[1]))
    np.add.at(sums, assign, x)
    sizes = np.bincount(assign, minlength=num_clusters)
    self_sim = (x * x).sum(axis=1)
    others = sizes[assign] - 1
    conf = np.where(others > 0, ((x * sums[assign]).sum(axis=1) - self_sim) / np.maximum(others, 1), 0.0)

    keep = np.flatnonzero(conf > threshold)
    fallback = False
    if keep.size < min_labeled:
        fallback = True
        chosen = []
        for c in range(num_clusters):
            members = np.flatnonzero(assign == c)
            if members.size == 0:
                continue
            take = max(1, int(np.ceil(fallback_fraction * members.size)))
            # stable order: confidence descending, node id ascending
            order = np.lexsort((members, -conf[members]))
            chosen.append(members[order[:take]])
        keep = np.sort(np.concatenate(chosen))
    return PseudoLabels(keep.astype(np.int64), assign[keep].astype(np.int64), conf[keep], num_clusters, fallback, threshold)
