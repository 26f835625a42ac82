"""Disentangled encoder: subspace projection followed by neighborhood routing.

Latent tensors are laid out as ``(N, K, D_ch)``; flattening to
``(N, K * D_ch)`` is factor-major, so channel ``k * D_ch + c`` is
coordinate ``c`` of factor ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .errors import ShapeError
from .nn import add_mlp, mlp

SOFTMAX_AXES = ("factors", "neighbors")


@dataclass
class EncoderParams:
    params: object  # ParamSet holding the projection MLP
    in_dim: int
    hidden: int
    num_factors: int
    factor_dim: int
    iterations: int = 3
    prefix: str = "enc"

    def __post_init__(self):
        if self.num_factors < 2 or self.factor_dim < 1 or self.iterations < 1:
            raise ValueError("need K >= 2, D_ch >= 1 and T >= 1")

    @property
    def width(self):
        return self.num_factors * self.factor_dim


def init_encoder(params, in_dim, hidden, num_factors, factor_dim, iterations, rng, prefix="enc"):
    add_mlp(params, prefix, [in_dim, hidden, num_factors * factor_dim], rng)
    return EncoderParams(params, in_dim, hidden, num_factors, factor_dim, iterations, prefix)


def project_subspaces(features, enc):
    """Shared MLP ``D_node -> hidden -> K * D_ch`` reshaped to ``(N, K, D_ch)``."""
    x = ad.as_tensor(features)
    if x.ndim != 2 or x.shape[1] != enc.in_dim:
        raise ShapeError(f"features must be (N, {enc.in_dim}), got {x.shape}")
    out = mlp(enc.params, enc.prefix, x, depth=2)
    return out.reshape(x.shape[0], enc.num_factors, enc.factor_dim)


def route_encode(projections, adjacency, iterations, softmax_axis="factors"):
    """Iterative neighborhood routing over ``adjacency``.

    Every step sets ``Z[v, k]`` to the normalized sum of ``l[v, k]`` and the
    neighbor projections ``l[u, k]`` weighted by a softmax of the affinity
    ``l[u, k] . Z_prev[u, k]``. With ``softmax_axis="factors"`` each
    neighbor's affinities are normalized over the K factors; with
    ``"neighbors"`` each factor's affinities are normalized over the
    neighborhood of ``v``. Routing starts from ``Z = l``.
    """
    if iterations < 1:
        raise ValueError("need at least one routing iteration")
    if softmax_axis not in SOFTMAX_AXES:
        raise ValueError(f"softmax_axis must be one of {SOFTMAX_AXES}")
    proj = ad.as_tensor(projections)
    n, k, d = proj.shape
    if adjacency.shape != (n, n):
        raise ShapeError("adjacency does not match the node count")
    z = proj
    for _ in range(iterations):
        affinity = (proj * z).sum(axis=2)  # (N, K), one score per (u, k)
        if softmax_axis == "factors":
            weight = ad.softmax(affinity, axis=1)
            msg = ad.spmm(adjacency, ad.reshape(weight, (n, k, 1)) * proj)
        else:
            msg = _neighbor_softmax_message(proj, affinity, adjacency)
        z = ad.l2_normalize(proj + msg, axis=2)
    return z


def _neighbor_softmax_message(proj, affinity, adjacency):
    n, k, _ = proj.shape
    adj = sp.csr_matrix(adjacency)
    rows = np.repeat(np.arange(n), np.diff(adj.indptr))
    cols = adj.indices
    if cols.size == 0:
        return ad.Tensor(np.zeros(proj.shape))
    # per-neighborhood max shift; a constant inside each softmax
    shift = np.full((n, k), -np.inf)
    np.maximum.at(shift, rows, affinity.data[cols])
    e = ad.exp(ad.take(affinity, cols, axis=0) - shift[rows])  # (E, K)
    incidence = sp.csr_matrix((np.ones(rows.size), (rows, np.arange(rows.size))), shape=(n, rows.size))
    den = ad.spmm(incidence, e)
    isolated = (den.data <= 0).astype(np.float64)
    weight = e / ad.take(den + isolated, rows, axis=0)
    return ad.spmm(incidence, ad.reshape(weight, (rows.size, k, 1)) * ad.take(proj, cols, axis=0))


def encode(features, enc, adjacency, softmax_axis="factors"):
    return route_encode(project_subspaces(features, enc), adjacency, enc.iterations, softmax_axis)


def flatten_latent(z):
    """``(N, K, D_ch)`` -> ``(N, K * D_ch)``, factor-major."""
    if isinstance(z, ad.Tensor):
        return z.reshape(z.shape[0], -1)
    z = np.asarray(z)
    return z.reshape(z.shape[0], -1)
