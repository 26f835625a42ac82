"""Training losses: factor reconstruction (SCE), edge reconstruction and
their weighted combination."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ShapeError
from .nn import add_mlp, mlp

PROB_CLAMP = 1e-7


@dataclass
class DecoderParams:
    params: object  # ParamSet shared with the encoder
    num_factors: int
    factor_dim: int
    structure_hidden: int
    recon_hidden: int
    f1: tuple = ()
    f2: tuple = ()
    st_prefix: str = "st"
    ch_prefix: str = "ch"

    @property
    def has_recon(self):
        return f"{self.ch_prefix}.0.weight" in self.params


def init_structure_decoder(params, num_factors, factor_dim, structure_hidden, recon_hidden, rng):
    """Edge decoder ``K * D_ch -> hidden -> 1``; the factor decoder waits for a partition."""
    add_mlp(params, "st", [num_factors * factor_dim, structure_hidden, 1], rng)
    return DecoderParams(params, num_factors, factor_dim, structure_hidden, recon_hidden)


def init_recon_decoder(dec, f1, f2, rng):
    """Factor decoder ``D_ch |F1| -> hidden -> D_ch |F2|`` for a fixed partition."""
    d = dec.factor_dim
    add_mlp(dec.params, dec.ch_prefix, [d * len(f1), dec.recon_hidden, d * len(f2)], rng)
    dec.f1, dec.f2 = tuple(f1), tuple(f2)
    return dec


def factor_block(z, factors):
    """Columns of the listed factors, ``(N, K, D_ch) -> (N, len(factors) * D_ch)``."""
    z = ad.as_tensor(z)
    n, _, d = z.shape
    return ad.take(z, np.asarray(factors, dtype=np.int64), axis=1).reshape(n, len(factors) * d)


def sce_loss(target, pred, tau=2.0):
    """Mean over nodes of ``(1 - cos(target_v, pred_v)) ** tau``.

    A zero row on either side gives cosine 0, hence loss 1 for that node.
    """
    target, pred = ad.as_tensor(target), ad.as_tensor(pred)
    if target.shape != pred.shape:
        raise ShapeError(f"sce_loss shapes differ: {target.shape} vs {pred.shape}")
    if tau < 1:
        raise ValueError("tau must be >= 1")
    cos = (ad.l2_normalize(target, axis=1) * ad.l2_normalize(pred, axis=1)).sum(axis=1)
    base = ad.clip(1.0 - cos, 0.0, 2.0)
    return ad.power(base, tau).mean()


def edge_probabilities(z, pairs, dec):
    """``sigmoid(MLP(z_u * z_v))`` for each pair; ``z`` is ``(N, K, D_ch)`` or flat."""
    z = ad.as_tensor(z)
    flat = z.reshape(z.shape[0], -1)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    prod = ad.take(flat, pairs[:, 0], axis=0) * ad.take(flat, pairs[:, 1], axis=0)
    return ad.sigmoid(mlp(dec.params, dec.st_prefix, prod, depth=2)).reshape(-1)


def structure_loss(z, pos, neg, dec):
    """Binary cross-entropy of the edge decoder on positive and negative pairs."""
    pos = np.asarray(pos, dtype=np.int64).reshape(-1, 2)
    neg = np.asarray(neg, dtype=np.int64).reshape(-1, 2)
    if len(pos) == 0:
        raise ValueError("structure_loss needs at least one positive pair")
    return bce_from_probs(edge_probabilities(z, pos, dec), edge_probabilities(z, neg, dec) if len(neg) else None)


def bce_from_probs(p_pos, p_neg=None):
    """``-[mean log p_pos + mean log(1 - p_neg)]`` with probabilities clamped."""
    loss = -ad.log(ad.clip(p_pos, PROB_CLAMP, 1.0 - PROB_CLAMP)).mean()
    if p_neg is not None:
        loss = loss - ad.log(1.0 - ad.clip(p_neg, PROB_CLAMP, 1.0 - PROB_CLAMP)).mean()
    return loss


def recon_loss(z, dec, tau=2.0):
    """SCE between the F2 block and the decoder's prediction from F1."""
    pred = mlp(dec.params, dec.ch_prefix, factor_block(z, dec.f1), depth=2)
    return sce_loss(factor_block(z, dec.f2), pred, tau)


def total_loss(st, ch, cl, lambda1, lambda2):
    """``st + lambda1 * ch + lambda2 * cl``."""
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("loss weights must be nonnegative")
    return st + lambda1 * ch + lambda2 * cl
