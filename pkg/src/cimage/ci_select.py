"""Channel weighting by HSIC relevance/redundancy and the factor partition.

The channel weights maximize

    sum_i w_i rel_i - (1 - pi) sum_ij w_i w_j red_ij - beta |w|_1,   w >= 0,

where ``rel_i = HSIC(f_i, C)`` and ``red_ij = HSIC(f_i, f_j)``. At
``pi = 1/2`` this is a nonnegative lasso regressing the centered label Gram
matrix on the centered channel Gram matrices, solved here with a
variational Bayesian lasso (Student-t prior in Gaussian-scale-mixture
form). Everything is expressed in HSIC units: with design columns
``vec(Kc_i) / (n - 1)`` and response ``vec(Lc) / (n - 1)``, the normal
equations are exactly ``red`` and ``rel``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DegeneratePartition, EmptyContext, InsufficientLabeled, SingularSystem
from .hsic import center, median_bandwidth

DEFAULT_CAP = 1024
MEMORY_BUDGET = 256 * 2**20


@dataclass
class HsicStats:
    rel: np.ndarray  # (D,)  HSIC(f_i, C)
    red: np.ndarray  # (D, D) HSIC(f_i, f_j)
    response_sq: float  # HSIC(C, C)
    n_lab: int
    red_cond: np.ndarray | None = None  # (D, D) HSIC(f_i, f_j | C)
    node_ids: np.ndarray | None = None
    bandwidths: np.ndarray | None = None
    design: np.ndarray | None = None  # (n_lab^2, D) columns vec(Kc_i)
    response: np.ndarray | None = None  # vec(Lc)

    @property
    def num_channels(self):
        return self.rel.size

    @property
    def n_rows(self):
        return self.n_lab * self.n_lab

    @classmethod
    def from_design(cls, design, response, n_lab=None):
        """Stats straight from a design matrix and response vector."""
        design = np.asarray(design, dtype=np.float64)
        response = np.asarray(response, dtype=np.float64).ravel()
        if n_lab is None:
            n_lab = int(round(np.sqrt(design.shape[0])))
        scale = 1.0 / (n_lab - 1) ** 2
        return cls(
            rel=design.T @ response * scale,
            red=design.T @ design * scale,
            response_sq=float(response @ response * scale),
            n_lab=n_lab,
            design=design,
            response=response,
        )


def _vech_weights(n):
    iu = np.triu_indices(n)
    w = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
    return iu, w


def _centered_channel_grams(x, bandwidths, iu, w):
    """Rows are weighted upper triangles of each channel's centered Gram, so
    row dot products equal full Frobenius inner products."""
    out = np.empty((x.shape[1], w.size))
    for j in range(x.shape[1]):
        col = x[:, j]
        diff = col[:, None] - col[None, :]
        gram = np.exp(-(diff * diff) / (2.0 * bandwidths[j] ** 2))
        out[j] = center(gram)[iu] * w
    return out


def _gram_products(x, bandwidths, target, memory_budget):
    """``(x-vs-x, x-vs-target)`` Frobenius products of centered Grams.

    ``target`` is a raw (uncentered) response Gram or None.
    """
    n, d = x.shape
    iu, w = _vech_weights(n)
    per_channel = w.size * 8
    block = max(1, min(d, memory_budget // max(per_channel, 1) // 2))
    starts = list(range(0, d, block))
    gram_prod = np.zeros((d, d))
    cross = np.zeros(d) if target is not None else None
    tvec = center(target)[iu] * w if target is not None else None
    for a_i, a in enumerate(starts):
        ma = _centered_channel_grams(x[:, a:a + block], bandwidths[a:a + block], iu, w)
        if cross is not None:
            cross[a:a + block] = ma @ tvec
        gram_prod[a:a + block, a:a + block] = ma @ ma.T
        for b in starts[a_i + 1:]:
            mb = _centered_channel_grams(x[:, b:b + block], bandwidths[b:b + block], iu, w)
            prod = ma @ mb.T
            gram_prod[a:a + block, b:b + block] = prod
            gram_prod[b:b + block, a:a + block] = prod.T
    target_sq = float(tvec @ tvec) if tvec is not None else None
    return gram_prod, cross, target_sq


def hsic_stats_from_samples(x, response_gram, class_labels=None, keep_design=False, memory_budget=MEMORY_BUDGET):
    """HSIC statistics of every column of ``x`` against a response Gram.

    ``class_labels`` (optional) enables the class-conditional redundancy
    matrix, a class-size-weighted mean of within-class HSIC values using
    the same per-channel bandwidths.
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    bandwidths = np.array([median_bandwidth(x[:, j]) for j in range(d)])
    scale = 1.0 / (n - 1) ** 2
    gp, cross, tsq = _gram_products(x, bandwidths, np.asarray(response_gram, dtype=np.float64), memory_budget)
    stats = HsicStats(rel=cross * scale, red=gp * scale, response_sq=tsq * scale, n_lab=n, bandwidths=bandwidths)

    if class_labels is not None:
        class_labels = np.asarray(class_labels)
        red_cond = np.zeros((d, d))
        for c in np.unique(class_labels):
            idx = np.flatnonzero(class_labels == c)
            if idx.size < 2:
                continue
            gpc, _, _ = _gram_products(x[idx], bandwidths, None, memory_budget)
            red_cond += idx.size / n * gpc / (idx.size - 1) ** 2
        stats.red_cond = red_cond

    if keep_design:
        cols = []
        for j in range(d):
            col = x[:, j]
            diff = col[:, None] - col[None, :]
            cols.append(center(np.exp(-(diff * diff) / (2.0 * bandwidths[j] ** 2))).ravel())
        stats.design = np.stack(cols, axis=1)
        stats.response = center(response_gram).ravel()
    return stats


def stratified_subsample(labels, cap, rng):
    """Indices into ``labels`` keeping class proportions, at most ``cap`` total."""
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    n = labels.size
    if n <= cap:
        return np.arange(n)
    if cap < classes.size:
        raise InsufficientLabeled(f"cap={cap} cannot hold one node from each of {classes.size} classes")
    exact = cap * counts / n
    quota = np.maximum(1, np.floor(exact).astype(int))
    # largest remainders fill (or trim) to exactly cap
    order = np.argsort(-(exact - np.floor(exact)), kind="stable")
    i = 0
    while quota.sum() < cap:
        c = order[i % classes.size]
        if quota[c] < counts[c]:
            quota[c] += 1
        i += 1
    while quota.sum() > cap:
        c = int(np.argmax(quota))
        quota[c] -= 1
    picked = []
    for c, q in zip(classes, quota):
        members = np.flatnonzero(labels == c)
        picked.append(rng.choice(members, size=q, replace=False))
    return np.sort(np.concatenate(picked))


def build_hsic_stats(z, labels, cap=DEFAULT_CAP, seed=0, conditional=True, keep_design=False, memory_budget=MEMORY_BUDGET):
    """Relevance/redundancy statistics of every latent channel.

    ``z`` is ``(N, K, D_ch)`` or already flattened ``(N, K * D_ch)``;
    ``labels`` is a :class:`~cimage.clustering.PseudoLabels`. Labeled nodes
    are stratified-subsampled down to ``cap``; channels get Gaussian kernels
    with median bandwidths, pseudo-labels a delta kernel.
    """
    z = np.asarray(z, dtype=np.float64)
    flat = z.reshape(z.shape[0], -1)
    if len(labels) < 4:
        raise InsufficientLabeled(f"need at least 4 labeled nodes, got {len(labels)}")
    rng = np.random.default_rng(seed)
    keep = stratified_subsample(labels.labels, cap, rng)
    node_ids = np.asarray(labels.node_ids)[keep]
    y = np.asarray(labels.labels)[keep]
    response = (y[:, None] == y[None, :]).astype(np.float64)
    stats = hsic_stats_from_samples(
        flat[node_ids], response, class_labels=y if conditional else None,
        keep_design=keep_design, memory_budget=memory_budget,
    )
    stats.node_ids = node_ids
    return stats


def evaluate_objective(omega, stats, pi=0.5, beta=0.0):
    """Relevance minus weighted redundancy minus the L1 penalty."""
    w = np.asarray(omega, dtype=np.float64)
    return float(w @ stats.rel - (1.0 - pi) * (w @ stats.red @ w) - beta * np.abs(w).sum())


@dataclass
class SolverState:
    mu: np.ndarray
    sigma_diag: np.ndarray
    nu: np.ndarray
    xi: np.ndarray
    noise_var: float
    iterations_run: int = 0
    converged: bool = False
    history: list = field(default_factory=list, repr=False)


def _coordinate_descent(gram, rel, ridge, beta, mu, max_sweeps, tol):
    """Nonnegative coordinate descent on
    ``0.5 mu'(G + diag(ridge))mu - rel'mu + beta |mu|_1``."""
    mu = mu.copy()
    g_mu = gram @ mu
    diag = np.diag(gram) + ridge
    for _ in range(max_sweeps):
        biggest = 0.0
        for i in range(mu.size):
            if diag[i] <= 0:
                new = 0.0
            else:
                r = rel[i] - (g_mu[i] - gram[i, i] * mu[i])
                new = max(0.0, r - beta) / diag[i]
            step = new - mu[i]
            if step != 0.0:
                g_mu += gram[:, i] * step
                mu[i] = new
                biggest = max(biggest, abs(step))
        if biggest < tol:
            break
    return mu


def solve_bayesian_lasso(stats, beta, max_iter=200, tol=1e-6, inner_sweeps=500, jitter=0.0, noise_floor=1e-300):
    """Variational Bayesian lasso over the channel weights.

    Alternates (a) the posterior-mean update by coordinate descent with
    soft-thresholding at ``beta`` and a nonnegativity clamp, (b) the
    posterior covariance ``s2 (G + s2 Theta)^-1``, (c) the scale update
    ``nu = xi / (mu^2 + diag Sigma)`` with ``xi = 1`` and (d) the noise
    variance ``(||r||^2 + Tr(G Sigma)) / n_rows``. Stops once the largest
    change in ``mu`` drops below ``tol``.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    gram = np.asarray(stats.red, dtype=np.float64)
    rel = np.asarray(stats.rel, dtype=np.float64)
    d = rel.size
    if d == 0:
        raise ValueError("no channels to weight")
    rows = stats.n_rows
    mu = np.zeros(d)
    nu = np.ones(d)
    xi = np.ones(d)
    noise = max(stats.response_sq / rows, noise_floor)
    sigma_diag = np.zeros(d)
    state = SolverState(mu, sigma_diag, nu, xi, noise)
    for it in range(1, max_iter + 1):
        theta = nu / xi
        new_mu = _coordinate_descent(gram, rel, noise * theta, beta, mu, inner_sweeps, tol * 0.1)

        a = gram + np.diag(noise * theta)
        if jitter:
            a = a + jitter * np.eye(d)
        try:
            factor = scipy.linalg.cho_factor(a, lower=True)
        except np.linalg.LinAlgError:
            raise SingularSystem("G + s2*Theta is not positive definite; raise beta or add jitter") from None
        sigma = noise * scipy.linalg.cho_solve(factor, np.eye(d))
        sigma_diag = np.diag(sigma).copy()

        nu = xi / np.maximum(new_mu * new_mu + sigma_diag, 1e-300)

        resid = stats.response_sq - 2.0 * rel @ new_mu + new_mu @ gram @ new_mu
        noise = max((max(resid, 0.0) + float(np.sum(gram * sigma))) / rows, noise_floor)

        delta = float(np.max(np.abs(new_mu - mu)))
        mu = new_mu
        state.history.append(delta)
        if delta < tol and it > 1:
            state.converged = True
            break
    state.mu, state.sigma_diag, state.nu, state.noise_var = mu, sigma_diag, nu, noise
    state.iterations_run = it
    return state


@dataclass
class ContextPartition:
    scores: np.ndarray
    f1: list
    f2: list

    @property
    def num_factors(self):
        return len(self.scores)

    def to_dict(self):
        return {"scores": [float(s) for s in self.scores], "f1": list(self.f1), "f2": list(self.f2)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["scores"], dtype=np.float64), [int(i) for i in d["f1"]], [int(i) for i in d["f2"]])


def factor_scores(mu, num_factors, factor_dim):
    """Per-factor mean weight, normalized by the largest."""
    mu = np.asarray(mu, dtype=np.float64)
    if mu.size != num_factors * factor_dim:
        raise ValueError(f"expected {num_factors * factor_dim} weights, got {mu.size}")
    means = mu.reshape(num_factors, factor_dim).mean(axis=1)
    top = means.max()
    if not top > 0:
        raise DegeneratePartition("all channel weights are zero")
    return means / top


def partition_contexts(scores, zero_tol=1e-6):
    """Nonzero-score factors form F1, (numerically) zero ones F2."""
    scores = np.asarray(scores, dtype=np.float64)
    zero = scores <= zero_tol
    f1 = [int(k) for k in np.flatnonzero(~zero)]
    f2 = [int(k) for k in np.flatnonzero(zero)]
    if not f2:
        raise EmptyContext("F2")
    if not f1:
        raise EmptyContext("F1")
    return ContextPartition(scores, f1, f2)


@dataclass
class Selection:
    partition: ContextPartition
    state: SolverState
    beta: float
    retries: int
    betas_tried: list


def select_contexts(stats, num_factors, factor_dim, beta, zero_tol=1e-6, max_retries=8, **solver_kwargs):
    """Solve, score and partition, adjusting ``beta`` when a context is empty.

    ``beta`` doubles while F2 is empty and halves while F1 is empty; once
    both failure modes have been seen the next value is the geometric mean
    of the bracketing pair.
    """
    lo = hi = None  # lo: F2 came out empty; hi: F1 came out empty
    tried = []
    for attempt in range(max_retries + 1):
        tried.append(beta)
        state = solve_bayesian_lasso(stats, beta, **solver_kwargs)
        try:
            scores = factor_scores(state.mu, num_factors, factor_dim)
            part = partition_contexts(scores, zero_tol)
            return Selection(part, state, beta, attempt, tried)
        except DegeneratePartition:
            which = "F1"
        except EmptyContext as exc:
            which = exc.which
        if which == "F2":
            lo = beta if lo is None else max(lo, beta)
        else:
            hi = beta if hi is None else min(hi, beta)
        if lo is not None and hi is not None:
            beta = float(np.sqrt(lo * hi))
        elif which == "F2":
            beta = beta * 2.0 if beta > 0 else max(1e-3 * float(np.max(stats.rel)), 1e-12)
        else:
            beta = beta / 2.0
    raise DegeneratePartition(f"no valid partition after {max_retries} beta retries (tried {tried})")
