"""Downstream evaluation: linear probe, link AUC/AP, clustering accuracy and
the redundancy / separability diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

from . import autodiff as ad
from .errors import ShapeError
from .nn import ParamSet, adam_step

PROBE_LR = 1e-2
PROBE_PATIENCE = 20
PROBE_MAX_EPOCHS = 1000


def auc_score(pos_scores, neg_scores):
    """Probability that a random positive outscores a random negative; ties count 1/2."""
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ValueError("auc needs positive and negative scores")
    ranks = rankdata(np.concatenate([pos, neg]))  # average ranks split ties evenly
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def average_precision(pos_scores, neg_scores):
    """Step-interpolated area under precision-recall.

    Every distinct score is one threshold; tied scores enter together.
    """
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ValueError("average precision needs positive and negative scores")
    scores = np.concatenate([pos, neg])
    truth = np.concatenate([np.ones(pos.size), np.zeros(neg.size)])
    order = np.argsort(-scores, kind="stable")
    scores, truth = scores[order], truth[order]
    last = np.r_[np.flatnonzero(np.diff(scores)), scores.size - 1]  # end of each tie group
    tp = np.cumsum(truth)[last]
    seen = last + 1.0
    precision = tp / seen
    recall = tp / pos.size
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def eval_link(pos_scores, neg_scores):
    return auc_score(pos_scores, neg_scores), average_precision(pos_scores, neg_scores)


def clustering_accuracy(pred, truth):
    """Accuracy under the best one-to-one relabeling of ``pred``."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.size == 0:
        raise ShapeError("pred and truth must be nonempty and of equal length")
    _, p = np.unique(pred, return_inverse=True)
    _, t = np.unique(truth, return_inverse=True)
    table = np.zeros((p.max() + 1, t.max() + 1))
    np.add.at(table, (p, t), 1)
    rows, cols = linear_sum_assignment(-table)
    return float(table[rows, cols].sum() / pred.size)


@dataclass(frozen=True)
class NodeSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def stratified_split(labels, ratios=(1, 1, 8), seed=0):
    """Per-class shuffled split in the given proportions (default 1:1:8)."""
    labels = np.asarray(labels)
    ratios = np.asarray(ratios, dtype=np.float64)
    frac = ratios / ratios.sum()
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    for c in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == c))
        n_train = int(np.floor(frac[0] * members.size + 1e-9))
        n_val = int(np.floor(frac[1] * members.size + 1e-9))
        parts[0].append(members[:n_train])
        parts[1].append(members[n_train:n_train + n_val])
        parts[2].append(members[n_train + n_val:])
    return NodeSplit(*(np.sort(np.concatenate(p)) for p in parts))


def linear_probe(embeddings, labels, split, seed=0, lr=PROBE_LR, patience=PROBE_PATIENCE, max_epochs=PROBE_MAX_EPOCHS):
    """Test accuracy of softmax regression on frozen embeddings.

    Full-batch Adam; the weights with the best validation accuracy (lowest
    validation loss among ties) are used on the test set, and training stops
    after ``patience`` epochs without improvement.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    tr, va, te = (np.asarray(s, dtype=np.int64) for s in (split.train, split.val, split.test))
    if np.intersect1d(tr, va).size or np.intersect1d(tr, te).size or np.intersect1d(va, te).size:
        raise ValueError("split sets must be disjoint")
    num_classes = int(y.max()) + 1
    missing = np.setdiff1d(np.unique(y[np.concatenate([va, te])]), y[tr])
    if missing.size:
        raise ValueError(f"classes {missing.tolist()} are absent from the training split")

    rng = np.random.default_rng(seed)
    params = ParamSet()
    w = params.add("probe.weight", rng.normal(0.0, 0.01, size=(x.shape[1], num_classes)))
    b = params.add("probe.bias", np.zeros((1, num_classes)))
    xtr = ad.Tensor(x[tr])
    onehot = np.eye(num_classes)[y[tr]]

    def scores(rows):
        return x[rows] @ w.data + b.data

    def val_state():
        s = scores(va)
        acc = float(np.mean(s.argmax(axis=1) == y[va])) if va.size else 0.0
        s = s - s.max(axis=1, keepdims=True)
        logp = s - np.log(np.exp(s).sum(axis=1, keepdims=True))
        loss = float(-logp[np.arange(va.size), y[va]].mean()) if va.size else 0.0
        return acc, loss

    best = (-1.0, np.inf)
    best_params = (w.data.copy(), b.data.copy())
    stale = 0
    for _ in range(max_epochs):
        logits = ad.matmul(xtr, w) + b
        loss = -(ad.log_softmax(logits, axis=1) * onehot).sum() * (1.0 / len(tr))
        loss.backward()
        adam_step(params, lr)
        acc, vloss = val_state()
        if acc > best[0] or (acc == best[0] and vloss < best[1]):
            best = (acc, vloss)
            best_params = (w.data.copy(), b.data.copy())
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    w.data, b.data = best_params
    return float(np.mean(scores(te).argmax(axis=1) == y[te]))


def redundancy_check(embeddings, f1_width, labels, split, seed=0):
    """Probe accuracy on the F1 columns, the F2 columns and both.

    ``embeddings`` are in ``[F1 | F2]`` column order with ``f1_width``
    leading F1 columns.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if not 0 < f1_width < x.shape[1]:
        raise ShapeError("f1_width must split the embedding columns into two nonempty blocks")
    acc_f1 = linear_probe(x[:, :f1_width], labels, split, seed)
    acc_f2 = linear_probe(x[:, f1_width:], labels, split, seed)
    acc_both = linear_probe(x, labels, split, seed)
    return acc_f1, acc_f2, acc_both


def redundancy_gap(acc_f1, acc_f2, acc_both):
    """Largest loss from dropping one context, in accuracy units."""
    return max(acc_both - acc_f1, acc_both - acc_f2)


def separability_check(f1_block, labels, decoder, split, seed=0):
    """Probe accuracy on ``decoder(F1)`` next to the probe on raw F1."""
    f1_block = np.asarray(f1_block, dtype=np.float64)
    recon = np.asarray(decoder(f1_block), dtype=np.float64)
    return linear_probe(recon, labels, split, seed), linear_probe(f1_block, labels, split, seed)
