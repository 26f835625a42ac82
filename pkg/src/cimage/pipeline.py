"""Training orchestration and run artifacts.

A run masks the training edges once, warms up on edge reconstruction plus
the clustering loss, extracts pseudo-labels, partitions the latent factors
by HSIC channel weighting, then trains the full objective with F2
reconstructed from F1.
"""

from __future__ import annotations

import json
import logging
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .ci_select import ContextPartition, build_hsic_stats, select_contexts
from .clustering import PseudoLabels, clustering_loss, extract_pseudo_labels
from .config import TrainConfig
from .encoder import encode, init_encoder
from .errors import NonFiniteError
from .evaluation import (
    clustering_accuracy,
    eval_link,
    linear_probe,
    redundancy_check,
    redundancy_gap,
    separability_check,
    stratified_split,
)
from .graph import mask_edges, sample_negatives, split_link_eval
from .losses import (
    DecoderParams,
    edge_probabilities,
    factor_block,
    init_recon_decoder,
    init_structure_decoder,
    recon_loss,
    structure_loss,
    total_loss,
)
from .nn import ParamSet, adam_step, mlp

log = logging.getLogger(__name__)

EMBED_MAGIC = b"CIMG"
EMBED_VERSION = 1

# stream tags for per-purpose random generators
_INIT, _MASK, _NEG, _CLUSTER, _HSIC = range(5)


def save_embeddings(path, x):
    """Header (magic, u32 version, u64 rows, u64 cols) then little-endian float64."""
    x = np.ascontiguousarray(x, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(EMBED_MAGIC)
        fh.write(struct.pack("<IQQ", EMBED_VERSION, *x.shape))
        fh.write(x.tobytes(order="C"))


def load_embeddings(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != EMBED_MAGIC:
        raise ValueError(f"{path}: not an embeddings file")
    version, rows, cols = struct.unpack_from("<IQQ", blob, 4)
    if version != EMBED_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    offset = 4 + struct.calcsize("<IQQ")
    if len(blob) - offset != rows * cols * 8:
        raise ValueError(f"{path}: size does not match header")
    return np.frombuffer(blob, dtype="<f8", offset=offset).reshape(rows, cols).astype(np.float64)


def dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def metrics_record(task, dataset, config, values, per_epoch=()):
    return {
        "task": task,
        "dataset": dataset,
        "seed": config.seed,
        "config_hash": config.config_hash(),
        "values": values,
        "per_epoch": list(per_epoch),
    }


@dataclass
class RunArtifacts:
    """Everything a run leaves behind; ``embeddings`` are in ``[F1 | F2]`` order."""

    config: TrainConfig
    params: ParamSet
    embeddings: np.ndarray
    partition: ContextPartition
    pseudo_labels: PseudoLabels
    metrics: dict
    solver: dict = field(default_factory=dict)
    link_split: dict | None = None

    FILES = {
        "config": "config.json",
        "params": "params.bin",
        "embeddings": "embeddings.bin",
        "partition": "partition.json",
        "metrics": "metrics.json",
        "pseudo_labels": "pseudo_labels.csv",
        "link_split": "link_split.json",
    }

    @property
    def f1_width(self):
        return len(self.partition.f1) * self.config.factor_dim

    def natural_latent(self):
        """Embeddings back in factor order, shaped ``(N, K, D_ch)``."""
        n = self.embeddings.shape[0]
        k, d = self.config.num_factors, self.config.factor_dim
        blocks = self.embeddings.reshape(n, k, d)
        order = list(self.partition.f1) + list(self.partition.f2)
        z = np.empty_like(blocks)
        z[:, order] = blocks
        return z

    def save(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        path = lambda key: os.path.join(out_dir, self.FILES[key])  # noqa: E731
        self.config.to_json(path("config"))
        self.params.save(path("params"))
        save_embeddings(path("embeddings"), self.embeddings)
        dump_json({**self.partition.to_dict(), **self.solver}, path("partition"))
        dump_json(self.metrics, path("metrics"))
        self.pseudo_labels.to_csv(path("pseudo_labels"))
        if self.link_split is not None:
            dump_json(self.link_split, path("link_split"))

    @classmethod
    def load(cls, out_dir):
        path = lambda key: os.path.join(out_dir, cls.FILES[key])  # noqa: E731
        config = TrainConfig.from_json(path("config"))
        with open(path("partition")) as fh:
            part = json.load(fh)
        with open(path("metrics")) as fh:
            metrics = json.load(fh)
        split = None
        if os.path.exists(path("link_split")):
            with open(path("link_split")) as fh:
                split = json.load(fh)
        solver = {k: v for k, v in part.items() if k not in ("scores", "f1", "f2")}
        return cls(
            config=config,
            params=ParamSet.load(path("params")),
            embeddings=load_embeddings(path("embeddings")),
            partition=ContextPartition.from_dict(part),
            pseudo_labels=PseudoLabels.from_csv(path("pseudo_labels"), config.num_clusters),
            metrics=metrics,
            solver=solver,
            link_split=split,
        )


def _rng(seed, tag):
    return np.random.default_rng([seed, tag])


def _infer(features, enc, adjacency, axis):
    return encode(features, enc, adjacency, axis).data


def select_for_latent(z, labels, config, rng_seed):
    """HSIC statistics on the pseudo-labeled nodes and the beta-retried partition."""
    stats = build_hsic_stats(z, labels, cap=config.labeled_cap, seed=[rng_seed, _HSIC])
    top = float(np.max(stats.rel))
    beta = config.beta * top if top > 0 else 0.0
    return select_contexts(
        stats, config.num_factors, config.factor_dim, beta, config.zero_tol, config.max_beta_retries,
        max_iter=config.solver_max_iter, tol=config.solver_tol,
    )


def _partition(z, config, graph, rng_seed):
    """Pseudo-labels, then the partition and a summary of the solver run."""
    labels = extract_pseudo_labels(
        z, config.num_clusters, config.cluster_threshold, config.min_labeled, seed=[rng_seed, _CLUSTER]
    )
    sel = select_for_latent(z, labels, config, rng_seed)
    solver = {
        "beta_used": sel.beta,
        "beta_retries": sel.retries,
        "converged": sel.state.converged,
        "iterations": sel.state.iterations_run,
        "num_labeled": len(labels),
    }
    return labels, sel.partition, solver


def train(config, graph, dataset="graph"):
    """Run the full training schedule and return the artifacts (not yet saved)."""
    seed = config.seed
    link_split = None
    train_graph = graph
    if config.link_holdout > 0:
        train_edges, test_pos, test_neg = split_link_eval(graph, 1.0 - config.link_holdout, seed)
        train_graph = graph.with_edges(train_edges)
        link_split = {"train": train_edges.tolist(), "test_pos": test_pos.tolist(), "test_neg": test_neg.tolist()}

    masked = mask_edges(train_graph, config.mask_rate, [seed, _MASK])
    visible = masked.visible_adjacency()
    positives = masked.masked_edges if config.structure_positives == "masked" else train_graph.edges
    if len(positives) == 0:
        positives = train_graph.edges
    infer_adj = train_graph.adjacency if config.inference_edges == "all" else visible
    features = graph.features

    params = ParamSet()
    init_rng = _rng(seed, _INIT)
    enc = init_encoder(params, graph.feature_dim, config.encoder_hidden, config.num_factors, config.factor_dim,
                       config.routing_iters, init_rng)
    dec = init_structure_decoder(params, config.num_factors, config.factor_dim, config.structure_hidden,
                                 config.factor_recon_hidden, init_rng)

    per_epoch = []
    partition = labels = None
    solver = {}
    for epoch in range(1, config.epochs + 1):
        warm = epoch <= config.warmup_epochs
        due = epoch == config.warmup_epochs + 1 or (
            config.partition_every and not warm and (epoch - config.warmup_epochs - 1) % config.partition_every == 0
        )
        if due:
            z_now = _infer(features, enc, infer_adj, config.softmax_axis)
            labels, new_part, solver = _partition(z_now, config, graph, seed)
            if partition is None or new_part.f1 != partition.f1:
                params.remove(dec.ch_prefix)
                init_recon_decoder(dec, new_part.f1, new_part.f2, _rng(seed, 100 + epoch))
            partition = new_part
            solver["epoch"] = epoch

        z = encode(features, enc, visible, config.softmax_axis)
        neg = sample_negatives(train_graph, len(positives), seed=[seed, _NEG, epoch])
        st = structure_loss(z, positives, neg, dec)
        cl = clustering_loss(visible, z) if visible.nnz else ad.Tensor(0.0)
        ch = ad.Tensor(0.0) if warm else recon_loss(z, dec, config.tau)
        loss = total_loss(st, ch, cl, 0.0 if warm else config.lambda1, config.lambda2)
        row = {"epoch": epoch, "phase": "warmup" if warm else "joint",
               "st": st.item(), "ch": ch.item(), "cl": cl.item(), "total": loss.item()}
        if not np.isfinite(row["total"]):
            raise NonFiniteError(f"non-finite loss at epoch {epoch}: {row}")
        per_epoch.append(row)
        loss.backward()
        adam_step(params, config.lr)
        if epoch == 1 or epoch % 25 == 0 or epoch == config.epochs:
            log.info("epoch %d %s total=%.5f st=%.5f ch=%.5f cl=%.5f", epoch, row["phase"],
                     row["total"], row["st"], row["ch"], row["cl"])

    z_final = _infer(features, enc, infer_adj, config.softmax_axis)
    embeddings = np.concatenate(
        [factor_block(z_final, partition.f1).data, factor_block(z_final, partition.f2).data], axis=1
    )

    values = {
        "num_pseudo_labeled": len(labels),
        "pseudo_label_fallback": bool(labels.fallback),
        "partition_f1": list(partition.f1),
        "partition_f2": list(partition.f2),
        "beta_used": solver["beta_used"],
        "final_total_loss": per_epoch[-1]["total"],
    }
    if graph.labels is not None:
        values["pseudo_label_accuracy"] = clustering_accuracy(labels.labels, graph.labels[labels.node_ids])
    if link_split is not None:
        values["link_auc"], values["link_ap"] = link_scores(params, dec, z_final, link_split)

    metrics = metrics_record("train", dataset, config, values, per_epoch)
    return RunArtifacts(config, params, embeddings, partition, labels, metrics, solver, link_split)


def link_scores(params, dec, z, split):
    pos = edge_probabilities(z, np.asarray(split["test_pos"]), dec).data
    neg = edge_probabilities(z, np.asarray(split["test_neg"]), dec).data
    return eval_link(pos, neg)


def _decoders(art):
    c = art.config
    return DecoderParams(art.params, c.num_factors, c.factor_dim, c.structure_hidden, c.factor_recon_hidden,
                         tuple(art.partition.f1), tuple(art.partition.f2))


def evaluate_link_artifacts(art):
    """AUC/AP of the stored edge decoder on the run's held-out link split."""
    if art.link_split is None:
        raise ValueError("run has no held-out link split (train with link_holdout > 0)")
    auc, ap = link_scores(art.params, _decoders(art), art.natural_latent(), art.link_split)
    return metrics_record("link", art.metrics.get("dataset", "graph"), art.config, {"auc": auc, "ap": ap})


def evaluate_node_artifacts(art, labels, split_seed=None):
    """Linear probe, redundancy check and separability check on the stored embeddings."""
    labels = np.asarray(labels)
    seed = art.config.seed if split_seed is None else split_seed
    split = stratified_split(labels, (1, 1, 8), seed)
    x = art.embeddings
    acc = linear_probe(x, labels, split, seed)
    acc_f1, acc_f2, acc_both = redundancy_check(x, art.f1_width, labels, split, seed)
    dec = _decoders(art)

    def h_ch(block):
        return mlp(art.params, dec.ch_prefix, ad.Tensor(block), depth=2).data

    acc_recon, acc_raw = separability_check(x[:, : art.f1_width], labels, h_ch, split, seed)
    values = {
        "probe_accuracy": acc,
        "acc_f1": acc_f1,
        "acc_f2": acc_f2,
        "acc_both": acc_both,
        "redundancy_gap": redundancy_gap(acc_f1, acc_f2, acc_both),
        "separability_recon": acc_recon,
        "separability_raw_f1": acc_raw,
    }
    return metrics_record("node", art.metrics.get("dataset", "graph"), art.config, values)
