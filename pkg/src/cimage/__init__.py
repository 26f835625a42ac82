"""Conditional-independence-aware masked graph auto-encoder."""

from .ci_select import (
    ContextPartition,
    HsicStats,
    SolverState,
    build_hsic_stats,
    evaluate_objective,
    factor_scores,
    partition_contexts,
    select_contexts,
    solve_bayesian_lasso,
)
from .clustering import PseudoLabels, clustering_loss, extract_pseudo_labels, modularity_hard
from .config import TrainConfig, sbm_benchmark_config
from .encoder import EncoderParams, encode, project_subspaces, route_encode
from .graph import Graph, MaskedGraph, generate_sbm, load_graph, mask_edges, sample_negatives, split_link_eval
from .hsic import conditional_hsic, delta_gram, empirical_hsic, gaussian_gram, median_bandwidth
from .losses import sce_loss, structure_loss, total_loss
from .pipeline import RunArtifacts, select_for_latent, train

__version__ = "0.1.0"
