"""Training configuration."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from .encoder import SOFTMAX_AXES

STRUCTURE_POSITIVES = ("masked", "all")
INFERENCE_EDGES = ("all", "visible")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run.

    Defaults follow the Cora node-classification setting. ``beta`` is
    relative: the penalty used by the solver is ``beta * max(rel)``.
    ``epochs`` counts warmup epochs too.
    """

    num_factors: int = 16
    factor_dim: int = 32
    routing_iters: int = 3
    encoder_hidden: int = 512
    factor_recon_hidden: int = 256
    structure_hidden: int = 32
    mask_rate: float = 0.7
    lambda1: float = 0.86
    lambda2: float = 0.4
    tau: float = 2.0
    beta: float = 0.1
    pi: float = 0.5
    lr: float = 5e-3
    cluster_threshold: float = 0.99
    zero_tol: float = 1e-6
    epochs: int = 300
    warmup_epochs: int = 100
    num_clusters: int = 7
    labeled_cap: int = 1024
    max_beta_retries: int = 8
    min_labeled: int = 32
    seed: int = 0
    softmax_axis: str = "factors"
    structure_positives: str = "masked"
    inference_edges: str = "all"
    link_holdout: float = 0.0
    partition_every: int = 0
    solver_max_iter: int = 200
    solver_tol: float = 1e-6

    def __post_init__(self):
        counts = ("num_factors", "factor_dim", "routing_iters", "encoder_hidden", "factor_recon_hidden",
                  "structure_hidden", "epochs", "warmup_epochs", "num_clusters", "labeled_cap", "min_labeled",
                  "solver_max_iter")
        for name in counts:
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.num_factors < 2:
            raise ValueError("num_factors must be at least 2")
        if self.num_clusters < 2:
            raise ValueError("num_clusters must be at least 2")
        if self.warmup_epochs >= self.epochs:
            raise ValueError("warmup_epochs must be smaller than epochs")
        if not 0.0 <= self.mask_rate < 1.0:
            raise ValueError("mask_rate must lie in [0, 1)")
        if not 0.0 <= self.link_holdout < 1.0:
            raise ValueError("link_holdout must lie in [0, 1)")
        if self.pi != 0.5:
            raise ValueError("only pi = 0.5 is supported")
        for name in ("lambda1", "lambda2", "beta", "zero_tol", "max_beta_retries", "partition_every"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        if self.lr <= 0 or self.solver_tol <= 0:
            raise ValueError("lr and solver_tol must be positive")
        if self.softmax_axis not in SOFTMAX_AXES:
            raise ValueError(f"softmax_axis must be one of {SOFTMAX_AXES}")
        if self.structure_positives not in STRUCTURE_POSITIVES:
            raise ValueError(f"structure_positives must be one of {STRUCTURE_POSITIVES}")
        if self.inference_edges not in INFERENCE_EDGES:
            raise ValueError(f"inference_edges must be one of {INFERENCE_EDGES}")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def sbm_benchmark_config(**overrides):
    """Desk-scale setting used for the four-community SBM benchmark."""
    base = dict(
        num_factors=4, factor_dim=8, encoder_hidden=64, factor_recon_hidden=32, structure_hidden=32,
        lambda1=0.5, lambda2=0.4, epochs=300, warmup_epochs=100, num_clusters=4, labeled_cap=512,
        link_holdout=0.15, seed=42,
    )
    base.update(overrides)
    return TrainConfig(**base)
