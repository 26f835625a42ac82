"""Factor scores and the context partition on a latent with planted signal factors.

The first half of the factors carries class-dependent means; the rest is noise.

    python3 scripts/planted_ci_demo.py --seeds 10
"""

import argparse

import numpy as np

from cimage.ci_select import build_hsic_stats, select_contexts
from cimage.clustering import PseudoLabels


def planted(seed, k, d, n, classes, noise):
    rng = np.random.default_rng(seed)
    y = rng.integers(classes, size=n)
    z = rng.normal(size=(n, k, d))
    means = rng.normal(size=(classes, k // 2, d))
    z[:, : k // 2] = means[y] + noise * rng.normal(size=(n, k // 2, d))
    return z, PseudoLabels(np.arange(n), y, np.ones(n), classes)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--factors", type=int, default=8)
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--nodes", type=int, default=300)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.1, help="penalty relative to max relevance")
    args = p.parse_args()

    for seed in range(args.seeds):
        z, labels = planted(seed, args.factors, args.dim, args.nodes, 3, args.noise)
        stats = build_hsic_stats(z, labels, seed=seed)
        sel = select_contexts(stats, args.factors, args.dim, args.beta * stats.rel.max())
        scores = " ".join(f"{s:.3f}" for s in sel.partition.scores)
        print(f"seed {seed}: F1={list(sel.partition.f1)} F2={list(sel.partition.f2)} "
              f"retries={sel.retries} scores=[{scores}]")


if __name__ == "__main__":
    main()
