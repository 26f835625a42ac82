"""Best link AUC any scorer can reach on an SBM when pairs are independent.

Given the community labels, an edge's presence carries no further signal, so
the optimal score is the within-community indicator. This script computes its
expected AUC in closed form and checks it against sampled graphs.

    python3 scripts/link_auc_ceiling.py --nodes 1000 --communities 4 --p-in 0.05 --p-out 0.005
"""

import argparse

import numpy as np

from cimage.evaluation import auc_score
from cimage.graph import generate_sbm, sample_negatives


def closed_form(n, k, p_in, p_out):
    size = n // k
    within = k * size * (size - 1) / 2
    across = n * (n - 1) / 2 - within
    e_in, e_out = within * p_in, across * p_out
    pos_in = e_in / (e_in + e_out)  # share of edges inside a community
    neg_in = (within - e_in) / (within + across - e_in - e_out)  # same for non-edges
    return pos_in * (1 - neg_in) + 0.5 * (pos_in * neg_in + (1 - pos_in) * (1 - neg_in))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--nodes", type=int, default=1000)
    p.add_argument("--communities", type=int, default=4)
    p.add_argument("--p-in", type=float, default=0.05)
    p.add_argument("--p-out", type=float, default=0.005)
    p.add_argument("--trials", type=int, default=5)
    args = p.parse_args()

    print(f"closed form: {closed_form(args.nodes, args.communities, args.p_in, args.p_out):.4f}")
    for seed in range(args.trials):
        g = generate_sbm(args.nodes, args.communities, args.p_in, args.p_out, 4, 0.3, seed)
        neg = sample_negatives(g, g.num_edges, seed=seed)
        same = lambda pairs: (g.labels[pairs[:, 0]] == g.labels[pairs[:, 1]]).astype(float)  # noqa: E731
        print(f"seed {seed}: sampled AUC {auc_score(same(g.edges), same(neg)):.4f}")


if __name__ == "__main__":
    main()
