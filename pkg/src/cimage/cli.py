"""Command-line entry point ``cimage``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import TrainConfig
from .errors import CimageError
from .graph import generate_sbm, load_graph, save_graph
from .pipeline import RunArtifacts, dump_json, evaluate_link_artifacts, evaluate_node_artifacts, select_for_latent, train


def _dataset_name(manifest):
    return os.path.splitext(os.path.basename(manifest))[0]


def cmd_train(args):
    config = TrainConfig.from_json(args.config)
    graph = load_graph(args.graph)
    art = train(config, graph, dataset=_dataset_name(args.graph))
    art.save(args.out)
    print(json.dumps(art.metrics["values"], indent=2))


def cmd_eval(args):
    art = RunArtifacts.load(args.artifacts)
    if args.task == "node":
        graph = load_graph(args.graph)
        if graph.labels is None:
            raise CimageError("node evaluation needs a labels file in the manifest")
        record = evaluate_node_artifacts(art, graph.labels, args.split_seed)
    else:
        record = evaluate_link_artifacts(art)
    dump_json(record, os.path.join(args.artifacts, f"eval_{args.task}.json"))
    print(json.dumps(record["values"], indent=2))


def cmd_ci_score(args):
    art = RunArtifacts.load(args.artifacts)
    if not args.recompute:
        part = art.partition.to_dict()
        out = {"scores": part["scores"], "f1": part["f1"], "f2": part["f2"],
               "beta_used": art.solver.get("beta_used"), "converged": art.solver.get("converged"),
               "iterations": art.solver.get("iterations")}
    else:
        sel = select_for_latent(art.natural_latent(), art.pseudo_labels, art.config, art.config.seed)
        part = sel.partition.to_dict()
        out = {"scores": part["scores"], "f1": part["f1"], "f2": part["f2"], "beta_used": sel.beta,
               "converged": sel.state.converged, "iterations": sel.state.iterations_run}
    print(json.dumps(out, indent=2))


def cmd_gen_sbm(args):
    graph = generate_sbm(args.nodes, args.communities, args.p_in, args.p_out, args.feat_dim, args.feat_noise, args.seed)
    save_graph(graph, args.out)
    print(json.dumps({"nodes": graph.num_nodes, "edges": graph.num_edges, "manifest": args.out}))


def build_parser():
    p = argparse.ArgumentParser(prog="cimage", description="Conditional-independence-aware masked graph auto-encoder")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write run artifacts")
    t.add_argument("--config", required=True)
    t.add_argument("--graph", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate stored artifacts")
    e.add_argument("task", choices=("node", "link"))
    e.add_argument("--artifacts", required=True)
    e.add_argument("--graph", help="manifest with labels (node task)")
    e.add_argument("--split-seed", type=int, default=None)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("ci-score", help="print factor scores and the F1/F2 partition")
    c.add_argument("--artifacts", required=True)
    c.add_argument("--recompute", action="store_true", help="re-solve on the final embeddings")
    c.set_defaults(func=cmd_ci_score)

    g = sub.add_parser("gen-sbm", help="write a stochastic block model graph")
    g.add_argument("--nodes", type=int, required=True)
    g.add_argument("--communities", type=int, required=True)
    g.add_argument("--p-in", type=float, required=True)
    g.add_argument("--p-out", type=float, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--feat-dim", type=int, default=16)
    g.add_argument("--feat-noise", type=float, default=0.3)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_sbm)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "eval" and args.task == "node" and not args.graph:
        print("cimage: eval node needs --graph", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except (CimageError, ValueError, OSError) as exc:
        print(f"cimage: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
