"""Command-line interface.

Subcommands cover each pipeline stage (simulate, estimate, sample, embed,
featurize, train, predict, evaluate) plus `experiment` for the full grid.
Exit codes: 0 success, 1 stage or cell failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from ._rng import derive_master
from .embedding import WalkConfig, embed_graph, load_embeddings, save_embeddings
from .errors import ParameterError, ReachcastError
from .experiment import (load_experiment_config, render_table, run_experiment)
from .features import all_pairs, build_dataset, load_dataset, save_dataset
from .graphs import load_edge_list
from .icm import (assign_probabilities, generate_cascade_set, load_cascades,
                  sample_portion, save_cascades)
from .models import load_model, predict, save_model, train_gbrt, train_mlp, TrainConfig
from .reach import (DIVISOR_NOMINAL, DIVISOR_PER_SEED, ReachMatrix,
                    estimate_reach, load_reach, mae_from_files, save_reach)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reachcast",
                                     description="Cascade simulation and "
                                                 "reach-probability prediction")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a cascade set under the ICM")
    p.add_argument("--graph", required=True)
    p.add_argument("--max-p", type=float, required=True)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("estimate", help="reach matrix from a cascade file")
    p.add_argument("--cascades", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--mode", choices=["actual", "label"], required=True)
    p.add_argument("--divisor", choices=["nominal", "perseed"], default=None,
                   help="defaults to nominal for actual, perseed for label")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sample", help="sample a portion of a cascade file")
    p.add_argument("--cascades", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("embed", help="node embeddings from biased random walks")
    p.add_argument("--graph", required=True)
    p.add_argument("--dims", type=int, default=128)
    p.add_argument("--walk-length", type=int, default=20)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--walks-per-node", type=int, default=10)
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--learning-rate", type=float, default=0.025)
    p.add_argument("--mode", choices=["deterministic", "fast"], default="deterministic")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("featurize", help="link-feature dataset from embeddings and labels")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--zero-keep", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a regressor on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=["mlp", "gbrt"], required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--hidden", default="100", help="mlp: comma-separated layer sizes")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--max-depth", type=int, default=3)
    p.add_argument("--shrinkage", type=float, default=0.1)
    p.add_argument("--subsample", type=float, default=1.0)

    p = sub.add_parser("predict", help="predict reach probabilities for node pairs")
    p.add_argument("--model", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--pairs", default="all",
                   help="'all' or a file of `src dst` label pairs")
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="MAE between two reach files")
    p.add_argument("--predicted", required=True)
    p.add_argument("--actual", required=True)

    p = sub.add_parser("experiment", help="run the full grid from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--format", choices=["tsv", "markdown"], default="tsv")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ReachcastError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "simulate":
        graph = load_edge_list(args.graph)
        probs = assign_probabilities(graph, args.max_p,
                                     derive_master(args.seed, 1))
        cascades = generate_cascade_set(graph, probs, args.r,
                                        derive_master(args.seed, 2),
                                        workers=args.workers)
        save_cascades(cascades, graph, args.out)
        print(f"wrote {len(cascades)} cascades to {args.out}")
        return 0

    if args.command == "estimate":
        graph = load_edge_list(args.graph)
        cascades = load_cascades(args.cascades, graph)
        divisor = args.divisor or ("nominal" if args.mode == "actual" else "perseed")
        mode = DIVISOR_NOMINAL if divisor == "nominal" else DIVISOR_PER_SEED
        matrix = estimate_reach(cascades, mode, workers=args.workers)
        save_reach(matrix, graph.labels, args.out, args.mode)
        print(f"wrote {matrix.entry_count} entries to {args.out}")
        return 0

    if args.command == "sample":
        graph = load_edge_list(args.graph)
        cascades = load_cascades(args.cascades, graph)
        part = sample_portion(cascades, args.fraction, args.seed)
        save_cascades(part, graph, args.out)
        print(f"wrote {len(part)} of {len(cascades)} cascades to {args.out}")
        return 0

    if args.command == "embed":
        graph = load_edge_list(args.graph)
        cfg = WalkConfig(dimensions=args.dims, walk_length=args.walk_length,
                         window=args.window, walks_per_node=args.walks_per_node,
                         return_param=args.p, inout_param=args.q,
                         epochs=args.epochs, negatives_per_positive=args.negatives,
                         initial_learning_rate=args.learning_rate,
                         seed=args.seed, training_mode=args.mode)
        emb = embed_graph(graph, cfg, workers=args.workers)
        save_embeddings(emb, args.out)
        print(f"wrote {emb.node_count} x {emb.dimensions} embeddings to {args.out}")
        return 0

    if args.command == "featurize":
        emb = load_embeddings(args.embeddings)
        label_index = {lab: i for i, lab in enumerate(emb.labels)}
        labels = load_reach(args.labels, label_index, emb.node_count)
        ds = build_dataset(emb, labels, args.zero_keep, seed=args.seed)
        save_dataset(ds, args.out)
        print(f"wrote {len(ds)} rows to {args.out}")
        return 0

    if args.command == "train":
        ds = load_dataset(args.data)
        cfg = TrainConfig(hidden_sizes=tuple(int(x) for x in args.hidden.split(",")),
                          epochs=args.epochs, batch_size=args.batch_size,
                          learning_rate=args.learning_rate, l2_penalty=args.l2,
                          n_trees=args.trees, max_depth=args.max_depth,
                          shrinkage=args.shrinkage, subsample=args.subsample,
                          seed=args.seed)
        model = train_mlp(ds, cfg) if args.model == "mlp" else train_gbrt(ds, cfg)
        save_model(model, args.out)
        print(f"wrote {args.model} model to {args.out}")
        return 0

    if args.command == "predict":
        model = load_model(args.model)
        emb = load_embeddings(args.embeddings)
        label_index = {lab: i for i, lab in enumerate(emb.labels)}
        if args.pairs == "all":
            pairs = all_pairs(emb.node_count)
        else:
            pairs = _read_pair_file(args.pairs, label_index)
        feats = np.hstack([emb.vectors[pairs[:, 0]], emb.vectors[pairs[:, 1]]])
        vals = predict(model, feats)
        matrix = ReachMatrix.from_triples(
            emb.node_count, zip(pairs[:, 0], pairs[:, 1], vals))
        save_reach(matrix, emb.labels, args.out, "predicted")
        print(f"wrote {pairs.shape[0]} predictions to {args.out}")
        return 0

    if args.command == "evaluate":
        print(f"{mae_from_files(args.predicted, args.actual):.6g}")
        return 0

    if args.command == "experiment":
        cfg = load_experiment_config(args.config)
        table = run_experiment(cfg)
        print(render_table(table, args.format), end="")
        return 1 if table.has_failures else 0

    raise ParameterError(f"unknown command {args.command!r}")


def _read_pair_file(path, label_index) -> np.ndarray:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            if len(tokens) < 2:
                raise ParameterError(f"pairs file line {lineno}: expected two labels")
            try:
                pairs.append((label_index[tokens[0]], label_index[tokens[1]]))
            except KeyError as exc:
                raise ParameterError(f"pairs file line {lineno}: unknown label {exc}")
    return np.asarray(pairs, dtype=np.int32).reshape(-1, 2)


if __name__ == "__main__":
    sys.exit(main())
