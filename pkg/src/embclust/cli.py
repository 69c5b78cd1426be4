"""Command-line front end.

Subcommands mirror the pipeline stages: ``generate``, ``build-graph``,
``refine``, ``train-predictor``, ``cluster``, ``evaluate``, plus the
experiment harnesses ``ablate`` and ``noise``.  Every subcommand is
deterministic given --config and --seed; reports are written with fixed
formatting so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import benchmarks, edges, embeddings, experiments, knn, metrics, predictor
from .pipeline import (PipelineConfig, apply_overrides, parse_config,
                       preset_config, run_pipeline)


def _common(parser):
    parser.add_argument("--config", type=Path, default=None,
                        help="flat key = value config file, or preset:<name>")
    parser.add_argument("--seed", type=int, default=None, help="master seed")
    parser.add_argument("--out", type=Path, default=Path("."),
                        help="output directory")
    parser.add_argument("--threads", type=int, default=1)


def _training_flags(parser):
    parser.add_argument("--lr", type=float, default=None)
    parser.add_argument("--momentum", type=float, default=None)
    parser.add_argument("--weight-decay", type=float, default=None)
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--eta", type=float, default=None)
    parser.add_argument("--variant", default=None,
                        choices=["vanilla", "diff", "sdt", "moe-sdt"])


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if args.config is not None:
        text = str(args.config)
        if text.startswith("preset:"):
            cfg = preset_config(text.split(":", 1)[1], cfg)
        else:
            cfg = parse_config(Path(text).read_text(), cfg)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    for attr, key in (("lr", "train.lr"), ("momentum", "train.momentum"),
                      ("weight_decay", "train.weight_decay"),
                      ("epochs", "train.epochs"), ("eta", "eta"),
                      ("variant", "predictor.variant")):
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = str(value)
    return apply_overrides(cfg, overrides)


def _load_embeddings(args) -> embeddings.EmbeddingSet:
    if args.embeddings is not None:
        return embeddings.load(args.embeddings)
    if args.benchmark is not None:
        return benchmarks.get_benchmark(args.benchmark)
    raise SystemExit("need --embeddings FILE or --benchmark NAME")


def _emb_source_flags(parser):
    parser.add_argument("--embeddings", type=Path, default=None)
    parser.add_argument("--benchmark", default=None,
                        choices=sorted(benchmarks.BENCHMARKS))


def cmd_generate(args):
    cfg = _load_config(args)
    spec = embeddings.SyntheticSpec(
        num_clusters=args.clusters, points_per_cluster=args.per_cluster,
        dim=args.dim, intra_spread=args.spread, seed=cfg.seed,
    )
    emb = embeddings.generate_synthetic(spec)
    args.out.mkdir(parents=True, exist_ok=True)
    embeddings.save(emb, args.out / "embeddings.dceb")
    print(f"wrote {emb.count} x {emb.dim} embeddings to {args.out / 'embeddings.dceb'}")


def cmd_build_graph(args):
    cfg = _load_config(args)
    emb = embeddings.l2_normalize(_load_embeddings(args))
    g = knn.build_knn(emb, cfg.k)
    if args.noise_ratio > 0:
        g = knn.inject_noise(g, args.noise_ratio, cfg.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    knn.save_graph(g, args.out / "graph.dckg")
    print(f"wrote kNN graph (n={g.n}, k={g.k}) to {args.out / 'graph.dckg'}")


def cmd_refine(args):
    cfg = _load_config(args)
    emb = _load_embeddings(args)
    model = predictor.BoundaryModel.load(args.model) if args.model else None
    if args.full_k:
        cfg = replace(cfg, use_topk=False)
    result = run_pipeline(cfg, emb, boundary_model=model)
    args.out.mkdir(parents=True, exist_ok=True)
    edges.write_edge_csv(result.edge_list, args.out / "edges.csv")
    print(f"wrote {len(result.edge_list)} edges to {args.out / 'edges.csv'}")


def cmd_train_predictor(args):
    cfg = _load_config(args)
    emb = embeddings.l2_normalize(_load_embeddings(args))
    if emb.labels is None:
        raise SystemExit("training requires labeled embeddings")
    g = knn.build_knn(emb, cfg.k)
    table = edges.build_edge_table(g, cfg.transform)
    args.out.mkdir(parents=True, exist_ok=True)
    if args.task == "boundary":
        sequences = predictor.encode_all(g, table)
        targets = predictor.label_topk(g, emb.labels)
        labeled = [
            predictor.NeighborSequence(center=s.center, tokens=s.tokens,
                                       true_k=int(t))
            for s, t in zip(sequences, targets)
        ]
        predictor.save_sequences(args.out / "sequences.dcsq", labeled)
        dataset = predictor.boundary_dataset(sequences, targets)
        model = predictor.BoundaryModel(cfg.predictor.encoder_config(), seed=cfg.seed)
    else:
        khat = np.full(g.n, g.k, dtype=np.int64)
        dataset = predictor.build_pair_dataset(table, khat, emb.labels, seed=cfg.seed)
        model = predictor.PairModel(cfg.predictor.encoder_config(), seed=cfg.seed)
    curve = predictor.train(model, dataset, replace(cfg.train, seed=cfg.seed))
    model.save(args.out / "model.dcat")
    with open(args.out / "loss_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(curve):
            writer.writerow([epoch, format(loss, ".6f")])
    print(f"wrote model to {args.out / 'model.dcat'} (final loss {curve[-1]:.6f})")


def cmd_cluster(args):
    from . import clustering

    cfg = _load_config(args)
    edge_list = edges.read_edge_csv(args.edges)
    n = args.n if args.n is not None else (
        max((max(i, j) for i, j, _ in edge_list), default=-1) + 1
    )
    eta = cfg.eta if cfg.threshold_mode != "none" else 0.0
    wg = clustering.threshold_edges(edge_list, eta, n=n)
    if cfg.cluster_method == "map":
        assign = clustering.map_cluster(wg)
    else:
        assign = clustering.connected_components(wg)
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "partition.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["node", "cluster"])
        for node, module in enumerate(assign.tolist()):
            writer.writerow([node, module])
    print(f"wrote {int(assign.max()) + 1} clusters to {args.out / 'partition.csv'}")


def _read_partition(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["node", "cluster"]:
            raise SystemExit(f"unexpected partition header: {header}")
        pairs = [(int(r[0]), int(r[1])) for r in reader if r]
    pairs.sort()
    return np.asarray([c for _, c in pairs], dtype=np.int64)


def cmd_evaluate(args):
    pred = _read_partition(args.pred)
    if args.labels is not None:
        truth = embeddings.load_labels_text(args.labels)
    else:
        emb = _load_embeddings(args)
        if emb.labels is None:
            raise SystemExit("embeddings carry no labels; pass --labels FILE")
        truth = emb.labels
    report = metrics.compute_all(pred, truth)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "report.json").write_text(report.to_json())
    print(report.to_json(), end="")


def cmd_ablate(args):
    cfg = _load_config(args)
    emb = _load_embeddings(args)
    grid = experiments.default_ablation_grid(cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    rows = experiments.run_ablation(grid, emb, out_path=args.out / "ablation.csv",
                                    threads=args.threads)
    print(f"wrote {len(rows)} ablation rows to {args.out / 'ablation.csv'}")


def cmd_noise(args):
    cfg = _load_config(args)
    emb = _load_embeddings(args)
    ratios = [float(r) for r in args.ratios.split(",") if r.strip() != ""]
    args.out.mkdir(parents=True, exist_ok=True)
    rows = experiments.run_noise_experiment(
        cfg, emb, ratios, out_path=args.out / "noise.csv", threads=args.threads
    )
    print(f"wrote {len(rows)} noise rows to {args.out / 'noise.csv'}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="embclust",
        description="Graph-based clustering of embedding vectors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a synthetic embedding set")
    _common(p)
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--per-cluster", type=int, required=True)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--spread", type=float, default=0.15)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("build-graph", help="exact cosine kNN graph")
    _common(p)
    _emb_source_flags(p)
    p.add_argument("--noise-ratio", type=float, default=0.0)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("refine", help="refined edge probabilities as CSV")
    _common(p)
    _training_flags(p)
    _emb_source_flags(p)
    p.add_argument("--model", type=Path, default=None,
                   help="pretrained boundary model checkpoint")
    p.add_argument("--full-k", action="store_true",
                   help="skip boundary prediction; use full neighborhoods")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("train-predictor", help="train a boundary or pair model")
    _common(p)
    _training_flags(p)
    _emb_source_flags(p)
    p.add_argument("--task", choices=["boundary", "pair"], default="boundary")
    p.set_defaults(func=cmd_train_predictor)

    p = sub.add_parser("cluster", help="partition a refined edge CSV")
    _common(p)
    _training_flags(p)
    p.add_argument("--edges", type=Path, required=True)
    p.add_argument("--n", type=int, default=None, help="node count override")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("evaluate", help="score a partition against labels")
    _common(p)
    _emb_source_flags(p)
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--labels", type=Path, default=None,
                   help="text labels, one integer per line")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="transform/variant ablation grid")
    _common(p)
    _training_flags(p)
    _emb_source_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("noise", help="noise-robustness experiment")
    _common(p)
    _training_flags(p)
    _emb_source_flags(p)
    p.add_argument("--ratios", default="0.1,0.2,0.4")
    p.set_defaults(func=cmd_noise)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
