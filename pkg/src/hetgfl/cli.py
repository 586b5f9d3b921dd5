"""``hetgfl`` command line: train, eval, cluster, export-embeddings, synth.

All randomness derives from ``--seed``: split uses seed+1, parameter init
seed+2, k-means seed+3. Exit codes: 0 ok, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .cluster import kmeans
from .hetgraph import (
    CLUSTERING_SPLIT,
    DatasetError,
    HeteroGraph,
    SplitSpec,
    dataset_fingerprint,
    load_dataset,
    make_split,
    save_dataset,
    synth_planted,
)
from .layers import AggMode
from .metrics import clustering_report, paper_literal_f1
from .model import (
    CheckpointError,
    ModelConfig,
    embed,
    forward,
    graph_meta,
    load_checkpoint,
    save_checkpoint,
)
from .train import TrainConfig, TrainingError, evaluate, train

log = logging.getLogger("hetgfl")

SPLIT_MODES = {"standard": (0.24, 0.06, 0.70), "clustering": CLUSTERING_SPLIT}


def _setup_logging() -> None:
    level = os.environ.get("HETGFL_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def apply_split(graph: HeteroGraph, seed: int, mode: str) -> tuple[HeteroGraph, dict]:
    """Use the dataset's split.tsv if present, else a seeded stratified split."""
    if graph.masks is not None:
        return graph, {"source": "split.tsv"}
    fr = SPLIT_MODES[mode]
    spec = SplitSpec(*fr, seed=seed + 1)
    return graph.with_masks(make_split(graph.labels, graph.labeled, spec)), {
        "source": "generated",
        "mode": mode,
        "fractions": list(fr),
        "seed": spec.seed,
    }


def _split_from_meta(graph: HeteroGraph, split: dict) -> HeteroGraph:
    if graph.masks is not None or split.get("source") != "generated":
        if graph.masks is None:
            raise DatasetError("checkpoint was trained with split.tsv but the dataset has none")
        return graph
    spec = SplitSpec(*split["fractions"], seed=split["seed"])
    return graph.with_masks(make_split(graph.labels, graph.labeled, spec))


def _check_compat(graph: HeteroGraph, meta: dict) -> None:
    have = graph_meta(graph)
    diffs = []
    for key in ("feature_dims", "n_edge_types", "n_classes", "n_edges", "n_nodes"):
        if key in meta and meta[key] != have[key]:
            diffs.append(f"  {key}: checkpoint={meta[key]} dataset={have[key]}")
    if diffs:
        raise CheckpointError("checkpoint does not match dataset:\n" + "\n".join(diffs))


def _load_for_eval(args):
    graph = load_dataset(args.data)
    params, config, meta = load_checkpoint(args.checkpoint)
    _check_compat(graph, meta)
    graph = _split_from_meta(graph, meta.get("split", {}))
    return graph, params, config, meta


# --------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    graph = load_dataset(args.data)
    graph, split_info = apply_split(graph, args.seed, args.split_mode)
    dims = [args.dim] * (args.layers + 1)
    mconf = ModelConfig(
        dims=dims,
        d_e=args.edge_dim,
        agg_mode=AggMode(args.agg),
        beta=args.beta,
        leaky_slope=args.slope,
        loss_mode=args.loss,
        ablations=frozenset(args.ablate or ()),
        weight_decay=args.weight_decay,
        unsquared_norm=args.unsquared_norm,
        seed=args.seed + 2,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tconf = TrainConfig(
        lr=args.lr,
        max_epochs=args.epochs,
        patience=args.patience,
        seed=args.seed,
        log_path=str(out / "history.jsonl"),
    )
    params, history = train(graph, mconf, tconf)

    meta = graph_meta(graph)
    meta["split"] = split_info
    save_checkpoint(out / "checkpoint.json", params, mconf, meta)
    metrics = {s: evaluate(graph, params, mconf, s) for s in ("val", "test")}
    for rec in metrics.values():
        rec.pop("loss")
    metrics["best_epoch"] = history.best_epoch
    metrics["epochs_run"] = len(history)
    (out / "metrics.json").write_text(_dump(metrics))
    manifest = {
        "command": "train",
        "flags": {k: v for k, v in vars(args).items() if k not in ("func", "manifest")},
        "model_config": mconf.to_dict(),
        "train_config": {k: v for k, v in vars(tconf).items() if k != "log_path"},
        "split": split_info,
        "dataset_fingerprint": dataset_fingerprint(args.data),
        "seed": args.seed,
        "artifacts": {
            "checkpoint": str(out / "checkpoint.json"),
            "history": str(out / "history.jsonl"),
            "metrics": str(out / "metrics.json"),
        },
        "metrics": metrics,
    }
    (out / "manifest.json").write_text(_dump(manifest))
    print(_dump(metrics))
    return 0


def cmd_eval(args) -> int:
    graph, params, config, _ = _load_for_eval(args)
    report = {}
    for split in args.splits:
        r = evaluate(graph, params, config, split)
        r.pop("loss")
        if args.paper_literal_f1:
            _, Z = forward(graph, params, config)
            mask = graph.masks[split]
            if config.loss_mode == "softmax-ce":
                truth, pred = graph.labels.argmax(1)[mask], Z.values.argmax(1)[mask]
            else:
                truth, pred = graph.labels[mask], (Z.values >= 0.5)[mask]
            r["paper_literal_micro_f1"] = paper_literal_f1(truth, pred, "micro")
            r["paper_literal_macro_f1"] = paper_literal_f1(truth, pred, "macro")
        report[split] = r
    text = _dump(report)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def embeddings(graph, params, config, pre_norm: bool = False) -> np.ndarray:
    if pre_norm:
        return embed(graph, params, config).values
    O, _ = forward(graph, params, config)
    return O.values


def cmd_cluster(args) -> int:
    graph, params, config, meta = _load_for_eval(args)
    X = embeddings(graph, params, config, args.pre_norm)
    k = graph.n_classes
    if args.k is not None and args.k != k:
        log.warning("overriding cluster count %d (class count) with --k %d", k, args.k)
        print(f"warning: using k={args.k} instead of class count {k}", file=sys.stderr)
        k = args.k
    seed = args.kmeans_seed if args.kmeans_seed is not None else args.seed + 3
    idx = np.flatnonzero(graph.labeled)
    res = kmeans(X[idx], k, seed=seed, n_init=args.n_init)
    report = clustering_report(graph.class_ids()[idx], res.assignments).to_dict()
    report.update(k=k, kmeans_seed=seed, inertia=res.inertia)
    if args.assignments:
        with open(args.assignments, "w", encoding="utf-8", newline="\n") as fh:
            for node, c in zip(idx.tolist(), res.assignments.tolist()):
                fh.write(f"{node}\t{c}\n")
    text = _dump(report)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def write_embeddings(path, X: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, row in enumerate(X):
            fh.write(str(i) + "\t" + "\t".join(f"{v:.9g}" for v in row) + "\n")


def read_embeddings(path) -> tuple[np.ndarray, np.ndarray]:
    ids, rows = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            ids.append(int(parts[0]))
            rows.append([float(v) for v in parts[1:]])
    return np.array(ids), np.array(rows)


def cmd_export(args) -> int:
    graph, params, config, _ = _load_for_eval(args)
    X = embeddings(graph, params, config, args.pre_norm)
    write_embeddings(args.out, X)
    print(f"wrote {X.shape[0]} x {X.shape[1]} embeddings to {args.out}")
    return 0


def cmd_synth(args) -> int:
    g = synth_planted(
        args.n, args.node_types, args.edge_types, args.classes, args.homophily, args.seed,
        edges_per_node=args.edges_per_node,
    )
    save_dataset(g, args.out)
    print(_dump(g.counts()))
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hetgfl", description="Edge-type feature-preference GNN on heterogeneous graphs")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write checkpoint, history and manifest")
    t.add_argument("--manifest", help="re-run with the flags recorded in a manifest.json")
    t.add_argument("--data", help="dataset directory")
    t.add_argument("--out", default="hetgfl-run", help="output directory")
    t.add_argument("--layers", type=int, default=2)
    t.add_argument("--dim", type=int, default=64)
    t.add_argument("--edge-dim", type=int, default=64)
    t.add_argument("--agg", choices=[m.value for m in AggMode], default=AggMode.EDGE_RESIDUAL.value)
    t.add_argument("--beta", type=float, default=0.05)
    t.add_argument("--loss", choices=["softmax-ce", "sigmoid-bce"], default="softmax-ce")
    t.add_argument("--ablate", action="append", choices=["no-fgl", "no-l2", "no-nle", "no-ei"])
    t.add_argument("--epochs", type=int, default=300)
    t.add_argument("--patience", type=int, default=30)
    t.add_argument("--lr", type=float, default=5e-4)
    t.add_argument("--weight-decay", type=float, default=0.0)
    t.add_argument("--unsquared-norm", action="store_true", help="use lambda*||theta|| instead of squared decay")
    t.add_argument("--slope", type=float, default=0.01, help="LeakyReLU negative slope")
    t.add_argument("--split-mode", choices=sorted(SPLIT_MODES), default="standard")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train)

    def common(sp):
        sp.add_argument("--data", required=True)
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--seed", type=int, default=0)

    e = sub.add_parser("eval", help="recompute micro/macro F1 per split")
    common(e)
    e.add_argument("--splits", nargs="+", default=["train", "val", "test"], choices=["train", "val", "test"])
    e.add_argument("--paper-literal-f1", action="store_true", help="also report the literal k-weighted F1 formulas")
    e.add_argument("--out", help="write metrics JSON here as well")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("cluster", help="k-means on learned embeddings, report ARI/NMI")
    common(c)
    c.add_argument("--k", type=int, help="override the cluster count (default: class count)")
    c.add_argument("--kmeans-seed", type=int)
    c.add_argument("--n-init", type=int, default=10)
    c.add_argument("--pre-norm", action="store_true", help="cluster H^L before L2 normalisation")
    c.add_argument("--assignments", help="write node_id<TAB>cluster TSV here")
    c.add_argument("--out", help="write metrics JSON here as well")
    c.set_defaults(func=cmd_cluster)

    x = sub.add_parser("export-embeddings", help="write node_id + embedding rows as TSV")
    common(x)
    x.add_argument("--out", required=True)
    x.add_argument("--pre-norm", action="store_true")
    x.set_defaults(func=cmd_export)

    s = sub.add_parser("synth", help="write a planted-partition dataset directory")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=300)
    s.add_argument("--node-types", type=int, default=2)
    s.add_argument("--edge-types", type=int, default=4)
    s.add_argument("--classes", type=int, default=3)
    s.add_argument("--homophily", type=float, default=0.9)
    s.add_argument("--edges-per-node", type=int, default=6)
    s.add_argument("--seed", type=int, default=1)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "train":
        if args.manifest:
            try:
                flags = json.loads(Path(args.manifest).read_text())["flags"]
            except (OSError, ValueError, KeyError) as exc:
                print(f"error: cannot read manifest: {exc}", file=sys.stderr)
                return 1
            for k, v in flags.items():
                setattr(args, k, v)
        if not args.data:
            print("hetgfl train: error: --data is required", file=sys.stderr)
            return 2
        for name in ("layers", "dim", "edge_dim", "epochs", "patience"):
            if getattr(args, name) < 1:
                print(f"hetgfl train: error: --{name.replace('_', '-')} must be >= 1", file=sys.stderr)
                return 2
    try:
        return args.func(args)
    except (DatasetError, CheckpointError, TrainingError, OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
