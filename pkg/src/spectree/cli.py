"""Command-line pipeline: synth / build-tree / train / predict / evaluate /
benchmark / diagnose.

All randomness flows from ``--seed``; rerunning a subcommand with identical
inputs and seed produces byte-identical output artifacts (data, tree, model,
prediction files). Report files additionally carry wall-clock throughput and
are diagnostic, not artifacts.
"""

import argparse
import sys

import numpy as np

from . import dataio, metrics
from .classifier import TrainConfig, deserialize_model, serialize_model, train
from .spectral import RouterSolution, SolverParams, solve_node
from .sparsecore import weighted_median, spmv
from .tree import (
    ArtifactFormatError,
    TreeConfig,
    build_tree,
    deserialize_tree,
    estimate_recall,
    serialize_tree,
)


def _add_data_args(p):
    p.add_argument("--data", required=True, help="input dataset (svmlight text)")
    p.add_argument("--mode", choices=["multiclass", "multilabel"], default=None,
                   help="override the inferred task mode")
    p.add_argument("--hellinger", action="store_true",
                   help="L1-normalize rows then take square roots")
    p.add_argument("--hash-bits", type=int, default=None,
                   help="fold features into 2^bits hashed buckets")


def _add_solver_args(p):
    p.add_argument("--power-iters", type=int, default=200)
    p.add_argument("--power-tol", type=float, default=1e-6)
    p.add_argument("--cg-iters", type=int, default=10)
    p.add_argument("--cg-tol", type=float, default=1e-4)


def _load_dataset(args):
    ds = dataio.parse_svmlight(args.data, mode=args.mode)
    if args.hash_bits is not None:
        ds = dataio.rehash_features(ds, args.hash_bits)
    if args.hellinger:
        ds = dataio.hellinger_transform(ds)
    return ds


def _solver_params(args, seed):
    return SolverParams(
        max_power_iters=args.power_iters,
        power_tol=args.power_tol,
        cg_max_iters=args.cg_iters,
        cg_tol=args.cg_tol,
        seed=seed,
    )


def _read_tree(path):
    with open(path, "rb") as fh:
        return deserialize_tree(fh.read())


def _read_model(path):
    with open(path, "rb") as fh:
        return deserialize_model(fh.read())


def _print_summary(ds):
    s = ds.summary()
    print(f"n: {s['n']}")
    print(f"d: {s['d']}")
    print(f"c: {s['c']}")
    print(f"mode: {s['mode']}")
    print(f"s: {s['s']:g}")


def _print_config(args, keys):
    # every report starts with its hyperparameters, so outputs are
    # self-describing
    for key in keys:
        print(f"config.{key}: {getattr(args, key)}")


def cmd_synth(args):
    cfg = dataio.SynthConfig(
        n_classes=args.classes,
        dim=args.dim,
        examples_per_class=args.examples_per_class,
        cluster_separation=args.separation,
        noise_sigma=args.noise,
        seed=args.seed,
    )
    train_ds, test_ds = dataio.make_synthetic(cfg)
    for path, ds in ((args.train_out, train_ds), (args.test_out, test_ds)):
        with open(path, "w", encoding="utf-8") as fh:
            dataio.serialize_svmlight(ds, fh)
    print(f"wrote {args.train_out} ({train_ds.n} examples) and "
          f"{args.test_out} ({test_ds.n} examples)")
    return 0


def cmd_build_tree(args):
    _print_config(args, ["depth", "leaf_budget", "recall_target", "prune_eps",
                         "min_node_mass", "routing", "seed", "power_iters",
                         "power_tol", "cg_iters", "cg_tol", "hellinger",
                         "hash_bits"])
    ds = _load_dataset(args)
    _print_summary(ds)
    cfg = TreeConfig(
        max_depth=args.depth,
        leaf_budget=args.leaf_budget,
        recall_target=args.recall_target,
        prune_eps=args.prune_eps,
        min_node_mass=args.min_node_mass,
        solver=_solver_params(args, args.seed),
        routing=args.routing,
    )
    tree, report = build_tree(ds, cfg)
    with open(args.tree_out, "wb") as fh:
        fh.write(serialize_tree(tree))
    if args.report_out:
        with open(args.report_out, "w", encoding="utf-8") as fh:
            fh.write(report.to_jsonl())
    rec = estimate_recall(tree, ds, routing="deterministic")
    print(f"nodes: {report.n_nodes}")
    print(f"leaves: {report.n_leaves}")
    print(f"example_avg_depth: {report.example_avg_depth:.4f}")
    print(f"pruned_mass_total: {report.pruned_mass_total:.6g}")
    print(f"train_tree_recall_deterministic: {rec:.6f}")
    return 0


def cmd_train(args):
    _print_config(args, ["epochs", "lr", "lr_decay", "rank",
                         "node_output_weights", "l2", "seed", "hellinger",
                         "hash_bits"])
    ds = _load_dataset(args)
    tree = _read_tree(args.tree)
    cfg = TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        lr_decay=args.lr_decay,
        seed=args.seed,
        rank=args.rank,
        node_output_weights=args.node_output_weights,
        l2=args.l2,
    )
    model = train(ds, tree, cfg)
    with open(args.model_out, "wb") as fh:
        fh.write(serialize_model(model))
    rep = model.train_report
    print(f"visits: {rep.visits}")
    print(f"skip_rate: {rep.skip_rate:.6f}")
    return 0


def cmd_predict(args):
    from .classifier import predict_batch

    ds = _load_dataset(args)
    tree = _read_tree(args.tree)
    model = _read_model(args.model)
    rankings = predict_batch(model, tree, ds.features)
    with open(args.out, "w", encoding="utf-8") as fh:
        for ranked in rankings:
            fh.write(" ".join(str(int(x)) for x in ranked[: args.top]) + "\n")
    print(f"wrote {len(rankings)} predictions to {args.out}")
    return 0


def cmd_evaluate(args):
    ds = _load_dataset(args)
    tree = _read_tree(args.tree)
    model = _read_model(args.model)
    train_ds = None
    if args.train_data:
        train_args = argparse.Namespace(
            data=args.train_data, mode=args.mode,
            hellinger=args.hellinger, hash_bits=args.hash_bits,
        )
        train_ds = _load_dataset(train_args)
    report = metrics.evaluate(model, tree, ds, train=train_ds)
    for line in report.lines():
        print(line)
    if args.report_out:
        with open(args.report_out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(report.lines()) + "\n")
    return 0


def cmd_benchmark(args):
    ds = _load_dataset(args)
    tree = _read_tree(args.tree)
    model = _read_model(args.model)
    result = metrics.benchmark_inference(model, tree, ds, repetitions=args.repetitions)
    print(f"examples_per_second: {result.examples_per_second:.1f}")
    print(f"mean_depth: {result.mean_depth:.4f}")
    print(f"mean_candidates: {result.mean_candidates:.4f}")
    return 0


def cmd_diagnose(args):
    _print_config(args, ["random_splits", "seed", "power_iters", "power_tol"])
    ds = _load_dataset(args)
    if ds.mode != "multiclass":
        print("diagnose requires a multiclass dataset", file=sys.stderr)
        return 1
    router = solve_node(ds.features, ds.labels, ds.weights, ds.mode,
                        _solver_params(args, args.seed))
    eig = metrics.split_diagnostics(router, ds)
    print(f"eigen_purity: {eig.purity:.6f}")
    print(f"eigen_purity_macro: {eig.purity_macro:.6f}")
    print(f"eigen_balance: {eig.balance:.6f}")
    print(f"eigen_degenerate_split: {eig.degenerate}")
    rng = np.random.default_rng(args.seed)
    best, total = 0.0, 0.0
    for _ in range(args.random_splits):
        w = rng.standard_normal(ds.d)
        norm = np.linalg.norm(w)
        if norm == 0:
            continue
        w /= norm
        proj = spmv(ds.features, w)
        bias = weighted_median(proj, ds.weights)
        diag = metrics.split_diagnostics(
            RouterSolution(weight=w, bias=float(bias), eigenvalue=0.0,
                           mass=router.mass, iterations=0, converged=True),
            ds,
        )
        best = max(best, diag.purity)
        total += diag.purity
    n = max(args.random_splits, 1)
    print(f"random_splits: {args.random_splits}")
    print(f"random_purity_mean: {total / n:.6f}")
    print(f"random_purity_max: {best:.6f}")
    print(f"eigen_exceeds_random_max: {eig.purity > best}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spectree",
        description="Hierarchical spectral label filtering for extreme classification",
    )
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads (1 = deterministic mode; "
                             "currently always single-threaded)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic Gaussian-cluster dataset")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--examples-per-class", type=int, default=100)
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-tree", help="construct the routing tree")
    _add_data_args(p)
    p.add_argument("--tree-out", required=True)
    p.add_argument("--report-out", default=None, help="per-node JSONL diagnostics")
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--leaf-budget", type=int, required=True)
    p.add_argument("--recall-target", type=float, default=1.0)
    p.add_argument("--prune-eps", type=float, default=1e-3)
    p.add_argument("--min-node-mass", type=float, default=1.0)
    p.add_argument("--routing", choices=["fractional", "deterministic"],
                   default="fractional")
    p.add_argument("--seed", type=int, default=0)
    _add_solver_args(p)
    p.set_defaults(func=cmd_build_tree)

    p = sub.add_parser("train", help="train the restricted classifier")
    _add_data_args(p)
    p.add_argument("--tree", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--lr-decay", type=float, default=0.0)
    p.add_argument("--rank", type=int, default=0)
    p.add_argument("--node-output-weights", action="store_true")
    p.add_argument("--l2", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write ranked predictions")
    _add_data_args(p)
    p.add_argument("--tree", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--top", type=int, default=5)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="accuracy / precision@k / tree recall")
    _add_data_args(p)
    p.add_argument("--tree", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--train-data", default=None,
                   help="also report training-set tree recall")
    p.add_argument("--report-out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="inference throughput")
    _add_data_args(p)
    p.add_argument("--tree", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--repetitions", type=int, default=3)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("diagnose", help="eigen split purity vs random splits")
    _add_data_args(p)
    p.add_argument("--random-splits", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    _add_solver_args(p)
    p.set_defaults(func=cmd_diagnose)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, ArtifactFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
