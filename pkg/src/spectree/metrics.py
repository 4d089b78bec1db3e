"""Evaluation and diagnostics: accuracy, precision@k, tree recall, split
purity/balance, and inference throughput."""

import time
from dataclasses import dataclass, field

import numpy as np

from .classifier import predict_batch
from .sparsecore import spmv
from .tree import estimate_recall, route_deterministic_batch


@dataclass
class SplitDiagnostics:
    """Deterministic-rule split quality (right iff w.x > b).

    ``purity`` is the frequency-weighted mean over classes of the larger
    fraction routed to one side; ``purity_macro`` is the unweighted mean;
    ``balance`` is the larger overall side fraction (ideal 0.5). A split
    sending every example one way is flagged ``degenerate`` (its purity is
    vacuously 1.0).
    """

    purity: float
    purity_macro: float
    balance: float
    left_mass: float
    right_mass: float

    @property
    def degenerate(self):
        return self.left_mass == 0.0 or self.right_mass == 0.0


@dataclass
class EvalReport:
    mode: str
    n_examples: int
    accuracy: float | None = None
    precision_at: dict = field(default_factory=dict)
    tree_recall_train: float | None = None
    tree_recall_test: float | None = None
    skip_rate: float | None = None
    examples_per_second: float = 0.0

    def lines(self):
        out = [f"mode: {self.mode}", f"examples: {self.n_examples}"]
        if self.accuracy is not None:
            out.append(f"accuracy: {self.accuracy:.6f}")
        for k in sorted(self.precision_at):
            out.append(f"precision_at_{k}: {self.precision_at[k]:.6f}")
        if self.tree_recall_train is not None:
            out.append(f"tree_recall_train: {self.tree_recall_train:.6f}")
        if self.tree_recall_test is not None:
            out.append(f"tree_recall_test: {self.tree_recall_test:.6f}")
        if self.skip_rate is not None:
            out.append(f"skip_rate: {self.skip_rate:.6f}")
        out.append(f"examples_per_second: {self.examples_per_second:.1f}")
        return out


@dataclass
class BenchmarkResult:
    examples_per_second: float
    per_repetition: list
    mean_depth: float
    mean_candidates: float


def split_diagnostics(router, ds):
    """Purity and balance of one router's split on a multiclass dataset."""
    if ds.mode != "multiclass":
        raise ValueError("purity is defined for multiclass datasets only")
    proj = spmv(ds.features, router.weight)
    go_right = proj > router.bias
    w = ds.weights
    total = float(w.sum())
    if total <= 0:
        raise ValueError("dataset must have positive total weight")
    cls = ds.class_ids()
    right_m = float(w[go_right].sum())
    left_m = total - right_m
    per_right = np.bincount(cls[go_right], weights=w[go_right], minlength=ds.c)
    per_total = np.bincount(cls, weights=w, minlength=ds.c)
    present = per_total > 0
    frac_right = per_right[present] / per_total[present]
    f = np.maximum(frac_right, 1.0 - frac_right)
    return SplitDiagnostics(
        purity=float((per_total[present] / total) @ f),
        purity_macro=float(f.mean()),
        balance=max(right_m, left_m) / total,
        left_mass=left_m,
        right_mass=right_m,
    )


def purity_balance(router, ds):
    """(purity, balance) of a split; purity is frequency-weighted."""
    diag = split_diagnostics(router, ds)
    return diag.purity, diag.balance


def _precision_at(rankings, labels, ks):
    """Mean over examples of |true labels in top-j| / j."""
    sums = {k: 0.0 for k in ks}
    n = len(rankings)
    for i, ranked in enumerate(rankings):
        true = set(int(x) for x in labels.row(i).cols)
        for k in ks:
            top = ranked[:k]
            sums[k] += sum(1 for x in top if int(x) in true) / k
    return {k: (sums[k] / n if n else 0.0) for k in ks}


def evaluate(model, tree, test, train=None, ks=(1, 3, 5)):
    """Score a model+tree on a test set; timing excludes I/O and routing
    diagnostics."""
    t0 = time.perf_counter()
    rankings = predict_batch(model, tree, test.features)
    elapsed = time.perf_counter() - t0

    report = EvalReport(mode=test.mode, n_examples=test.n)
    report.examples_per_second = test.n / elapsed if elapsed > 0 else float("inf")
    if test.mode == "multiclass":
        cls = test.class_ids()
        top1 = np.asarray(
            [int(r[0]) if len(r) else -1 for r in rankings], dtype=np.int64
        )
        report.accuracy = float(np.mean(top1 == cls)) if test.n else 0.0
        report.precision_at = _precision_at(rankings, test.labels, (1,))
    else:
        report.precision_at = _precision_at(rankings, test.labels, ks)
    report.tree_recall_test = estimate_recall(tree, test, routing="deterministic")
    if train is not None:
        report.tree_recall_train = estimate_recall(tree, train, routing="deterministic")
    if model.train_report is not None:
        report.skip_rate = model.train_report.skip_rate
    return report


def benchmark_inference(model, tree, ds, repetitions=3):
    """Median throughput of full deterministic-routing prediction passes.

    A warm-up pass is excluded; a monotonic clock times each repetition.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    predict_batch(model, tree, ds.features)  # warm-up
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        predict_batch(model, tree, ds.features)
        times.append(time.perf_counter() - t0)
    leaf_ids = route_deterministic_batch(tree, ds.features)
    depths = np.asarray([tree.nodes[i].depth for i in leaf_ids], dtype=np.float64)
    cand = np.asarray(
        [len(model.leaf_candidates[int(i)]) for i in leaf_ids], dtype=np.float64
    )
    med = float(np.median(times))
    return BenchmarkResult(
        examples_per_second=ds.n / med if med > 0 else float("inf"),
        per_repetition=times,
        mean_depth=float(depths.mean()) if len(depths) else 0.0,
        mean_candidates=float(cand.mean()) if len(cand) else 0.0,
    )
