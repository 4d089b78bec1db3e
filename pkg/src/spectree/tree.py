"""Label tree construction, routing, and serialization.

The tree is built top-down. Each node solves the spectral routing problem on
its fractional example set, splits at the weighted median, and propagates
expected example counts to both children: an example with weight ``q`` and
right-branch probability ``p`` contributes ``q * p`` to the right child and
``q - q * p`` to the left child, with a child assignment dropped when its
new weight falls below ``prune_eps`` times the incoming weight. Recursion
stops on depth, on reaching the candidate-recall target, on thin mass, on a
single surviving label, or on solver degeneracy. Each leaf keeps the top-k
labels of its weighted label histogram as its candidate set.

Inference routes deterministically (strict ``>`` goes right, so a projection
exactly on the bias goes left); training of downstream classifiers samples
paths using the per-node Gaussian routing probabilities.
"""

import json
import math
import struct
import zlib
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr

from . import _backend
from .sparsecore import spmv
from .spectral import (
    DegenerateNodeError,
    RouterSolution,
    SolverParams,
    node_sigma,
    solve_node,
)

TREE_MAGIC = b"SPTR"
TREE_VERSION = 1

ROUTING_MODES = ("fractional", "deterministic")


class ArtifactFormatError(ValueError):
    """Corrupt, truncated, or unsupported artifact bytes."""


@dataclass(frozen=True)
class TreeConfig:
    """Construction hyperparameters.

    ``leaf_budget`` caps each leaf's candidate list; ``recall_target`` stops
    recursion once a node's own top-k candidates reach that recall on its
    fractional mass; ``routing`` selects fractional (default) or hard
    sign-based construction.
    """

    max_depth: int
    leaf_budget: int
    recall_target: float = 1.0
    prune_eps: float = 1e-3
    min_node_mass: float = 1.0
    solver: SolverParams = field(default_factory=SolverParams)
    routing: str = "fractional"

    def __post_init__(self):
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.leaf_budget < 1:
            raise ValueError("leaf_budget must be >= 1")
        if not 0.0 <= self.recall_target <= 1.0:
            raise ValueError("recall_target must be in [0, 1]")
        if not 0.0 <= self.prune_eps < 1.0:
            raise ValueError("prune_eps must be in [0, 1)")
        if self.min_node_mass < 0:
            raise ValueError("min_node_mass must be nonnegative")
        if self.routing not in ROUTING_MODES:
            raise ValueError(f"routing must be one of {ROUTING_MODES}")


@dataclass(eq=False)
class TreeNode:
    node_id: int
    kind: str  # "internal" | "leaf"
    depth: int
    router: RouterSolution | None = None
    sigma: float | None = None
    left: int | None = None
    right: int | None = None
    candidates: np.ndarray | None = None  # class ids, frequency-descending
    candidate_weights: np.ndarray | None = None


@dataclass(eq=False)
class LabelTree:
    """Binary routing tree with per-leaf candidate label sets."""

    nodes: list
    root_id: int
    n_features: int
    n_labels: int
    leaf_budget: int
    mode: str

    def __post_init__(self):
        self._arrays = None

    def node(self, node_id):
        return self.nodes[node_id]

    def leaves(self):
        return [n for n in self.nodes if n.kind == "leaf"]

    def routing_arrays(self):
        """Flat arrays for batch descent (cached; the tree is immutable)."""
        if self._arrays is None:
            n = len(self.nodes)
            kind = np.zeros(n, dtype=np.uint8)
            left = np.full(n, -1, dtype=np.int64)
            right = np.full(n, -1, dtype=np.int64)
            bias = np.zeros(n)
            routers = np.zeros((n, self.n_features))
            for nd in self.nodes:
                if nd.kind == "leaf":
                    kind[nd.node_id] = 1
                else:
                    left[nd.node_id] = nd.left
                    right[nd.node_id] = nd.right
                    bias[nd.node_id] = nd.router.bias
                    routers[nd.node_id] = nd.router.weight
            self._arrays = (kind, left, right, bias, routers)
        return self._arrays


@dataclass
class NodeRecord:
    """Per-node diagnostics captured during construction."""

    node_id: int
    depth: int
    kind: str
    mass: float
    examples: int
    distinct_labels: int
    recall_at_k: float
    stop: str | None = None
    eigenvalue: float | None = None
    sigma: float | None = None
    balance: float | None = None
    purity: float | None = None
    pruned_mass: float = 0.0
    left: int | None = None
    right: int | None = None
    candidates: int | None = None

    def to_json(self):
        return json.dumps(self.__dict__, sort_keys=True)


@dataclass
class BuildReport:
    records: list
    prune_eps: float
    pruned_mass_total: float
    n_nodes: int
    n_leaves: int
    example_avg_depth: float

    def to_jsonl(self):
        return "\n".join(r.to_json() for r in self.records) + "\n"


def _label_histogram(Y_sub, weights, n_labels):
    if Y_sub.nnz == 0:
        return np.zeros(n_labels)
    return np.bincount(
        Y_sub.col_indices,
        weights=np.repeat(weights, Y_sub.row_nnz()),
        minlength=n_labels,
    )


def _top_k(hist, k):
    """Top-k label ids by weight, descending, ties broken by ascending id."""
    order = np.lexsort((np.arange(hist.shape[0]), -hist))
    order = order[hist[order] > 0][:k]
    return order.astype(np.int64), hist[order]


def _node_recall(Y_sub, weights, top_ids, mode, n_labels):
    """Recall of a candidate set on a node's own weighted examples."""
    if weights.size == 0:
        return 0.0
    lut = np.zeros(n_labels, dtype=bool)
    lut[top_ids] = True
    if mode == "multiclass":
        member = lut[Y_sub.col_indices]
        total = float(weights.sum())
        return float(weights[member].sum() / total) if total > 0 else 0.0
    nnz = Y_sub.row_nnz()
    has = nnz > 0
    if not np.any(has):
        return 0.0
    hits = np.bincount(
        np.repeat(np.arange(Y_sub.n_rows, dtype=np.int64), nnz),
        weights=lut[Y_sub.col_indices].astype(np.float64),
        minlength=Y_sub.n_rows,
    )
    frac = np.divide(hits, nnz, out=np.zeros(Y_sub.n_rows), where=has)
    denom = float(weights[has].sum())
    return float((weights[has] @ frac[has]) / denom) if denom > 0 else 0.0


def _split_stats(proj, bias, weights, cls, mode, n_labels):
    """Deterministic balance (and multiclass purity) of a split."""
    go_right = proj > bias
    total = float(weights.sum())
    right_m = float(weights[go_right].sum())
    balance = max(right_m, total - right_m) / total if total > 0 else 0.0
    purity = None
    if mode == "multiclass":
        per_right = np.bincount(cls[go_right], weights=weights[go_right], minlength=n_labels)
        per_total = np.bincount(cls, weights=weights, minlength=n_labels)
        present = per_total > 0
        frac_right = per_right[present] / per_total[present]
        f = np.maximum(frac_right, 1.0 - frac_right)
        purity = float((per_total[present] / total) @ f) if total > 0 else 0.0
    return balance, purity


def build_tree(ds, cfg):
    """Recursively construct a label tree; returns (LabelTree, BuildReport).

    Stop conditions, checked in order: depth cap, candidate recall target,
    node mass below ``min_node_mass``, fewer than two distinct labels, and
    solver degeneracy.
    """
    if ds.n == 0 or float(ds.weights.sum()) <= 0:
        raise ValueError("dataset must be nonempty with positive total weight")
    X, Y = ds.features, ds.labels
    c = ds.c
    root_ids = np.nonzero(ds.weights > 0)[0].astype(np.int64)
    root_w = ds.weights[root_ids].copy()

    nodes = {}
    records = {}
    queue = deque([(0, 0, root_ids, root_w)])
    next_id = 1

    while queue:
        node_id, depth, ids, weights = queue.popleft()
        Y_sub = Y.take_rows(ids)
        mass = math.fsum(weights.tolist())
        hist = _label_histogram(Y_sub, weights, c)
        distinct = int(np.count_nonzero(hist > 0))
        top_ids, top_w = _top_k(hist, cfg.leaf_budget)
        recall = _node_recall(Y_sub, weights, top_ids, ds.mode, c)

        stop = None
        if depth >= cfg.max_depth:
            stop = "max_depth"
        elif recall >= cfg.recall_target:
            stop = "recall_target"
        elif mass < cfg.min_node_mass:
            stop = "min_mass"
        elif distinct < 2:
            stop = "single_label"

        router = None
        if stop is None:
            X_sub = X.take_rows(ids)
            node_seed = int(
                np.random.SeedSequence(
                    [cfg.solver.seed & 0xFFFFFFFFFFFFFFFF, node_id]
                ).generate_state(1)[0]
            )
            try:
                router = solve_node(
                    X_sub, Y_sub, weights, ds.mode, replace(cfg.solver, seed=node_seed)
                )
            except DegenerateNodeError:
                stop = "degenerate"

        rec = NodeRecord(
            node_id=node_id,
            depth=depth,
            kind="leaf" if stop else "internal",
            mass=mass,
            examples=len(ids),
            distinct_labels=distinct,
            recall_at_k=recall,
        )

        if stop is not None:
            nodes[node_id] = TreeNode(
                node_id=node_id,
                kind="leaf",
                depth=depth,
                candidates=top_ids,
                candidate_weights=top_w,
            )
            rec.stop = stop
            rec.candidates = len(top_ids)
            records[node_id] = rec
            continue

        sigma = node_sigma(router)
        proj = spmv(X_sub, router.weight)
        cls = Y_sub.col_indices if ds.mode == "multiclass" else None
        balance, purity = _split_stats(proj, router.bias, weights, cls, ds.mode, c)

        if cfg.routing == "fractional":
            p_right = ndtr((proj - router.bias) / sigma)
            right_w = weights * p_right
            left_w = weights - right_w
        else:
            go_right = proj > router.bias
            right_w = np.where(go_right, weights, 0.0)
            left_w = weights - right_w

        floor = cfg.prune_eps * weights
        keep_left = (left_w > 0) & (left_w >= floor)
        keep_right = (right_w > 0) & (right_w >= floor)
        pruned = math.fsum(np.concatenate([left_w[~keep_left], right_w[~keep_right]]).tolist())

        left_id, right_id = next_id, next_id + 1
        next_id += 2
        queue.append((left_id, depth + 1, ids[keep_left], left_w[keep_left]))
        queue.append((right_id, depth + 1, ids[keep_right], right_w[keep_right]))

        nodes[node_id] = TreeNode(
            node_id=node_id,
            kind="internal",
            depth=depth,
            router=router,
            sigma=sigma,
            left=left_id,
            right=right_id,
        )
        rec.eigenvalue = router.eigenvalue
        rec.sigma = sigma
        rec.balance = balance
        rec.purity = purity
        rec.pruned_mass = pruned
        rec.left = left_id
        rec.right = right_id
        records[node_id] = rec

    node_list = [nodes[i] for i in range(next_id)]
    record_list = [records[i] for i in range(next_id)]
    tree = LabelTree(
        nodes=node_list,
        root_id=0,
        n_features=ds.d,
        n_labels=c,
        leaf_budget=cfg.leaf_budget,
        mode=ds.mode,
    )
    leaf_recs = [r for r in record_list if r.kind == "leaf"]
    leaf_mass = math.fsum(r.mass for r in leaf_recs)
    avg_depth = (
        math.fsum(r.mass * r.depth for r in leaf_recs) / leaf_mass if leaf_mass > 0 else 0.0
    )
    report = BuildReport(
        records=record_list,
        prune_eps=cfg.prune_eps,
        pruned_mass_total=math.fsum(r.pruned_mass for r in record_list),
        n_nodes=len(node_list),
        n_leaves=len(leaf_recs),
        example_avg_depth=avg_depth,
    )
    return tree, report


def route_deterministic(tree, row):
    """Route one sparse row by sign; returns (leaf_id, candidate ids).

    Dot products accumulate in the same element order as the construction
    kernels, so an example whose projection equals a node's bias (the median
    example) routes identically everywhere.
    """
    node = tree.nodes[tree.root_id]
    while node.kind == "internal":
        dot = _backend.seq_dot(row.cols, row.vals, node.router.weight)
        node = tree.nodes[node.right if dot > node.router.bias else node.left]
    return node.node_id, node.candidates


def route_deterministic_batch(tree, X):
    """Leaf id reached by every row of a feature matrix."""
    kind, left, right, bias, routers = tree.routing_arrays()
    return _backend.route_batch(
        X.row_offsets,
        X.col_indices,
        X.values,
        kind,
        left,
        right,
        bias,
        routers,
        tree.root_id,
    )


def route_sampled(tree, row, rng):
    """Sample a root-to-leaf path using the Gaussian routing probabilities.

    At each internal node the right branch is taken with probability
    Phi((w.x - b) / sigma); the leaf distribution is the product of the
    per-node probabilities.
    """
    node = tree.nodes[tree.root_id]
    while node.kind == "internal":
        dot = _backend.seq_dot(row.cols, row.vals, node.router.weight)
        p_right = float(ndtr((dot - node.router.bias) / node.sigma))
        node = tree.nodes[node.right if rng.random() < p_right else node.left]
    return node.node_id, node.candidates


def _leaf_fractions(tree, Y, ids, leaf):
    """Per-example fraction of true labels inside a leaf's candidate set."""
    lut = np.zeros(tree.n_labels, dtype=bool)
    if len(leaf.candidates):
        lut[leaf.candidates] = True
    sub = Y.take_rows(ids)
    nnz = sub.row_nnz()
    if tree.mode == "multiclass":
        return lut[sub.col_indices].astype(np.float64)
    hits = np.bincount(
        np.repeat(np.arange(sub.n_rows, dtype=np.int64), nnz),
        weights=lut[sub.col_indices].astype(np.float64),
        minlength=sub.n_rows,
    )
    return np.divide(hits, nnz, out=np.zeros(sub.n_rows), where=nnz > 0)


def _propagate_fractional(tree, X, prune_eps=0.0):
    """Yield (leaf, ids, path_probs); also return per-example pruned mass."""
    n = X.n_rows
    pruned = np.zeros(n)
    out = []
    stack = [(tree.root_id, np.arange(n, dtype=np.int64), np.ones(n))]
    while stack:
        node_id, ids, probs = stack.pop()
        node = tree.nodes[node_id]
        if node.kind == "leaf":
            out.append((node, ids, probs))
            continue
        sub = X.take_rows(ids)
        proj = spmv(sub, node.router.weight)
        p_right = ndtr((proj - node.router.bias) / node.sigma)
        right_p = probs * p_right
        left_p = probs - right_p
        floor = prune_eps * probs
        keep_l = (left_p > 0) & (left_p >= floor)
        keep_r = (right_p > 0) & (right_p >= floor)
        np.add.at(pruned, ids[~keep_l], left_p[~keep_l])
        np.add.at(pruned, ids[~keep_r], right_p[~keep_r])
        stack.append((node.left, ids[keep_l], left_p[keep_l]))
        stack.append((node.right, ids[keep_r], right_p[keep_r]))
    return out, pruned


def path_probabilities(tree, ds, prune_eps=0.0):
    """Per-example (reached, pruned) path-probability totals."""
    reached = np.zeros(ds.n)
    leaves, pruned = _propagate_fractional(tree, ds.features, prune_eps)
    for _, ids, probs in leaves:
        np.add.at(reached, ids, probs)
    return reached, pruned


def estimate_recall(tree, ds, routing="fractional"):
    """Expected candidate-set recall of the tree on a dataset.

    Fractional mode weights each leaf's recall contribution by the example's
    path probability (all paths enumerated, no pruning); deterministic mode
    follows the single sign-based path. Examples are averaged using their
    importance weights; multilabel examples without labels are skipped.
    """
    if ds.d > tree.n_features or ds.c > tree.n_labels:
        raise ValueError("dataset dimensions exceed the tree's")
    if ds.mode != tree.mode:
        raise ValueError("dataset mode differs from the tree's")
    if ds.n == 0:
        return 0.0
    contrib = np.zeros(ds.n)
    if routing == "deterministic":
        leaf_ids = route_deterministic_batch(tree, ds.features)
        for leaf_id in np.unique(leaf_ids):
            ids = np.nonzero(leaf_ids == leaf_id)[0].astype(np.int64)
            contrib[ids] = _leaf_fractions(tree, ds.labels, ids, tree.nodes[leaf_id])
    elif routing == "fractional":
        leaves, _ = _propagate_fractional(tree, ds.features, prune_eps=0.0)
        for leaf, ids, probs in leaves:
            contrib[ids] += probs * _leaf_fractions(tree, ds.labels, ids, leaf)
    else:
        raise ValueError("routing must be 'fractional' or 'deterministic'")
    if ds.mode == "multilabel":
        has = ds.labels.row_nnz() > 0
    else:
        has = np.ones(ds.n, dtype=bool)
    w = ds.weights * has
    total = float(w.sum())
    return float((w @ contrib) / total) if total > 0 else 0.0


# --- binary format ---------------------------------------------------------
#
# All integers little-endian. Layout (version 1):
#   magic   4 bytes  b"SPTR"
#   version u16
#   crc32   u32      of the payload that follows
#   payload:
#     mode        u8   (0 multiclass, 1 multilabel)
#     d, c, k     u64 x 3
#     n_nodes     u64
#     root_id     u64
#     per node, in node-id order:
#       kind u8 (0 internal, 1 leaf), depth u32
#       internal: left i64, right i64, bias f64, sigma f64,
#                 eigenvalue f64, mass f64, iterations u32, converged u8,
#                 storage u8 (0 dense: d f64 | 1 sparse: u64 nnz, i64 x nnz,
#                 f64 x nnz)
#       leaf:     u64 n_cand, i64 x n_cand class ids, f64 x n_cand weights

_MODE_CODE = {"multiclass": 0, "multilabel": 1}
_MODE_NAME = {v: k for k, v in _MODE_CODE.items()}


class _Reader:
    def __init__(self, buf, offset=0):
        self.buf = buf
        self.off = offset

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.off + size > len(self.buf):
            raise ArtifactFormatError(f"truncated input at offset {self.off}")
        vals = struct.unpack_from(fmt, self.buf, self.off)
        self.off += size
        return vals

    def take_array(self, dtype, count):
        size = np.dtype(dtype).itemsize * count
        if self.off + size > len(self.buf):
            raise ArtifactFormatError(f"truncated input at offset {self.off}")
        arr = np.frombuffer(self.buf, dtype=np.dtype(dtype).newbyteorder("<"), count=count, offset=self.off)
        self.off += size
        return arr.astype(dtype)


def _pack_array(out, arr, dtype):
    out += np.ascontiguousarray(arr, dtype=dtype).astype(np.dtype(dtype).newbyteorder("<")).tobytes()


def serialize_tree(tree):
    """Serialize a LabelTree to versioned, checksummed bytes."""
    payload = bytearray()
    payload += struct.pack(
        "<BQQQQQ",
        _MODE_CODE[tree.mode],
        tree.n_features,
        tree.n_labels,
        tree.leaf_budget,
        len(tree.nodes),
        tree.root_id,
    )
    for node in tree.nodes:
        if node.kind == "internal":
            payload += struct.pack("<BI", 0, node.depth)
            r = node.router
            payload += struct.pack(
                "<qqddddIB",
                node.left,
                node.right,
                r.bias,
                node.sigma,
                r.eigenvalue,
                r.mass,
                r.iterations,
                1 if r.converged else 0,
            )
            nz = np.nonzero(r.weight)[0]
            if 2 * len(nz) < tree.n_features:
                payload += struct.pack("<BQ", 1, len(nz))
                _pack_array(payload, nz, np.int64)
                _pack_array(payload, r.weight[nz], np.float64)
            else:
                payload += struct.pack("<B", 0)
                _pack_array(payload, r.weight, np.float64)
        else:
            payload += struct.pack("<BI", 1, node.depth)
            payload += struct.pack("<Q", len(node.candidates))
            _pack_array(payload, node.candidates, np.int64)
            _pack_array(payload, node.candidate_weights, np.float64)
    head = TREE_MAGIC + struct.pack("<HI", TREE_VERSION, zlib.crc32(payload))
    return head + bytes(payload)


def deserialize_tree(data):
    """Parse tree bytes; rejects bad magic, versions, checksums, truncation."""
    if len(data) < 10:
        raise ArtifactFormatError("truncated input at offset 0")
    if data[:4] != TREE_MAGIC:
        raise ArtifactFormatError("bad magic at offset 0")
    (version, crc) = struct.unpack_from("<HI", data, 4)
    if version != TREE_VERSION:
        raise ArtifactFormatError(f"unsupported tree format version {version}")
    payload = data[10:]
    if zlib.crc32(payload) != crc:
        raise ArtifactFormatError("checksum mismatch (corrupt payload)")
    rd = _Reader(data, 10)
    mode_code, d, c, k, n_nodes, root_id = rd.take("<BQQQQQ")
    if mode_code not in _MODE_NAME:
        raise ArtifactFormatError(f"unknown mode code {mode_code} at offset 10")
    nodes = []
    for node_id in range(n_nodes):
        kind, depth = rd.take("<BI")
        if kind == 0:
            left, right, bias, sigma, eigenvalue, mass, iterations, converged = rd.take(
                "<qqddddIB"
            )
            (storage,) = rd.take("<B")
            if storage == 1:
                (nnz,) = rd.take("<Q")
                idx = rd.take_array(np.int64, nnz)
                vals = rd.take_array(np.float64, nnz)
                weight = np.zeros(d)
                weight[idx] = vals
            elif storage == 0:
                weight = rd.take_array(np.float64, d)
            else:
                raise ArtifactFormatError(f"unknown router storage {storage} at offset {rd.off}")
            router = RouterSolution(
                weight=weight,
                bias=bias,
                eigenvalue=eigenvalue,
                mass=mass,
                iterations=iterations,
                converged=bool(converged),
            )
            nodes.append(
                TreeNode(
                    node_id=node_id,
                    kind="internal",
                    depth=depth,
                    router=router,
                    sigma=sigma,
                    left=left,
                    right=right,
                )
            )
        elif kind == 1:
            (n_cand,) = rd.take("<Q")
            cand = rd.take_array(np.int64, n_cand)
            cw = rd.take_array(np.float64, n_cand)
            nodes.append(
                TreeNode(
                    node_id=node_id,
                    kind="leaf",
                    depth=depth,
                    candidates=cand,
                    candidate_weights=cw,
                )
            )
        else:
            raise ArtifactFormatError(f"unknown node kind {kind} at offset {rd.off}")
    if rd.off != len(data):
        raise ArtifactFormatError(f"trailing bytes at offset {rd.off}")
    return LabelTree(
        nodes=nodes,
        root_id=int(root_id),
        n_features=int(d),
        n_labels=int(c),
        leaf_budget=int(k),
        mode=_MODE_NAME[mode_code],
    )
