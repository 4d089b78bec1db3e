"""Candidate-set-restricted classifiers over a label tree.

The same underlying linear model is shared by every leaf; per-leaf bias
tables (one bias per candidate class per leaf) give each leaf a cheap,
node-specific adjustment. Two parameterizations are supported:

* full linear (``rank=0``): a shared d x c weight matrix;
* low-rank (``rank=r``): a shared d x r input map, with the r x |C| output
  weights either shared globally or owned per leaf (``node_output_weights``).

Training is SGD with one sampled root-to-leaf path per example visit; the
candidate set of the sampled leaf bounds all score and gradient work, so a
step touches only the parameters reachable from that leaf (plus the shared
input map in low-rank mode). Multiclass uses a softmax restricted to the
candidate set and skips (and counts) visits whose true class was filtered
out; multilabel uses independent logistic losses over the candidate set
only. Inference routes deterministically.

Deterministic mode consumes randomness in a documented order: first the
weight initialization draws, then per epoch one permutation of the example
order, then per example one uniform draw per internal node on its sampled
path. Given a seed, retraining is bit-for-bit reproducible.
"""

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .tree import (
    ArtifactFormatError,
    route_deterministic,
    route_deterministic_batch,
    route_sampled,
)

MODEL_MAGIC = b"SPMD"
MODEL_VERSION = 1

MODEL_MODES = ("multiclass_softmax", "multilabel_ilr")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    learning_rate: float = 0.1
    lr_decay: float = 0.0
    seed: int = 0
    rank: int = 0  # 0 = full linear
    node_output_weights: bool = False
    l2: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.lr_decay < 0 or self.l2 < 0 or self.rank < 0:
            raise ValueError("lr_decay, l2 and rank must be nonnegative")
        if self.node_output_weights and self.rank == 0:
            raise ValueError("node_output_weights requires a low-rank model")


@dataclass
class TrainReport:
    epochs: int
    visits: int = 0
    skips: int = 0
    losses: list = field(default_factory=list)

    @property
    def skip_rate(self):
        return self.skips / self.visits if self.visits else 0.0


class ClassifierModel:
    """Shared weights plus per-leaf bias tables over a tree's candidate sets.

    ``leaf_candidates[leaf_id]`` holds that leaf's candidate class ids in
    ascending order, and ``node_bias[leaf_id]`` / ``node_output[leaf_id]``
    are aligned to it.
    """

    def __init__(self, mode, n_features, n_labels, rank, node_output_weights, leaf_candidates):
        if mode not in MODEL_MODES:
            raise ValueError(f"mode must be one of {MODEL_MODES}")
        self.mode = mode
        self.n_features = n_features
        self.n_labels = n_labels
        self.rank = rank
        self.node_output_weights = node_output_weights
        self.leaf_candidates = leaf_candidates  # leaf_id -> ascending class ids
        self.W = None  # (d, c) when rank == 0
        self.U = None  # (d, r) when rank > 0
        self.V = None  # (r, c) shared, or None when per-leaf
        self.node_output = {}  # leaf_id -> (r, n_cand)
        self.global_bias = np.zeros(n_labels)
        self.node_bias = {lid: np.zeros(len(c)) for lid, c in leaf_candidates.items()}
        self.train_report = None
        self._score_cache = {}

    def clear_score_cache(self):
        """Drop cached per-leaf scoring blocks (call after mutating weights)."""
        self._score_cache = {}

    def _leaf_scoring_block(self, leaf_id):
        """Contiguous per-leaf weight block and combined bias, cached.

        predict_batch serves from this cache, so its cost depends on the
        candidate-set size and depth only, not on the total class count.
        """
        block = self._score_cache.get(leaf_id)
        if block is None:
            cand = self.leaf_candidates[leaf_id]
            bias = self.global_bias[cand] + self.node_bias[leaf_id]
            if self.rank == 0:
                M = np.ascontiguousarray(self.W[:, cand])
            elif self.node_output_weights:
                M = np.ascontiguousarray(self.node_output[leaf_id])
            else:
                M = np.ascontiguousarray(self.V[:, cand])
            block = (M, bias)
            self._score_cache[leaf_id] = block
        return block

    @classmethod
    def initialize(cls, mode, tree, cfg, rng):
        """Seeded-Gaussian weight init (scale 1/sqrt(fan-in)); zero biases."""
        leaf_candidates = {
            leaf.node_id: np.sort(leaf.candidates).astype(np.int64) for leaf in tree.leaves()
        }
        model = cls(
            mode,
            tree.n_features,
            tree.n_labels,
            cfg.rank,
            cfg.node_output_weights,
            leaf_candidates,
        )
        d, c, r = tree.n_features, tree.n_labels, cfg.rank
        if r == 0:
            model.W = rng.standard_normal((d, c)) / np.sqrt(max(d, 1))
        else:
            model.U = rng.standard_normal((d, r)) / np.sqrt(max(d, 1))
            if cfg.node_output_weights:
                for lid in sorted(leaf_candidates):
                    n_cand = len(leaf_candidates[lid])
                    model.node_output[lid] = rng.standard_normal((r, n_cand)) / np.sqrt(r)
            else:
                model.V = rng.standard_normal((r, c)) / np.sqrt(r)
        return model

    # -- scoring ------------------------------------------------------------

    def candidate_scores(self, leaf_id, row):
        """Pre-activations for a leaf's candidates (ascending class order)."""
        cand = self.leaf_candidates[leaf_id]
        if self.rank == 0:
            if len(row.cols):
                s = row.vals @ self.W[np.ix_(row.cols, cand)]
            else:
                s = np.zeros(len(cand))
        else:
            h = row.vals @ self.U[row.cols] if len(row.cols) else np.zeros(self.rank)
            V = self.node_output[leaf_id] if self.node_output_weights else self.V[:, cand]
            s = h @ V
        return s + self.global_bias[cand] + self.node_bias[leaf_id]

    def parameter_bytes(self):
        """Canonical byte image of all parameters (for determinism checks)."""
        return serialize_model(self)

    def validate_finite(self):
        """All parameters must be finite; SGD divergence breaks this."""
        arrays = [self.global_bias]
        arrays.extend(self.node_bias.values())
        for arr in (self.W, self.U, self.V):
            if arr is not None:
                arrays.append(arr)
        arrays.extend(self.node_output.values())
        for arr in arrays:
            if not np.all(np.isfinite(arr)):
                raise ValueError(
                    "model parameters are not finite; the SGD run diverged "
                    "(reduce the learning rate or add l2)"
                )


def restricted_softmax(scores):
    """Softmax over a candidate set only; max-shifted for stability."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("restricted_softmax of an empty candidate set")
    e = np.exp(scores - scores.max())
    return e / e.sum()


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def train(ds, tree, cfg, collect_losses=False):
    """Train the restricted classifier with sampled routing.

    Multiclass visits whose true class is missing from the sampled leaf's
    candidate set are skipped and counted (see the returned model's
    ``train_report.skip_rate``). Setting ``collect_losses`` records the
    per-step training loss sequence.
    """
    if ds.d != tree.n_features or ds.c != tree.n_labels:
        raise ValueError("dataset dimensions differ from the tree's")
    if ds.mode != tree.mode:
        raise ValueError("dataset mode differs from the tree's")
    mode = "multiclass_softmax" if ds.mode == "multiclass" else "multilabel_ilr"
    rng = np.random.default_rng(cfg.seed)
    model = ClassifierModel.initialize(mode, tree, cfg, rng)

    report = TrainReport(epochs=cfg.epochs)
    X, Y = ds.features, ds.labels
    cls = ds.labels.col_indices if ds.mode == "multiclass" else None
    t = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(ds.n)
        for i in order:
            row = X.row(i)
            leaf_id, _ = route_sampled(tree, row, rng)
            cand = model.leaf_candidates[leaf_id]
            eta = cfg.learning_rate / (1.0 + cfg.lr_decay * t)
            t += 1
            report.visits += 1
            if ds.mode == "multiclass":
                true = int(cls[i])
                pos = np.searchsorted(cand, true)
                if pos >= len(cand) or cand[pos] != true:
                    report.skips += 1
                    continue
                s = model.candidate_scores(leaf_id, row)
                shifted = s - s.max()
                e = np.exp(shifted)
                z = e.sum()
                if collect_losses:
                    report.losses.append(float(np.log(z) - shifted[pos]))
                g = e / z
                g[pos] -= 1.0
            else:
                lab = Y.row(i)
                targets = np.isin(cand, lab.cols).astype(np.float64)
                s = model.candidate_scores(leaf_id, row)
                p = _sigmoid(s)
                if collect_losses:
                    eps_p = np.clip(p, 1e-300, 1.0 - 1e-16)
                    loss = -(targets * np.log(eps_p) + (1 - targets) * np.log1p(-eps_p))
                    report.losses.append(float(loss.sum()))
                g = p - targets
            _apply_step(model, leaf_id, cand, row, g, eta, cfg.l2)
    model.validate_finite()
    model.train_report = report
    return model


def _apply_step(model, leaf_id, cand, row, g, eta, l2):
    """One SGD step; touches only parameters reachable from the leaf."""
    if model.rank == 0:
        if len(row.cols):
            block = model.W[np.ix_(row.cols, cand)]
            grad_w = np.outer(row.vals, g)
            if l2:
                grad_w += l2 * block
            model.W[np.ix_(row.cols, cand)] = block - eta * grad_w
    else:
        h = row.vals @ model.U[row.cols] if len(row.cols) else np.zeros(model.rank)
        V = model.node_output[leaf_id] if model.node_output_weights else model.V[:, cand]
        dh = V @ g
        grad_v = np.outer(h, g)
        if l2:
            grad_v += l2 * V
        if model.node_output_weights:
            model.node_output[leaf_id] -= eta * grad_v
        else:
            model.V[:, cand] -= eta * grad_v
        if len(row.cols):
            grad_u = np.outer(row.vals, dh)
            if l2:
                grad_u += l2 * model.U[row.cols]
            model.U[row.cols] -= eta * grad_u
    model.global_bias[cand] -= eta * g
    model.node_bias[leaf_id] -= eta * g


def predict(model, tree, row):
    """Rank a sparse row's candidate classes; cost independent of the total
    number of classes given the candidate-set size and tree depth.

    Multiclass: position 0 is the argmax of the restricted softmax.
    Multilabel: candidates ordered by descending logistic score. Ties break
    toward the smaller class id.
    """
    leaf_id, _ = route_deterministic(tree, row)
    cand = model.leaf_candidates[leaf_id]
    if len(cand) == 0:
        return np.zeros(0, dtype=np.int64)
    s = model.candidate_scores(leaf_id, row)
    order = np.argsort(-s, kind="stable")  # stable: ties by ascending class id
    return cand[order]


def predict_batch(model, tree, X):
    """Rankings for every row of a feature matrix (leaf-grouped scoring)."""
    from . import _backend

    leaf_ids = route_deterministic_batch(tree, X)
    rankings = [None] * X.n_rows
    order = np.argsort(leaf_ids, kind="stable")
    sorted_ids = leaf_ids[order]
    starts = np.nonzero(np.r_[True, sorted_ids[1:] != sorted_ids[:-1]])[0]
    bounds = np.append(starts, len(sorted_ids))
    for a, b in zip(bounds[:-1], bounds[1:]):
        ids = order[a:b]
        leaf_id = sorted_ids[a]
        cand = model.leaf_candidates[int(leaf_id)]
        if len(cand) == 0:
            empty = np.zeros(0, dtype=np.int64)
            for i in ids.tolist():
                rankings[i] = empty
            continue
        M, bias = model._leaf_scoring_block(int(leaf_id))
        if model.rank == 0:
            scores = _backend.csr_matmul_dense_rows(
                X.row_offsets, X.col_indices, X.values, ids, M
            )
        else:
            H = _backend.csr_matmul_dense_rows(
                X.row_offsets, X.col_indices, X.values, ids, model.U
            )
            scores = H @ M
        scores = scores + bias
        rank_order = np.argsort(-scores, axis=1, kind="stable")
        ranked = cand[rank_order]
        for i, row_ranking in zip(ids.tolist(), list(ranked)):
            rankings[i] = row_ranking
    return rankings


# --- binary format ---------------------------------------------------------
#
# magic b"SPMD", version u16, crc32 u32 of payload; payload:
#   mode u8 (0 softmax, 1 ilr), d u64, c u64, rank u64,
#   node_output_weights u8, n_leaves u64
#   per leaf (ascending leaf id): leaf_id u64, n_cand u64, cand i64 x n_cand
#   weights: rank == 0 -> W f64 x (d*c) row-major
#            rank > 0  -> U f64 x (d*r); shared V flag handled by
#            node_output_weights: 0 -> V f64 x (r*c), 1 -> per leaf
#            (ascending leaf id) f64 x (r*n_cand)
#   global_bias f64 x c
#   node-bias table: n_entries u64, then (leaf_id u32, class_id u32, f64)
#   triples in ascending (leaf, class) order


def serialize_model(model):
    model.validate_finite()
    payload = bytearray()
    mode_code = 0 if model.mode == "multiclass_softmax" else 1
    leaf_ids = sorted(model.leaf_candidates)
    payload += struct.pack(
        "<BQQQBQ",
        mode_code,
        model.n_features,
        model.n_labels,
        model.rank,
        1 if model.node_output_weights else 0,
        len(leaf_ids),
    )
    for lid in leaf_ids:
        cand = model.leaf_candidates[lid]
        payload += struct.pack("<QQ", lid, len(cand))
        payload += np.ascontiguousarray(cand, dtype="<i8").tobytes()
    if model.rank == 0:
        payload += np.ascontiguousarray(model.W, dtype="<f8").tobytes()
    else:
        payload += np.ascontiguousarray(model.U, dtype="<f8").tobytes()
        if model.node_output_weights:
            for lid in leaf_ids:
                payload += np.ascontiguousarray(model.node_output[lid], dtype="<f8").tobytes()
        else:
            payload += np.ascontiguousarray(model.V, dtype="<f8").tobytes()
    payload += np.ascontiguousarray(model.global_bias, dtype="<f8").tobytes()
    entries = []
    for lid in leaf_ids:
        for j, class_id in enumerate(model.leaf_candidates[lid]):
            entries.append((lid, int(class_id), float(model.node_bias[lid][j])))
    payload += struct.pack("<Q", len(entries))
    for lid, class_id, value in entries:
        payload += struct.pack("<IId", lid, class_id, value)
    head = MODEL_MAGIC + struct.pack("<HI", MODEL_VERSION, zlib.crc32(payload))
    return head + bytes(payload)


def deserialize_model(data):
    if len(data) < 10:
        raise ArtifactFormatError("truncated input at offset 0")
    if data[:4] != MODEL_MAGIC:
        raise ArtifactFormatError("bad magic at offset 0")
    version, crc = struct.unpack_from("<HI", data, 4)
    if version != MODEL_VERSION:
        raise ArtifactFormatError(f"unsupported model format version {version}")
    payload = data[10:]
    if zlib.crc32(payload) != crc:
        raise ArtifactFormatError("checksum mismatch (corrupt payload)")

    off = 10

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(data):
            raise ArtifactFormatError(f"truncated input at offset {off}")
        vals = struct.unpack_from(fmt, data, off)
        off += size
        return vals

    def take_f64(count, shape=None):
        nonlocal off
        size = 8 * count
        if off + size > len(data):
            raise ArtifactFormatError(f"truncated input at offset {off}")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64)
        off += size
        return arr.reshape(shape) if shape else arr

    def take_i64(count):
        nonlocal off
        size = 8 * count
        if off + size > len(data):
            raise ArtifactFormatError(f"truncated input at offset {off}")
        arr = np.frombuffer(data, dtype="<i8", count=count, offset=off).astype(np.int64)
        off += size
        return arr

    mode_code, d, c, rank, now, n_leaves = take("<BQQQBQ")
    if mode_code not in (0, 1):
        raise ArtifactFormatError(f"unknown mode code {mode_code} at offset 10")
    leaf_candidates = {}
    for _ in range(n_leaves):
        lid, n_cand = take("<QQ")
        leaf_candidates[int(lid)] = take_i64(n_cand)
    model = ClassifierModel(
        "multiclass_softmax" if mode_code == 0 else "multilabel_ilr",
        int(d),
        int(c),
        int(rank),
        bool(now),
        leaf_candidates,
    )
    if rank == 0:
        model.W = take_f64(d * c, shape=(d, c))
    else:
        model.U = take_f64(d * rank, shape=(d, rank))
        if now:
            for lid in sorted(leaf_candidates):
                n_cand = len(leaf_candidates[lid])
                model.node_output[lid] = take_f64(rank * n_cand, shape=(rank, n_cand))
        else:
            model.V = take_f64(rank * c, shape=(rank, c))
    model.global_bias = take_f64(c)
    (n_entries,) = take("<Q")
    for _ in range(n_entries):
        lid, class_id, value = take("<IId")
        cand = leaf_candidates.get(int(lid))
        if cand is None:
            raise ArtifactFormatError(f"bias entry for unknown leaf {lid} at offset {off}")
        pos = int(np.searchsorted(cand, class_id))
        if pos >= len(cand) or cand[pos] != class_id:
            raise ArtifactFormatError(
                f"bias entry for class {class_id} outside leaf {lid}'s candidates"
            )
        model.node_bias[int(lid)][pos] = value
    if off != len(data):
        raise ArtifactFormatError(f"trailing bytes at offset {off}")
    return model
