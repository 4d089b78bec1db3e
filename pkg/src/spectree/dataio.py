"""Dataset parsing, preprocessing, and synthetic corpus generation.

On-disk format is SVMLight-style text with comma-separated multilabel
support::

    label[,label]* idx:val [idx:val]*

Feature indices are 1-based on disk and strictly increasing per line; labels
are 0-based nonnegative integers. ``#`` begins a comment line, and the
optional header ``#d <int>`` pins the feature dimension so that train and
test files stay aligned.
"""

import io
from dataclasses import dataclass

import numpy as np

from .sparsecore import SparseMatrix, as_dense_vector

MODES = ("multiclass", "multilabel")

# FNV-1a, 32-bit. Published offset basis / prime; see the test vectors in
# tests/test_dataio.py (e.g. fnv1a32(b"") == 0x811c9dc5).
_FNV_OFFSET = 0x811C9DC5
_FNV_PRIME = 0x01000193


def fnv1a32(data):
    """FNV-1a 32-bit hash of a byte string."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFF
    return h


class Dataset:
    """Features + binary labels + task mode + per-example importance weights."""

    __slots__ = ("features", "labels", "mode", "weights")

    def __init__(self, features, labels, mode, weights=None, validate=True):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.features = features
        self.labels = labels
        self.mode = mode
        if weights is None:
            weights = np.ones(features.n_rows)
        self.weights = as_dense_vector(weights, length=features.n_rows, name="weights").copy()
        self.weights.setflags(write=False)
        if validate:
            self._validate()

    def _validate(self):
        if self.labels.n_rows != self.features.n_rows:
            raise ValueError("features and labels row counts differ")
        if self.labels.nnz and not np.all(self.labels.values == 1.0):
            raise ValueError("label values must all be 1.0")
        if self.weights.size and self.weights.min() < 0:
            raise ValueError("importance weights must be nonnegative")
        if self.mode == "multiclass" and not np.all(self.labels.row_nnz() == 1):
            raise ValueError("multiclass datasets require exactly one label per row")

    @property
    def n(self):
        return self.features.n_rows

    @property
    def d(self):
        return self.features.n_cols

    @property
    def c(self):
        return self.labels.n_cols

    def class_ids(self):
        """Per-row class id (multiclass only)."""
        if self.mode != "multiclass":
            raise ValueError("class_ids is only defined for multiclass datasets")
        return self.labels.col_indices

    def summary(self):
        s = self.labels.nnz / self.n if self.n else 0.0
        return {"n": self.n, "d": self.d, "c": self.c, "mode": self.mode, "s": s}

    def with_features(self, features):
        return Dataset(features, self.labels, self.mode, self.weights, validate=False)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.mode == other.mode
            and self.features == other.features
            and self.labels == other.labels
            and np.array_equal(self.weights, other.weights)
        )


class SvmlightParseError(ValueError):
    """Malformed dataset text; carries the 1-based line number."""

    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def _open_lines(source):
    # str with a newline is raw content; str/Path without one is a path
    if isinstance(source, str):
        if "\n" in source:
            return io.StringIO(source), True
        return open(source, "r", encoding="utf-8"), True
    if hasattr(source, "read"):
        return source, False
    return open(source, "r", encoding="utf-8"), True


def parse_svmlight(source, mode=None):
    """Parse SVMLight-multilabel text into a Dataset.

    ``source`` may be a file path, a text stream, or the raw text itself.
    ``mode`` overrides inference (multiclass iff every line has exactly one
    label).
    """
    stream, close = _open_lines(source)
    declared_d = None
    label_rows = []
    feat_cols = []
    feat_vals = []
    max_feat = 0
    max_label = -1
    try:
        for lineno, raw in enumerate(stream, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "d":
                    try:
                        declared_d = int(parts[1])
                    except ValueError:
                        raise SvmlightParseError(lineno, f"bad #d header value {parts[1]!r}")
                    if declared_d < 0:
                        raise SvmlightParseError(lineno, "#d header must be nonnegative")
                continue
            tokens = line.split()
            labels = []
            for tok in tokens[0].split(","):
                try:
                    lab = int(tok)
                except ValueError:
                    raise SvmlightParseError(lineno, f"bad label token {tok!r}")
                if lab < 0:
                    raise SvmlightParseError(lineno, f"negative label {lab}")
                labels.append(lab)
            if len(set(labels)) != len(labels):
                raise SvmlightParseError(lineno, "duplicate label")
            cols = []
            vals = []
            prev = 0
            for tok in tokens[1:]:
                idx_s, sep, val_s = tok.partition(":")
                if not sep:
                    raise SvmlightParseError(lineno, f"bad feature token {tok!r}")
                try:
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError:
                    raise SvmlightParseError(lineno, f"bad feature token {tok!r}")
                if idx < 1:
                    raise SvmlightParseError(lineno, f"feature index {idx} must be >= 1")
                if idx == prev:
                    raise SvmlightParseError(lineno, f"duplicate feature index {idx}")
                if idx < prev:
                    raise SvmlightParseError(lineno, f"feature index {idx} out of order")
                if not np.isfinite(val):
                    raise SvmlightParseError(lineno, f"non-finite feature value {val_s!r}")
                prev = idx
                cols.append(idx - 1)  # 0-based in memory
                vals.append(val)
            label_rows.append(sorted(labels))
            feat_cols.append(np.asarray(cols, dtype=np.int64))
            feat_vals.append(np.asarray(vals, dtype=np.float64))
            if cols:
                max_feat = max(max_feat, cols[-1] + 1)
            max_label = max(max_label, max(labels))
    finally:
        if close:
            stream.close()

    n = len(label_rows)
    d = declared_d if declared_d is not None else max_feat
    if declared_d is not None and max_feat > declared_d:
        raise ValueError(f"feature index {max_feat} exceeds declared dimension {declared_d}")
    c = max_label + 1
    features = SparseMatrix.from_rows(zip(feat_cols, feat_vals), d)
    labels = SparseMatrix.from_rows(
        ((np.asarray(r, dtype=np.int64), np.ones(len(r))) for r in label_rows), c
    )
    if mode is None:
        mode = "multiclass" if n and all(len(r) == 1 for r in label_rows) else "multilabel"
    return Dataset(features, labels, mode)


def serialize_svmlight(ds, stream=None):
    """Write a Dataset in the on-disk format; returns the text if no stream."""
    own = stream is None
    if own:
        stream = io.StringIO()
    stream.write(f"#d {ds.d}\n")
    for i in range(ds.n):
        lab = ds.labels.row(i)
        feat = ds.features.row(i)
        parts = [",".join(str(int(c)) for c in lab.cols)]
        parts.extend(f"{int(c) + 1}:{v:.17g}" for c, v in zip(feat.cols, feat.vals))
        stream.write(" ".join(parts) + "\n")
    if own:
        return stream.getvalue()
    return None


def hellinger_transform(ds):
    """L1-normalize each nonnegative feature row, then take square roots.

    Nonzero rows come out with unit Euclidean norm; zero rows are unchanged.
    """
    X = ds.features
    if X.nnz and X.values.min() < 0:
        raise ValueError("hellinger transform requires nonnegative features")
    row_sums = np.bincount(
        np.repeat(np.arange(X.n_rows, dtype=np.int64), X.row_nnz()),
        weights=X.values,
        minlength=X.n_rows,
    )
    denom = np.where(row_sums > 0, row_sums, 1.0)
    scaled = X.values / np.repeat(denom, X.row_nnz())
    out = SparseMatrix(
        X.n_rows, X.n_cols, X.row_offsets, X.col_indices, np.sqrt(scaled), validate=False
    )
    return ds.with_features(out)


def hash_features(tokens, bits):
    """Hash unigram and adjacent-bigram counts into 2**bits buckets.

    Bigrams are the space-joined adjacent pairs. Returns (indices, counts)
    with indices sorted ascending and collisions summed. Deterministic across
    runs and platforms (FNV-1a 32-bit).
    """
    if not 1 <= bits <= 30:
        raise ValueError("bits must be between 1 and 30")
    size = 1 << bits
    counts = {}
    tokens = list(tokens)
    grams = list(tokens)
    grams.extend(f"{a} {b}" for a, b in zip(tokens, tokens[1:]))
    for g in grams:
        idx = fnv1a32(g.encode("utf-8")) % size
        counts[idx] = counts.get(idx, 0.0) + 1.0
    if not counts:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    idx = np.asarray(sorted(counts), dtype=np.int64)
    return idx, np.asarray([counts[i] for i in idx])


def rehash_features(ds, bits):
    """Fold the feature space down to 2**bits buckets by hashing indices.

    Each original index is hashed as its decimal token; collided values sum.
    """
    if not 1 <= bits <= 30:
        raise ValueError("bits must be between 1 and 30")
    size = 1 << bits
    X = ds.features
    table = np.asarray(
        [fnv1a32(str(j).encode("utf-8")) % size for j in range(X.n_cols)], dtype=np.int64
    )
    rows = []
    for i in range(X.n_rows):
        r = X.row(i)
        hashed = table[r.cols]
        order = np.argsort(hashed, kind="stable")
        h_sorted = hashed[order]
        v_sorted = r.vals[order]
        uniq, starts = np.unique(h_sorted, return_index=True)
        sums = np.add.reduceat(v_sorted, starts) if len(v_sorted) else np.zeros(0)
        rows.append((uniq, sums))
    return ds.with_features(SparseMatrix.from_rows(rows, size))


@dataclass(frozen=True)
class SynthConfig:
    """Gaussian-cluster generator settings."""

    n_classes: int
    dim: int
    examples_per_class: int
    cluster_separation: float = 10.0
    noise_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1 or self.dim < 1 or self.examples_per_class < 1:
            raise ValueError("counts must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")


def make_synthetic(cfg):
    """Generate a (train, test) multiclass pair of Gaussian clusters.

    One center per class is drawn uniformly on the sphere of radius
    ``cluster_separation``; each example is its center plus isotropic
    Gaussian noise. Each class is split 90:10 into train/test (at least one
    test example per class when possible), reproducibly from the seed.
    """
    rng = np.random.default_rng(cfg.seed)
    dirs = rng.standard_normal((cfg.n_classes, cfg.dim))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    centers = dirs / norms * cfg.cluster_separation

    per = cfg.examples_per_class
    n_test = max(1, per // 10) if per > 1 else 0
    n_train = per - n_test

    train_rows, train_labels = [], []
    test_rows, test_labels = [], []
    for k in range(cfg.n_classes):
        noise = rng.standard_normal((per, cfg.dim)) * cfg.noise_sigma
        pts = centers[k] + noise
        for j in range(per):
            row = pts[j]
            cols = np.nonzero(row != 0.0)[0]
            entry = (cols.astype(np.int64), row[cols])
            if j < n_train:
                train_rows.append(entry)
                train_labels.append(k)
            else:
                test_rows.append(entry)
                test_labels.append(k)

    def _pack(rows, labels):
        feats = SparseMatrix.from_rows(rows, cfg.dim)
        labs = SparseMatrix.from_rows(
            ((np.asarray([lab], dtype=np.int64), np.ones(1)) for lab in labels),
            cfg.n_classes,
        )
        return Dataset(feats, labs, "multiclass")

    return _pack(train_rows, train_labels), _pack(test_rows, test_labels)
