import numpy as np
import pytest

from spectree import Dataset, SparseMatrix


def random_sparse(rng, n_rows, n_cols, density=0.4, keep_zeros=False):
    """Random CSR matrix with strictly increasing columns per row."""
    rows = []
    for _ in range(n_rows):
        mask = rng.random(n_cols) < density
        cols = np.nonzero(mask)[0].astype(np.int64)
        vals = rng.standard_normal(len(cols))
        rows.append((cols, vals))
    return SparseMatrix.from_rows(rows, n_cols)


def one_hot_labels(cls, c):
    rows = [(np.asarray([k], dtype=np.int64), np.ones(1)) for k in cls]
    return SparseMatrix.from_rows(rows, c)


def binary_labels(rng, n, c, avg_labels=2.0, ensure_nonempty=False):
    rows = []
    p = avg_labels / c
    for _ in range(n):
        mask = rng.random(c) < p
        if ensure_nonempty and not mask.any():
            mask[rng.integers(c)] = True
        cols = np.nonzero(mask)[0].astype(np.int64)
        rows.append((cols, np.ones(len(cols))))
    return SparseMatrix.from_rows(rows, c)


def clustered_dataset(rng, n, d, c, separation=4.0, noise=1.0, weights=None):
    """Small multiclass dataset with Gaussian class clusters."""
    centers = rng.standard_normal((c, d))
    norms = np.linalg.norm(centers, axis=1, keepdims=True)
    centers = centers / np.where(norms == 0, 1.0, norms) * separation
    cls = rng.integers(0, c, n)
    while len(np.unique(cls)) < min(2, c):  # at least two classes present
        cls = rng.integers(0, c, n)
    X = centers[cls] + rng.standard_normal((n, d)) * noise
    feats = SparseMatrix.from_dense(X, keep_zeros=True)
    return Dataset(feats, one_hot_labels(cls, c), "multiclass", weights)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
