"""Pure-numpy implementations of the hot kernels.

These mirror the compiled versions in ``_kernels.pyx`` exactly: every
accumulation visits elements in the same (row-major) order, so results agree
bitwise with the compiled backend. All arrays are assumed validated by the
caller (int64 index arrays, float64 values).
"""

import numpy as np

COMPILED = False


def csr_matvec(offsets, cols, vals, v):
    """out[i] = sum_j M[i, j] * v[j] for a CSR matrix."""
    n_rows = offsets.shape[0] - 1
    if vals.shape[0] == 0:
        return np.zeros(n_rows)
    row_ids = np.repeat(np.arange(n_rows, dtype=np.int64), np.diff(offsets))
    # bincount adds in element order == the compiled row-major loop order
    return np.bincount(row_ids, weights=vals * v[cols], minlength=n_rows)


def csr_rmatvec(offsets, cols, vals, u, n_cols):
    """out[j] = sum_i M[i, j] * u[i] (transpose matvec)."""
    n_rows = offsets.shape[0] - 1
    if vals.shape[0] == 0:
        return np.zeros(n_cols)
    row_ids = np.repeat(np.arange(n_rows, dtype=np.int64), np.diff(offsets))
    return np.bincount(cols, weights=vals * u[row_ids], minlength=n_cols)


def csr_matmul_dense(offsets, cols, vals, dense):
    """CSR (n x d) times a dense (d x k) matrix, returning dense (n x k)."""
    n_rows = offsets.shape[0] - 1
    k = dense.shape[1]
    out = np.zeros((n_rows, k))
    if vals.shape[0] == 0:
        return out
    row_ids = np.repeat(np.arange(n_rows, dtype=np.int64), np.diff(offsets))
    contrib = vals[:, None] * dense[cols]
    for j in range(k):
        out[:, j] = np.bincount(row_ids, weights=contrib[:, j], minlength=n_rows)
    return out


def csr_matmul_dense_rows(offsets, cols, vals, row_ids, dense):
    """Like csr_matmul_dense but over a row subset, without materializing it."""
    sub_off, sub_cols, sub_vals = csr_take_rows(offsets, cols, vals, row_ids)
    return csr_matmul_dense(sub_off, sub_cols, sub_vals, dense)


def csr_take_rows(offsets, cols, vals, row_ids):
    """Gather a row subset into a new compact CSR triple."""
    lens = offsets[row_ids + 1] - offsets[row_ids]
    new_offsets = np.zeros(row_ids.shape[0] + 1, dtype=np.int64)
    np.cumsum(lens, out=new_offsets[1:])
    total = int(new_offsets[-1])
    if total == 0:
        return new_offsets, np.zeros(0, dtype=np.int64), np.zeros(0)
    pos = (
        np.arange(total, dtype=np.int64)
        - np.repeat(new_offsets[:-1], lens)
        + np.repeat(offsets[row_ids], lens)
    )
    return new_offsets, cols[pos].copy(), vals[pos].copy()


def seq_dot(cols, vals, w):
    """Sequential sparse-dense dot; same accumulation order as csr_matvec."""
    acc = 0.0
    wl = w
    for p in range(cols.shape[0]):
        acc += vals[p] * wl[cols[p]]
    return float(acc)


def route_batch(offsets, cols, vals, kind, left, right, bias, routers, root):
    """Deterministic tree descent for every CSR row.

    ``kind`` marks leaves (1) vs internal nodes (0); ``routers`` is a dense
    (n_nodes x d) matrix of routing vectors. Goes right on a strict ``>``.
    Processed level-synchronously; per-row dot products accumulate in the
    same element order as the compiled per-example walk.
    """
    n_rows = offsets.shape[0] - 1
    cur = np.full(n_rows, root, dtype=np.int64)
    alive = kind[cur] == 0
    while np.any(alive):
        active_nodes = np.unique(cur[alive])
        for node in active_nodes:
            mask = alive & (cur == node)
            ids = np.nonzero(mask)[0].astype(np.int64)
            sub_off, sub_cols, sub_vals = csr_take_rows(offsets, cols, vals, ids)
            dots = csr_matvec(sub_off, sub_cols, sub_vals, routers[node])
            go_right = dots > bias[node]
            nxt = np.where(go_right, right[node], left[node])
            cur[ids] = nxt
        alive = kind[cur] == 0
    return cur
