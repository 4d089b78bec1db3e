# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: CSR products, row gathers, and tree descent.

Semantics match ``_kernels_py`` exactly (same accumulation order), so the two
backends are interchangeable bit for bit.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

COMPILED = True


def csr_matvec(const cnp.int64_t[::1] offsets, const cnp.int64_t[::1] cols,
               const double[::1] vals, const double[::1] v):
    cdef Py_ssize_t n_rows = offsets.shape[0] - 1
    out_arr = np.zeros(n_rows)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    cdef cnp.int64_t p
    cdef double acc
    for i in range(n_rows):
        acc = 0.0
        for p in range(offsets[i], offsets[i + 1]):
            acc += vals[p] * v[cols[p]]
        out[i] = acc
    return out_arr


def csr_rmatvec(const cnp.int64_t[::1] offsets, const cnp.int64_t[::1] cols,
                const double[::1] vals, const double[::1] u, Py_ssize_t n_cols):
    cdef Py_ssize_t n_rows = offsets.shape[0] - 1
    out_arr = np.zeros(n_cols)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    cdef cnp.int64_t p
    cdef double ui
    for i in range(n_rows):
        ui = u[i]
        for p in range(offsets[i], offsets[i + 1]):
            out[cols[p]] += vals[p] * ui
    return out_arr


def csr_matmul_dense(const cnp.int64_t[::1] offsets, const cnp.int64_t[::1] cols,
                     const double[::1] vals, const double[:, ::1] dense):
    cdef Py_ssize_t n_rows = offsets.shape[0] - 1
    cdef Py_ssize_t k = dense.shape[1]
    out_arr = np.zeros((n_rows, k))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef cnp.int64_t p, cp
    cdef double vp
    for i in range(n_rows):
        for p in range(offsets[i], offsets[i + 1]):
            vp = vals[p]
            cp = cols[p]
            for j in range(k):
                out[i, j] += vp * dense[cp, j]
    return out_arr


def csr_matmul_dense_rows(const cnp.int64_t[::1] offsets, const cnp.int64_t[::1] cols,
                          const double[::1] vals, const cnp.int64_t[::1] row_ids,
                          const double[:, ::1] dense):
    """Like csr_matmul_dense but over a row subset, without materializing it."""
    cdef Py_ssize_t n_out = row_ids.shape[0]
    cdef Py_ssize_t k = dense.shape[1]
    out_arr = np.zeros((n_out, k))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t ii, j
    cdef cnp.int64_t r, p, cp
    cdef double vp, acc
    if k == 1:
        for ii in range(n_out):
            r = row_ids[ii]
            acc = 0.0
            for p in range(offsets[r], offsets[r + 1]):
                acc += vals[p] * dense[cols[p], 0]
            out[ii, 0] = acc
        return out_arr
    for ii in range(n_out):
        r = row_ids[ii]
        for p in range(offsets[r], offsets[r + 1]):
            vp = vals[p]
            cp = cols[p]
            for j in range(k):
                out[ii, j] += vp * dense[cp, j]
    return out_arr


def csr_take_rows(const cnp.int64_t[::1] offsets, const cnp.int64_t[::1] cols,
                  const double[::1] vals, const cnp.int64_t[::1] row_ids):
    cdef Py_ssize_t n_out = row_ids.shape[0]
    new_offsets_arr = np.zeros(n_out + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] new_offsets = new_offsets_arr
    cdef Py_ssize_t i
    cdef cnp.int64_t r, total = 0
    for i in range(n_out):
        r = row_ids[i]
        total += offsets[r + 1] - offsets[r]
        new_offsets[i + 1] = total
    new_cols_arr = np.zeros(total, dtype=np.int64)
    new_vals_arr = np.zeros(total)
    cdef cnp.int64_t[::1] new_cols = new_cols_arr
    cdef double[::1] new_vals = new_vals_arr
    cdef Py_ssize_t q = 0
    cdef cnp.int64_t p
    for i in range(n_out):
        r = row_ids[i]
        for p in range(offsets[r], offsets[r + 1]):
            new_cols[q] = cols[p]
            new_vals[q] = vals[p]
            q += 1
    return new_offsets_arr, new_cols_arr, new_vals_arr


def seq_dot(const cnp.int64_t[::1] cols, const double[::1] vals,
            const double[::1] w):
    """Sequential sparse-dense dot; same accumulation order as csr_matvec."""
    cdef Py_ssize_t p
    cdef double acc = 0.0
    for p in range(cols.shape[0]):
        acc += vals[p] * w[cols[p]]
    return acc


def route_batch(const cnp.int64_t[::1] offsets, const cnp.int64_t[::1] cols,
                const double[::1] vals, const cnp.uint8_t[::1] kind,
                const cnp.int64_t[::1] left, const cnp.int64_t[::1] right,
                const double[::1] bias, const double[:, ::1] routers,
                cnp.int64_t root):
    cdef Py_ssize_t n_rows = offsets.shape[0] - 1
    out_arr = np.zeros(n_rows, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    cdef Py_ssize_t i
    cdef cnp.int64_t p, node
    cdef double acc
    for i in range(n_rows):
        node = root
        while kind[node] == 0:
            acc = 0.0
            for p in range(offsets[i], offsets[i + 1]):
                acc += vals[p] * routers[node, cols[p]]
            node = right[node] if acc > bias[node] else left[node]
        out[i] = node
    return out_arr
