"""Kernel backend selection.

The compiled Cython extension is preferred; the pure-numpy module is the
fallback. Set ``SPECTREE_PURE=1`` to force the fallback (used by the
benchmark suite to compare the two).
"""

import os

if os.environ.get("SPECTREE_PURE") == "1":
    from . import _kernels_py as impl
else:
    try:
        from . import _kernels as impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as impl

csr_matvec = impl.csr_matvec
csr_rmatvec = impl.csr_rmatvec
csr_matmul_dense = impl.csr_matmul_dense
csr_matmul_dense_rows = impl.csr_matmul_dense_rows
csr_take_rows = impl.csr_take_rows
route_batch = impl.route_batch
seq_dot = impl.seq_dot

COMPILED = bool(impl.COMPILED)


def backend_name():
    """Name of the active kernel backend: 'compiled' or 'pure'."""
    return "compiled" if COMPILED else "pure"
