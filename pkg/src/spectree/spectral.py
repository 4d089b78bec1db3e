"""Balance-constrained spectral routers.

Each tree node learns a unit routing vector ``w`` that maximizes the captured
label variance ``w' X' Q Xhat w`` subject to orthogonality to the weighted
feature mean, where ``Xhat`` is the label-conditional prediction of the
features (the hat-matrix projection of X onto the column space of Y under
the importance weights Q). The top eigenvector is found by power iteration
with the mean direction projected out after every operator application.

Because the hat matrix is idempotent, one application per iteration
suffices. For one-hot labels the application is a per-class weighted
average, computable in O(n); for general binary labels it is the solution
of a weighted least-squares system, approximated by a few iterations of
diagonally preconditioned conjugate gradient.

The routing bias is the lower weighted median of the projections, which
splits the training mass in half by construction. The routing noise scale
for an internal node is ``eigenvalue / mass``, floored at ``SIGMA_FLOOR``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import _backend
from .sparsecore import as_dense_vector, spmv, spmv_t_weighted, weighted_median

SIGMA_FLOOR = 1e-12

_INIT_REDRAWS = 8
_INIT_NORM_FLOOR = 1e-12


class DegenerateNodeError(RuntimeError):
    """The node admits no routing direction (e.g. rank-one features)."""


@dataclass(frozen=True)
class SolverParams:
    """Iteration caps and tolerances for the per-node eigensolver."""

    max_power_iters: int = 200
    power_tol: float = 1e-6
    cg_max_iters: int = 10
    cg_tol: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.max_power_iters < 1 or self.cg_max_iters < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.power_tol <= 0 or self.cg_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(eq=False)
class RouterSolution:
    """One node's routing hyperplane.

    weight      unit routing vector (orthogonal to the weighted feature mean)
    bias        lower weighted median of the projections
    eigenvalue  captured label variance per unit mass: the Rayleigh quotient
                of the weighted operator at ``weight``, divided by ``mass``
                (invariant under duplicating the data, so the routing noise
                scale eigenvalue/mass halves when the mass doubles)
    mass        sum of the importance weights at the node
    iterations  operator applications performed
    converged   relative eigenvalue change dropped below tolerance
    """

    weight: np.ndarray
    bias: float
    eigenvalue: float
    mass: float
    iterations: int
    converged: bool

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        self.weight.setflags(write=False)


def _check_one_hot(Y):
    if not np.all(Y.row_nnz() == 1):
        raise ValueError("labels must be one-hot (exactly one per row)")


def hat_apply_multiclass(Y, q, u):
    """Apply the weighted hat matrix for one-hot labels in O(n).

    Entry i of the result is the q-weighted average of ``u`` over the
    examples sharing example i's class; classes with zero weighted count
    map to 0.
    """
    _check_one_hot(Y)
    q = as_dense_vector(q, length=Y.n_rows, name="q")
    u = as_dense_vector(u, length=Y.n_rows, name="u")
    cls = Y.col_indices
    den = np.bincount(cls, weights=q, minlength=Y.n_cols)
    num = np.bincount(cls, weights=q * u, minlength=Y.n_cols)
    avg = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return avg[cls]


def _cg_label_solve(Y, q, rhs, diag, max_iters, tol):
    """Diagonally preconditioned CG on (Y' Q Y) v = rhs.

    Classes with zero weighted count (zero diagonal) are excluded: their
    rhs is zero and the preconditioner keeps them at zero.
    """
    active = diag > 0

    def precondition(r):
        # direct division: the diagonal may hold subnormal weighted counts,
        # so a precomputed reciprocal would overflow
        return np.divide(r, diag, out=np.zeros_like(r), where=active)

    x = np.zeros(Y.n_cols)
    r = rhs.copy()
    r0 = np.linalg.norm(r)
    if r0 == 0.0:
        return x
    z = precondition(r)
    p = z.copy()
    rz = float(r @ z)
    for _ in range(max_iters):
        Ap = spmv_t_weighted(Y, q, spmv(Y, p))
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= tol * r0:
            break
        z = precondition(r)
        rz_new = float(r @ z)
        beta = rz_new / rz
        p = z + beta * p
        rz = rz_new
    return x


def hat_apply_multilabel(Y, q, u, params):
    """Apply the weighted hat matrix for binary labels via CG least squares.

    Returns Y v* where v* approximately solves (Y' Q Y) v = Y' Q u. Empty
    label rows contribute (and receive) zero.
    """
    q = as_dense_vector(q, length=Y.n_rows, name="q")
    u = as_dense_vector(u, length=Y.n_rows, name="u")
    rhs = spmv_t_weighted(Y, q, u)
    diag = spmv_t_weighted(Y, q, np.ones(Y.n_rows))
    v = _cg_label_solve(Y, q, rhs, diag, params.cg_max_iters, params.cg_tol)
    return spmv(Y, v)


class _NodeOperator:
    """One power-iteration application of the projected weighted operator."""

    def __init__(self, X, Y, q, mode, params):
        self.X = X
        self.q = q
        self.params = params
        if mode == "multiclass":
            _check_one_hot(Y)
            cls = Y.col_indices
            # direct num/den division: weighted counts may be subnormal, so
            # a precomputed reciprocal would overflow
            self._cls = cls
            self._den = np.bincount(cls, weights=q, minlength=Y.n_cols)
            self._Y = None
        else:
            self._Y = Y
            self._diag = spmv_t_weighted(Y, q, np.ones(Y.n_rows))
        mu = _backend.csr_rmatvec(X.row_offsets, X.col_indices, X.values, q, X.n_cols)
        mu_norm = np.linalg.norm(mu)
        self.mean_dir = mu / mu_norm if mu_norm > 0 else None

    def project(self, v):
        if self.mean_dir is not None:
            v = v - (v @ self.mean_dir) * self.mean_dir
        return v

    def hat(self, u):
        if self._Y is None:
            num = np.bincount(self._cls, weights=self.q * u, minlength=self._den.shape[0])
            avg = np.divide(num, self._den, out=np.zeros_like(num), where=self._den > 0)
            return avg[self._cls]
        rhs = spmv_t_weighted(self._Y, self.q, u)
        v = _cg_label_solve(
            self._Y, self.q, rhs, self._diag, self.params.cg_max_iters, self.params.cg_tol
        )
        return spmv(self._Y, v)

    def apply(self, v):
        """P (X' Q Hat (X v)) with P removing the weighted-mean component.

        Raises DegenerateNodeError when the projected iterate annihilates
        the features (the row space lies in the span of the weighted mean),
        since no constrained direction can then separate anything.
        """
        u = spmv(self.X, v)
        if not np.any(u):
            raise DegenerateNodeError(
                "degenerate node: features lie in the span of the weighted mean"
            )
        h = self.hat(u)
        t = spmv_t_weighted(self.X, self.q, h)
        return self.project(t)


def solve_node(X, Y, q, mode, params):
    """Solve one node's balance-constrained top-eigenvector problem.

    Requires positive total weight and at least two distinct labels with
    positive weight. Returns a deterministic RouterSolution for a fixed
    seed. Raises DegenerateNodeError when the weighted feature mean spans
    the active feature space.
    """
    q = as_dense_vector(q, length=X.n_rows, name="q")
    if q.size == 0 or q.min() < 0:
        raise ValueError("weights must be nonnegative and nonempty")
    mass = float(q.sum())
    if mass <= 0:
        raise ValueError("total weight must be positive")
    if Y.n_rows != X.n_rows:
        raise ValueError("features and labels row counts differ")
    active_labels = np.bincount(
        Y.col_indices,
        weights=np.repeat(q, Y.row_nnz()),
        minlength=Y.n_cols,
    )
    if int(np.count_nonzero(active_labels > 0)) < 2:
        raise ValueError("need at least 2 distinct labels with positive weight")

    op = _NodeOperator(X, Y, q, mode, params)
    rng = np.random.default_rng(params.seed)
    v = None
    for _ in range(_INIT_REDRAWS):
        cand = op.project(rng.standard_normal(X.n_cols))
        norm = np.linalg.norm(cand)
        if norm >= _INIT_NORM_FLOOR:
            v = cand / norm
            break
    if v is None:
        raise DegenerateNodeError("degenerate node: weighted mean spans the active space")

    lam_prev = None
    lam = 0.0
    iterations = 0
    converged = False
    for _ in range(params.max_power_iters):
        t = op.apply(v)
        iterations += 1
        lam = max(float(v @ t), 0.0)
        t_norm = np.linalg.norm(t)
        if t_norm == 0.0:
            # operator annihilates the iterate: eigenvalue 0 in this subspace
            lam = 0.0
            converged = True
            break
        v = t / t_norm
        if lam_prev is not None and abs(lam - lam_prev) <= params.power_tol * max(lam, 1e-300):
            converged = True
            break
        lam_prev = lam

    w = op.project(v)
    w_norm = np.linalg.norm(w)
    if w_norm == 0.0:
        raise DegenerateNodeError("degenerate node: projector annihilated the iterate")
    w = w / w_norm

    # one extra application so the reported eigenvalue is the Rayleigh
    # quotient at the reported vector; stored per unit of routed mass
    t = op.apply(w)
    iterations += 1
    lam = max(float(w @ t), 0.0) / mass

    proj = spmv(X, w)
    active = q > 0
    bias = weighted_median(proj[active], q[active])
    return RouterSolution(
        weight=w,
        bias=float(bias),
        eigenvalue=lam,
        mass=mass,
        iterations=iterations,
        converged=converged,
    )


def routing_probability(router, row, sigma):
    """Probability that a Gaussian-perturbed copy of ``row`` lands on the
    greater side of the router's hyperplane.

    Returns Phi((w.x - b) / sigma), the standard Gaussian CDF of the scaled
    margin: the probability of the strict-inequality (right) branch. The
    left branch gets the exact complement.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    dot = _backend.seq_dot(row.cols, row.vals, router.weight)
    return float(ndtr((dot - router.bias) / sigma))


def node_sigma(router):
    """Routing noise scale eigenvalue/mass, floored at SIGMA_FLOOR."""
    if router.mass <= 0:
        raise ValueError("node mass must be positive")
    return max(router.eigenvalue / router.mass, SIGMA_FLOOR)
