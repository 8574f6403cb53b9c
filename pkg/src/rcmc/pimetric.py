"""Linear algebra in the pi-weighted inner product <a, b> = a^T diag(pi)^-1 b.

Holds the two incremental factorizations used by the contraction:

* ``PiCholeskyFactor`` -- C with C C* = -K_SS, C* = C^T Pi^-1, grown one
  pivot column at a time.
* ``MCholeskyFactor`` -- G with G G* = M = I + K_TS K_SS^-2 K_ST, shrunk one
  row at a time through rank-one updates.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from . import _kernels
from .core import NoConvergence, PivotBreakdown, UpdateBreakdown

DENSE_EIG_LIMIT = 64


class PiMetric:
    def __init__(self, pi):
        self.pi = np.asarray(pi, dtype=float)
        if np.any(~(self.pi > 0)):
            raise ValueError("metric weights must be positive")
        self.inv = 1.0 / self.pi
        self.sqrt = np.sqrt(self.pi)

    def __len__(self):
        return len(self.pi)

    def restrict(self, idx) -> "PiMetric":
        return PiMetric(self.pi[np.asarray(idx)])


def _as_metric(m):
    return m if isinstance(m, PiMetric) else PiMetric(m)


def pi_inner(a, b, m) -> float:
    m = _as_metric(m)
    return float(np.sum(np.asarray(a) * np.asarray(b) * m.inv))


def pi_norm(a, m) -> float:
    return float(np.sqrt(pi_inner(a, a, m)))


def adjoint(A, row_metric, col_metric):
    """Adjoint of A: R^J -> R^I, i.e. Pi_J A^T Pi_I^-1."""
    rm, cm = _as_metric(row_metric), _as_metric(col_metric)
    if sp.issparse(A):
        return (sp.diags(cm.pi) @ A.T @ sp.diags(rm.inv)).asformat(A.format)
    A = np.asarray(A)
    return cm.pi[:, None] * A.T * rm.inv[None, :]


# ---------------------------------------------------------------- C factor


class PiCholeskyFactor:
    """Column-appended Cholesky factor of -K_SS in the pi-metric.

    Column m (pivot j = pivot_order[m]) is stored normalized: ``col_ratio``
    holds D_rj / D_jj for the coupled rows r, ``row_ratio`` holds D_jr / D_jj,
    and ``pivot_abs`` holds |D_jj|. The actual factor entries are
    ``C[r, m] = col_ratio * sqrt(pi_j |D_jj|)`` with diagonal
    ``sqrt(pi_j |D_jj|)``. Solves run on the normalized form, which keeps
    pi out of every triangular sweep.
    """

    def __init__(self, metric, capacity=None):
        self.metric = _as_metric(metric)
        n = len(self.metric)
        self.n = n
        self.k = 0
        self.piv = np.zeros(n, dtype=np.int64)
        self.pos = np.full(n, -1, dtype=np.int64)
        self.pivot_abs = np.zeros(n)
        self.indptr = np.zeros(n + 1, dtype=np.int64)
        cap = capacity or max(16, 4 * n)
        self.rows = np.zeros(cap, dtype=np.int64)
        self.col_ratio = np.zeros(cap)
        self.row_ratio = np.zeros(cap)

    @property
    def pivot_order(self):
        return self.piv[: self.k].copy()

    def _grow(self, need):
        cap = len(self.rows)
        if need <= cap:
            return
        new = max(need, 2 * cap)
        for name in ("rows", "col_ratio", "row_ratio"):
            old = getattr(self, name)
            arr = np.zeros(new, dtype=old.dtype)
            arr[:cap] = old
            setattr(self, name, arr)

    def append(self, j, rows, col_vals, d_jj, row_vals=None):
        """Append the pivot column for state ``j`` from D's column (and row)."""
        a = -float(d_jj)
        if not a > 0.0:
            raise PivotBreakdown(f"|D_jj| = {a!r} at state {j}")
        if self.pos[j] >= 0:
            raise ValueError(f"state {j} already pivoted")
        rows = np.asarray(rows, dtype=np.int64)
        col_vals = np.asarray(col_vals, dtype=float)
        if row_vals is None:
            # detailed balance: D_jr = D_rj pi_j / pi_r
            row_vals = col_vals * self.metric.pi[j] / self.metric.pi[rows]
        lo = self.indptr[self.k]
        hi = lo + len(rows)
        self._grow(hi)
        self.rows[lo:hi] = rows
        self.col_ratio[lo:hi] = -col_vals / a
        self.row_ratio[lo:hi] = -np.asarray(row_vals, dtype=float) / a
        self.piv[self.k] = j
        self.pos[j] = self.k
        self.pivot_abs[self.k] = a
        self.k += 1
        self.indptr[self.k] = hi
        return self

    # -- views

    def diag(self):
        """Diagonal entries sqrt(pi_j |D_jj|) in pivot order."""
        j = self.piv[: self.k]
        return self.metric.sqrt[j] * np.sqrt(self.pivot_abs[: self.k])

    def dense(self, level=None):
        """Dense n x k factor, rows by state, columns by pivot order."""
        k = self.k if level is None else level
        C = np.zeros((self.n, k))
        d = self.diag()
        for m in range(k):
            lo, hi = self.indptr[m], self.indptr[m + 1]
            C[self.rows[lo:hi], m] = self.col_ratio[lo:hi] * d[m]
            C[self.piv[m], m] = d[m]
        return C

    # -- sweeps on full-length vectors (entries indexed by state)

    def forward(self, b, level=None, transpose=False):
        k = self.k if level is None else level
        ratios = self.row_ratio if transpose else self.col_ratio
        _kernels.K.forward(b, k, self.indptr, self.rows, ratios, self.piv)
        return b

    def backward(self, v, level=None, transpose=False):
        k = self.k if level is None else level
        ratios = self.col_ratio if transpose else self.row_ratio
        _kernels.K.backward(v, k, self.indptr, self.rows, ratios, self.piv)
        return v

    def in_S(self, level=None):
        k = self.k if level is None else level
        mask = np.zeros(self.n, dtype=bool)
        mask[self.piv[:k]] = True
        return mask

    def neg_inv_KSS(self, b_full, level=None, transpose=False):
        """-K_SS^-1 b (or -K_SS^-T b) for b given as a full vector; T entries ignored.

        Returns a full vector that is zero on T.
        """
        k = self.k if level is None else level
        S = self.piv[:k]
        f = np.zeros(self.n)
        f[S] = b_full[S]
        self.forward(f, k, transpose)
        v = np.zeros(self.n)
        v[S] = f[S] / self.pivot_abs[:k]
        self.backward(v, k, transpose)
        return v


def cholesky_append(C: PiCholeskyFactor, D_col_j, D_jj, j, pi_j=None, D_row_j=None, pivot_floor=0.0):
    """Append pivot ``j``; ``D_col_j`` is ``(rows, values)`` or a dense column.

    The new column is -sqrt(pi_j/|D_jj|) D_ij on the remaining states and
    sqrt(pi_j |D_jj|) on the diagonal.
    """
    if pi_j is not None and not np.isclose(pi_j, C.metric.pi[j], rtol=1e-12, atol=0):
        raise ValueError("pi_j does not match the factor's metric")
    if isinstance(D_col_j, tuple):
        rows, vals = D_col_j
    else:
        col = np.asarray(D_col_j, dtype=float)
        rows = np.flatnonzero(col)
        rows = rows[rows != j]
        vals = col[rows]
    if D_row_j is not None and not isinstance(D_row_j, tuple):
        D_row_j = np.asarray(D_row_j, dtype=float)[rows]
    elif isinstance(D_row_j, tuple):
        D_row_j = D_row_j[1]
    if not -D_jj > pivot_floor:
        raise PivotBreakdown(f"|D_jj| = {abs(D_jj)!r} at state {j}")
    return C.append(j, rows, vals, D_jj, D_row_j)


def solve_KSS(C: PiCholeskyFactor, b, level=None):
    """Solve K_SS x = b with b ordered like the pivot sequence."""
    k = C.k if level is None else level
    S = C.piv[:k]
    full = np.zeros(C.n)
    full[S] = b
    return -C.neg_inv_KSS(full, k)[S]


def gershgorin_rho(A) -> float:
    """min(max abs row sum, max abs column sum); an upper bound on rho(A)."""
    if sp.issparse(A):
        A = abs(A)
        r = np.asarray(A.sum(axis=1)).ravel()
        c = np.asarray(A.sum(axis=0)).ravel()
    else:
        A = np.abs(np.asarray(A, dtype=float))
        if A.size == 0:
            return 0.0
        r, c = A.sum(axis=1), A.sum(axis=0)
    if r.size == 0:
        return 0.0
    return float(min(r.max(), c.max()))


def gershgorin_sigma_inv(C: PiCholeskyFactor, level=None) -> float:
    """Gershgorin bound on rho(K_SS^-1), so that sigma_hat = 1 / this value.

    K_SS^-1 is entrywise nonpositive, so the abs row and column sums are the
    entries of -K_SS^-1 1 and -K_SS^-T 1, one solve each.
    """
    k = C.k if level is None else level
    if k == 0:
        return 0.0
    S = C.piv[:k]
    ones = np.ones(C.n)
    rows = C.neg_inv_KSS(ones, k)[S]
    cols = C.neg_inv_KSS(ones, k, transpose=True)[S]
    return float(min(rows.max(), cols.max()))


# ---------------------------------------------------------------- M factor


class MCholeskyFactor:
    """Lower factor G with G G^T = M Pi_T, rows in future pivot order.

    ``order`` lists every state: the pivot sequence first, then the states
    never contracted. At level k the active block is ``G[k:, k:]`` over the
    states ``order[k:]``.
    """

    def __init__(self, order, metric):
        self.metric = _as_metric(metric)
        self.order = np.asarray(order, dtype=np.int64)
        n = len(self.metric)
        if sorted(self.order.tolist()) != list(range(n)):
            raise ValueError("order must be a permutation of all states")
        self.where = np.empty(n, dtype=np.int64)
        self.where[self.order] = np.arange(n)
        self.G = np.asfortranarray(np.diag(self.metric.sqrt[self.order]))
        self.off = 0
        self.refactorizations = 0

    @property
    def T(self):
        return self.order[self.off:]

    def active(self):
        return self.G[self.off:, self.off:]

    def assembled(self):
        """M = G G* = G G^T Pi_T^-1 over T (rows/cols in factor order)."""
        A = self.active()
        return (A @ A.T) * self.metric.inv[self.T][None, :]

    def solve(self, w_T):
        """y = (M Pi_T)^-1 w, so that M^-1 w = Pi_T y. ``w_T`` in factor order."""
        b = np.array(w_T, dtype=float)
        _kernels.K.lower_solve(self.G, self.off, b)
        _kernels.K.upper_solve(self.G, self.off, b)
        return b

    def refactor(self, C: PiCholeskyFactor):
        """Rebuild the active block from the assembled M (fallback path)."""
        k = self.off
        T = self.order[k:]
        S = C.piv[:k]
        pi = self.metric.pi
        # X = K_TS K_SS^-1 column by column: forward sweep of e_s gives -X[:, s] on T
        X = np.zeros((len(T), k))
        for m, s in enumerate(S):
            f = np.zeros(C.n)
            f[s] = 1.0
            C.forward(f, k)
            X[:, m] = -f[T]
        A = np.diag(pi[T]) + (X * pi[S][None, :]) @ X.T
        L = np.linalg.cholesky(0.5 * (A + A.T))
        self.G[k:, k:] = L
        self.refactorizations += 1


def m_rank_one_update(G: MCholeskyFactor, D_col_j, D_jj, G_first_col=None, j=None):
    """Advance G from M^(k-1) to M^(k) after contracting ``j``.

    ``D_col_j`` is ``(rows, values)`` of D^(k-1) column j over T^(k).
    v = G_T1 - (G_j1 / D_jj) D_Tj and M^(k) Pi_T = G_TJ G_TJ^T + v v^T.
    Raises UpdateBreakdown if the updated factor loses positivity.
    """
    off = G.off
    if j is not None and G.order[off] != j:
        raise ValueError(f"factor expects state {G.order[off]} next, got {j}")
    rows, vals = D_col_j
    first = G.G[off:, off].copy() if G_first_col is None else np.asarray(G_first_col, dtype=float)
    v = first[1:].copy()
    v[G.where[np.asarray(rows, dtype=np.int64)] - off - 1] += (first[0] / -D_jj) * np.asarray(vals)
    G.off = off + 1
    if G.off < len(G.order) and not _kernels.K.chol_update(G.G, G.off, v):
        raise UpdateBreakdown(f"rank-one update lost positivity at level {G.off}")
    return G


# ---------------------------------------------------------------- spectra


def spectral_radius(matvec, m, tol=1e-10, max_iter=5000):
    """Largest |eigenvalue| of an operator self-adjoint under metric ``m``.

    Works on the symmetrized map x -> Pi^-1/2 A(Pi^1/2 x). Small problems are
    solved densely; larger ones by ARPACK Lanczos from the fixed start vector
    Pi^-1/2 1 / ||1||_pi.
    """
    m = _as_metric(m)
    n = len(m)
    if n == 0:
        return 0.0

    def sym(x):
        return np.asarray(matvec(m.sqrt * x)).ravel() / m.sqrt

    if n <= DENSE_EIG_LIMIT:
        B = np.column_stack([sym(e) for e in np.eye(n)])
        ev = np.linalg.eigvalsh(0.5 * (B + B.T))
        return float(np.abs(ev).max())

    v0 = (1.0 / m.sqrt) / np.sqrt(np.sum(m.inv))
    op = LinearOperator((n, n), matvec=sym, dtype=float)
    try:
        vals = eigsh(op, k=1, which="LM", v0=v0, tol=tol, maxiter=max_iter, return_eigenvectors=False)
    except ArpackNoConvergence as exc:
        raise NoConvergence(f"Lanczos did not converge in {max_iter} iterations") from exc
    return float(abs(vals[0]))


def spectral_radius_or_gershgorin(matvec, m, fallback, tol=1e-10, max_iter=5000):
    try:
        return spectral_radius(matvec, m, tol, max_iter)
    except NoConvergence:
        warnings.warn("Lanczos did not converge; using the Gershgorin bound", RuntimeWarning, stacklevel=2)
        return fallback()
