"""Schur-complement contraction of a rate matrix, one steady state at a time.

The working matrix D is kept dense over "slots". A slot is freed when its
state is contracted, and every 64 steps the array is compacted down to the
live slots. Each elimination only touches the states coupled to the pivot,
so the cost per step follows the fill-in rather than n^2.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .core import DEFAULT_TOL, PivotBreakdown, RateMatrix, Tolerances, UpdateBreakdown
from .pimetric import (
    MCholeskyFactor,
    PiCholeskyFactor,
    PiMetric,
    cholesky_append,
    m_rank_one_update,
)

COMPACT_EVERY = 64


class ContractionState:
    """Evolving (S, T, D, factors) of one contraction run.

    Pass ``m_order`` (the pivot sequence followed by the remaining states)
    to also maintain the Cholesky factor of M needed by Type B outputs.
    Vectors registered with :meth:`track` are carried along as Omega p.
    """

    def __init__(self, rm: RateMatrix, tol: Tolerances = DEFAULT_TOL, m_order=None):
        self.rm = rm
        self.tol = tol
        n = rm.n
        self.n = n
        self.metric = PiMetric(rm.pi)
        self._D = np.asfortranarray(rm.K.toarray())
        self._slot_state = np.arange(n, dtype=np.int64)
        self._state_slot = np.arange(n, dtype=np.int64)
        off = np.abs(self._D)
        self._absrow = off.sum(axis=1)
        self._inv_pi = self.metric.inv.copy()  # per slot
        self.in_T = np.ones(n, dtype=bool)
        self.chol_K = PiCholeskyFactor(self.metric)
        self.chol_M = None if m_order is None else MCholeskyFactor(m_order, self.metric)
        self.k = 0
        self.last_pivot = None
        self.last_pivot_abs = np.nan
        self._tracked = {}
        # forward sweeps of 1 and pi, for the Gershgorin bound on K_SS^-1
        self._fwd_ones = np.ones(n)
        self._fwd_pi = rm.pi.copy()

    # -- views

    @property
    def S(self):
        return self.chol_K.pivot_order

    @property
    def T(self):
        return np.flatnonzero(self.in_T)

    def _slots(self):
        return self._state_slot[self.in_T]

    def diag_T(self):
        s = self._slots()
        return self._D[s, s]

    def D_dense(self):
        """Current Schur complement over T (ascending state order)."""
        s = self._slots()
        return self._D[np.ix_(s, s)].copy()

    def D_sparse(self):
        return sp.csr_matrix(self.D_dense())

    def coupling(self, j):
        """States coupled to ``j`` with D's column and row entries."""
        js = self._state_slot[j]
        col = self._D[:, js]
        row = self._D[js, :]
        nb = np.flatnonzero((col != 0.0) | (row != 0.0))
        nb = nb[nb != js]
        return nb, col[nb].copy(), row[nb].copy()

    def rho_hat_D(self):
        """Gershgorin bound on rho(D): min of max row and max column abs sums."""
        s = self._slots()
        if len(s) == 0:
            return 0.0
        col = 2.0 * float(np.max(-self._D[s, s]))
        row = float(np.max(self._absrow[s]))
        return min(row, col)

    def sigma_inv_hat(self):
        """Gershgorin bound on rho(K_SS^-1): min of max row and max column abs sums.

        K_SS^-1 <= 0 entrywise, so the row sums are -K_SS^-1 1. Detailed
        balance gives K_SS^-T = Pi_S^-1 K_SS^-1 Pi_S, so the column sums are
        -Pi_S^-1 K_SS^-1 pi_S. The forward halves of both solves are carried
        along; one shared back substitution finishes them.
        """
        C = self.chol_K
        if C.k == 0:
            return 0.0
        S = C.piv[: C.k]
        piv_abs = C.pivot_abs[: C.k]
        v = np.zeros(self.n)
        w = np.zeros(self.n)
        v[S] = self._fwd_ones[S] / piv_abs
        w[S] = self._fwd_pi[S] / piv_abs
        _kernels.K.backward2(v, w, C.k, C.indptr, C.rows, C.row_ratio, C.piv)
        rows = v[S].max()
        cols = (w[S] * self.metric.inv[S]).max()
        return float(min(rows, cols))

    def track(self, name, vec):
        """Carry ``vec`` along so that ``tracked(name)`` returns Omega vec on T."""
        if self.k:
            raise RuntimeError("vectors must be registered before the first step")
        self._tracked[name] = np.array(vec, dtype=float)

    def tracked(self, name):
        return self._tracked[name][self.in_T]

    def _compact(self):
        live = self._slots()
        self._D = np.asfortranarray(self._D[np.ix_(live, live)])
        self._absrow = self._absrow[live]
        self._inv_pi = self._inv_pi[live]
        states = self._slot_state[live]
        self._slot_state = states
        self._state_slot[:] = -1
        self._state_slot[states] = np.arange(len(states))


def select_steady(st: ContractionState):
    """State in T with the largest |D_jj| (smallest index on ties), or None when exhausted."""
    s = st._slots()
    if len(s) == 0:
        return None
    d = -st._D[s, s]
    i = int(np.argmax(d))
    if not d[i] > st.tol.pivot_floor:
        return None
    return int(st._slot_state[s[i]])


def schur_step(st: ContractionState, j) -> ContractionState:
    """Contract state ``j``: D <- D - D_Tj D_jT / D_jj, with the diagonal rebuilt."""
    if not st.in_T[j]:
        raise ValueError(f"state {j} is not in T")
    js = int(st._state_slot[j])
    d_jj = float(st._D[js, js])
    a = -d_jj
    if not a > st.tol.pivot_floor:
        raise PivotBreakdown(f"|D_jj| = {a!r} at state {j}")
    nb, cv, rv = st.coupling(j)
    assert np.all(cv >= 0) and np.all(rv >= 0), "Metzler sign pattern lost"
    rows = st._slot_state[nb]

    cholesky_append(st.chol_K, (rows, cv), d_jj, j, D_row_j=(rows, rv))
    if st.chol_M is not None:
        try:
            m_rank_one_update(st.chol_M, (rows, cv), d_jj, j=j)
        except UpdateBreakdown:
            st.chol_M.refactor(st.chol_K)

    for vec in st._tracked.values():
        x = vec[j]
        if x != 0.0:
            vec[rows] += (cv / a) * x
    st._fwd_ones[rows] += (cv / a) * st._fwd_ones[j]
    st._fwd_pi[rows] += (cv / a) * st._fwd_pi[j]

    _kernels.K.schur_update(st._D, nb.astype(np.int64), js, st.tol.truncation_ratio, st._absrow, st._inv_pi)
    st._absrow[js] = 0.0
    st.in_T[j] = False
    st.k += 1
    st.last_pivot = j
    st.last_pivot_abs = a
    if st.k % COMPACT_EVERY == 0:
        st._compact()
    return st


def marginal_logdet_gain(st: ContractionState, j) -> float:
    """ln|D_jj|, which equals ln|det K_{S+j}| - ln|det K_SS|."""
    js = st._state_slot[j]
    return float(np.log(abs(st._D[js, js])))
