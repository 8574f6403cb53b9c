"""Inner loops of the contraction, with a numba and a pure-numpy backend.

The backend is picked once at import time. Set ``RCMC_BACKEND=numpy`` to
force the fallback (numba is used whenever it imports). Both backends expose
the same functions and mutate their array arguments in place.
"""

import os

import numpy as np

try:
    import numba
    from numba import njit
except ImportError:  # pragma: no cover
    numba = None


# ------------------------------------------------------------------ numpy


def schur_update_np(D, nb, js, ratio, absrow, inv_pi):
    """Eliminate slot ``js`` from the dense working matrix ``D``.

    ``nb`` are the slots coupled to ``js``. Off-diagonals among them get
    the rank-one Schur term, row/column ``js`` are zeroed, tiny pairs are
    dropped and diagonals of touched columns are rebuilt from column sums.
    Row sums come from columns through detailed balance,
    D_rc = D_cr pi_r / pi_c, so every scan runs down a contiguous column.
    """
    a = -D[js, js]
    cv = D[nb, js].copy()
    rv = D[js, nb].copy()
    if len(nb):
        sub = D[np.ix_(nb, nb)]
        sub += np.outer(cv / a, rv)
        D[np.ix_(nb, nb)] = sub
    D[:, js] = 0.0
    D[js, :] = 0.0
    if len(nb) == 0:
        return
    D[nb, nb] = 0.0
    if ratio > 0.0:
        colmax = D[:, nb].max(axis=0)
        sub = D[np.ix_(nb, nb)]
        drop = (sub > 0) & (sub < ratio * colmax[None, :])
        drop |= drop.T
        if drop.any():
            sub[drop] = 0.0
            D[np.ix_(nb, nb)] = sub
    D[nb, nb] = -D[:, nb].sum(axis=0)
    off = (inv_pi[:, None] * D[:, nb]).sum(axis=0) - inv_pi[nb] * D[nb, nb]
    absrow[nb] = off / inv_pi[nb] - D[nb, nb]


def forward_np(b, k, indptr, rows, ratios, piv):
    """Unit lower-triangular elimination over the first ``k`` pivot columns."""
    for m in range(k):
        x = b[piv[m]]
        if x != 0.0:
            lo, hi = indptr[m], indptr[m + 1]
            b[rows[lo:hi]] -= ratios[lo:hi] * x


def backward_np(v, k, indptr, rows, ratios, piv):
    """Unit upper-triangular back substitution, pivots ``k-1`` down to 0."""
    for m in range(k - 1, -1, -1):
        lo, hi = indptr[m], indptr[m + 1]
        j = piv[m]
        v[j] = v[j] - ratios[lo:hi] @ v[rows[lo:hi]]


def backward2_np(v, w, k, indptr, rows, ratios, piv):
    """Two back substitutions sharing one pass over the factor."""
    for m in range(k - 1, -1, -1):
        lo, hi = indptr[m], indptr[m + 1]
        j = piv[m]
        r = rows[lo:hi]
        v[j] = v[j] - ratios[lo:hi] @ v[r]
        w[j] = w[j] - ratios[lo:hi] @ w[r]


def chol_update_np(G, off, x):
    """Rank-one update of the lower factor ``G[off:, off:]`` by ``x x^T``."""
    n = G.shape[0]
    x = x.copy()
    for c in range(off, n):
        i = c - off
        g = G[c, c]
        r = np.hypot(g, x[i])
        if not (r > 0.0) or not np.isfinite(r):
            return False
        cs = r / g
        sn = x[i] / g
        G[c, c] = r
        if c + 1 < n:
            col = (G[c + 1:, c] + sn * x[i + 1:]) / cs
            x[i + 1:] = cs * x[i + 1:] - sn * col
            G[c + 1:, c] = col
    return True


def lower_solve_np(G, off, b):
    """Solve ``G[off:, off:] y = b`` in place."""
    n = G.shape[0]
    for c in range(off, n):
        i = c - off
        b[i] /= G[c, c]
        if b[i] != 0.0:
            b[i + 1:] -= b[i] * G[c + 1:, c]


def upper_solve_np(G, off, b):
    """Solve ``G[off:, off:]^T y = b`` in place."""
    n = G.shape[0]
    for c in range(n - 1, off - 1, -1):
        i = c - off
        b[i] = (b[i] - G[c + 1:, c] @ b[i + 1:]) / G[c, c]


def simplex_scan_np(ws, ps):
    """Support size and multiplier for w, pi already sorted by w/pi descending."""
    cw = np.cumsum(ws)
    cp = np.cumsum(ps)
    t = ws + ps * (1.0 - cw) / cp
    pos = np.flatnonzero(t > 0)
    ell = int(pos[-1]) + 1
    return ell, (1.0 - cw[ell - 1]) / cp[ell - 1]


# ------------------------------------------------------------------ numba


def _schur_update_loop(D, nb, js, ratio, absrow, inv_pi):
    w = D.shape[0]
    a = -D[js, js]
    m = nb.shape[0]
    cv = np.empty(m)
    rv = np.empty(m)
    for p in range(m):
        cv[p] = D[nb[p], js] / a
        rv[p] = D[js, nb[p]]
    for q in range(m):
        c = nb[q]
        rq = rv[q]
        if rq != 0.0:
            for p in range(m):
                if p != q:
                    D[nb[p], c] += cv[p] * rq
    for r in range(w):
        D[r, js] = 0.0
    for c in range(w):
        D[js, c] = 0.0
    if ratio > 0.0:
        colmax = np.zeros(m)
        for q in range(m):
            c = nb[q]
            mx = 0.0
            for r in range(w):
                if r != c and D[r, c] > mx:
                    mx = D[r, c]
            colmax[q] = mx
        # every ordered pair is visited, so checking the column side suffices
        for q in range(m):
            c = nb[q]
            lim_c = ratio * colmax[q]
            for p in range(m):
                r = nb[p]
                x = D[r, c]
                if p != q and x > 0.0 and x < lim_c:
                    D[r, c] = 0.0
                    D[c, r] = 0.0
    for q in range(m):
        c = nb[q]
        s = 0.0
        sw = 0.0
        for r in range(w):
            if r != c:
                x = D[r, c]
                s += x
                sw += x * inv_pi[r]
        D[c, c] = -s
        absrow[c] = sw / inv_pi[c] + s


def _forward_loop(b, k, indptr, rows, ratios, piv):
    for m in range(k):
        x = b[piv[m]]
        if x != 0.0:
            for e in range(indptr[m], indptr[m + 1]):
                b[rows[e]] -= ratios[e] * x


def _backward_loop(v, k, indptr, rows, ratios, piv):
    for m in range(k - 1, -1, -1):
        j = piv[m]
        s = v[j]
        for e in range(indptr[m], indptr[m + 1]):
            s -= ratios[e] * v[rows[e]]
        v[j] = s


def _backward2_loop(v, w, k, indptr, rows, ratios, piv):
    for m in range(k - 1, -1, -1):
        j = piv[m]
        s = v[j]
        t = w[j]
        for e in range(indptr[m], indptr[m + 1]):
            r = rows[e]
            s -= ratios[e] * v[r]
            t -= ratios[e] * w[r]
        v[j] = s
        w[j] = t


def _chol_update_loop(G, off, x0):
    n = G.shape[0]
    x = x0.copy()
    for c in range(off, n):
        i = c - off
        g = G[c, c]
        r = np.hypot(g, x[i])
        if not (r > 0.0) or not np.isfinite(r):
            return False
        cs = r / g
        sn = x[i] / g
        inv_cs = g / r
        G[c, c] = r
        for rr in range(c + 1, n):
            ii = rr - off
            val = (G[rr, c] + sn * x[ii]) * inv_cs
            x[ii] = cs * x[ii] - sn * val
            G[rr, c] = val
    return True


def _lower_solve_loop(G, off, b):
    n = G.shape[0]
    for c in range(off, n):
        i = c - off
        b[i] /= G[c, c]
        bi = b[i]
        if bi != 0.0:
            for rr in range(c + 1, n):
                b[rr - off] -= bi * G[rr, c]


def _upper_solve_loop(G, off, b):
    n = G.shape[0]
    for c in range(n - 1, off - 1, -1):
        i = c - off
        s = b[i]
        for rr in range(c + 1, n):
            s -= G[rr, c] * b[rr - off]
        b[i] = s / G[c, c]


def _simplex_scan_loop(ws, ps):
    cw = 0.0
    cp = 0.0
    ell = 0
    best_w = 0.0
    best_p = 1.0
    for i in range(ws.shape[0]):
        cw += ws[i]
        cp += ps[i]
        if ws[i] + ps[i] * (1.0 - cw) / cp > 0.0:
            ell = i + 1
            best_w = cw
            best_p = cp
    return ell, (1.0 - best_w) / best_p


class _Backend:
    def __init__(self, name, **fns):
        self.name = name
        self.__dict__.update(fns)


NUMPY = _Backend(
    "numpy",
    schur_update=schur_update_np,
    forward=forward_np,
    backward=backward_np,
    backward2=backward2_np,
    chol_update=chol_update_np,
    lower_solve=lower_solve_np,
    upper_solve=upper_solve_np,
    simplex_scan=simplex_scan_np,
)

if numba is not None:
    _jit = njit(cache=True, nogil=True)
    # reassociation lets the dense column loops vectorize
    _jit_fast = njit(cache=True, nogil=True, fastmath={"reassoc", "contract"})
    NUMBA = _Backend(
        "numba",
        schur_update=_jit_fast(_schur_update_loop),
        forward=_jit(_forward_loop),
        backward=_jit(_backward_loop),
        backward2=_jit(_backward2_loop),
        chol_update=_jit_fast(_chol_update_loop),
        lower_solve=_jit_fast(_lower_solve_loop),
        upper_solve=_jit_fast(_upper_solve_loop),
        simplex_scan=_jit(_simplex_scan_loop),
    )
else:  # pragma: no cover
    NUMBA = None


def get_backend(name=None):
    """Return the kernel namespace for ``name`` ("numba" or "numpy")."""
    if name is None:
        name = os.environ.get("RCMC_BACKEND", "numba").strip().lower()
    if name == "numba" and NUMBA is not None:
        return NUMBA
    if name in ("numba", "numpy"):
        return NUMPY
    raise ValueError(f"unknown backend {name!r}")


K = get_backend()
