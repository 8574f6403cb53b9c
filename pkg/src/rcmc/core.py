"""Rate matrices with detailed balance: types, validation and shared tolerances.

A rate matrix K is stored column-oriented: ``K[i, j]`` is the rate of the
transition j -> i, off-diagonals are nonnegative, columns sum to zero and
``K[i, j] * pi[j] == K[j, i] * pi[i]`` for the stationary distribution ``pi``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.special import logsumexp


# ---------------------------------------------------------------- errors


class RCMCError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(RCMCError, ValueError):
    """A rate-matrix axiom is violated.

    ``violations`` lists every failed axiom as ``(name, detail)`` pairs,
    where detail names the worst offending index pair.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        msg = "; ".join(f"{name}: {detail}" for name, detail in self.violations)
        super().__init__(msg)


class NegativeOffDiagonal(ValidationError):
    pass


class ColumnSumViolation(ValidationError):
    pass


class DetailedBalanceViolation(ValidationError):
    pass


class NonPositivePi(ValidationError):
    pass


class DisconnectedGraph(RCMCError, ValueError):
    def __init__(self, labels):
        self.labels = np.asarray(labels)
        self.components = [np.flatnonzero(self.labels == c) for c in np.unique(self.labels)]
        sizes = [len(c) for c in self.components]
        super().__init__(f"graph has {len(sizes)} components (sizes {sizes})")


class BalanceInconsistent(RCMCError, ValueError):
    pass


class PivotBreakdown(RCMCError, ArithmeticError):
    pass


class UpdateBreakdown(RCMCError, ArithmeticError):
    pass


class NoConvergence(RCMCError, ArithmeticError):
    pass


class TypeBWithoutMFactor(RCMCError, ValueError):
    pass


class DenseLimitExceeded(RCMCError, ValueError):
    pass


class ZeroPivot(RCMCError, ArithmeticError):
    pass


class EmptyAfterTruncation(RCMCError, ValueError):
    pass


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class Tolerances:
    tol_rel: float = 1e-10
    tol_abs: float = 0.0
    pivot_floor: float = 1e-300
    truncation_ratio: float = 1e-200

    def __post_init__(self):
        for name in ("tol_rel", "tol_abs", "pivot_floor", "truncation_ratio"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")


DEFAULT_TOL = Tolerances()


# ---------------------------------------------------------------- types


@dataclass(frozen=True, eq=False)
class RateMatrix:
    """Validated rate matrix. Build through :func:`validate`.

    ``labels`` carries the original state identifiers (after any truncation).
    """

    K: sp.csc_matrix
    pi: np.ndarray
    labels: tuple = field(default=())

    @property
    def n(self) -> int:
        return self.K.shape[0]

    def dense(self) -> np.ndarray:
        return self.K.toarray()

    def label(self, i: int) -> str:
        return str(self.labels[i]) if self.labels else str(i + 1)

    def index_of(self, label) -> int:
        """Index of a state given its identifier."""
        names = [str(x) for x in self.labels] if self.labels else [str(i + 1) for i in range(self.n)]
        try:
            return names.index(str(label))
        except ValueError:
            raise KeyError(f"unknown state {label!r}") from None


@dataclass(frozen=True)
class KineticNetwork:
    """States with free energies (J/mol) and transition-state edges."""

    state_energies: np.ndarray
    edges: tuple  # (i, j, barrier J/mol), 0-based state indices
    temperature: float
    transmission: float = 1.0
    state_ids: tuple = ()

    def __post_init__(self):
        n = len(self.state_energies)
        seen = set()
        for i, j, e in self.edges:
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise ValueError(f"edge ({i}, {j}) does not join two distinct states")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate edge between {i} and {j}")
            seen.add(key)
            if not np.isfinite(e):
                raise ValueError(f"barrier of edge ({i}, {j}) is not finite")
        if self.state_ids and len(self.state_ids) != n:
            raise ValueError("state_ids length mismatch")

    @property
    def n(self) -> int:
        return len(self.state_energies)


# ---------------------------------------------------------------- validation


def _offdiag(K: sp.spmatrix) -> sp.csc_matrix:
    K = sp.csc_matrix(K, dtype=float, copy=True)
    K.setdiag(0.0)
    K.eliminate_zeros()
    return K


def validate(K, pi, tol: Tolerances = DEFAULT_TOL, labels=()) -> RateMatrix:
    """Check RCM1-RCM3 and positivity of ``pi``.

    Raises the error class of the first failed axiom; its ``violations``
    attribute lists all of them. On success the diagonal is replaced by the
    negated off-diagonal column sums.
    """
    K = sp.csc_matrix(K, dtype=float)
    K.sum_duplicates()
    pi = np.asarray(pi, dtype=float)
    n = K.shape[0]
    if K.shape != (n, n):
        raise ValueError("K must be square")
    if pi.shape != (n,):
        raise ValueError("pi has the wrong length")

    found = []

    if not np.all(np.isfinite(pi)) or np.any(pi <= 0) or abs(pi.sum() - 1.0) > max(tol.tol_rel, 4 * n * np.finfo(float).eps):
        i = int(np.argmin(pi)) if np.all(np.isfinite(pi)) else int(np.flatnonzero(~np.isfinite(pi))[0])
        found.append((NonPositivePi, "NonPositivePi", f"min pi at {i} = {pi[i]!r}, sum = {pi.sum()!r}"))

    coo = K.tocoo()
    off = coo.row != coo.col
    r, c, v = coo.row[off].astype(np.int64), coo.col[off].astype(np.int64), coo.data[off]
    if not np.all(np.isfinite(K.data)):
        found.append((NegativeOffDiagonal, "NegativeOffDiagonal", "non-finite entries"))
    elif np.any(v < 0):
        w = int(np.argmin(v))
        found.append((NegativeOffDiagonal, "NegativeOffDiagonal", f"K[{r[w]},{c[w]}] = {v[w]!r}"))

    colsum = np.bincount(coo.col, coo.data, minlength=n)
    colmax = np.zeros(n)
    np.maximum.at(colmax, coo.col, np.abs(coo.data))
    excess = np.abs(colsum) - (tol.tol_abs + tol.tol_rel * colmax)
    if np.any(excess > 0):
        j = int(np.argmax(excess))
        found.append((ColumnSumViolation, "ColumnSumViolation", f"column {j} sums to {colsum[j]!r}"))

    if len(v) and np.all(pi > 0):
        # flux K_ij pi_j against the flux of the transposed entry (0 if absent)
        flux = v * pi[c]
        key = r * n + c
        order = np.argsort(key)
        ks = key[order]
        pos = np.minimum(np.searchsorted(ks, c * n + r), len(ks) - 1)
        has = ks[pos] == c * n + r
        back = np.where(has, flux[order[pos]], 0.0)
        gap = np.abs(flux - back)
        bad = gap - tol.tol_rel * np.maximum(flux, back)
        if np.any(bad > 0):
            scale = np.maximum(flux, back)
            w = int(np.argmax(bad / np.where(scale > 0, scale, 1.0)))
            found.append((DetailedBalanceViolation, "DetailedBalanceViolation",
                          f"pair ({r[w]},{c[w]}): K_ij pi_j - K_ji pi_i = {gap[w]!r}"))

    if found:
        cls = found[0][0]
        raise cls([(name, detail) for _, name, detail in found])

    keep = v != 0
    r, c, v = r[keep], c[keep], v[keep]
    dvals = -np.bincount(c, v, minlength=n)
    diag = np.flatnonzero(dvals)
    Kc = sp.csc_matrix((np.concatenate([v, dvals[diag]]),
                        (np.concatenate([r, diag]), np.concatenate([c, diag]))), shape=(n, n))
    Kc.sort_indices()
    return RateMatrix(Kc, pi / pi.sum(), tuple(labels))


def stationary_from_balance(K, tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    """Recover pi from detailed balance along a BFS spanning tree.

    Works in log space so that pi may span hundreds of orders of magnitude.
    """
    K = _offdiag(K)
    n = K.shape[0]
    if n == 1:
        return np.ones(1)
    if K.nnz and K.data.min() < 0:
        raise NegativeOffDiagonal([("NegativeOffDiagonal", "negative off-diagonal entry")])
    sym = (K + K.T).tocsr()
    ncomp, lab = connected_components(sym, directed=False)
    if ncomp > 1:
        raise DisconnectedGraph(lab)

    Kr = K.tocsr()
    logpi = np.full(n, np.nan)
    logpi[0] = 0.0
    queue = deque([0])
    while queue:
        j = queue.popleft()
        lo, hi = sym.indptr[j], sym.indptr[j + 1]
        for i in sym.indices[lo:hi]:
            if not np.isnan(logpi[i]):
                continue
            kij = Kr[i, j]  # j -> i
            kji = Kr[j, i]
            if kij <= 0 or kji <= 0:
                raise BalanceInconsistent(f"edge ({i},{j}) is one-directional")
            # K_ij pi_j = K_ji pi_i
            logpi[i] = logpi[j] + np.log(kij) - np.log(kji)
            queue.append(i)
    logpi -= logsumexp(logpi)
    pi = np.exp(logpi)

    coo = K.tocoo()
    a = coo.data * pi[coo.col]
    b = np.asarray(Kr[coo.col, coo.row]).ravel() * pi[coo.row]
    bad = np.abs(a - b) > tol.tol_rel * np.maximum(a, b)
    if np.any(bad):
        w = int(np.flatnonzero(bad)[0])
        raise BalanceInconsistent(f"cycle through edge ({coo.row[w]},{coo.col[w]}) breaks detailed balance")
    return pi
