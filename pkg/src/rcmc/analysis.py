"""Reference solutions and error analysis for contraction runs.

Dense eigendecomposition (optionally in extended precision), the exact
propagator, the theoretical error bounds, the optimal-time objective and the
super-state form of the method used as an equivalence oracle.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy.linalg import solve_triangular
from scipy.sparse.csgraph import connected_components

from .core import DenseLimitExceeded, RateMatrix, ZeroPivot
from .pimetric import PiMetric
from .propagator import Snapshot, TimeMethod, Trajectory, Variant

DENSE_LIMIT = 512
LN2 = math.log(2.0)


@dataclass
class Eigenbasis:
    lambdas: np.ndarray  # 0 = lambda_1 >= lambda_2 >= ...
    U: np.ndarray  # columns are pi-orthonormal eigenvectors
    pi: np.ndarray
    precision: int = 16
    mp_lambdas: list = field(default=None, repr=False)
    mp_U: object = field(default=None, repr=False)
    unresolved: int = 0  # nonzero modes below the working precision

    @property
    def n(self):
        return len(self.lambdas)

    def coefficients(self, p):
        """<u_k, p>_pi for every k."""
        return self.U.T @ (np.asarray(p, dtype=float) / self.pi)


def dense_eigendecompose(rm: RateMatrix, precision_digits=None, dense_limit=DENSE_LIMIT, tol=1e-9):
    """Eigenpairs of K from the symmetric matrix Pi^-1/2 K Pi^1/2.

    The zero eigenvalues (one per connected component) are set to exactly 0;
    a connected system gets u_1 = pi. ``precision_digits`` switches to mpmath.
    """
    n = rm.n
    if precision_digits is None and n > dense_limit:
        raise DenseLimitExceeded(f"n = {n} exceeds the dense limit {dense_limit}")
    K = rm.K.toarray()
    pi = rm.pi
    sq = np.sqrt(pi)
    ncomp = connected_components((abs(rm.K) + abs(rm.K.T)).tocsr(), directed=False)[0] if n > 1 else 1

    mp_l = mp_U = None
    if precision_digits is None:
        B = K * sq[None, :] / sq[:, None]
        B = 0.5 * (B + B.T)
        np.fill_diagonal(B, 0.0)
        # diagonal from B sqrt(pi) = 0 so the stored diagonal cannot leak mass
        np.fill_diagonal(B, -(B.T @ sq) / sq)
        vals, vecs = np.linalg.eigh(B)
        vals, vecs = vals[::-1].copy(), vecs[:, ::-1]
        U = sq[:, None] * vecs
        digits = 16
    else:
        digits = int(precision_digits)
        with mpmath.workdps(digits):
            pim = [mpmath.mpf(x) for x in pi]
            sqm = [mpmath.sqrt(x) for x in pim]
            B = mpmath.matrix(n, n)
            for i in range(n):
                for j in range(n):
                    if K[i, j] != 0:
                        B[i, j] = mpmath.mpf(K[i, j]) * sqm[j] / sqm[i]
            for i in range(n):
                for j in range(i + 1, n):
                    s = (B[i, j] + B[j, i]) / 2
                    B[i, j] = B[j, i] = s
            for j in range(n):
                B[j, j] = 0
                B[j, j] = -mpmath.fsum(B[i, j] * sqm[i] for i in range(n)) / sqm[j]
            E, Q = mpmath.eigsy(B)
            idx = sorted(range(n), key=lambda i: E[i], reverse=True)
            mp_l = [E[i] for i in idx]
            mp_U = mpmath.matrix(n, n)
            for c, i in enumerate(idx):
                for r in range(n):
                    mp_U[r, c] = sqm[r] * Q[r, i]
            for c in range(ncomp):
                mp_l[c] = mpmath.mpf(0)
            if ncomp == 1:
                for r in range(n):
                    mp_U[r, 0] = pim[r]
            vals = np.array([float(x) for x in mp_l])
            U = np.array([[float(mp_U[r, c]) for c in range(n)] for r in range(n)])

    scale = max(np.abs(vals).max(), 1e-300)
    if np.any(vals[ncomp:] > tol * scale) or np.any(vals[:ncomp] > tol * scale):
        warnings.warn("positive eigenvalues clamped to zero", RuntimeWarning, stacklevel=2)
    vals[:ncomp] = 0.0
    resolution = n * 10.0 ** (-digits) * scale
    unresolved = int(np.sum(vals[ncomp:] > -resolution))
    if unresolved:
        warnings.warn(f"{unresolved} eigenvalues lie below the {digits}-digit resolution; "
                      "raise precision_digits", RuntimeWarning, stacklevel=2)
    # modes too slow to resolve at this precision still decay, just unmeasurably
    vals[ncomp:] = np.minimum(vals[ncomp:], -np.finfo(float).tiny)
    if ncomp == 1:
        U[:, 0] = pi
    for c in range(ncomp):
        if U[:, c].sum() < 0:
            U[:, c] = -U[:, c]
    return Eigenbasis(vals, U, pi.copy(), digits, mp_l, mp_U, unresolved)


def required_digits(rm: RateMatrix) -> int:
    """Working digits that resolve every mode: double when the diagonal spans few decades."""
    d = np.abs(rm.K.diagonal())
    d = d[d > 0]
    if d.size == 0:
        return 16
    span = math.log10(d.max() / d.min())
    return 16 if span < 6 else int(math.ceil(span)) + 20


def oracle_basis(rm: RateMatrix, precision_digits=None, dense_limit=DENSE_LIMIT):
    """Eigenbasis at the given precision, or at the least precision that resolves all modes."""
    if precision_digits is not None:
        return dense_eigendecompose(rm, precision_digits, dense_limit)
    digits = required_digits(rm)
    if digits == 16:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            eb = dense_eigendecompose(rm, None, dense_limit)
        if not eb.unresolved:
            return eb
        digits = 40
    return dense_eigendecompose(rm, digits, dense_limit)


def _decay(lambdas, t):
    if math.isinf(t):
        return np.where(lambdas == 0.0, 1.0, 0.0)
    return np.exp(t * lambdas)


def exact_solution(eb: Eigenbasis, p, t) -> np.ndarray:
    """e^{tK} p = sum_k e^{t lambda_k} <u_k, p> u_k."""
    p = np.asarray(p, dtype=float)
    if eb.mp_U is not None:
        with mpmath.workdps(eb.precision):
            n = eb.n
            pm = [mpmath.mpf(x) for x in p]
            pim = [mpmath.mpf(x) for x in eb.pi]
            out = [mpmath.mpf(0)] * n
            for c in range(n):
                coef = mpmath.fsum(eb.mp_U[r, c] * pm[r] / pim[r] for r in range(n))
                lam = eb.mp_lambdas[c]
                if math.isinf(t):
                    g = mpmath.mpf(1) if lam == 0 else mpmath.mpf(0)
                else:
                    g = mpmath.exp(mpmath.mpf(t) * lam)
                w = g * coef
                for r in range(n):
                    out[r] += w * eb.mp_U[r, c]
            return np.array([float(x) for x in out])
    return eb.U @ (_decay(eb.lambdas, t) * eb.coefficients(p))


# ---------------------------------------------------------------- bounds


def offdiag_max(rm: RateMatrix) -> float:
    """max over i != j of K_ij / pi_i (the off-diagonal max norm of Pi^-1 K)."""
    coo = rm.K.tocoo()
    off = coo.row != coo.col
    if not np.any(off):
        return 0.0
    return float(np.max(coo.data[off] / rm.pi[coo.row[off]]))


def gth_eliminate(K, S):
    """Eliminate S from a dense rate matrix without subtractive cancellation.

    Pivots are recomputed as negated off-diagonal column sums, so every
    update adds nonnegative terms. Returns ``(neg_inv_KSS, D)`` with the
    rows and columns of both in the order of ``S`` and of the remaining
    states (ascending).
    """
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    S = [int(j) for j in S]
    T = np.setdiff1d(np.arange(n), S)
    order = np.concatenate([np.asarray(S, dtype=int), T])
    W = K[np.ix_(order, order)].copy()
    s = len(S)
    piv = np.empty(s)
    for m in range(s):
        col, row = W[m + 1 :, m], W[m, m + 1 :]
        piv[m] = col.sum()
        if not piv[m] > 0:
            raise ZeroPivot(f"state {S[m]} has no outgoing rate left")
        W[m + 1 :, m + 1 :] += np.outer(col, row) / piv[m]
    N = np.tril(W[:s, :s], -1) / piv[None, :]
    R = np.triu(W[:s, :s], 1) / piv[:, None]
    eye = np.eye(s)
    Linv = solve_triangular(eye - N, eye, lower=True, unit_diagonal=True)
    neg_inv = solve_triangular(eye - R, Linv / piv[:, None], lower=False, unit_diagonal=True)
    D = W[s:, s:].copy()
    np.fill_diagonal(D, 0.0)
    D[np.diag_indices_from(D)] = -D.sum(axis=0)
    return neg_inv, D


def dense_spectra(rm: RateMatrix, S):
    """(sigma(K_SS), rho(D), offmax) from dense eigenvalue problems.

    sigma is taken as 1/rho(-K_SS^-1): the smallest eigenvalue of K_SS
    itself is lost to roundoff when the diagonal spans many decades.
    """
    S = np.asarray(S, dtype=int)
    T = np.setdiff1d(np.arange(rm.n), S)
    pi = rm.pi
    neg_inv, D = gth_eliminate(rm.K.toarray(), S)
    sqS, sqT = np.sqrt(pi[S]), np.sqrt(pi[T])
    B = neg_inv * sqS[None, :] / sqS[:, None]
    sigma = 1.0 / float(np.max(np.linalg.eigvalsh(0.5 * (B + B.T))))
    if len(T):
        Bd = D * sqT[None, :] / sqT[:, None]
        rho = float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (Bd + Bd.T)))))
    else:
        rho = 0.0
    return sigma, rho, offdiag_max(rm)


def _min_terms(eb: Eigenbasis, spectra, t, variant):
    sigma, rho, offmax = spectra
    lam = eb.lambdas
    mag = np.abs(lam)
    decay = _decay(lam, t)
    one_minus = 1.0 - decay if math.isinf(t) else -np.expm1(t * lam)
    with np.errstate(divide="ignore", over="ignore"):
        alpha = np.where(mag > 0, rho / np.where(mag > 0, mag, 1.0), np.inf) + decay
    if Variant(variant) is Variant.B:
        beta = mag / sigma + one_minus
    else:
        beta = (mag + np.sqrt(2.0 * offmax * mag)) / sigma + one_minus
    return np.minimum(1.0, np.minimum(alpha, beta))


def error_bound(eb: Eigenbasis, S, spectra, t, p, variant) -> float:
    """min(sum_k |<u_k,p>|/||p|| min(1, alpha_k, beta_k), 1)."""
    if len(S) == 0:
        raise ValueError("the bound needs a nonempty S")
    p = np.asarray(p, dtype=float)
    pnorm = math.sqrt(float(np.sum(p * p / eb.pi)))
    w = np.abs(eb.coefficients(p)) / pnorm
    return float(min(np.sum(w * _min_terms(eb, spectra, t, variant)), 1.0))


def expected_error_bound(eb: Eigenbasis, S, spectra, t, variant) -> float:
    """Bound on the mean error over uniformly drawn vertex initial vectors."""
    if len(S) == 0:
        raise ValueError("the bound needs a nonempty S")
    m = _min_terms(eb, spectra, t, variant)
    return float(min(math.sqrt(np.mean(m * m)), 1.0))


def pi_error(q, x, m, p_norm=1.0) -> float:
    pi = m.pi if isinstance(m, PiMetric) else np.asarray(m, dtype=float)
    d = np.asarray(q, dtype=float) - np.asarray(x, dtype=float)
    return float(math.sqrt(np.sum(d * d / pi)) / p_norm)


def linf_error(q, x) -> float:
    return float(np.max(np.abs(np.asarray(q, dtype=float) - np.asarray(x, dtype=float))))


# ---------------------------------------------------------------- optimal time


def optimal_time(a, b) -> float:
    """ln 2 / sqrt(a b), the minimizer of the error objective."""
    if not (a > 0 and b > 0):
        raise ValueError("a and b must be positive")
    return LN2 / math.sqrt(a * b)


def time_objective(t, a, b, iters=200):
    """f(t) = max over lambda < 0 of min(-a/lambda + e^{t lambda}, -lambda/b + 1 - e^{t lambda}).

    alpha increases and beta decreases in lambda, so the max sits at their
    crossing; it is found by bisection on log|lambda|, vectorized over t.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))

    def gap(logmu):
        mu = np.exp(logmu)
        e = np.exp(-t * mu)
        return a / mu + e - (mu / b - np.expm1(-t * mu)), mu, e

    center = 0.5 * (math.log(a) + math.log(b))
    lo = np.full_like(t, center - 1.0)  # gap > 0 here (small |lambda|)
    hi = np.full_like(t, center + 1.0)  # gap < 0 here
    for _ in range(200):
        g, _, _ = gap(lo)
        bad = g <= 0
        if not bad.any():
            break
        lo[bad] -= 2.0
    for _ in range(200):
        g, _, _ = gap(hi)
        bad = g >= 0
        if not bad.any():
            break
        hi[bad] += 2.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        g, _, _ = gap(mid)
        pos = g > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
        if np.all(hi - lo < 1e-15):
            break

    def value(logmu):
        mu = np.exp(logmu)
        e = np.exp(-t * mu)
        return np.minimum(a / mu + e, mu / b - np.expm1(-t * mu))

    out = np.maximum(value(lo), value(hi))
    return out if out.size > 1 else float(out[0])


# ---------------------------------------------------------------- super-state form


@dataclass
class OriginalRun:
    trajectory: Trajectory
    omegas: list  # Omega^(k) restricted to T^(k) rows, per k >= 1
    rate_matrices: list  # K^(k) over T^(k)
    sigmas: list
    T_sets: list


def original_rcmc(rm: RateMatrix, p, t_max=math.inf, pivots=None, max_n=200) -> OriginalRun:
    """Super-state form of the method: dense Omega, populations and lumped rates.

    Steady states come from the largest off-diagonal of K^(k-1) unless
    ``pivots`` forces a sequence; then t^(k) is taken from the largest entry
    of the forced column.
    """
    n = rm.n
    if n > max_n:
        raise DenseLimitExceeded(f"n = {n} exceeds {max_n}")
    pi = rm.pi
    Kk = rm.K.toarray()
    Om = np.eye(n)
    pv = np.asarray(p, dtype=float).copy()
    T = list(range(n))
    traj = Trajectory(Variant.A, TimeMethod.DIAG)
    traj.entries.append(Snapshot(0, 0.0, pv.copy()))
    out = OriginalRun(traj, [], [], [], [])
    k = 0
    while len(T) > 1:
        Ta = np.array(T)
        if pivots is not None:
            if k >= len(pivots):
                break
            j = int(pivots[k])
            others = Ta[Ta != j]
            top = Kk[others, j].max() if len(others) else 0.0
        else:
            sub = Kk[np.ix_(Ta, Ta)].copy()
            np.fill_diagonal(sub, -np.inf)
            flat = int(np.argmax(sub))
            i_loc, j_loc = divmod(flat, len(Ta))
            top = sub[i_loc, j_loc]
            j = int(Ta[j_loc])
        t = 1.0 / top if top > 0 else math.inf
        if t > t_max or (pivots is None and top <= 0):
            break
        T.remove(j)
        Tn = np.array(T)
        s = Kk[Tn, j].sum()
        if not s > 0:
            raise ZeroPivot(f"state {j} has no outgoing rate inside T")
        sigma = 1.0 / s
        col = Kk[Tn, j].copy()
        Om[Tn, :] += sigma * col[:, None] * Om[j, :][None, :]
        pv[Tn] += sigma * col * pv[j]
        denom = Om[Tn, :] @ pi
        q = pi * ((pv[Tn] / denom) @ Om[Tn, :])
        row = Kk[j, Tn].copy()
        Kk[np.ix_(Tn, Tn)] = (Kk[np.ix_(Tn, Tn)] + sigma * np.outer(col, row)) / (1.0 + sigma * row)[None, :]
        k += 1
        traj.entries.append(Snapshot(k, t, q))
        traj.pivots.append(j)
        out.omegas.append(Om[Tn, :].copy())
        out.rate_matrices.append(Kk[np.ix_(Tn, Tn)].copy())
        out.sigmas.append(sigma)
        out.T_sets.append(Tn.copy())
    return out


# ---------------------------------------------------------------- dense V and reports


def dense_V(rm: RateMatrix, S, variant) -> np.ndarray:
    """V = Omega* V_TT Omega assembled densely with LU solves."""
    n = rm.n
    S = np.asarray(S, dtype=int)
    T = np.setdiff1d(np.arange(n), S)
    K = rm.K.toarray()
    pi = rm.pi
    Om = np.zeros((len(T), n))
    Om[:, T] = np.eye(len(T))
    if len(S):
        Om[:, S] = -np.linalg.solve(K[np.ix_(S, S)].T, K[np.ix_(T, S)].T).T
    Om_star = pi[:, None] * Om.T / pi[T][None, :]
    M = Om @ Om_star
    if Variant(variant) is Variant.A:
        core = np.diag(1.0 / M.sum(axis=0))
    else:
        core = np.linalg.inv(M)
    return Om_star @ core @ Om


PRECISION_FLOOR = 1e-12


@dataclass
class ErrorRecord:
    k: int
    t: float
    pi_error: float  # after projection
    linf_error: float
    pi_error_raw: float  # V p before projection
    bound_A: float
    bound_B: float
    expected_bound: float

    @property
    def flag(self):
        if self.bound_B < PRECISION_FLOOR:
            return "precision-limited"
        return "ok" if self.pi_error <= self.bound_B + 1e-9 else "violated"


@dataclass
class ErrorReport:
    variant: Variant
    records: list


def error_report(rm: RateMatrix, traj: Trajectory, p, eb: Eigenbasis = None, workers=1) -> ErrorReport:
    """Measured errors of every snapshot (k >= 1) against the exact solution, with bounds.

    Records are independent, so ``workers > 1`` evaluates them on a thread pool.
    """
    eb = eb or oracle_basis(rm)
    p = np.asarray(p, dtype=float)
    pnorm = math.sqrt(float(np.sum(p * p / rm.pi)))

    def one(e):
        S = traj.pivots[: e.k]
        spectra = dense_spectra(rm, S)
        x = exact_solution(eb, p, e.t)
        raw = dense_V(rm, S, traj.variant) @ p
        return ErrorRecord(
            e.k, e.t, pi_error(e.q, x, rm.pi, pnorm), linf_error(e.q, x), pi_error(raw, x, rm.pi, pnorm),
            error_bound(eb, S, spectra, e.t, p, Variant.A), error_bound(eb, S, spectra, e.t, p, Variant.B),
            expected_error_bound(eb, S, spectra, e.t, traj.variant))

    snaps = [e for e in traj.entries if e.k > 0]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            recs = list(ex.map(one, snaps))
    else:
        recs = [one(e) for e in snaps]
    return ErrorReport(Variant(traj.variant), recs)
