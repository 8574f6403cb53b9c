"""Approximate propagation: apply V without forming it and drive the contraction.

V = Omega* V_TT Omega with Omega = (-K_TS K_SS^-1 | I_T). Type A uses
V_TT = diag(1^T M)^-1 and Type B uses V_TT = M^-1, where
M = Omega Omega* = I_T + K_TS K_SS^-2 K_ST.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .contraction import ContractionState, schur_step, select_steady
from .core import DEFAULT_TOL, RateMatrix, Tolerances, TypeBWithoutMFactor, UpdateBreakdown
from .pimetric import (
    MCholeskyFactor,
    PiCholeskyFactor,
    gershgorin_sigma_inv,
    m_rank_one_update,
    spectral_radius_or_gershgorin,
)
from .simplex import project_pi

LN2 = math.log(2.0)


class Variant(str, enum.Enum):
    A = "A"
    B = "B"


class TimeMethod(str, enum.Enum):
    DIAG = "diag"
    EIGEN = "eigen"
    GERSHGORIN = "gershgorin"


@dataclass
class Snapshot:
    k: int
    t: float
    q: np.ndarray
    synthetic: bool = False
    # spectral data behind t (eigen/gershgorin only)
    sigma: float = float("nan")
    rho: float = float("nan")


@dataclass
class Trajectory:
    variant: Variant
    time_method: TimeMethod
    entries: list = field(default_factory=list)
    pivots: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def times(self):
        return np.array([e.t for e in self.entries])

    @property
    def time_reversals(self):
        """Steps k whose t^(k) does not exceed t^(k-1); kept, not suppressed."""
        t = self.times
        return [self.entries[i].k for i in range(1, len(t)) if not t[i] > t[i - 1]]


# ---------------------------------------------------------------- V application


def omega_apply(st: ContractionState, p) -> np.ndarray:
    """Omega p = p_T - K_TS K_SS^-1 p_S, over T in ascending state order."""
    f = np.array(p, dtype=float)
    st.chol_K.forward(f)
    return f[st.T]


def omega_adjoint_apply(st: ContractionState, z_T) -> np.ndarray:
    """Omega* z for z over T; the S block is filled by back substitution."""
    q = np.zeros(st.n)
    q[st.T] = z_T
    st.chol_K.backward(q)
    return q


def _type_b_core(st: ContractionState, w_T) -> np.ndarray:
    """M^-1 w over T (ascending state order)."""
    G = st.chol_M
    if G is None:
        raise TypeBWithoutMFactor("Type B needs a state built with m_order")
    T = st.T
    order_T = G.T
    pos = np.empty(st.n, dtype=np.int64)
    pos[order_T] = np.arange(len(order_T))
    if len(order_T) != len(T):
        raise RuntimeError("M factor is out of step with the contraction")
    w_f = np.empty(len(T))
    w_f[pos[T]] = w_T
    y = G.solve(w_f)
    return (st.metric.pi[order_T] * y)[pos[T]]


def apply_V(st: ContractionState, variant, p) -> np.ndarray:
    """V p for the current S. Type A divides Omega p by d = Omega pi / pi_T."""
    variant = Variant(variant)
    w = omega_apply(st, p)
    if variant is Variant.A:
        e = omega_apply(st, st.metric.pi)
        z = st.metric.pi[st.T] * (w / e)
    else:
        z = _type_b_core(st, w)
    return omega_adjoint_apply(st, z)


# ---------------------------------------------------------------- reference time


def spectra(st: ContractionState, method, use_exact_spectra=False, tol=1e-10, max_iter=5000):
    """(sigma(K_SS), rho(D)) exactly, by Lanczos, or as Gershgorin surrogates."""
    method = TimeMethod(method)
    C = st.chol_K
    if C.k == 0:
        raise ValueError("spectra need a nonempty S")
    T = st.T
    if method is TimeMethod.GERSHGORIN:
        return 1.0 / st.sigma_inv_hat(), st.rho_hat_D()
    if use_exact_spectra:
        S = C.pivot_order
        piS, piT = st.metric.pi[S], st.metric.pi[T]
        # 1/rho(-K_SS^-1) keeps sigma accurate when K_SS is badly scaled
        inv = np.empty((len(S), len(S)))
        for c, j in enumerate(S):
            e = np.zeros(st.n)
            e[j] = 1.0
            inv[:, c] = C.neg_inv_KSS(e)[S]
        Bs = inv * np.sqrt(piS)[None, :] / np.sqrt(piS)[:, None]
        sigma = 1.0 / float(np.max(np.linalg.eigvalsh(0.5 * (Bs + Bs.T))))
        if len(T) == 0:
            return sigma, 0.0
        D = st.D_dense()
        Bd = D * np.sqrt(piT)[None, :] / np.sqrt(piT)[:, None]
        rho = float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (Bd + Bd.T)))))
        return sigma, rho

    S = C.pivot_order
    piS = st.metric.pi[S]

    def kinv(x):
        full = np.zeros(st.n)
        full[S] = x
        return C.neg_inv_KSS(full)[S]

    inv_rho = spectral_radius_or_gershgorin(
        kinv, piS, lambda: gershgorin_sigma_inv(C), tol=tol, max_iter=max_iter)
    sigma = 1.0 / inv_rho
    if len(T) == 0:
        return sigma, 0.0
    D = st.D_sparse()
    if D.nnz == 0:
        return sigma, 0.0
    rho = spectral_radius_or_gershgorin(
        lambda x: D @ x, st.metric.pi[T], st.rho_hat_D, tol=tol, max_iter=max_iter)
    return sigma, rho


def time_from_spectra(sigma, rho) -> float:
    if rho == 0.0:
        return math.inf
    return LN2 / math.sqrt(sigma * rho)


def reference_time(st: ContractionState, method, j_prev=None, use_exact_spectra=False):
    """t^(k) for the state after the k-th step; +inf once D vanishes.

    Returns ``(t, sigma, rho)``; sigma and rho are NaN for the diag method.
    """
    method = TimeMethod(method)
    if method is TimeMethod.DIAG:
        return 1.0 / st.last_pivot_abs, math.nan, math.nan
    sigma, rho = spectra(st, method, use_exact_spectra)
    return time_from_spectra(sigma, rho), sigma, rho


# ---------------------------------------------------------------- driver


def _finish(q, variant, metric, tol):
    """Clamp roundoff negatives; project when needed (always for Type B)."""
    if variant is Variant.B:
        return project_pi(q, metric).q
    top = q.max()
    q = np.where((q < 0) & (q >= -1e-14 * top), 0.0, q)
    if q.min() < 0 or abs(q.sum() - 1.0) > 1e-12:
        q = project_pi(q, metric).q
    return q


def _check_initial(p, n):
    p = np.asarray(p, dtype=float)
    if p.shape != (n,):
        raise ValueError(f"initial vector has length {p.shape}, expected {n}")
    if not np.all(np.isfinite(p)) or p.min() < 0 or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError("initial vector must lie in the probability simplex")
    return p


def _contract_with_times(rm, p, time_method, t_max, tol, use_exact_spectra, on_step):
    """Run the contraction, call ``on_step(st, t, sigma, rho)`` for each kept step.

    Returns (state, exhausted) where exhausted means rank was reached.
    """
    st = ContractionState(rm, tol)
    st.track("p", p)
    st.track("pi", rm.pi)
    while True:
        j = select_steady(st)
        if j is None:
            return st, True
        schur_step(st, j)
        t, sigma, rho = reference_time(st, time_method, j, use_exact_spectra)
        if t > t_max:
            return st, False
        if math.isinf(t):
            return st, True
        on_step(st, t, sigma, rho)


def run(rm: RateMatrix, p, variant="A", time_method="gershgorin", t_max=math.inf,
        tol: Tolerances = DEFAULT_TOL, use_exact_spectra=False) -> Trajectory:
    """Emit (0, p) and one snapshot per contraction step until t > t_max or rank is exhausted.

    With t_max = inf a final record at t = inf holds the limiting
    distribution; it is flagged ``synthetic``.
    """
    variant, time_method = Variant(variant), TimeMethod(time_method)
    p = _check_initial(p, rm.n)
    if t_max < 0:
        raise ValueError("t_max must be nonnegative")
    traj = Trajectory(variant, time_method)
    traj.entries.append(Snapshot(0, 0.0, p.copy()))
    pi = rm.pi

    if variant is Variant.A:
        def emit(st, t, sigma, rho):
            traj.entries.append(Snapshot(st.k, t, _type_a_output(st), sigma=sigma, rho=rho))

        st, exhausted = _contract_with_times(rm, p, time_method, t_max, tol, use_exact_spectra, emit)
        traj.pivots = st.S.tolist()
        if exhausted and math.isinf(t_max):
            traj.entries.append(Snapshot(st.k, math.inf, _type_a_output(st), synthetic=True))
        return traj

    # Type B: the M factor needs the pivot order up front, so contract once
    # for the sequence and the times, then replay the M updates from C.
    kept = []
    st, exhausted = _contract_with_times(
        rm, p, time_method, t_max, tol, use_exact_spectra,
        lambda st, t, sigma, rho: kept.append((st.k, t, sigma, rho)))
    traj.pivots = st.S.tolist()
    terminal = exhausted and math.isinf(t_max)
    final = st.k if terminal else (kept[-1][0] if kept else 0)
    times = {k: (t, sg, rh) for k, t, sg, rh in kept}
    wanted = set(times) | ({final} if terminal else set())
    outputs = dict(_type_b_replay(st.chol_K, p, final, wanted))
    outputs.setdefault(0, p)
    for k, (t, sigma, rho) in sorted(times.items()):
        traj.entries.append(Snapshot(k, t, _finish(outputs[k], Variant.B, pi, tol), sigma=sigma, rho=rho))
    if terminal:
        traj.entries.append(Snapshot(final, math.inf, _finish(outputs[final], Variant.B, pi, tol), synthetic=True))
    return traj


def _type_b_replay(C: PiCholeskyFactor, p, final, wanted):
    """Yield (k, V p) for k in ``wanted``, rebuilding G from the pivot columns of C.

    Column m of C holds D's column at step m (rows and ratios) and |D_jj|,
    which is all the rank-one update of M needs.
    """
    metric = C.metric
    S = C.piv[: C.k]
    rest = np.flatnonzero(~C.in_S())
    G = MCholeskyFactor(np.concatenate([S, rest]), metric)
    w = np.array(p, dtype=float)  # Omega p, valid on T
    for m in range(final):
        j = int(C.piv[m])
        lo, hi = C.indptr[m], C.indptr[m + 1]
        rows = C.rows[lo:hi]
        ratios = C.col_ratio[lo:hi]
        a = C.pivot_abs[m]
        try:
            m_rank_one_update(G, (rows, -ratios * a), -a, j=j)
        except UpdateBreakdown:
            G.refactor(C)
        if w[j] != 0.0:
            w[rows] -= ratios * w[j]
        k = m + 1
        if k in wanted:
            T = G.T
            q = np.zeros(C.n)
            q[T] = metric.pi[T] * G.solve(w[T])
            C.backward(q, k)
            yield k, q


def _type_a_output(st: ContractionState):
    w = st.tracked("p")
    e = st.tracked("pi")
    z = st.metric.pi[st.T] * (w / e)
    q = omega_adjoint_apply(st, z)
    return _finish(q, Variant.A, st.metric.pi, st.tol)


def _type_b_output(st: ContractionState):
    return omega_adjoint_apply(st, _type_b_core(st, st.tracked("p")))
