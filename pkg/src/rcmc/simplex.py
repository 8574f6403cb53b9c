"""Projection onto the probability simplex in the pi-norm."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels

# a vector this close to the simplex is returned untouched
FEASIBLE_TOL = 1e-14


@dataclass(frozen=True)
class ProjectionResult:
    q: np.ndarray
    support_size: int
    mu: float


def project_pi(w, m) -> ProjectionResult:
    """argmin over the simplex of ||q - w||_pi.

    Sort by w_i/pi_i descending (ties to the smaller index), find the last
    position where t_j = w_j + pi_j (1 - sum w) / sum pi stays positive,
    then shift by pi * mu and clip at zero.
    """
    pi = m.pi if hasattr(m, "pi") else np.asarray(m, dtype=float)
    w = np.asarray(w, dtype=float)
    if w.shape != pi.shape:
        raise ValueError("w and pi differ in length")
    if not np.all(np.isfinite(w)):
        raise ValueError("w must be finite")
    if w.min() >= 0.0 and abs(math.fsum(w) - 1.0) <= FEASIBLE_TOL:
        return ProjectionResult(w.copy(), int(np.count_nonzero(w)), 0.0)

    order = np.argsort(-(w / pi), kind="stable")
    ell, mu = _kernels.K.simplex_scan(np.ascontiguousarray(w[order]), np.ascontiguousarray(pi[order]))
    q = np.maximum(w + pi * mu, 0.0)
    # cancellation in w + pi mu can leave the sum off by many ulps when |w| is
    # large; spread the residual over the support along pi, as the exact
    # projection onto the sum constraint would
    for _ in range(3):
        r = 1.0 - math.fsum(q)
        if abs(r) <= FEASIBLE_TOL:
            break
        sup = q > 0.0
        q[sup] += r * pi[sup] / pi[sup].sum()
        np.maximum(q, 0.0, out=q)
    return ProjectionResult(q, int(ell), float(mu))
