"""Rate matrices from energies or Laplacians, synthetic networks, and file formats.

Formats
-------
network JSON
    ``{"states": [{"id", "energy_Jmol"}], "edges": [{"i", "j", "barrier_Jmol"}],
    "temperature_K", "gamma"}``. With ``"energy_unit": "kJ/mol"`` the keys
    ``energy`` and ``barrier`` are read in kJ/mol instead.
matrix text
    ``n nnz`` then ``i j value`` triplets (1-based), a ``pi`` line followed by
    n values, and optionally a ``labels`` line followed by n identifiers.
trajectory CSV
    ``k,t_seconds,state_id,q`` in long format.
error CSV
    ``k,t,pi_err,linf_err,boundA,boundB,flag``.
"""

from __future__ import annotations

import csv
import json
import math
import os
import warnings

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from .core import DEFAULT_TOL, EmptyAfterTruncation, KineticNetwork, RateMatrix, Tolerances, validate

K_B = 1.380649e-23  # J/K
PLANCK = 6.62607015e-34  # J s
GAS_R = 8.31446261815324  # J/(mol K)

TRUNCATION = 1e-200
FMT = "%.17g"


def rate_prefactor(T, gamma=1.0):
    """Gamma k_B T / h in 1/s."""
    return gamma * K_B * T / PLANCK


def build_canonical(net: KineticNetwork, truncation=TRUNCATION, tol: Tolerances = DEFAULT_TOL) -> RateMatrix:
    """Eyring rates K_ij = Gamma (k_B T/h) exp(-(E_ij - E_j)/RT) and Boltzmann pi.

    A pair is dropped when K_ij/pi_i (which equals K_ji/pi_j) falls below
    ``truncation``; states left without any edge are removed. The labels of
    the returned matrix are the surviving state identifiers.
    """
    T = float(net.temperature)
    if not T > 0:
        raise ValueError("temperature must be positive")
    n = net.n
    E = np.asarray(net.state_energies, dtype=float)
    RT = GAS_R * T
    log_pi = -E / RT
    log_pi -= logsumexp(log_pi)
    log_pref = math.log(rate_prefactor(T, net.transmission))
    log_cut = math.log(truncation) if truncation > 0 else -math.inf

    rows, cols, logs = [], [], []
    for i, j, barrier in net.edges:
        if barrier < max(E[i], E[j]):
            warnings.warn(f"barrier of edge ({i}, {j}) lies below an endpoint energy", RuntimeWarning, stacklevel=2)
        lij = log_pref - (barrier - E[j]) / RT
        lji = log_pref - (barrier - E[i]) / RT
        if lij - log_pi[i] < log_cut:
            continue
        rows += [i, j]
        cols += [j, i]
        logs += [lij, lji]

    keep = np.zeros(n, dtype=bool)
    keep[rows] = True
    if not keep.any():
        raise EmptyAfterTruncation("no edge survives truncation")
    new = np.full(n, -1, dtype=np.int64)
    new[keep] = np.arange(int(keep.sum()))
    m = int(keep.sum())
    K = sp.coo_matrix((np.exp(logs), (new[rows], new[cols])), shape=(m, m)).tocsc()
    K = K - sp.diags(np.asarray(K.sum(axis=0)).ravel())
    lp = log_pi[keep]
    pi = np.exp(lp - logsumexp(lp))
    ids = net.state_ids or tuple(str(i + 1) for i in range(n))
    labels = tuple(str(ids[i]) for i in np.flatnonzero(keep))
    return validate(K.tocsc(), pi, tol, labels)


def build_from_laplacian(L, pi, tol: Tolerances = DEFAULT_TOL, labels=()) -> RateMatrix:
    """K = -L Pi^-1 for a symmetric Laplacian L."""
    L = sp.csc_matrix(L, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if L.shape != (len(pi), len(pi)):
        raise ValueError("L and pi differ in size")
    if np.any(~(pi > 0)):
        raise ValueError("pi must be positive")
    K = -(L @ sp.diags(1.0 / pi))
    return validate(K.tocsc(), pi, tol, labels)


def synthesize(n, edge_density, energy_spread_kJmol, barrier_spread_kJmol, T=300.0, seed=0,
               window=None, gamma=1.0) -> KineticNetwork:
    """Random connected network with energies in kJ/mol spreads, stored in J/mol.

    A random spanning tree keeps the graph connected; further edges are added
    until ``edge_density`` (fraction of all pairs) is reached. With ``window``
    set, every edge joins states at most that far apart in index, which keeps
    elimination fill-in local like in real reaction networks.
    """
    if n < 2:
        raise ValueError("need at least two states")
    if not (0 < edge_density <= 1):
        raise ValueError("edge_density must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    E = rng.uniform(0.0, energy_spread_kJmol, n) * 1e3
    pairs = set()
    for i in range(1, n):
        lo = 0 if window is None else max(0, i - window)
        j = int(rng.integers(lo, i))
        pairs.add((j, i))
    target = max(n - 1, int(round(edge_density * n * (n - 1) / 2)))
    target = min(target, n * (n - 1) // 2 if window is None else
                 sum(min(i, window) for i in range(n)))
    while len(pairs) < target:
        i = int(rng.integers(0, n))
        if window is None:
            j = int(rng.integers(0, n))
        else:
            j = i + int(rng.integers(-window, window + 1))
        if j == i or not 0 <= j < n:
            continue
        pairs.add((min(i, j), max(i, j)))
    edges = []
    for i, j in sorted(pairs):
        b = max(E[i], E[j]) + rng.uniform(0.0, barrier_spread_kJmol) * 1e3
        edges.append((i, j, float(b)))
    perm = rng.permutation(n)  # hide the window structure from index order
    inv = np.empty(n, dtype=np.int64)
    inv[perm] = np.arange(n)
    edges = tuple((int(inv[i]), int(inv[j]), b) for i, j, b in edges)
    return KineticNetwork(E[perm], edges, float(T), gamma, tuple(str(i + 1) for i in range(n)))


# ---------------------------------------------------------------- network JSON

_UNITS = {"J/mol": 1.0, "kJ/mol": 1e3}


def read_network(path) -> KineticNetwork:
    with open(path) as fh:
        doc = json.load(fh)
    unit = doc.get("energy_unit")
    if unit is not None and unit not in _UNITS:
        raise ValueError(f"unknown energy_unit {unit!r}")

    def energy(rec, key):
        if unit is None:
            return float(rec[key + "_Jmol"])
        return float(rec[key]) * _UNITS[unit]

    states = doc["states"]
    ids = tuple(str(s["id"]) for s in states)
    index = {sid: k for k, sid in enumerate(ids)}
    if len(index) != len(ids):
        raise ValueError("duplicate state ids")
    E = np.array([energy(s, "energy") for s in states])
    edges = []
    for e in doc["edges"]:
        i, j = str(e["i"]), str(e["j"])
        if i not in index or j not in index:
            raise ValueError(f"edge refers to unknown state {i!r} or {j!r}")
        edges.append((index[i], index[j], energy(e, "barrier")))
    return KineticNetwork(E, tuple(edges), float(doc["temperature_K"]), float(doc.get("gamma", 1.0)), ids)


def write_network(net: KineticNetwork, path):
    ids = net.state_ids or tuple(str(i + 1) for i in range(net.n))
    doc = {
        "states": [{"id": ids[i], "energy_Jmol": float(e)} for i, e in enumerate(net.state_energies)],
        "edges": [{"i": ids[i], "j": ids[j], "barrier_Jmol": float(b)} for i, j, b in net.edges],
        "temperature_K": net.temperature,
        "gamma": net.transmission,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


# ---------------------------------------------------------------- matrix text


def write_matrix(rm: RateMatrix, path):
    K = rm.K.tocoo()
    order = np.lexsort((K.row, K.col))
    with open(path, "w") as fh:
        fh.write(f"{rm.n} {K.nnz}\n")
        for r, c, v in zip(K.row[order], K.col[order], K.data[order]):
            fh.write(f"{r + 1} {c + 1} {FMT % v}\n")
        fh.write("pi\n")
        for v in rm.pi:
            fh.write(FMT % v + "\n")
        if rm.labels:
            fh.write("labels\n")
            for lab in rm.labels:
                fh.write(f"{lab}\n")


def read_matrix(path, tol: Tolerances = DEFAULT_TOL, check=True):
    """Read a matrix file; returns a validated RateMatrix (or raw (K, pi, labels) with check=False)."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    n, nnz = (int(x) for x in lines[0].split())
    trip = [ln.split() for ln in lines[1 : 1 + nnz]]
    if len(trip) != nnz or any(len(t) != 3 for t in trip):
        raise ValueError("malformed triplet block")
    if lines[1 + nnz] != "pi":
        raise ValueError("missing pi block")
    pi = np.array([float(x) for x in lines[2 + nnz : 2 + nnz + n]])
    if len(pi) != n:
        raise ValueError("pi block is short")
    rest = lines[2 + nnz + n :]
    labels = ()
    if rest:
        if rest[0] != "labels" or len(rest) != n + 1:
            raise ValueError("malformed labels block")
        labels = tuple(rest[1:])
    r = np.array([int(t[0]) - 1 for t in trip], dtype=np.int64)
    c = np.array([int(t[1]) - 1 for t in trip], dtype=np.int64)
    v = np.array([float(t[2]) for t in trip])
    K = sp.csc_matrix((v, (r, c)), shape=(n, n))
    if not check:
        return K, pi, labels
    return validate(K, pi, tol, labels)


# ---------------------------------------------------------------- CSV output


def _num(x):
    return FMT % x


def write_trajectory(traj, rm: RateMatrix, path_or_file):
    """Long-format trajectory; the terminal limit record carries t = inf."""
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "t_seconds", "state_id", "q"])
        for e in traj.entries:
            for i, qi in enumerate(e.q):
                w.writerow([e.k, _num(e.t), rm.label(i), _num(qi)])
    finally:
        if own:
            fh.close()


def write_error_report(report, path_or_file):
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "t", "pi_err", "linf_err", "boundA", "boundB", "flag"])
        for r in report.records:
            w.writerow([r.k, _num(r.t), _num(r.pi_error), _num(r.linf_error),
                        _num(r.bound_A), _num(r.bound_B), r.flag])
    finally:
        if own:
            fh.close()


def read_vector(path) -> np.ndarray:
    """Whitespace or newline separated numbers."""
    with open(path) as fh:
        return np.array([float(x) for x in fh.read().replace(",", " ").split()])


def thread_limit(default=1) -> int:
    """Worker count from RCMC_THREADS."""
    raw = os.environ.get("RCMC_THREADS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"RCMC_THREADS must be an integer, got {raw!r}") from None
