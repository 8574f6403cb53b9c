import gc
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from instances import project_bruteforce, random_pi
from rcmc import project_pi
from rcmc.pimetric import PiMetric


def test_feasible_unchanged():
    pi = np.array([0.2, 0.3, 0.5])
    w = np.array([0.5, 0.0, 0.5])
    r = project_pi(w, pi)
    assert np.array_equal(r.q, w)
    assert r.support_size == 2


def test_uniform_example():
    r = project_pi(np.array([1.5, -0.5]), np.array([0.5, 0.5]))
    np.testing.assert_allclose(r.q, [1.0, 0.0], atol=1e-15)
    assert r.mu == pytest.approx(-1.0)  # multiplier on pi: w + pi * mu, pi_i = 1/2
    assert r.support_size == 1


def test_weighted_example():
    r = project_pi(np.array([0.8, 0.8]), PiMetric([2 / 3, 1 / 3]))
    np.testing.assert_allclose(r.q, [0.4, 0.6], rtol=1e-14)
    assert r.mu == pytest.approx(-0.6)
    assert r.support_size == 2


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        project_pi(np.array([np.nan, 1.0]), np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        project_pi(np.array([1.0]), np.array([0.5, 0.5]))


def test_boundary_excluded():
    # t_j = 0 exactly for the second entry: strict inequality leaves it out
    r = project_pi(np.array([2.0, 0.0]), np.array([0.5, 0.5]))
    assert r.support_size == 1
    np.testing.assert_array_equal(r.q, [1.0, 0.0])


@pytest.mark.parametrize("seed", range(40))
def test_matches_active_set_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 10))
    pi = random_pi(n, rng)
    w = rng.normal(0, 1, n)
    np.testing.assert_allclose(project_pi(w, pi).q, project_bruteforce(w, pi), atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(n=st.integers(1, 12), seed=st.integers(0, 2**31), scale=st.floats(1e-3, 1e3))
def test_property_kkt_and_idempotent(n, seed, scale):
    rng = np.random.default_rng(seed)
    pi = random_pi(n, rng, 2.0)
    w = rng.normal(0, scale, n)
    r = project_pi(w, pi)
    q = r.q
    assert q.min() >= 0.0
    assert abs(q.sum() - 1.0) <= 1e-12
    # KKT: on the support q - w = pi mu, off it w + pi mu <= 0
    sup = q > 0
    np.testing.assert_allclose((q - w)[sup] / pi[sup], r.mu, rtol=1e-9, atol=1e-9 * (1 + abs(r.mu)))
    assert np.all(w[~sup] + pi[~sup] * r.mu <= 1e-12 * (1 + abs(r.mu)))
    again = project_pi(q, pi).q
    assert np.array_equal(again, q)


@settings(max_examples=200, deadline=None)
@given(n=st.integers(1, 12), seed=st.integers(0, 2**31))
def test_property_pythagorean(n, seed):
    rng = np.random.default_rng(seed)
    pi = random_pi(n, rng)
    w = rng.normal(0, 1, n)
    a = rng.dirichlet(np.ones(n))
    q = project_pi(w, pi).q
    lhs = np.sum((q - a) ** 2 / pi)
    rhs = np.sum((w - a) ** 2 / pi)
    assert lhs <= rhs * (1 + 1e-12) + 1e-15


@pytest.mark.slow
def test_scaling_is_n_log_n():
    rng = np.random.default_rng(0)
    sizes = [10**3, 10**4, 10**5, 10**6]
    times = []
    for n in sizes:
        pi = random_pi(n, rng)
        w = rng.normal(0, 1, n) * pi * n
        project_pi(w, pi)
        times.append(min(_timed(project_pi, w, pi) for _ in range(9)))
    slope = np.polyfit(np.log(sizes), np.log(times), 1)[0]
    assert slope <= 1.2


def _timed(f, *args):
    gc.collect()
    gc.disable()
    try:
        t0 = time.perf_counter()
        f(*args)
        return time.perf_counter() - t0
    finally:
        gc.enable()
