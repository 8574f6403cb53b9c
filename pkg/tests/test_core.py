import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from instances import K2, K3, make, random_laplacian, random_pi
from rcmc import Tolerances, build_from_laplacian, stationary_from_balance, validate
from rcmc.core import (
    BalanceInconsistent,
    ColumnSumViolation,
    DetailedBalanceViolation,
    DisconnectedGraph,
    KineticNetwork,
    NegativeOffDiagonal,
    NonPositivePi,
)


def test_validate_two_state():
    rm = validate(sp.csc_matrix(K2), [2 / 3, 1 / 3])
    assert rm.n == 2
    np.testing.assert_allclose(rm.dense(), K2)


def test_zero_matrix_is_valid():
    rm = validate(sp.csc_matrix((3, 3)), np.full(3, 1 / 3))
    assert rm.K.nnz == 0


def test_detailed_balance_violation():
    with pytest.raises(DetailedBalanceViolation):
        validate(sp.csc_matrix([[-1.0, 1.0], [1.0, -1.0]]), [2 / 3, 1 / 3])


def test_negative_offdiagonal():
    with pytest.raises(NegativeOffDiagonal):
        validate(sp.csc_matrix([[1.0, -1.0], [-1.0, 1.0]]), [0.5, 0.5])


def test_column_sum_violation():
    with pytest.raises(ColumnSumViolation):
        validate(sp.csc_matrix([[-2.0, 2.0], [1.0, -2.0]]), [2 / 3, 1 / 3])


def test_nonpositive_pi():
    with pytest.raises(NonPositivePi):
        validate(sp.csc_matrix(K2), [1.0, 0.0])


def test_all_violations_listed():
    with pytest.raises(NegativeOffDiagonal) as exc:
        validate(sp.csc_matrix([[-1.0, -1.0], [3.0, -2.0]]), [0.5, 0.5])
    names = [name for name, _ in exc.value.violations]
    assert "ColumnSumViolation" in names and "DetailedBalanceViolation" in names


def test_diagonal_rebuilt_from_columns():
    K = np.array(K2)
    K[0, 0] = -1.0 + 1e-13  # within tolerance, replaced
    rm = validate(sp.csc_matrix(K), [2 / 3, 1 / 3])
    assert rm.dense()[0, 0] == -1.0
    assert np.all(np.asarray(rm.K.sum(axis=0)).ravel() == 0.0)


def test_stationary_two_state():
    np.testing.assert_allclose(stationary_from_balance(sp.csc_matrix(K2)), [2 / 3, 1 / 3], rtol=1e-15)


def test_stationary_chain():
    np.testing.assert_allclose(stationary_from_balance(sp.csc_matrix(K3)), [0.5, 0.25, 0.25], rtol=1e-15)


def test_stationary_symmetric_uniform(rng):
    L = random_laplacian(8, 0.5, rng)
    np.testing.assert_allclose(stationary_from_balance(sp.csc_matrix(-L)), np.full(8, 1 / 8), rtol=1e-12)


def test_disconnected_reported():
    K = np.zeros((4, 4))
    K[:2, :2] = K2
    K[2:, 2:] = [[-1, 1], [1, -1]]
    with pytest.raises(DisconnectedGraph) as exc:
        stationary_from_balance(sp.csc_matrix(K))
    assert len(exc.value.components) == 2


def test_cycle_inconsistent():
    # 3-cycle with rates that admit no balanced pi
    K = np.array([[0, 1, 2], [2, 0, 1], [1, 2, 0]], dtype=float)
    K -= np.diag(K.sum(axis=0))
    with pytest.raises(BalanceInconsistent):
        stationary_from_balance(sp.csc_matrix(K))


def test_one_directional_edge():
    K = np.array([[-1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(BalanceInconsistent):
        stationary_from_balance(sp.csc_matrix(K))


def test_stationary_extreme_range():
    # pi spanning 600 orders of magnitude survives through log space
    K = np.array([[-1e-300, 1.0], [1e-300, -1.0]])
    pi = stationary_from_balance(sp.csc_matrix(K))
    assert pi[0] == pytest.approx(1.0) and pi[1] == pytest.approx(1e-300, rel=1e-12)


def test_laplacian_two_state():
    rm = build_from_laplacian([[1.0, -1.0], [-1.0, 1.0]], [0.5, 0.5])
    np.testing.assert_allclose(rm.dense(), [[-2, 2], [2, -2]])


def test_laplacian_zero():
    rm = build_from_laplacian(np.zeros((3, 3)), np.full(3, 1 / 3))
    assert rm.K.nnz == 0


def test_network_rejects_duplicates():
    with pytest.raises(ValueError):
        KineticNetwork(np.zeros(2), ((0, 1, 1.0), (1, 0, 2.0)), 300.0)
    with pytest.raises(ValueError):
        KineticNetwork(np.zeros(2), ((0, 0, 1.0),), 300.0)


def test_labels_and_lookup():
    rm = validate(sp.csc_matrix(K2), [2 / 3, 1 / 3], labels=("a", "b"))
    assert rm.index_of("b") == 1 and rm.label(0) == "a"
    assert make(K2).label(1) == "2"


def test_tolerances_reject_negative():
    with pytest.raises(ValueError):
        Tolerances(tol_rel=-1.0)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 12), density=st.floats(0.0, 1.0), seed=st.integers(0, 2**31))
def test_laplacian_roundtrip_recovers_pi(n, density, seed):
    rng = np.random.default_rng(seed)
    L = random_laplacian(n, density, rng)
    pi = random_pi(n, rng, 3.0)
    rm = build_from_laplacian(sp.csc_matrix(L), pi)
    np.testing.assert_allclose(stationary_from_balance(rm.K), pi, rtol=1e-9)
