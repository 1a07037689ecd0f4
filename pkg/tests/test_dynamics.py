import numpy as np
import pytest
from hypothesis import given, strategies as st

from netstab.dynamics import (LocalParams, assemble_global, extract_local, frobenius_check, local_regressor,
                              param_dim, param_layout, step_truth)
from netstab.errors import MissingDataError, ParameterShapeError
from netstab.sim import Scenario
from netstab.topology import NetworkTopology
from oracles import six_node_network


def mixed_topology():
    return NetworkTopology.build([2, 1, 2], [1, 2, 0], [(0, 1), (1, 2), (2, 0)], [(0, 1), (1, 2), (2, 0)])


def random_params(top, rng):
    return [rng.standard_normal(param_dim(top, i)) for i in range(top.N)]


def test_six_node_pattern():
    top = six_node_network()
    dyn = assemble_global(top, [np.ones(param_dim(top, i)) for i in range(6)])
    pattern = np.zeros((6, 6))
    for i in range(6):
        pattern[i, list(top.dyn_neighbors[i])] = 1
    assert np.array_equal(dyn.A, pattern)
    assert np.array_equal(dyn.B, pattern)


def test_zero_params_give_zero_matrices():
    top = mixed_topology()
    dyn = assemble_global(top, [np.zeros(param_dim(top, i)) for i in range(3)])
    assert not dyn.A.any() and not dyn.B.any()


def test_block_placement_by_index():
    top = NetworkTopology.build([1, 2], [1, 1], [(0, 1)], [(0, 1)])
    th0 = np.array([1.0, 2.0])  # A00, B00
    # A10 (2x1), A11 (2x2) row-major, B10 (2x1), B11 (2x1)
    th1 = np.arange(3.0, 13.0)
    dyn = assemble_global(top, [th0, th1])
    A = np.zeros((3, 3))
    B = np.zeros((3, 2))
    A[0, 0], B[0, 0] = 1, 2
    A[1:, 0] = [3, 4]
    A[1:, 1:] = [[5, 6], [7, 8]]
    B[1:, 0] = [9, 10]
    B[1:, 1] = [11, 12]
    assert np.array_equal(dyn.A, A)
    assert np.array_equal(dyn.B, B)


def test_wrong_length_rejected():
    top = mixed_topology()
    params = random_params(top, np.random.default_rng(0))
    params[1] = params[1][:-1]
    with pytest.raises(ParameterShapeError):
        assemble_global(top, params)
    with pytest.raises(ParameterShapeError):
        LocalParams.checked(top, 1, params[1])


def test_double_integrator_step():
    from netstab.dynamics import GlobalDynamics
    dyn = GlobalDynamics(np.array([[1.0, 1.0], [0.0, 1.0]]), np.array([[0.0], [1.0]]))
    assert np.array_equal(step_truth(dyn, np.array([1.0, 0.0]), np.zeros(1), np.zeros(2)), [1.0, 0.0])
    assert np.array_equal(step_truth(dyn, np.array([0.0, 1.0]), np.array([1.0]), np.zeros(2)), [1.0, 2.0])


def test_identity_without_input():
    from netstab.dynamics import GlobalDynamics
    dyn = GlobalDynamics(np.eye(3), np.zeros((3, 1)))
    x = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(step_truth(dyn, x, np.ones(1), np.zeros(3)), x)


def test_step_matches_dense_product():
    top = mixed_topology()
    rng = np.random.default_rng(1)
    dyn = assemble_global(top, random_params(top, rng))
    x, u, w = rng.standard_normal(top.n_x), rng.standard_normal(top.n_u), rng.standard_normal(top.n_x)
    ref = np.array([sum(dyn.A[r, c] * x[c] for c in range(top.n_x)) + sum(dyn.B[r, c] * u[c] for c in range(top.n_u))
                    for r in range(top.n_x)]) + w
    assert np.allclose(step_truth(dyn, x, u, w), ref, atol=1e-14)


def test_scalar_regressor():
    top = NetworkTopology.build([1], [1], [], [])
    Z = local_regressor(top, 0, np.array([2.0]), np.array([3.0]))
    assert np.array_equal(Z, [[2.0, 3.0]])


def test_regressor_accepts_neighbor_maps_and_reports_missing():
    top = mixed_topology()
    rng = np.random.default_rng(2)
    x, u = rng.standard_normal(top.n_x), rng.standard_normal(top.n_u)
    Z = local_regressor(top, 1, x, u)
    xs = {j: x[top.state_slice(j)] for j in top.dyn_neighbors[1]}
    us = {j: u[top.input_slice(j)] for j in top.dyn_neighbors[1]}
    assert np.array_equal(Z, local_regressor(top, 1, xs, us))
    del xs[0]
    with pytest.raises(MissingDataError):
        local_regressor(top, 1, xs, us)


def test_regressor_residual_is_the_disturbance():
    top = mixed_topology()
    rng = np.random.default_rng(3)
    th = random_params(top, rng)
    dyn = assemble_global(top, th)
    x, u, w = rng.standard_normal(top.n_x), rng.standard_normal(top.n_u), rng.uniform(-0.1, 0.1, top.n_x)
    xn = step_truth(dyn, x, u, w)
    for i in range(3):
        r = xn[top.state_slice(i)] - local_regressor(top, i, x, u) @ th[i]
        assert np.allclose(r, w[top.state_slice(i)], atol=1e-12)
        assert np.abs(xn[top.state_slice(i)] - local_regressor(top, i, x, u) @ th[i]).max() <= 0.1 + 1e-12


def test_frobenius_check():
    from netstab.dynamics import GlobalDynamics
    dyn = GlobalDynamics(np.eye(2), np.ones((2, 1)))
    assert frobenius_check(dyn, 1.5) and not frobenius_check(dyn, 1.4)


@given(st.integers(0, 2**32 - 1))
def test_round_trip_and_sparsity(seed):
    top = mixed_topology()
    rng = np.random.default_rng(seed)
    th = random_params(top, rng)
    dyn = assemble_global(top, th)
    for i in range(top.N):
        assert np.array_equal(extract_local(top, dyn.A, dyn.B, i), th[i])
        for j in range(top.N):
            if j not in top.dyn_neighbors[i]:
                assert not dyn.A[top.state_slice(i), top.state_slice(j)].any()
                assert not dyn.B[top.state_slice(i), top.input_slice(j)].any()


def test_layout_order():
    top = mixed_topology()
    kinds = [(b.kind, b.source) for b in param_layout(top, 1)]
    assert kinds == [("A", 0), ("A", 1), ("B", 0), ("B", 1)]
