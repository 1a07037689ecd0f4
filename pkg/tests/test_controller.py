from collections import deque

import numpy as np
import pytest

from netstab import controller as ctl
from netstab.errors import CausalityError
from netstab.scenarios import random_network_scenario
from netstab.sim import MessageBus, Scenario, run_episode
from netstab.sls import BlockColumn, SparsityMask, synthesize_block
from netstab.topology import NetworkTopology, compute_delay_table, compute_neighbor_sets


def scalar_scenario(a, b, H, T, x0=1.0, W=0.0, policy="zero", known=True, **kw):
    top = NetworkTopology.build([1], [1], [], [])
    th = np.array([a, b])
    lo, hi = (th, th) if known else (th - 0.2, th + 0.2)
    return Scenario(top, [th], [lo], [hi], W, W, 1, H, T, x0=[x0], disturbance={"policy": policy}, **kw)


def single_state(H):
    top = NetworkTopology.build([1], [1], [], [])
    delay = compute_delay_table(top)
    nb = compute_neighbor_sets(top, delay, 1)
    return top, ctl.ControllerState.create(top, delay, nb, 0, H)


def test_first_estimate_is_initial_state():
    tr = run_episode(scalar_scenario(1.2, 1.0, 3, 5, x0=0.7, W=0.1, policy="uniform", known=False))
    assert tr.what[0][0] == 0.7


def test_known_model_recovers_disturbance():
    tr = run_episode(scalar_scenario(1.2, 0.8, 3, 40, W=0.1, policy="uniform"))
    _, _, w = tr.arrays()
    what = np.array(tr.what)
    assert np.allclose(what[1:], w, atol=1e-12)


def test_known_network_recovers_disturbance():
    sc = random_network_scenario(3, T=30)
    sc.lo, sc.hi = [t.copy() for t in sc.truth], [t.copy() for t in sc.truth]
    tr = run_episode(sc)
    _, _, w = tr.arrays()
    assert np.allclose(np.array(tr.what)[1:], w, atol=1e-10)


def test_zero_columns_pass_state_through():
    top, st = single_state(3)
    phi_x = np.zeros((4, 1, 1))
    phi_x[0] = 1.0
    ctl.set_own_column(st, BlockColumn(0, 3, phi_x, np.zeros((3, 1, 1))))
    for t, x in enumerate([0.3, -1.0, 2.0]):
        st.t = t
        assert ctl.estimate_disturbance(st, [x])[0] == x
        assert ctl.compute_control(st)[0] == 0.0


@pytest.mark.parametrize("a,b", [(1.5, 2.0), (-0.7, 0.5)])
def test_one_step_deadbeat(a, b):
    top, st = single_state(1)
    col = synthesize_block(top, 0, [[a]], [[b]], SparsityMask.dense(1, 1, 1), np.array([0]))
    ctl.set_own_column(st, col)
    st.t = 0
    w = ctl.estimate_disturbance(st, [0.9])
    assert ctl.compute_control(st)[0] == pytest.approx(-(a / b) * w[0])


def test_initial_state_cleared_within_horizon():
    tr = run_episode(scalar_scenario(1.0, 1.0, 2, 6))
    X, U, _ = tr.arrays()
    assert X[1, 0] == pytest.approx(1 / 3)
    assert U[0, 0] == pytest.approx(-2 / 3)
    assert np.allclose(X[2:], 0, atol=1e-14)


def test_operators_reproduce_trajectory_with_delays():
    sc = random_network_scenario(5, T=30)
    tr = run_episode(sc)
    delay = compute_delay_table(sc.topology)
    what = np.array(tr.what)
    X, U, _ = tr.arrays()
    assert delay.max_finite >= 1
    for t in range(tr.T + 1):
        op = ctl.assemble_global_operators(sc.topology, delay, tr.column_at, t, sc.H)
        past = [what[t - k] if t - k >= 0 else np.zeros_like(what[0]) for k in range(sc.H)]
        assert np.allclose(X[t], sum(op.Phi_x[k] @ past[k] for k in range(sc.H)), atol=1e-9)
        assert np.allclose(U[t], sum(op.Phi_u[k] @ past[k] for k in range(sc.H)), atol=1e-9)


def test_operators_single_subsystem_equal_column():
    top, _ = single_state(2)
    col = synthesize_block(top, 0, [[1.0]], [[1.0]], SparsityMask.dense(1, 1, 2), np.array([0]))
    op = ctl.assemble_global_operators(top, compute_delay_table(top), lambda j, s: col, 4, 2)
    assert np.array_equal(op.Phi_x[:, :, 0], col.phi_x[:, :, 0])
    assert np.array_equal(op.Phi_u[:2], col.phi_u)


def test_column_violating_delay_is_rejected():
    top = NetworkTopology.build([1, 1], [1, 1], [(0, 1), (1, 0)], [(0, 1), (1, 0)])
    delay = compute_delay_table(top)
    nb = compute_neighbor_sets(top, delay, 1)
    st = ctl.ControllerState.create(top, delay, nb, 1, 3)
    bus = MessageBus(delay)
    phi_x = np.zeros((4, 2, 1))
    phi_x[0, 0] = 1.0
    phi_x[0, 1] = 0.5  # reaches subsystem 1 at lag 0
    bad = BlockColumn(0, 3, phi_x, np.zeros((3, 2, 1)))
    bus.publish(0, "phi", 0, bad)
    with pytest.raises(CausalityError):
        ctl.receive(st, bus, 1)


def test_missing_estimate_raises():
    _, st = single_state(3)
    st.t = 2
    st.what_buffer = deque([(2, np.zeros(1))], maxlen=3)
    assert st.what_of(0, -1).shape == (1,)
    with pytest.raises(CausalityError):
        st.what_of(0, 1)
