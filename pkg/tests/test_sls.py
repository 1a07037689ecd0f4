import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netstab import sls
from netstab.errors import NotControllableError, SynthesisInfeasibleError
from netstab.sls import (SparsityMask, build_sparsity_masks, controllability_grammians, decay_fit,
                         fir_feasibility_probe, objective, sensitivity_constants, synthesize_column,
                         synthesize_columns, verify_column)
from netstab.topology import NetworkTopology

from oracles import six_node_network, sls_bruteforce


def chain(N):
    e = [(i, i + 1) for i in range(N - 1)] + [(i + 1, i) for i in range(N - 1)]
    return NetworkTopology.build([1] * N, [1] * N, e, e)


def test_dense_mask():
    m = SparsityMask.dense(3, 2, 4)
    assert m.state.shape == (5, 3) and m.inputs.shape == (4, 2)
    assert m.state.all() and m.inputs.all()


def test_mask_step_zero_is_owner_only():
    top = six_node_network()
    m = build_sparsity_masks(top, 2, 4, 3)
    assert np.flatnonzero(m.state[0]).tolist() == [2]
    assert m.subsystems[0] == (2,)


def test_chain_mask_grows_then_saturates():
    top = chain(5)
    m = build_sparsity_masks(top, 0, 6, 2)
    reach = [np.flatnonzero(m.state[k]).tolist() for k in range(7)]
    assert reach[0] == [0] and reach[1] == [0, 1]
    assert all(r == [0, 1, 2] for r in reach[2:])
    assert np.array_equal(m.inputs, m.state[:-1])


def test_mask_matches_boolean_powers():
    top = six_node_network()
    C = np.eye(6, dtype=int)
    for a, b in top.comm_edges():
        C[b, a] = 1
    for dbar in (1, 2, 3):
        local = np.linalg.matrix_power(C, dbar)[:, 4] > 0
        m = build_sparsity_masks(top, 4, 5, dbar)
        for k in range(6):
            ref = (np.linalg.matrix_power(C, k)[:, 4] > 0) & local
            assert np.array_equal(m.state[k], ref)


def test_scalar_grid_optimum():
    # a = b = 1, H = 2: the only free variable is u0; grid search
    col = synthesize_column([[1.0]], [[1.0]], 0, H=2)
    grid = np.linspace(-2, 2, 400_001)
    cost = 1 + (1 + grid) ** 2 + grid ** 2 + (1 + grid) ** 2
    u0 = grid[np.argmin(cost)]
    assert col.phi_u[0, 0] == pytest.approx(-2 / 3, abs=1e-12)
    assert abs(col.phi_u[0, 0] - u0) < 1e-5
    assert col.phi_x[1, 0] == pytest.approx(1 / 3)
    assert col.phi_u[1, 0] == pytest.approx(-1 / 3)
    assert col.objective == pytest.approx(objective(col))


def test_scalar_half():
    col = synthesize_column([[0.5]], [[1.0]], 0, H=2)
    # cost (1 + a^2) (a + u0)^2 + u0^2 with a = 1/2
    assert col.phi_u[0, 0] == pytest.approx(-5 / 18)
    assert col.phi_x[1, 0] == pytest.approx(2 / 9)
    assert col.phi_u[1, 0] == pytest.approx(-1 / 9)


def test_no_input_is_infeasible():
    with pytest.raises(SynthesisInfeasibleError) as err:
        synthesize_column([[1.0]], [[0.0]], 0, H=3)
    assert len(err.value.rows) > 0


def test_deadbeat_zero_dynamics():
    col = synthesize_column([[0.0]], [[1.0]], 0, H=3)
    assert np.allclose(col.phi_x[1:], 0) and np.allclose(col.phi_u, 0)
    assert col.objective == pytest.approx(1.0)


def random_model(rng, n, m):
    A = rng.standard_normal((n, n)) * 0.8
    B = rng.standard_normal((n, m))
    return A, B


@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 2), st.integers(3, 5))
@settings(max_examples=40)
def test_matches_bruteforce(seed, n, m, H):
    rng = np.random.default_rng(seed)
    A, B = random_model(rng, n, m)
    Q, R = rng.uniform(0.5, 2, n), rng.uniform(0.5, 2, m)
    c = int(rng.integers(n))
    ref = sls_bruteforce(A, B, c, H, Q, R)
    if ref is None:
        with pytest.raises(SynthesisInfeasibleError):
            synthesize_column(A, B, c, H=H, Q=Q, R=R)
        return
    col = synthesize_column(A, B, c, H=H, Q=Q, R=R)
    assert abs(col.objective - ref[2]) <= 1e-8 * max(1.0, ref[2])
    assert verify_column(col, A, B).ok


@pytest.mark.parametrize("seed", range(10))
def test_matches_bruteforce_with_mask(seed):
    rng = np.random.default_rng(seed)
    top = six_node_network()
    A = np.zeros((6, 6))
    for j, i in top.dyn_edges() + [(q, q) for q in range(6)]:
        A[i, j] = rng.uniform(-1, 1)
    B = np.diag(rng.uniform(0.5, 1.5, 6))
    owner = int(rng.integers(6))
    mask = build_sparsity_masks(top, owner, 5, 3)
    ref = sls_bruteforce(A, B, owner, 5, state_mask=mask.state, input_mask=mask.inputs)
    assert ref is not None
    col = synthesize_column(A, B, owner, mask=mask)
    assert abs(col.objective - ref[2]) <= 1e-8 * max(1.0, ref[2])
    rep = verify_column(col, A, B, mask)
    assert rep.ok and rep.mask_violation == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_longer_horizon_never_costs_more(seed):
    rng = np.random.default_rng(seed)
    A, B = random_model(rng, 3, 2)
    costs = [synthesize_column(A, B, 0, H=H).objective for H in range(2, 8)]
    assert all(b <= a + 1e-9 for a, b in zip(costs, costs[1:]))


def test_columns_share_mask_and_match_single():
    rng = np.random.default_rng(1)
    A, B = random_model(rng, 3, 3)
    cols = synthesize_columns(A, B, [0, 1, 2], None, H=4)
    for c, col in enumerate(cols):
        one = synthesize_column(A, B, c, H=4)
        assert np.allclose(col.phi_x, one.phi_x) and np.allclose(col.phi_u, one.phi_u)
        assert col.kkt_residual < 1e-10


def test_verify_detects_perturbation():
    rng = np.random.default_rng(2)
    A, B = random_model(rng, 2, 1)
    col = synthesize_column(A, B, 0, H=4)
    assert verify_column(col, A, B).ok
    col.phi_u[1, 0] += 1e-6
    rep = verify_column(col, A, B)
    assert not rep.ok and rep.max_residual >= 1e-6 * np.abs(B).max() * 0.99


def test_rows_restrict_the_check():
    top = chain(3)
    A = np.array([[1.0, 0.2, 0.0], [0.2, 1.0, 0.2], [0.0, 0.2, 1.0]])
    B = np.eye(3)
    mask = build_sparsity_masks(top, 0, 3, 1)
    col = synthesize_column(A, B, 0, mask=mask, rows=[0, 1])
    assert verify_column(col, A, B, mask, rows=[0, 1]).ok
    assert np.allclose(col.phi_x[:, 2], 0)


def test_grammians_identity_input():
    g = controllability_grammians(np.zeros((2, 2)), np.eye(2), 4)
    assert np.allclose(g.W_u_H, np.eye(2))
    assert g.sigma_u_min == pytest.approx(1.0) and g.alpha_H == pytest.approx(1.0)


def test_grammians_integrator():
    g = controllability_grammians(np.eye(2), np.eye(2), 3)
    assert np.allclose(g.W_u_H, 3 * np.eye(2))
    assert np.allclose(g.W_w_H, 3 * np.eye(2))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25)
def test_grammians_direct_sum(seed):
    rng = np.random.default_rng(seed)
    A1, B1 = random_model(rng, 2, 1)
    A2, B2 = random_model(rng, 1, 1)
    A = np.block([[A1, np.zeros((2, 1))], [np.zeros((1, 2)), A2]])
    B = np.block([[B1, np.zeros((2, 1))], [np.zeros((1, 1)), B2]])
    g, g1, g2 = (controllability_grammians(a, b, 4) for a, b in ((A, B), (A1, B1), (A2, B2)))
    assert np.allclose(g.W_u_H[:2, :2], g1.W_u_H) and np.allclose(g.W_u_H[2:, 2:], g2.W_u_H)
    assert np.allclose(g.W_u_H[:2, 2:], 0)
    ref = sum(np.linalg.matrix_power(A, k) @ B @ B.T @ np.linalg.matrix_power(A, k).T for k in range(4))
    assert np.allclose(g.W_u_H, ref)


def test_sensitivity_identity_weights():
    c = sensitivity_constants(1.0, 2.0, 3.0, 1.5, 1.0, np.ones(2), np.ones(1), 4)
    assert c.kappa_CD == 1.0
    assert c.Gamma_A > 0 and c.Gamma_B > 0


def test_sensitivity_weight_scaling_is_invariant():
    a = sensitivity_constants(1.0, 2.0, 3.0, 1.5, 1.0, np.ones(2), np.ones(1), 4)
    b = sensitivity_constants(1.0, 2.0, 3.0, 1.5, 1.0, 4 * np.ones(2), 4 * np.ones(1), 4)
    assert a.kappa_CD == b.kappa_CD


def test_sensitivity_rejects_singular_grammian():
    with pytest.raises(NotControllableError):
        sensitivity_constants(0.0, 1.0, 1.0, 1.0, 1.0, np.ones(1), np.ones(1), 3)


def test_probe_passes_on_well_posed_box():
    top = NetworkTopology.build([1], [1], [], [])
    rep = fir_feasibility_probe(top, [[0.5, 0.5]], [[1.5, 1.5]], 1, 3, 50)
    assert rep.pass_rate == 1.0 and rep.worst["residual"] < 1e-10


def test_probe_reports_zero_input_witness():
    top = NetworkTopology.build([1], [1], [], [])
    rep = fir_feasibility_probe(top, [[0.5, 0.0]], [[1.5, 1.0]], 1, 3, 20)
    assert rep.pass_rate < 1.0
    assert all(f["theta"][1] == 0.0 for f in rep.failures)


def test_probe_short_horizon_fails_on_chain():
    top = chain(4)
    # A blocks for each neighbour in order, then B blocks; off-diagonal B pinned at 0
    lo = [[1.0, 0.2, 1.0, 0.0]] + [[0.2, 1.0, 0.2, 0.0, 1.0, 0.0]] * 2 + [[0.2, 1.0, 0.0, 1.0]]
    hi = [[1.1, 0.3, 1.0, 0.0]] + [[0.3, 1.1, 0.3, 0.0, 1.0, 0.0]] * 2 + [[0.3, 1.1, 0.0, 1.0]]
    assert fir_feasibility_probe(top, lo, hi, 3, 5, 10).pass_rate == 1.0
    assert fir_feasibility_probe(top, lo, hi, 1, 2, 10).pass_rate < 1.0


def test_decay_fit_bounds_columns():
    rng = np.random.default_rng(5)
    cols = [synthesize_column(*random_model(rng, 3, 2), 0, H=6) for _ in range(5)]
    C, rho = decay_fit(cols)
    for c in cols:
        for k in range(c.H + 1):
            assert np.linalg.norm(c.stacked(k)) <= C * rho ** k * (1 + 1e-12)


def test_block_roundtrip():
    top = six_node_network()
    rng = np.random.default_rng(0)
    A = np.diag(rng.uniform(0.5, 1.5, 6))
    mask = build_sparsity_masks(top, 1, 3, 2)
    cols = synthesize_columns(A, np.eye(6), [1], mask, owner=1)
    blk = sls.BlockColumn.from_columns(1, cols)
    back = blk.columns(top)
    assert np.array_equal(back[0].phi_x, cols[0].phi_x)
