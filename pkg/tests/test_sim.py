import numpy as np
import pytest
from hypothesis import given, strategies as st

from netstab.errors import CausalityError, IdentificationError, InconsistencyError, ScenarioError
from netstab.scenarios import chain_scenario, double_integrator_scenario, random_network_scenario
from netstab.sim import BLOWUP, MessageBus, Scenario, disturbance, run_episode, unstable_direction
from netstab.topology import NetworkTopology, compute_delay_table


def scalar(a=1.2, b=1.0, W=0.1, T=30, half=0.2, **kw):
    top = NetworkTopology.build([1], [1], [], [])
    th = np.array([a, b])
    return Scenario(top, [th], [th - half], [th + half], W, W, 1, 3, T, **kw)


def test_same_seed_same_trace():
    a = run_episode(random_network_scenario(2, T=30))
    b = run_episode(random_network_scenario(2, T=30))
    for key in ("x", "u", "w", "what"):
        assert np.array_equal(np.array(getattr(a, key)), np.array(getattr(b, key)))


def test_different_seed_differs():
    a = run_episode(scalar(seed=0))
    b = run_episode(scalar(seed=1))
    assert not np.array_equal(a.arrays()[2], b.arrays()[2])


@given(st.integers(0, 2**32 - 1), st.sampled_from(["uniform", "impulse-then-zero", "sign-adversary"]))
def test_disturbance_is_bounded(seed, policy):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(3)
    params = {"T_stop": 5, "direction": rng.standard_normal(3)}
    for t in range(10):
        w = disturbance(policy, t, x, rng, 0.3, 3, params)
        assert np.abs(w).max() <= 0.3
        if policy == "impulse-then-zero" and t >= 5:
            assert not w.any()
        if policy == "sign-adversary":
            assert np.allclose(np.abs(w), 0.3)


def test_sign_adversary_follows_state():
    v = np.array([1.0, -2.0])
    rng = np.random.default_rng(0)
    assert np.array_equal(disturbance("sign-adversary", 0, np.array([1.0, 0.0]), rng, 1.0, 2, {"direction": v}), [1, -1])
    assert np.array_equal(disturbance("sign-adversary", 0, np.array([-1.0, 0.0]), rng, 1.0, 2, {"direction": v}), [-1, 1])


def test_unstable_direction_is_dominant_eigenvector():
    A = np.array([[2.0, 0.0], [0.0, 0.5]])
    assert np.allclose(np.abs(unstable_direction(A)), [1.0, 0.0])


def test_replay_reproduces_states():
    sc = random_network_scenario(4, T=40)
    tr = run_episode(sc)
    X, U, W = tr.arrays()
    dyn = sc.true_dynamics()
    for t in range(tr.T):
        assert np.array_equal(X[t + 1], dyn.A @ X[t] + dyn.B @ U[t] + W[t])


def test_bus_delivers_only_after_delay():
    top = NetworkTopology.build([1, 1, 1], [1, 1, 1], [], [(0, 1), (1, 2)])
    bus = MessageBus(compute_delay_table(top))
    bus.publish(0, "x", 3, 1.5)
    assert bus.read(0, 2, "x", 3, 5) == 1.5
    with pytest.raises(CausalityError):
        bus.read(0, 2, "x", 3, 4)
    with pytest.raises(CausalityError):
        bus.read(2, 0, "x", 0, 10)
    with pytest.raises(CausalityError):
        bus.read(0, 1, "x", -1, 0)
    bus.set_prior(0, "x", 0.0)
    assert bus.read(0, 1, "x", -1, 0) == 0.0


def test_sysid_identifies_noise_free():
    sc = double_integrator_scenario("sysid-baseline", W=0.0, T=20, T_stop=10)
    tr = run_episode(sc)
    assert tr.info["identified_at"] == 3
    assert np.allclose(tr.info["estimate_A"], [[1, 1], [0, 1]], atol=1e-9)
    assert np.allclose(tr.info["estimate_B"], [[0], [1]], atol=1e-9)
    X = np.array(tr.x)
    assert np.allclose(X[3 + sc.H:], 0, atol=1e-6 * np.abs(X).max())


def test_sysid_without_excitation_fails():
    sc = double_integrator_scenario("sysid-baseline", W=0.0, T=100, sysid={"u0": 0.0, "max_steps": 30})
    with pytest.raises(IdentificationError):
        run_episode(sc)


def test_open_loop_unstable_verdict():
    sc = scalar(a=2.0, W=1.0, T=200, algorithm="zero-control", disturbance={"policy": "sign-adversary"})
    tr = run_episode(sc)
    assert tr.verdict == "unstable"
    assert np.abs(tr.x[-1]).max() > BLOWUP


def test_consistent_run_keeps_truth():
    sc = chain_scenario(T=60)
    tr = run_episode(sc)
    assert tr.verdict == "ok" and tr.T == 60
    assert tr.syntheses >= sc.topology.N


def test_on_change_cadence_skips_resynthesis():
    sc = scalar(half=0.0, T=20, synthesis_cadence="on-change")
    tr = run_episode(sc)
    assert tr.syntheses == 1


def test_inconsistency_carries_partial_trace():
    sc = scalar(a=1.2, W=0.01, T=40, disturbance={"policy": "uniform"})
    sc.truth = [np.array([2.0, 1.0])]
    sc.validate = lambda: sc
    with pytest.raises(InconsistencyError) as err:
        run_episode(sc)
    assert err.value.trace.verdict == "inconsistent" and len(err.value.trace.x) >= 1


@pytest.mark.parametrize("change,msg", [
    (lambda sc: setattr(sc, "W_true", 1.0), "W_true"),
    (lambda sc: setattr(sc, "truth", [np.array([5.0, 1.0])]), "outside"),
    (lambda sc: setattr(sc, "lo", [np.array([0.0])]), "expected 2"),
    (lambda sc: setattr(sc, "algorithm", "magic"), "algorithm"),
    (lambda sc: setattr(sc, "disturbance", {"policy": "storm"}), "policy"),
    (lambda sc: setattr(sc, "H", 0), "H >= 1"),
])
def test_scenario_validation(change, msg):
    sc = scalar()
    change(sc)
    with pytest.raises(ScenarioError, match=msg):
        sc.validate()


def test_missing_direct_link_rejected():
    top = NetworkTopology.build([1, 1], [1, 1], [(0, 1)], [])
    th = [np.zeros(2), np.zeros(4)]
    with pytest.raises(ScenarioError, match="direct link"):
        Scenario(top, th, th, th, 0.1, 0.1, 1, 3, 5).validate()
