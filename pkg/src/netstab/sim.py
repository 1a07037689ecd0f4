"""Episode simulation: plant, message bus, disturbances and the baselines.

Seed tree
---------
Every random stream is derived from the scenario seed through
``SeedSequence([seed, role, ...])`` with roles

* ``0`` disturbance sequence,
* ``1, i`` Steiner direction set of subsystem ``i``,
* ``2, i, t, attempt`` fresh directions for a reselection,
* ``3`` excitation of the identification baseline.
"""
from dataclasses import dataclass, field
import logging

import numpy as np

from . import controller as ctl
from .consist import ConsistentSet
from .dynamics import assemble_global, local_regressor, param_dim, step_truth
from .errors import (CausalityError, IdentificationError, InconsistencyError, ScenarioError,
                     SynthesisInfeasibleError)
from .sls import BlockColumn, build_sparsity_masks, synthesize_block, synthesize_columns, SparsityMask
from .topology import compute_delay_table, compute_neighbor_sets, validate_assumption_comm

log = logging.getLogger(__name__)

ALGORITHMS = ("consist-sls", "sysid-baseline", "zero-control")
POLICIES = ("uniform", "sign-adversary", "impulse-then-zero", "zero")
CADENCES = ("every-step", "on-change")
BLOWUP = 1e12
RESELECT_ATTEMPTS = 5

ROLE_DISTURBANCE, ROLE_DIRECTIONS, ROLE_RESELECT, ROLE_EXCITATION = 0, 1, 2, 3


def seed_for(seed, *path):
    return np.random.SeedSequence([int(seed), *[int(p) for p in path]])


@dataclass
class Scenario:
    topology: object
    truth: list
    lo: list
    hi: list
    W_true: float
    W_assumed: float
    dbar: int
    H: int
    T: int
    T_stop: int = None
    disturbance: dict = field(default_factory=lambda: {"policy": "uniform"})
    seed: int = 0
    algorithm: str = "consist-sls"
    Q: np.ndarray = None  # diagonal, length n_x
    R: np.ndarray = None  # diagonal, length n_u
    synthesis_cadence: str = "every-step"
    x0: np.ndarray = None
    steiner_samples: int = None
    sysid: dict = field(default_factory=dict)

    def __post_init__(self):
        top = self.topology
        self.truth = [np.asarray(v, dtype=float).ravel() for v in self.truth]
        self.lo = [np.asarray(v, dtype=float).ravel() for v in self.lo]
        self.hi = [np.asarray(v, dtype=float).ravel() for v in self.hi]
        self.Q = np.ones(top.n_x) if self.Q is None else np.asarray(self.Q, dtype=float).ravel()
        self.R = np.ones(top.n_u) if self.R is None else np.asarray(self.R, dtype=float).ravel()
        self.x0 = np.zeros(top.n_x) if self.x0 is None else np.asarray(self.x0, dtype=float).ravel()

    def validate(self):
        top = self.topology
        for name, vals in (("truth", self.truth), ("param_box.lo", self.lo), ("param_box.hi", self.hi)):
            if len(vals) != top.N:
                raise ScenarioError(f"{name}: expected {top.N} entries, got {len(vals)}")
            for i, v in enumerate(vals):
                if v.size != param_dim(top, i):
                    raise ScenarioError(f"{name}[{i}]: expected {param_dim(top, i)} values, got {v.size}")
        for i in range(top.N):
            if np.any(self.lo[i] > self.hi[i]):
                raise ScenarioError(f"param_box[{i}]: lo exceeds hi")
            if np.any(self.truth[i] < self.lo[i]) or np.any(self.truth[i] > self.hi[i]):
                raise ScenarioError(f"truth[{i}] lies outside param_box[{i}]")
        if not 0 <= self.W_true <= self.W_assumed:
            raise ScenarioError("need 0 <= W_true <= W_assumed")
        if self.dbar < 1 or self.H < 1 or self.T < 0:
            raise ScenarioError("need dbar >= 1, H >= 1, T >= 0")
        if self.algorithm not in ALGORITHMS:
            raise ScenarioError(f"algorithm must be one of {ALGORITHMS}")
        if self.disturbance.get("policy", "uniform") not in POLICIES:
            raise ScenarioError(f"disturbance policy must be one of {POLICIES}")
        if self.synthesis_cadence not in CADENCES:
            raise ScenarioError(f"synthesis_cadence must be one of {CADENCES}")
        if self.Q.size != top.n_x or self.R.size != top.n_u or np.any(self.Q <= 0) or np.any(self.R <= 0):
            raise ScenarioError("weights must be positive diagonals of length n_x and n_u")
        if self.x0.size != top.n_x:
            raise ScenarioError("x0 has the wrong length")
        missing = validate_assumption_comm(top)
        if missing:
            raise ScenarioError(f"dynamical neighbors without a direct link: {missing}")
        return self

    def true_dynamics(self):
        return assemble_global(self.topology, self.truth)


class MessageBus:
    """Stamped broadcast store with exact delivery delays.

    A payload published by ``src`` with stamp ``s`` becomes readable at
    ``dst`` from time ``s + d(src->dst)`` on. Stamps before 0 resolve to the
    registered prior (the warm-up convention) or to zero.
    """

    def __init__(self, delay):
        self.delay = delay
        self._store = {}
        self._prior = {}
        self.reads = 0

    def set_prior(self, src, kind, payload):
        self._prior[(src, kind)] = payload

    def publish(self, src, kind, stamp, payload):
        self._store.setdefault((src, kind), {})[stamp] = payload

    def read(self, src, dst, kind, stamp, now):
        d = self.delay(src, dst)
        if not np.isfinite(d) or stamp > now - d:
            raise CausalityError(f"{dst} read {kind} of {src} stamped {stamp} at time {now} (delay {d})")
        self.reads += 1
        if stamp < 0:
            try:
                return self._prior[(src, kind)]
            except KeyError:
                raise CausalityError(f"no prior registered for {kind} of {src}") from None
        try:
            return self._store[(src, kind)][stamp]
        except KeyError:
            raise CausalityError(f"{kind} of {src} stamped {stamp} was never published") from None


def disturbance(policy, t, x, rng, W, n_x, params=None):
    """Disturbance ``w(t)`` with ``||w(t)||_inf <= W``.

    ``sign-adversary`` pushes along a fixed direction ``v`` with the sign of
    ``v @ x``: ``w = W * s * sgn(v)``, ``s = +1`` when ``v @ x >= 0``.
    ``impulse-then-zero`` draws uniformly for ``t < T_stop`` and is zero
    afterwards.
    """
    params = params or {}
    if W == 0 or policy == "zero":
        return np.zeros(n_x)
    if policy == "uniform":
        return rng.uniform(-W, W, n_x)
    if policy == "impulse-then-zero":
        return rng.uniform(-W, W, n_x) if t < params["T_stop"] else np.zeros(n_x)
    if policy == "sign-adversary":
        v = np.asarray(params["direction"], dtype=float)
        s = 1.0 if v @ x >= 0 else -1.0
        return W * s * np.where(v >= 0, 1.0, -1.0)
    raise ValueError(f"unknown disturbance policy {policy!r}")


def unstable_direction(A):
    """Real part of the eigenvector of the largest-modulus eigenvalue."""
    vals, vecs = np.linalg.eig(A)
    v = np.real(vecs[:, int(np.argmax(np.abs(vals)))])
    return v / max(np.abs(v).max(), 1e-300)


@dataclass
class TraceLog:
    """Everything recorded during an episode.

    ``columns[t][i]`` is the column of ``i`` stamped ``t`` (the same object
    is reused while it is not re-synthesized); ``thetas[t][i]`` the selected
    parameter. ``what`` and the columns are absent for runs without the
    distributed controller.
    """

    scenario: Scenario
    algorithm: str
    x: list = field(default_factory=list)
    u: list = field(default_factory=list)
    w: list = field(default_factory=list)
    what: list = field(default_factory=list)
    thetas: list = field(default_factory=list)
    columns: list = field(default_factory=list)
    movement: list = field(default_factory=list)
    syntheses: int = 0
    reselections: int = 0
    verdict: str = "ok"
    blowup_t: int = None
    info: dict = field(default_factory=dict)

    @property
    def T(self):
        return len(self.x) - 1

    def arrays(self):
        return np.array(self.x), np.array(self.u), np.array(self.w).reshape(-1, self.scenario.topology.n_x)

    def column_at(self, j, s):
        return self.columns[max(0, s)][j]

    def model_at(self, t):
        return assemble_global(self.scenario.topology, self.thetas[t])


def run_episode(scenario):
    """Simulate one episode; returns a TraceLog.

    Raises InconsistencyError or SynthesisInfeasibleError with the partial
    trace attached as ``exc.trace``.
    """
    scenario.validate()
    if scenario.algorithm == "consist-sls":
        return _run_consist(scenario)
    if scenario.algorithm == "zero-control":
        return _run_open_loop(scenario)
    return _run_sysid(scenario)


def _disturbance_source(sc):
    rng = np.random.default_rng(seed_for(sc.seed, ROLE_DISTURBANCE))
    params = dict(sc.disturbance)
    policy = params.pop("policy", "uniform")
    if policy == "impulse-then-zero":
        params.setdefault("T_stop", sc.T_stop if sc.T_stop is not None else sc.T)
    if policy == "sign-adversary" and "direction" not in params:
        params["direction"] = unstable_direction(sc.true_dynamics().A)
    n_x = sc.topology.n_x
    return lambda t, x: disturbance(policy, t, x, rng, sc.W_true, n_x, params)


def _diverged(x):
    return not np.all(np.isfinite(x)) or np.abs(x).max(initial=0.0) > BLOWUP


def _run_open_loop(sc):
    truth = sc.true_dynamics()
    draw = _disturbance_source(sc)
    trace = TraceLog(sc, sc.algorithm)
    x = sc.x0.copy()
    for t in range(sc.T + 1):
        u = np.zeros(sc.topology.n_u)
        trace.x.append(x)
        trace.u.append(u)
        if _diverged(x):
            trace.verdict, trace.blowup_t = "unstable", t
            break
        if t < sc.T:
            w = draw(t, x)
            trace.w.append(w)
            x = step_truth(truth, x, u, w)
    return trace


class _Agent:
    """Per-subsystem bookkeeping for the distributed run."""

    def __init__(self, sc, i, delay, nb):
        top = sc.topology
        self.i = i
        self.cs = ConsistentSet(i, sc.lo[i], sc.hi[i], seed=seed_for(sc.seed, ROLE_DIRECTIONS, i),
                                samples=sc.steiner_samples)
        self.mask = build_sparsity_masks(top, i, sc.H, sc.dbar)
        self.models = nb.models[i]
        self.rows = top.state_indices(self.models)
        self.state = ctl.ControllerState.create(top, delay, nb, i, sc.H)
        self.last_key = None
        self.column = None


def _run_consist(sc):
    top = sc.topology
    H = sc.H
    truth = sc.true_dynamics()
    delay = compute_delay_table(top)
    nb = compute_neighbor_sets(top, delay, sc.dbar)
    bus = MessageBus(delay)
    draw = _disturbance_source(sc)
    agents = [_Agent(sc, i, delay, nb) for i in range(top.N)]
    trace = TraceLog(sc, sc.algorithm)
    trace.info.update(neighbors=nb, delay=delay)

    # a priori: selections on the prior boxes and the columns built from them
    prior = [a.cs.select(record=False) for a in agents]
    for a in agents:
        bus.set_prior(a.i, "theta", prior[a.i])
        bus.set_prior(a.i, "what", np.zeros(top.state_dims[a.i]))
    for a in agents:
        a.column, _ = _synthesize(sc, a, {l: prior[l] for l in a.models}, 0, trace)
        bus.set_prior(a.i, "phi", a.column)

    x = sc.x0.copy()
    try:
        for t in range(sc.T + 1):
            if _diverged(x):
                trace.verdict, trace.blowup_t = "unstable", t
                trace.x.append(x)
                break
            outgoing = []
            thetas, cols = [], []
            u = np.zeros(top.n_u)
            what = np.zeros(top.n_x)
            for a in agents:
                i = a.i
                si = top.state_slice(i)
                xi = x[si]
                if t >= 1:
                    nbrs = top.dyn_neighbors[i]
                    xs = {j: bus.read(j, i, "x", t - 1, t) for j in nbrs}
                    us = {j: bus.read(j, i, "u", t - 1, t) for j in nbrs}
                    a.cs.update(xi, local_regressor(top, i, xs, us), sc.W_assumed, t)
                    theta = a.cs.select()
                else:
                    theta = a.cs.select()
                model = {}
                for l in a.models:
                    d = delay(l, i)
                    model[l] = theta if l == i else (bus.read(l, i, "theta", t - int(d), t) if np.isfinite(d) else prior[l])
                if t == 0:
                    col = a.column  # identical inputs to the a priori synthesis
                else:
                    col, theta = _synthesize(sc, a, model, t, trace, theta)
                a.column = col
                ctl.set_own_column(a.state, col)
                ctl.receive(a.state, bus, t)
                wi = ctl.estimate_disturbance(a.state, xi)
                ui = ctl.compute_control(a.state)
                what[si] = wi
                u[top.input_slice(i)] = ui
                thetas.append(theta)
                cols.append(col)
                outgoing.append((i, {"x": xi, "u": ui, "theta": theta, "phi": col, "what": wi}))
            # second phase: all writes after all reads
            for i, payload in outgoing:
                for kind, val in payload.items():
                    bus.publish(i, kind, t, val)
            trace.x.append(x)
            trace.u.append(u)
            trace.what.append(what)
            trace.thetas.append(thetas)
            trace.columns.append(cols)
            trace.movement.append([a.cs.movement for a in agents])
            if t < sc.T:
                w = draw(t, x)
                trace.w.append(w)
                x = step_truth(truth, x, u, w)
    except (InconsistencyError, SynthesisInfeasibleError) as exc:
        trace.verdict = "inconsistent" if isinstance(exc, InconsistencyError) else "infeasible"
        exc.trace = trace
        raise
    trace.info["bus_reads"] = bus.reads
    return trace


def _synthesize(sc, agent, model, t, trace, theta=None):
    """Column of ``agent`` for ``model``; reselects its own parameter on failure."""
    top = sc.topology
    i = agent.i
    for attempt in range(RESELECT_ATTEMPTS + 1):
        key = tuple(np.asarray(model[l]).tobytes() for l in agent.models)
        if sc.synthesis_cadence == "on-change" and key == agent.last_key and agent.column is not None:
            return agent.column, theta
        dyn = assemble_global(top, model, rows=agent.models)
        try:
            col = synthesize_block(top, i, dyn.A, dyn.B, agent.mask, agent.rows, sc.Q, sc.R, t)
            trace.syntheses += 1
            agent.last_key = key
            return col, theta
        except SynthesisInfeasibleError as exc:
            if theta is None or attempt == RESELECT_ATTEMPTS:
                raise SynthesisInfeasibleError(f"subsystem {i} at t={t}: {exc}", exc.rows, exc.residual) from None
            theta = agent.cs.select(seed=seed_for(sc.seed, ROLE_RESELECT, i, t, attempt), record=False)
            agent.cs.replace_last(theta)
            model[i] = theta
            trace.reselections += 1
            log.info("subsystem %d: reselected parameter at t=%d (attempt %d)", i, t, attempt + 1)


def _run_sysid(sc):
    """Excite until least squares pins (A, B) down, then control the estimate.

    Phase 1 applies ``u(t) = u0 * growth**t * s(t)`` with random signs ``s``.
    After each step the estimate error is bounded by
    ``W sqrt(t n_x) / sigma_min(Z)``; once below ``eps_id`` the full-state
    columns are synthesized on the estimate and run with the disturbance
    estimate recursion from that time on.
    """
    top = sc.topology
    n_x, n_u = top.n_x, top.n_u
    H = sc.H
    opts = {"eps_id": 0.1, "growth": 2.0, "u0": 1.0, "max_steps": 80}
    opts.update(sc.sysid)
    truth = sc.true_dynamics()
    draw = _disturbance_source(sc)
    rng = np.random.default_rng(seed_for(sc.seed, ROLE_EXCITATION))
    trace = TraceLog(sc, sc.algorithm)
    x = sc.x0.copy()
    Zrows, Yrows = [], []
    est = None
    cols = None
    t_id = None
    whats = []
    for t in range(sc.T + 1):
        if _diverged(x):
            trace.verdict, trace.blowup_t = "unstable", t
            trace.x.append(x)
            break
        if est is None and t >= n_x + n_u:
            Z, Y = np.array(Zrows), np.array(Yrows)
            smin = np.linalg.svd(Z, compute_uv=False)[-1]
            if smin > 0:
                bound = sc.W_true * np.sqrt(t * n_x) / smin
                if bound <= opts["eps_id"]:
                    theta_hat, *_ = np.linalg.lstsq(Z, Y, rcond=None)
                    est = (theta_hat[:n_x].T, theta_hat[n_x:].T)
                    try:
                        cs_ = synthesize_columns(est[0], est[1], range(n_x), SparsityMask.dense(n_x, n_u, H),
                                                 Q=sc.Q, R=sc.R, t=t)
                    except SynthesisInfeasibleError as exc:
                        raise IdentificationError(f"estimate at t={t} is not FIR-controllable: {exc}") from None
                    cols = BlockColumn.from_columns(0, cs_)
                    t_id = t
                    trace.info.update(identified_at=t, estimate_A=est[0], estimate_B=est[1], error_bound=bound)
        if est is None:
            if t >= opts["max_steps"]:
                raise IdentificationError(f"no identification within {opts['max_steps']} steps")
            u = opts["u0"] * opts["growth"] ** t * rng.choice([-1.0, 1.0], n_u)
        else:
            w_hat = x.copy()
            for k in range(1, H):
                if t - k >= t_id:
                    w_hat -= cols.phi_x[k] @ whats[t - k - t_id]
            whats.append(w_hat)
            u = np.zeros(n_u)
            for k in range(H):
                if t - k >= t_id:
                    u += cols.phi_u[k] @ whats[t - k - t_id]
        trace.x.append(x)
        trace.u.append(u)
        if t < sc.T:
            w = draw(t, x)
            trace.w.append(w)
            Zrows.append(np.concatenate([x, u]))
            x = step_truth(truth, x, u, w)
            Yrows.append(x)
    return trace
