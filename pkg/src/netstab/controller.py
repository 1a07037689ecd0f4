"""Runtime of the distributed controller.

Each subsystem keeps the delayed columns of its incoming neighbors and the
delayed disturbance estimates they broadcast. From these it recovers its own
disturbance estimate and control input:

    what_i(t) = x_i(t) - sum_j sum_{k=1}^{H-1} phi_x^j[k](i) what_j(t-k)
    u_i(t)    =          sum_j sum_{k=0}^{H-1} phi_u^j[k](i) what_j(t-k)

where the column of ``j`` is the one it synthesized ``d(j->i)`` steps ago.
"""
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import CausalityError


@dataclass
class ControllerState:
    """Local controller memory of one subsystem.

    ``received_columns[j]`` is the column of ``j`` stamped ``t - d(j->i)``;
    ``received_whats[j]`` maps stamps to the disturbance estimates of ``j``
    that have arrived and are still within the horizon.
    """

    owner: int
    H: int
    delays: dict  # j -> d(j -> owner) for j in d_in(owner), including owner itself
    state_slice: slice
    input_slice: slice
    what_buffer: deque = None
    received_columns: dict = field(default_factory=dict)
    received_whats: dict = field(default_factory=dict)
    neighbor_dims: dict = field(default_factory=dict)
    t: int = 0

    def __post_init__(self):
        if self.what_buffer is None:
            self.what_buffer = deque(maxlen=self.H)

    @classmethod
    def create(cls, topology, delay, neighbors, i, H):
        delays = {int(j): int(delay(j, i)) for j in neighbors.d_in[i]}
        dims = {j: topology.state_dims[j] for j in delays}
        return cls(i, H, delays, topology.state_slice(i), topology.input_slice(i), neighbor_dims=dims)

    def what_of(self, j, s):
        """``what_j(s)`` as known locally; zero before time 0."""
        if s < 0:
            return np.zeros(self.neighbor_dims[j])
        if j == self.owner:
            for stamp, v in self.what_buffer:
                if stamp == s:
                    return v
            raise CausalityError(f"subsystem {self.owner}: own estimate at {s} is outside the buffer")
        try:
            return self.received_whats[j][s]
        except KeyError:
            raise CausalityError(f"subsystem {self.owner}: estimate of {j} at {s} has not arrived by {self.t}") from None


def receive(state, bus, t):
    """Read the information set of ``state.owner`` at time ``t`` from the bus."""
    i = state.owner
    state.t = t
    for j, d in state.delays.items():
        if j == i:
            continue
        col = bus.read(j, i, "phi", t - d, t)
        _check_support(state, j, col, d)
        state.received_columns[j] = col
        state.received_whats[j] = {t - k: bus.read(j, i, "what", t - k, t) for k in range(d, state.H) if t - k >= 0}


def set_own_column(state, col):
    _check_support(state, state.owner, col, 0)
    state.received_columns[state.owner] = col


def _check_support(state, j, col, d):
    # lags below the delay would need data that cannot have arrived
    if d and (np.any(col.phi_x[:d, state.state_slice]) or np.any(col.phi_u[:d, state.input_slice])):
        raise CausalityError(f"column of {j} is nonzero at subsystem {state.owner} before its delay {d}")


def estimate_disturbance(state, x_i):
    """Disturbance estimate ``what_i(t)``; appended to the buffer."""
    w = np.array(x_i, dtype=float)
    t = state.t
    for j, col in state.received_columns.items():
        d = state.delays[j]
        for k in range(max(1, d), state.H):
            blk = col.phi_x[k, state.state_slice]
            if blk.any():
                w -= blk @ state.what_of(j, t - k)
    state.what_buffer.append((t, w))
    return w


def compute_control(state):
    """Control input ``u_i(t)``; needs ``estimate_disturbance`` to have run at ``t``."""
    t = state.t
    u = np.zeros(state.input_slice.stop - state.input_slice.start)
    for j, col in state.received_columns.items():
        d = state.delays[j]
        for k in range(d, state.H):
            blk = col.phi_u[k, state.input_slice]
            if blk.any():
                u += blk @ state.what_of(j, t - k)
    return u


@dataclass
class GlobalOperators:
    """Implemented closed-loop maps at one time step, ``k = 0..H``."""

    t: int
    Phi_x: np.ndarray  # (H+1, n_x, n_x)
    Phi_u: np.ndarray  # (H+1, n_u, n_x)


def assemble_global_operators(topology, delay, column_at, t, H):
    """Stack delayed columns into ``Phi_x_t`` and ``Phi_u_t``.

    Block ``(i, j)`` of ``Phi_x_t[k]`` is row block ``i`` of the column of
    ``j`` stamped ``t - d(j->i)``. Stamps before 0 use the initial column.
    ``column_at(j, s)`` returns the BlockColumn of ``j`` stamped ``s``.
    """
    Px = np.zeros((H + 1, topology.n_x, topology.n_x))
    Pu = np.zeros((H + 1, topology.n_u, topology.n_x))
    for j in range(topology.N):
        sj = topology.state_slice(j)
        for i in range(topology.N):
            d = delay(j, i)
            if not np.isfinite(d):
                continue  # masks keep such blocks at zero
            col = column_at(j, max(0, t - int(d)))
            si, ui = topology.state_slice(i), topology.input_slice(i)
            Px[:, si, sj] = col.phi_x[:, si, :]
            Pu[:H, ui, sj] = col.phi_u[:, ui, :]
    if not np.array_equal(Px[0], np.eye(topology.n_x)):
        raise AssertionError("Phi_x[0] is not the identity")
    return GlobalOperators(t, Px, Pu)
