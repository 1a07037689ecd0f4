"""Network structure: dynamical coupling, communication graph, delays.

Subsystems are indexed ``0..N-1``. A dynamics edge ``(j, i)`` means that the
state or input of ``j`` enters the update of ``i`` (``j in N(i)``); a
communication edge ``(j, i)`` means ``j`` can send to ``i`` in one step.
Every subsystem is its own dynamical neighbor and has a communication
self-loop (zero delay).
"""
from collections import deque
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NetworkTopology:
    """Immutable description of a networked system.

    Parameters
    ----------
    state_dims, input_dims : tuple of int
        ``n_i`` and ``m_i`` for each subsystem.
    dyn_neighbors : tuple of tuple of int
        Sorted ``N(i)`` for each subsystem, always containing ``i``.
    comm_succ : tuple of frozenset
        ``comm_succ[j]`` is the set of ``i`` with a link ``j -> i``
        (self-loops included).
    """

    state_dims: tuple
    input_dims: tuple
    dyn_neighbors: tuple
    comm_succ: tuple
    state_offsets: tuple = field(init=False, repr=False)
    input_offsets: tuple = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "state_offsets", tuple(np.concatenate([[0], np.cumsum(self.state_dims)]).astype(int)))
        object.__setattr__(self, "input_offsets", tuple(np.concatenate([[0], np.cumsum(self.input_dims)]).astype(int)))

    @classmethod
    def build(cls, state_dims, input_dims, dyn_edges, comm_edges):
        """Construct from edge lists, adding self-loops and sorting neighbor sets."""
        N = len(state_dims)
        if len(input_dims) != N:
            raise ValueError("state_dims and input_dims differ in length")
        if any(int(n) < 1 for n in state_dims) or any(int(m) < 0 for m in input_dims):
            raise ValueError("state dimensions must be >= 1 and input dimensions >= 0")
        nbrs = [{i} for i in range(N)]
        for j, i in dyn_edges:
            _check_ids(N, j, i)
            nbrs[i].add(j)
        succ = [{j} for j in range(N)]
        for j, i in comm_edges:
            _check_ids(N, j, i)
            succ[j].add(i)
        return cls(
            tuple(int(n) for n in state_dims),
            tuple(int(m) for m in input_dims),
            tuple(tuple(sorted(s)) for s in nbrs),
            tuple(frozenset(s) for s in succ),
        )

    @property
    def N(self):
        return len(self.state_dims)

    @property
    def n_x(self):
        return self.state_offsets[-1]

    @property
    def n_u(self):
        return self.input_offsets[-1]

    def state_slice(self, i):
        return slice(self.state_offsets[i], self.state_offsets[i + 1])

    def input_slice(self, i):
        return slice(self.input_offsets[i], self.input_offsets[i + 1])

    def state_indices(self, subsystems):
        """Global state indices of a collection of subsystems, ascending."""
        idx = [np.arange(self.state_offsets[i], self.state_offsets[i + 1]) for i in sorted(subsystems)]
        return np.concatenate(idx) if idx else np.zeros(0, dtype=int)

    def input_indices(self, subsystems):
        idx = [np.arange(self.input_offsets[i], self.input_offsets[i + 1]) for i in sorted(subsystems)]
        return np.concatenate(idx) if idx else np.zeros(0, dtype=int)

    def owner_of_state(self, k):
        """Subsystem owning global state index ``k``."""
        return int(np.searchsorted(self.state_offsets, k, side="right") - 1)

    def comm_edges(self):
        return sorted((j, i) for j in range(self.N) for i in self.comm_succ[j] if i != j)

    def dyn_edges(self):
        return sorted((j, i) for i in range(self.N) for j in self.dyn_neighbors[i] if i != j)


def _check_ids(N, *ids):
    for k in ids:
        if not 0 <= k < N:
            raise ValueError(f"subsystem id {k} out of range for N={N}")


@dataclass(frozen=True)
class DelayTable:
    """All-pairs communication delays; ``steps[j, i] = d(j -> i)``, ``inf`` if unreachable."""

    steps: np.ndarray

    def __call__(self, src, dst):
        return self.steps[src, dst]

    def reachable(self, src, dst):
        return np.isfinite(self.steps[src, dst])

    @property
    def max_finite(self):
        finite = self.steps[np.isfinite(self.steps)]
        return int(finite.max()) if finite.size else 0


@dataclass(frozen=True)
class NeighborSets:
    """The d̄-neighborhoods used for synthesis and control.

    ``d_in[i]`` holds ``j`` with ``d(j->i) <= dbar``, ``d_out[i]`` holds ``j``
    with ``d(i->j) <= dbar`` and ``models[i]`` is the set of subsystems whose
    model rows enter the synthesis at ``i``.
    """

    dbar: int
    d_in: tuple
    d_out: tuple
    models: tuple
    nbar: int


def compute_delay_table(topology):
    """Breadth-first search from every source over the communication graph."""
    N = topology.N
    steps = np.full((N, N), np.inf)
    for src in range(N):
        steps[src, src] = 0.0
        queue = deque([src])
        while queue:
            a = queue.popleft()
            for b in topology.comm_succ[a]:
                if np.isinf(steps[src, b]):
                    steps[src, b] = steps[src, a] + 1
                    queue.append(b)
    return DelayTable(steps)


def comm_matrix_power(topology, k):
    """Support of the ``k``-th power of the communication matrix.

    Entry ``(i, j)`` is 1 iff information from ``j`` reaches ``i`` within
    ``k`` hops. Computed by ``k`` rounds of frontier expansion.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    N = topology.N
    out = np.zeros((N, N), dtype=np.int8)
    for src in range(N):
        seen = {src}
        frontier = {src}
        for _ in range(k):
            frontier = {b for a in frontier for b in topology.comm_succ[a]} - seen
            if not frontier:
                break
            seen |= frontier
        out[list(seen), src] = 1
    return out


def compute_neighbor_sets(topology, delay, dbar):
    """d̄-incoming, d̄-outgoing and model-neighbor sets for every subsystem."""
    if dbar < 1:
        raise ValueError("dbar must be a positive integer")
    N = topology.N
    d = delay.steps
    d_in = tuple(tuple(j for j in range(N) if d[j, i] <= dbar) for i in range(N))
    d_out = tuple(tuple(j for j in range(N) if d[i, j] <= dbar) for i in range(N))
    models = []
    for i in range(N):
        out = set(d_out[i])
        models.append(tuple(l for l in range(N) if out.intersection(topology.dyn_neighbors[l])))
    n = topology.state_dims
    weight = lambda s: sum(n[j] for j in s)
    nbar = max(
        max(weight(s) for s in d_in),
        max(weight(s) for s in d_out),
        max(weight(s) for s in models),
    )
    return NeighborSets(int(dbar), d_in, d_out, tuple(models), int(nbar))


def validate_assumption_comm(topology):
    """Dynamics edges ``(j, i)`` that lack a direct communication link ``j -> i``.

    Returns an empty list when every dynamical neighbor can talk to the
    subsystem it influences in one step.
    """
    return [(j, i) for (j, i) in topology.dyn_edges() if i not in topology.comm_succ[j]]
