"""Builders for the scenario families used in tests and examples."""
import numpy as np

from .dynamics import param_layout
from .sim import Scenario
from .topology import NetworkTopology


def box_around(center, free, diameter):
    """Per-entry box of the given Euclidean diameter over the free entries."""
    center = np.asarray(center, dtype=float)
    free = np.asarray(free, dtype=bool)
    half = 0.5 * diameter / np.sqrt(max(int(free.sum()), 1))
    return np.where(free, center - half, center), np.where(free, center + half, center)


def _fill(topology, i, a_self, a_other, b_self):
    """Local parameter vector and free-entry flags from block generators.

    Off-diagonal input blocks are pinned at zero; every other entry is free.
    """
    theta, free = [], []
    for blk in param_layout(topology, i):
        if blk.kind == "A":
            M = a_self(blk.shape) if blk.source == i else a_other(blk.shape)
            f = np.ones(blk.shape, dtype=bool)
        else:
            M = b_self(blk.shape) if blk.source == i else np.zeros(blk.shape)
            f = np.full(blk.shape, blk.source == i)
        theta.append(np.asarray(M, dtype=float).ravel())
        free.append(f.ravel())
    return np.concatenate(theta), np.concatenate(free)


def chain_scenario(N=5, a_self=1.1, a_other=0.2, b_self=1.0, diameter=1.0, W=0.1, T=500, T_stop=50,
                   dbar=None, H=None, seed=0, algorithm="consist-sls", **kw):
    """Scalar subsystems on a chain whose dynamics and communication graphs coincide.

    Every parameter except the pinned off-diagonal inputs is unknown; the
    prior box has the given diameter and contains the truth off-center.
    With the communication graph equal to the dynamics graph, a disturbance
    at one end must be chased to the other end before it can be cancelled,
    so ``dbar`` defaults to the chain diameter and ``H`` to ``N + 1``.
    """
    edges = [(i, i + 1) for i in range(N - 1)] + [(i + 1, i) for i in range(N - 1)]
    top = NetworkTopology.build([1] * N, [1] * N, edges, edges)
    rng = np.random.default_rng(seed)
    truth, lo, hi = [], [], []
    for i in range(N):
        th, free = _fill(top, i, lambda s: np.full(s, a_self), lambda s: np.full(s, a_other), lambda s: np.full(s, b_self))
        half = 0.5 * diameter / np.sqrt(free.sum())
        center = th + np.where(free, rng.uniform(-0.5 * half, 0.5 * half, th.size), 0.0)
        l, h = box_around(center, free, diameter)
        truth.append(th)
        lo.append(l)
        hi.append(h)
    kw.setdefault("disturbance", {"policy": "impulse-then-zero"})
    return Scenario(top, truth, lo, hi, W, W, N - 1 if dbar is None else dbar, N + 1 if H is None else H, T,
                    T_stop=T_stop, seed=seed, algorithm=algorithm, **kw)


def double_integrator_scenario(algorithm="consist-sls", W=1.0, T=60, T_stop=20, H=4, diameter=1.0, seed=0, **kw):
    """Single subsystem ``x+ = [[1, 1], [0, 1]] x + [0, 1]' u + w`` with all six entries unknown."""
    top = NetworkTopology.build([2], [1], [], [])
    truth = np.array([1.0, 1.0, 0.0, 1.0, 0.0, 1.0])
    rng = np.random.default_rng(seed)
    half = 0.5 * diameter / np.sqrt(truth.size)
    lo, hi = box_around(truth + rng.uniform(-0.5 * half, 0.5 * half, truth.size), np.ones(6, bool), diameter)
    kw.setdefault("disturbance", {"policy": "impulse-then-zero"})
    return Scenario(top, [truth], [lo], [hi], W, W, 1, H, T, T_stop=T_stop, seed=seed, algorithm=algorithm, **kw)


def random_network_scenario(seed, N=None, dbar=None, H=None, T=200, W=0.1, samples_per_dim=8, **kw):
    """Random heterogeneous network with a two-hop communication graph.

    The dynamics graph is a random spanning tree plus a few extra edges,
    made symmetric. Communication reaches two dynamics hops in one step,
    which together with full local actuation keeps every column finite
    for any ``dbar >= 1`` and ``H >= 2``. Diagonal input blocks are close
    to the identity and off-diagonal ones are pinned at zero.
    """
    rng = np.random.default_rng(seed)
    N = int(rng.choice([3, 5, 8])) if N is None else N
    dims = [int(d) for d in rng.choice([1, 2], N)]
    dbar = int(rng.choice([1, 2])) if dbar is None else dbar
    H = int(rng.choice([3, 5])) if H is None else H
    und = set()
    for k in range(1, N):
        j = int(rng.integers(k))
        und.add((j, k))
    for _ in range(N // 3):
        a, b = sorted(rng.choice(N, 2, replace=False))
        und.add((int(a), int(b)))
    dyn = sorted(und | {(b, a) for a, b in und})
    nbrs = {i: {i} for i in range(N)}
    for a, b in dyn:
        nbrs[a].add(b)
    comm = sorted({(a, c) for a in range(N) for b in nbrs[a] for c in nbrs[b] if a != c})
    top = NetworkTopology.build(dims, dims, dyn, comm)
    truth, lo, hi = [], [], []
    for i in range(N):
        th, free = _fill(top, i,
                         lambda s: np.eye(*s) * rng.uniform(0.9, 1.2) + rng.uniform(-0.1, 0.1, s),
                         lambda s: rng.uniform(-0.3, 0.3, s),
                         lambda s: np.eye(*s) + rng.uniform(-0.1, 0.1, s))
        # only diagonal entries of the input block stay free
        for blk in param_layout(top, i):
            if blk.kind == "B" and blk.source == i:
                f = free[blk.offset:blk.offset + blk.size].reshape(blk.shape)
                f &= np.eye(*blk.shape, dtype=bool)
                th[blk.offset:blk.offset + blk.size] = np.where(f.ravel(), th[blk.offset:blk.offset + blk.size],
                                                                np.eye(*blk.shape).ravel())
        width = rng.uniform(0.05, 0.15)
        center = th + np.where(free, rng.uniform(-0.5, 0.5, th.size) * width, 0.0)
        truth.append(th)
        lo.append(np.where(free, center - width, th))
        hi.append(np.where(free, center + width, th))
    kw.setdefault("disturbance", {"policy": "uniform"})
    samples = None if samples_per_dim is None else samples_per_dim * max(max(int((h > l).sum()) for l, h in zip(lo, hi)), 1)
    return Scenario(top, truth, lo, hi, W, W, dbar, H, T, seed=seed, steiner_samples=samples, **kw)
