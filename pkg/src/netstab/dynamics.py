"""Parametric model family A(theta), B(theta) and the true plant.

Local parameter layout
----------------------
``theta_i`` lists, for ``j`` in ascending ``N(i)``, the entries of the
``n_i x n_j`` block ``A^{ij}`` in row-major order, followed by, again for
``j`` ascending, the entries of the ``n_i x m_j`` block ``B^{ij}``.
"""
from dataclasses import dataclass

import numpy as np

from .errors import MissingDataError, ParameterShapeError


@dataclass(frozen=True)
class Block:
    kind: str  # "A" or "B"
    source: int
    offset: int
    shape: tuple

    @property
    def size(self):
        return self.shape[0] * self.shape[1]


def param_layout(topology, i):
    """Blocks of ``theta_i`` in storage order."""
    n_i = topology.state_dims[i]
    blocks, off = [], 0
    for kind, dims in (("A", topology.state_dims), ("B", topology.input_dims)):
        for j in topology.dyn_neighbors[i]:
            shape = (n_i, dims[j])
            blocks.append(Block(kind, j, off, shape))
            off += shape[0] * shape[1]
    return blocks


def param_dim(topology, i):
    n_i = topology.state_dims[i]
    return sum(n_i * (topology.state_dims[j] + topology.input_dims[j]) for j in topology.dyn_neighbors[i])


@dataclass(frozen=True)
class LocalParams:
    owner: int
    entries: np.ndarray

    @classmethod
    def checked(cls, topology, i, entries):
        entries = np.asarray(entries, dtype=float).ravel()
        if entries.size != param_dim(topology, i):
            raise ParameterShapeError(
                f"subsystem {i}: expected {param_dim(topology, i)} parameters, got {entries.size}")
        return cls(i, entries)


@dataclass(frozen=True)
class GlobalDynamics:
    A: np.ndarray
    B: np.ndarray


def assemble_global(topology, params, rows=None):
    """Place local parameters into global ``A`` and ``B``.

    Parameters
    ----------
    params : sequence or mapping
        ``params[i]`` is ``theta_i`` (array or LocalParams).
    rows : iterable of int, optional
        Only fill the block rows of these subsystems; other rows stay zero.
        Defaults to all subsystems.
    """
    A = np.zeros((topology.n_x, topology.n_x))
    B = np.zeros((topology.n_x, topology.n_u))
    if rows is None:
        rows = range(topology.N)
        if len(params) != topology.N:
            raise ParameterShapeError(f"expected {topology.N} parameter vectors, got {len(params)}")
    for i in rows:
        theta = params[i]
        if isinstance(theta, LocalParams):
            theta = theta.entries
        theta = LocalParams.checked(topology, i, theta).entries
        si = topology.state_slice(i)
        for blk in param_layout(topology, i):
            vals = theta[blk.offset:blk.offset + blk.size].reshape(blk.shape)
            if blk.kind == "A":
                A[si, topology.state_slice(blk.source)] = vals
            else:
                B[si, topology.input_slice(blk.source)] = vals
    return GlobalDynamics(A, B)


def extract_local(topology, A, B, i):
    """Read ``theta_i`` back out of global matrices (inverse of assemble_global)."""
    si = topology.state_slice(i)
    parts = []
    for blk in param_layout(topology, i):
        M = A[si, topology.state_slice(blk.source)] if blk.kind == "A" else B[si, topology.input_slice(blk.source)]
        parts.append(np.asarray(M, dtype=float).ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def step_truth(dyn, x, u, w):
    """One step of ``x(t+1) = A x(t) + B u(t) + w(t)``."""
    return dyn.A @ x + dyn.B @ u + w


def local_regressor(topology, i, x_prev, u_prev):
    """Regressor ``Z_i`` with ``x_i(t) = Z_i theta_i + w_i(t-1)``.

    ``x_prev`` and ``u_prev`` are either global vectors or mappings from
    neighbor id to that neighbor's state / input at ``t-1``.
    """
    n_i = topology.state_dims[i]
    Z = np.zeros((n_i, param_dim(topology, i)))
    eye = np.eye(n_i)
    for blk in param_layout(topology, i):
        if blk.kind == "A":
            z = _neighbor_value(x_prev, blk.source, topology.state_slice(blk.source), "state")
        else:
            z = _neighbor_value(u_prev, blk.source, topology.input_slice(blk.source), "input")
        if z.size != blk.shape[1]:
            raise ParameterShapeError(f"neighbor {blk.source} {blk.kind}-data has size {z.size}, expected {blk.shape[1]}")
        Z[:, blk.offset:blk.offset + blk.size] = np.kron(eye, z[None, :])
    return Z


def _neighbor_value(data, j, sl, what):
    if isinstance(data, np.ndarray):
        return data[sl]
    try:
        return np.asarray(data[j], dtype=float).ravel()
    except (KeyError, IndexError):
        raise MissingDataError(f"missing {what} of neighbor {j}") from None


def frobenius_check(dyn, kappa):
    """True when both ``||A||_F`` and ``||B||_F`` are at most ``kappa``."""
    return bool(np.linalg.norm(dyn.A) <= kappa and np.linalg.norm(dyn.B) <= kappa)
