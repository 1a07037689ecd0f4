"""Consistent parameter sets and Steiner-point selection for one subsystem.

Coordinates whose prior interval has zero width are pinned: they are
substituted into every constraint and the polytope lives on the remaining
free coordinates. The Steiner point of a set depends only on the set, not
on the space it is embedded in, so this changes nothing but cost.
"""
from dataclasses import dataclass, field
import logging

import numpy as np

from . import geometry
from .errors import EmptyPolytopeError, GlobalInconsistencyError, InconsistencyError

log = logging.getLogger(__name__)

PRUNE_EVERY = 100


def default_samples(dim):
    return 64 * max(int(dim), 1)


@dataclass
class Observation:
    t: int
    x: np.ndarray  # x^i(t)
    Z: np.ndarray  # regressor built from step t-1
    W: float


class ConsistentSet:
    """Nested set of local parameters consistent with the data seen so far.

    Parameters
    ----------
    owner : int
    lo, hi : array_like
        Prior box ``P_0`` over the full parameter vector.
    seed : int or SeedSequence
        Seeds the fixed direction set used by the Steiner estimator.
    samples : int, optional
        Number of directions; defaults to ``64 * free_dim``.
    """

    def __init__(self, owner, lo, hi, seed=0, samples=None, prune_every=PRUNE_EVERY, prune_budget=None):
        self.owner = owner
        self.lo = np.asarray(lo, dtype=float).ravel()
        self.hi = np.asarray(hi, dtype=float).ravel()
        if self.lo.shape != self.hi.shape or np.any(self.lo > self.hi):
            raise ValueError("prior box needs lo <= hi")
        self.free = self.lo < self.hi
        self.pinned = np.where(self.free, 0.0, self.lo)
        self.polytope = geometry.Polytope.box(self.lo[self.free], self.hi[self.free])
        self.samples = default_samples(self.free_dim) if samples is None else int(samples)
        self.seed = seed
        self._cache = geometry.SupportCache(geometry.direction_frames(max(self.free_dim, 1), self.samples, seed)) \
            if self.free_dim else None
        self.ledger_size = len(self.polytope)  # halfspaces ever inserted, pruned or not
        self.prune_every = prune_every
        self.prune_budget = prune_budget
        self.history = []
        self.movement = 0.0
        self._last_prune = 0

    @property
    def dim(self):
        return self.lo.size

    @property
    def free_dim(self):
        return int(self.free.sum())

    @property
    def diameter(self):
        return geometry.diameter_box(self.lo, self.hi)

    def _full(self, theta_free):
        theta = self.pinned.copy()
        theta[self.free] = theta_free
        return theta

    def update(self, x, Z, W, t=None):
        """Intersect with ``{theta : ||x - Z theta||_inf <= W}``."""
        x = np.asarray(x, dtype=float).ravel()
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        Zf = Z[:, self.free]
        rhs = x - Z[:, ~self.free] @ self.pinned[~self.free]
        norms = np.linalg.norm(Zf, axis=1)
        scale = np.maximum(1.0, np.abs(Z).max(axis=1))
        informative = norms > 1e-12 * scale
        if np.any(np.abs(rhs[~informative]) > W + 1e-9 * scale[~informative]):
            raise InconsistencyError(f"subsystem {self.owner}: observation violates the disturbance bound", self.owner, t)
        normals = np.vstack([Zf[informative], -Zf[informative]])
        offsets = np.concatenate([rhs[informative] + W, W - rhs[informative]])
        self.ledger_size += len(offsets)
        if len(offsets):
            # rows that the prior box already implies never change the set
            lo, hi = self.lo[self.free], self.hi[self.free]
            box_max = np.maximum(normals * lo, normals * hi).sum(axis=1)
            cuts = box_max > offsets
            if cuts.any():
                mark = 0 if t is None else int(t)
                self.polytope = self.polytope.with_halfspaces(normals[cuts], offsets[cuts], mark=mark)
        if self._cache is not None:
            try:
                self._cache.refresh(self.polytope)
            except EmptyPolytopeError:
                raise InconsistencyError(f"subsystem {self.owner}: consistent set became empty", self.owner, t) from None
        if t is not None and self.prune_every and t - self._last_prune >= self.prune_every:
            self._last_prune = t
            self.polytope = geometry.prune_redundant(self.polytope, self.prune_budget)
        return self

    def select(self, seed=None, record=True):
        """Steiner point of the current set (full parameter vector).

        With ``seed`` given, a fresh direction set is drawn for this call
        only (used for reselection after a failed synthesis).
        """
        if self._cache is None:
            theta = self.pinned.copy()
        else:
            if seed is None:
                self._cache.refresh(self.polytope)
                est = self._cache.estimate()
            else:
                est = geometry.steiner_estimate(self.polytope, self.samples, seed)
            est = np.clip(est, self.lo[self.free], self.hi[self.free])
            theta = self._full(geometry.repair(self.polytope, est))
        if record:
            if self.history:
                self.movement += float(np.linalg.norm(theta - self.history[-1]))
            self.history.append(theta)
        return theta

    def replace_last(self, theta):
        """Overwrite the most recent selection (after a reselection)."""
        if len(self.history) >= 2:
            self.movement -= float(np.linalg.norm(self.history[-1] - self.history[-2]))
            self.movement += float(np.linalg.norm(theta - self.history[-2]))
        self.history[-1] = theta

    def contains(self, theta, tol=geometry.FEAS_TOL):
        theta = np.asarray(theta, dtype=float)
        if np.any(np.abs(theta[~self.free] - self.pinned[~self.free]) > tol):
            return False
        return geometry.contains(self.polytope, theta[self.free], tol)

    def path_length(self):
        return self.movement


def update_consistent_set(cs, x, Z, W, t=None):
    return cs.update(x, Z, W, t)


def select_parameter(cs, seed=None):
    return cs.select(seed)


def path_length(cs):
    return cs.path_length()


@dataclass
class SetSelectState:
    """Union of prior boxes; CONSIST runs on one member at a time.

    When the active member is falsified it is discarded, the next remaining
    member (in list order) is activated and the whole observation history
    is replayed into it.
    """

    owner: int
    boxes: list
    seed: int = 0
    samples: int = None
    active: int = 0
    restarts: int = 0
    observations: list = field(default_factory=list)
    current: ConsistentSet = None
    discarded: list = field(default_factory=list)

    def __post_init__(self):
        if not self.boxes:
            raise ValueError("at least one candidate set is required")
        self.current = self._make(self.active)

    def _make(self, k):
        lo, hi = self.boxes[k]
        return ConsistentSet(self.owner, lo, hi, seed=self.seed, samples=self.samples)

    def update(self, x, Z, W, t=None):
        obs = Observation(t, np.asarray(x, dtype=float), np.asarray(Z, dtype=float), W)
        self.observations.append(obs)
        try:
            self.current.update(obs.x, obs.Z, W, t)
            return self
        except InconsistencyError:
            self.discarded.append(self.active)
        for k in range(len(self.boxes)):
            if k in self.discarded:
                continue
            self.restarts += 1
            cand = self._make(k)
            try:
                for o in self.observations:
                    cand.update(o.x, o.Z, o.W, o.t)
            except InconsistencyError:
                self.discarded.append(k)
                continue
            log.info("subsystem %d: switched to candidate set %d", self.owner, k)
            self.active, self.current = k, cand
            return self
        raise GlobalInconsistencyError(f"subsystem {self.owner}: every candidate set is inconsistent", self.owner, t)

    def select(self, seed=None):
        return self.current.select(seed)


def setselect_update(ss, x, Z, W, t=None):
    """Apply one observation to a SETSELECT state and return ``(ss, theta)``."""
    ss.update(x, Z, W, t)
    return ss, ss.select()
