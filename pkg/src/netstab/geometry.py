"""Halfspace polytopes, support functions, Steiner points and projections."""
from dataclasses import dataclass
import itertools
import logging

import numpy as np

from . import lp
from .errors import EmptyPolytopeError, UnboundedPolytopeError

log = logging.getLogger(__name__)

FEAS_TOL = 1e-9

_ids = itertools.count()


@dataclass(frozen=True)
class Halfspace:
    """The constraint ``normal @ theta <= offset``."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        if not np.linalg.norm(self.normal) > 0:
            raise ValueError("halfspace normal must be nonzero")


class Polytope:
    """Bounded polytope ``{theta : G theta <= h}`` in H-representation.

    Rows are stored with unit-norm normals. Each row carries the time step
    at which it was inserted (``marks``), a process-unique id and a
    ``protected`` flag; protected rows (the initial box) are never pruned.
    Instances are treated as values: every modifying method returns a new
    object.
    """

    def __init__(self, G, h, marks=None, ids=None, protected=None):
        G = np.atleast_2d(np.asarray(G, dtype=float))
        h = np.asarray(h, dtype=float).ravel()
        if G.shape[0] != h.size:
            raise ValueError("G and h disagree on the number of constraints")
        self.G = G
        self.h = h
        m = h.size
        self.marks = np.zeros(m, dtype=int) if marks is None else np.asarray(marks, dtype=int)
        self.ids = np.array([next(_ids) for _ in range(m)], dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
        self.protected = np.zeros(m, dtype=bool) if protected is None else np.asarray(protected, dtype=bool)

    @classmethod
    def box(cls, lo, hi, mark=0):
        lo = np.asarray(lo, dtype=float).ravel()
        hi = np.asarray(hi, dtype=float).ravel()
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("box needs lo <= hi of equal shape")
        d = lo.size
        eye = np.eye(d)
        G = np.vstack([eye, -eye])
        h = np.concatenate([hi, -lo])
        return cls(G, h, np.full(2 * d, mark), protected=np.ones(2 * d, dtype=bool))

    @property
    def dim(self):
        return self.G.shape[1]

    def __len__(self):
        return self.h.size

    @property
    def halfspaces(self):
        return [Halfspace(g.copy(), float(b)) for g, b in zip(self.G, self.h)]

    def with_halfspaces(self, normals, offsets, mark=0):
        """Append constraints ``normals @ theta <= offsets`` (rows normalized)."""
        normals = np.atleast_2d(np.asarray(normals, dtype=float))
        offsets = np.asarray(offsets, dtype=float).ravel()
        norms = np.linalg.norm(normals, axis=1)
        if np.any(norms <= 0):
            raise ValueError("halfspace normal must be nonzero")
        normals = normals / norms[:, None]
        offsets = offsets / norms
        k = offsets.size
        return Polytope(
            np.vstack([self.G, normals]),
            np.concatenate([self.h, offsets]),
            np.concatenate([self.marks, np.full(k, mark)]),
            np.concatenate([self.ids, [next(_ids) for _ in range(k)]]),
            np.concatenate([self.protected, np.zeros(k, dtype=bool)]),
        )

    def subset(self, keep):
        keep = np.asarray(keep)
        return Polytope(self.G[keep], self.h[keep], self.marks[keep], self.ids[keep], self.protected[keep])

    def translate(self, c):
        return Polytope(self.G, self.h + self.G @ np.asarray(c, dtype=float), self.marks, self.ids, self.protected)

    def violation(self, x):
        """Largest constraint violation ``max(G x - h)`` (negative inside)."""
        return float(np.max(self.G @ x - self.h)) if len(self) else -np.inf


def contains(P, x, tol=FEAS_TOL):
    """True iff every halfspace of ``P`` holds at ``x`` within ``tol``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (P.dim,):
        raise ValueError(f"point of shape {x.shape} for polytope of dimension {P.dim}")
    return P.violation(x) <= tol


@dataclass
class Support:
    value: float
    point: np.ndarray
    basis: np.ndarray  # constraint ids of the optimal vertex


def _support_lp(P, v, warm=None):
    """Solve ``max v @ theta`` over ``P`` through its dual ``min h @ y, G^T y = v, y >= 0``."""
    basis = None
    if warm is not None:
        pos = {int(k): n for n, k in enumerate(P.ids)}
        try:
            basis = np.array([pos[int(k)] for k in warm])
        except KeyError:
            basis = None
    res = lp.simplex(P.h, P.G.T, v, basis=basis)
    if res.status == lp.UNBOUNDED:
        raise EmptyPolytopeError("polytope is empty")
    if res.status == lp.INFEASIBLE:
        raise UnboundedPolytopeError("polytope is unbounded in the requested direction")
    point = res.multipliers
    return Support(float(v @ point), point, P.ids[res.basis].copy())


def support_point(P, v):
    """Maximizer and value of ``v @ theta`` over ``P``.

    Returns
    -------
    point : ndarray
        A vertex attaining the maximum.
    value : float
    """
    v = np.asarray(v, dtype=float)
    s = _support_lp(P, v)
    return s.point, s.value


def support_value(P, v):
    return support_point(P, v)[1]


def direction_frames(dim, samples, seed):
    """Antithetic unit directions built from random orthonormal frames.

    ``ceil(samples / (2 dim))`` Haar-random orthonormal bases are drawn and
    every basis vector is used with both signs. The sum of ``v v^T`` over
    the set is an exact multiple of the identity, so the Steiner estimate
    reproduces translations exactly.
    """
    rng = np.random.default_rng(seed)
    frames = max(1, -(-int(samples) // (2 * dim)))
    dirs = []
    for _ in range(frames):
        Q, R = np.linalg.qr(rng.standard_normal((dim, dim)))
        Q = Q * np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R)))
        dirs.append(Q.T)
        dirs.append(-Q.T)
    return np.vstack(dirs)


class SupportCache:
    """Support points of a shrinking polytope along a fixed direction set.

    After new halfspaces are added, only directions whose cached maximizer
    violates one of them are re-solved, warm-started from the previous
    optimal basis (adding a primal row adds a dual column, so the old
    basis stays feasible). Maximizers that survive are still optimal over
    the smaller set.
    """

    def __init__(self, directions):
        self.directions = np.asarray(directions, dtype=float)
        M, d = self.directions.shape
        self.points = np.full((M, d), np.nan)
        self.values = np.full(M, np.nan)
        self.bases = [None] * M
        self._seen = np.zeros(0, dtype=np.int64)
        self.resolves = 0

    def refresh(self, P, tol=1e-10):
        known = np.isin(P.ids, self._seen)
        if np.all(np.isnan(self.values)):
            todo = np.arange(len(self.values))
        else:
            fresh = ~known
            if not fresh.any():
                self._seen = P.ids.copy()
                return
            viol = self.points @ P.G[fresh].T - P.h[fresh]
            todo = np.flatnonzero(np.any(viol > tol, axis=1))
        for m in todo:
            s = _support_lp(P, self.directions[m], warm=self.bases[m])
            self.points[m], self.values[m], self.bases[m] = s.point, s.value, s.basis
        self.resolves += len(todo)
        self._seen = P.ids.copy()

    def estimate(self):
        M, d = self.directions.shape
        return d / M * (self.directions.T @ self.values)


def steiner_estimate(P, samples, seed):
    """Raw Monte Carlo Steiner point (may lie slightly outside ``P``)."""
    cache = SupportCache(direction_frames(P.dim, samples, seed))
    cache.refresh(P)
    return cache.estimate()


def steiner_point(P, samples, seed):
    """Monte Carlo Steiner point of ``P``, projected back onto ``P`` if needed."""
    return repair(P, steiner_estimate(P, samples, seed))


def repair(P, x, tol=FEAS_TOL):
    """Return ``x`` if feasible, else its projection onto ``P``."""
    if contains(P, x, tol):
        return x
    return project_onto(P, x)


@dataclass
class Projection:
    point: np.ndarray
    multipliers: np.ndarray
    kkt_residual: float


def project_onto(P, x, return_info=False, max_iter=None):
    """Euclidean projection onto ``P`` by a primal active-set method.

    Starts from a vertex of ``P`` found by the LP kernel and walks to the
    minimizer of ``||theta - x||^2`` while maintaining a linearly
    independent working set of tight constraints.
    """
    x = np.asarray(x, dtype=float)
    G, h = P.G, P.h
    m = len(h)
    if contains(P, x, 0.0):
        info = Projection(x.copy(), np.zeros(m), 0.0)
        return info if return_info else x.copy()
    theta = _support_lp(P, x - steiner_free_center(P)).point if m else x.copy()
    work = []
    lam_w = np.zeros(0)
    if max_iter is None:
        max_iter = 20 * (m + P.dim) + 50
    for _ in range(max_iter):
        g = theta - x
        if work:
            Gw = G[work]
            lam_w = np.linalg.solve(Gw @ Gw.T, -Gw @ g)
            step = -(g + Gw.T @ lam_w)
        else:
            lam_w = np.zeros(0)
            step = -g
        if np.linalg.norm(step, np.inf) <= 1e-13 * max(1.0, np.linalg.norm(g, np.inf)):
            if lam_w.size == 0 or lam_w.min() >= -1e-12:
                break
            work.pop(int(np.argmin(lam_w)))
            continue
        Gs = G @ step
        slack = h - G @ theta
        cand = np.flatnonzero(Gs > 1e-14)
        cand = cand[~np.isin(cand, work)]
        alpha, block = 1.0, None
        if cand.size:
            ratios = np.maximum(slack[cand], 0.0) / Gs[cand]
            k = int(np.argmin(ratios))
            if ratios[k] < 1.0:
                alpha, block = float(ratios[k]), int(cand[k])
        theta = theta + alpha * step
        if block is not None:
            work.append(block)
    lam = np.zeros(m)
    if work:
        lam[work] = np.maximum(lam_w, 0.0) if lam_w.size == len(work) else 0.0
    res = _kkt_residual(G, h, x, theta, lam)
    if res > 1e-7:
        log.warning("projection KKT residual %.3e", res)
    info = Projection(theta, lam, res)
    return info if return_info else theta


def steiner_free_center(P):
    """A cheap interior-ish reference point: the midpoint of the protected box rows."""
    if P.protected.any():
        Gp, hp = P.G[P.protected], P.h[P.protected]
        up = np.array([hp[np.flatnonzero(Gp[:, k] > 0.5)].min(initial=0.0) for k in range(P.dim)])
        dn = np.array([-hp[np.flatnonzero(Gp[:, k] < -0.5)].min(initial=0.0) for k in range(P.dim)])
        return 0.5 * (up + dn)
    return np.zeros(P.dim)


def _kkt_residual(G, h, x, point, lam):
    slack = G @ point - h
    stat = np.linalg.norm(point - x + G.T @ lam, np.inf)
    prim = max(0.0, slack.max(initial=-np.inf))
    comp = np.max(np.abs(lam * slack), initial=0.0)
    dual = max(0.0, -lam.min(initial=0.0))
    return max(stat, prim, comp, dual)


def prune_redundant(P, budget=None, tol=FEAS_TOL):
    """Drop halfspaces implied by the others (one LP per candidate).

    Candidates are examined newest first; protected rows are kept.
    ``budget`` caps the number of LP tests.
    """
    keep = np.ones(len(P), dtype=bool)
    tests = 0
    for k in np.argsort(-P.marks, kind="stable"):
        if P.protected[k]:
            continue
        if budget is not None and tests >= budget:
            break
        keep[k] = False
        others = P.subset(keep)
        tests += 1
        try:
            val = _support_lp(others, P.G[k]).value
        except UnboundedPolytopeError:
            val = np.inf
        if val > P.h[k] + tol:
            keep[k] = True
    return P.subset(keep)


def diameter_box(lo, hi):
    return float(np.linalg.norm(np.asarray(hi, dtype=float) - np.asarray(lo, dtype=float)))
