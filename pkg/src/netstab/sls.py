"""Local SLS column synthesis, grammians and sensitivity constants.

A column for global state index ``c`` is the finite impulse response of the
closed loop to a unit disturbance at ``c``:

    phi_x[0] = e_c,  phi_x[k+1] = A phi_x[k] + B phi_u[k],  phi_x[H] = 0,

with entries outside the communication masks held at zero. Among all such
responses the one minimizing ``sum_k phi_x[k]' Q phi_x[k] + phi_u[k]' R phi_u[k]``
is returned.
"""
from dataclasses import dataclass, field
import hashlib
import itertools

import numpy as np
from scipy import linalg

from .errors import NotControllableError, SynthesisInfeasibleError
from .topology import comm_matrix_power

GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0
RANK_TOL = 1e-10


@dataclass(frozen=True)
class SparsityMask:
    """Allowed nonzero positions of a column, per horizon step.

    ``state[k]`` (k = 0..H) and ``inputs[k]`` (k = 0..H-1) are boolean
    vectors over global state / input indices. ``subsystems[k]`` lists the
    subsystems whose entries are free at step ``k``.
    """

    owner: int
    H: int
    state: np.ndarray
    inputs: np.ndarray
    subsystems: tuple

    @classmethod
    def dense(cls, n_x, n_u, H, owner=0):
        return cls(owner, H, np.ones((H + 1, n_x), dtype=bool), np.ones((H, n_u), dtype=bool), ())


def build_sparsity_masks(topology, i, H, dbar):
    """Masks from ``C^k(:, i)`` intersected with ``C^dbar(:, i)``, block-expanded."""
    if H < 1:
        raise ValueError("H must be >= 1")
    local = comm_matrix_power(topology, dbar)[:, i].astype(bool)
    state = np.zeros((H + 1, topology.n_x), dtype=bool)
    inputs = np.zeros((H, topology.n_u), dtype=bool)
    subs = []
    for k in range(H + 1):
        allowed = comm_matrix_power(topology, k)[:, i].astype(bool) & local
        members = tuple(int(q) for q in np.flatnonzero(allowed))
        subs.append(members)
        state[k, topology.state_indices(members)] = True
        if k < H:
            inputs[k, topology.input_indices(members)] = True
    return SparsityMask(i, H, state, inputs, tuple(subs))


@dataclass
class ClosedLoopColumn:
    """Closed-loop response to a unit disturbance at global state ``index``."""

    owner: int
    index: int
    H: int
    phi_x: np.ndarray  # (H+1, n_x)
    phi_u: np.ndarray  # (H, n_u)
    synthesized_at: int = 0
    model_stamp: str = ""
    objective: float = np.nan
    kkt_residual: float = np.nan

    def stacked(self, k):
        """``(phi_x[k], phi_u[k])`` as one vector (``phi_u[H]`` is zero)."""
        u = self.phi_u[k] if k < self.H else np.zeros(self.phi_u.shape[1])
        return np.concatenate([self.phi_x[k], u])


def model_stamp(A, B):
    h = hashlib.sha1()
    h.update(np.ascontiguousarray(A).tobytes())
    h.update(np.ascontiguousarray(B).tobytes())
    return h.hexdigest()[:16]


@dataclass
class _Problem:
    """Equality-constrained least squares shared by all columns of one subsystem."""

    x_vars: list  # per k=1..H-1: global state indices that are free
    u_vars: list  # per k=0..H-1: global input indices that are free
    E: np.ndarray
    weights: np.ndarray
    rows: np.ndarray
    offsets: dict = field(default_factory=dict)


def _build(A, B, mask, rows, Q, R):
    n_x, n_u = B.shape
    H = mask.H
    x_vars = [np.flatnonzero(mask.state[k]) for k in range(1, H)]
    u_vars = [np.flatnonzero(mask.inputs[k]) for k in range(H)]
    sizes = [v.size for v in x_vars] + [v.size for v in u_vars]
    starts = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    nz = int(starts[-1])
    xoff = {k: starts[k - 1] for k in range(1, H)}
    uoff = {k: starts[H - 1 + k] for k in range(H)}
    nr = rows.size
    E = np.zeros((H * nr, nz))
    for k in range(H):
        blk = slice(k * nr, (k + 1) * nr)
        # + phi_x[k+1]
        if 1 <= k + 1 <= H - 1:
            xv = x_vars[k]
            hit = np.searchsorted(rows, xv)
            ok = (hit < nr) & (rows[np.minimum(hit, nr - 1)] == xv)
            if not ok.all():
                raise ValueError("model rows do not cover the column support")
            E[k * nr + hit, xoff[k + 1] + np.arange(xv.size)] = 1.0
        # - A phi_x[k]
        if k >= 1:
            xv = x_vars[k - 1]
            E[blk, xoff[k]:xoff[k] + xv.size] -= A[np.ix_(rows, xv)]
        uv = u_vars[k]
        E[blk, uoff[k]:uoff[k] + uv.size] -= B[np.ix_(rows, uv)]
    qd = np.diag(Q) if Q.ndim == 2 else Q
    rd = np.diag(R) if R.ndim == 2 else R
    weights = np.concatenate([qd[v] for v in x_vars] + [rd[v] for v in u_vars]) if nz else np.zeros(0)
    return _Problem(x_vars, u_vars, E, weights, rows, {"x": xoff, "u": uoff})


def _rhs(A, prob, col, H):
    """Constraint right-hand side for a unit injection at ``col``."""
    nr = prob.rows.size
    f = np.zeros(H * nr)
    f[:nr] = A[prob.rows, col]  # k = 0 equation: phi_x[1] - B phi_u[0] = A e_col
    return f


def _solve(prob, F):
    """Minimize ``z' W z`` subject to ``E z = f`` for each column of ``F``."""
    E, w = prob.E, prob.weights
    nz = E.shape[1]
    if nz == 0:
        bad = np.flatnonzero(np.abs(F).max(axis=1) > 1e-12)
        if bad.size:
            raise SynthesisInfeasibleError("no free variables but nonzero constraints", bad, float(np.abs(F).max()))
        return np.zeros((0, F.shape[1])), np.zeros(F.shape[1])
    Qf, Rf, piv = linalg.qr(E.T, pivoting=True, mode="full")
    diag = np.abs(np.diag(Rf))
    scale = diag[0] if diag.size else 0.0
    r = int(np.sum(diag > RANK_TOL * max(scale, 1e-300)))
    Qr, Nb = Qf[:, :r], Qf[:, r:]
    Rr = Rf[:r, :r]
    Y = linalg.solve_triangular(Rr, F[piv[:r]], trans="T", lower=False) if r else np.zeros((0, F.shape[1]))
    Zp = Qr @ Y
    resid = E @ Zp - F
    tol = 1e-9 * max(1.0, np.abs(F).max(initial=0.0), scale)
    if np.abs(resid).max(initial=0.0) > tol:
        bad = np.flatnonzero(np.abs(resid).max(axis=1) > tol)
        raise SynthesisInfeasibleError(
            f"constraint system is inconsistent on {bad.size} rows (rank {r} of {E.shape[0]})",
            bad, float(np.abs(resid).max()))
    if Nb.shape[1]:
        M = Nb.T @ (w[:, None] * Nb)
        Yn = -np.linalg.solve(M, Nb.T @ (w[:, None] * Zp))
        Z = Zp + Nb @ Yn
    else:
        Z = Zp
    # KKT certificate: 2 W z + E' lam = 0, E z = f
    G = 2.0 * w[:, None] * Z
    lam, *_ = np.linalg.lstsq(E.T, -G, rcond=None)
    kkt = np.maximum(np.abs(G + E.T @ lam).max(axis=0), np.abs(E @ Z - F).max(axis=0))
    return Z, kkt


def synthesize_columns(A, B, indices, mask, H=None, Q=None, R=None, rows=None, t=0, owner=None):
    """Optimal columns for several global state indices sharing one mask.

    Parameters
    ----------
    A, B : ndarray
        Model used for synthesis. Only rows listed in ``rows`` are read.
    indices : sequence of int
        Global state indices (the injection points).
    mask : SparsityMask or None
        ``None`` means no sparsity constraint.
    rows : array of int, optional
        Global state rows whose dynamics constrain the column; defaults to
        all rows. Rows outside must be structurally unaffected by the
        allowed support.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n_x, n_u = B.shape
    if mask is None:
        if H is None:
            raise ValueError("H is required when no mask is given")
        mask = SparsityMask.dense(n_x, n_u, H)
    H = mask.H
    Q = np.ones(n_x) if Q is None else np.asarray(Q, dtype=float)
    R = np.ones(n_u) if R is None else np.asarray(R, dtype=float)
    rows = np.arange(n_x) if rows is None else np.asarray(sorted(rows), dtype=int)
    for c in indices:
        if not mask.state[0, c]:
            raise ValueError(f"index {c} is not allowed at step 0 of the mask")
    prob = _build(A, B, mask, rows, Q, R)
    F = np.column_stack([_rhs(A, prob, c, H) for c in indices])
    Z, kkt = _solve(prob, F)
    stamp = model_stamp(A[rows], B[rows])
    qd = np.diag(Q) if Q.ndim == 2 else Q
    out = []
    for n, c in enumerate(indices):
        z = Z[:, n]
        px = np.zeros((H + 1, n_x))
        pu = np.zeros((H, n_u))
        px[0, c] = 1.0
        for k in range(1, H):
            v = prob.x_vars[k - 1]
            px[k, v] = z[prob.offsets["x"][k]:prob.offsets["x"][k] + v.size]
        for k in range(H):
            v = prob.u_vars[k]
            pu[k, v] = z[prob.offsets["u"][k]:prob.offsets["u"][k] + v.size]
        obj = float(qd[c] + z @ (prob.weights * z))
        out.append(ClosedLoopColumn(mask.owner if owner is None else owner, int(c), H, px, pu, t, stamp, obj, float(kkt[n])))
    return out


def synthesize_column(A, B, index, mask=None, H=None, Q=None, R=None, rows=None, t=0):
    """Single-column convenience wrapper around :func:`synthesize_columns`."""
    return synthesize_columns(A, B, [index], mask, H, Q, R, rows, t)[0]


def objective(col, Q=None, R=None):
    n_x, n_u = col.phi_x.shape[1], col.phi_u.shape[1]
    q = np.ones(n_x) if Q is None else (np.diag(Q) if np.ndim(Q) == 2 else np.asarray(Q))
    r = np.ones(n_u) if R is None else (np.diag(R) if np.ndim(R) == 2 else np.asarray(R))
    return float(np.sum(col.phi_x ** 2 * q) + np.sum(col.phi_u ** 2 * r))


@dataclass
class ColumnReport:
    max_residual: float
    boundary_error: float
    mask_violation: float
    ok: bool


def verify_column(col, A, B, mask=None, rows=None, tol=1e-8):
    """Recursion residuals, boundary conditions and mask violations of a column."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    rows = np.arange(A.shape[0]) if rows is None else np.asarray(rows)
    res = 0.0
    for k in range(col.H):
        r = col.phi_x[k + 1] - A @ col.phi_x[k] - B @ col.phi_u[k]
        res = max(res, float(np.abs(r[rows]).max(initial=0.0)))
    e = np.zeros(col.phi_x.shape[1])
    e[col.index] = 1.0
    bnd = max(float(np.abs(col.phi_x[0] - e).max()), float(np.abs(col.phi_x[col.H]).max()))
    viol = 0.0
    if mask is not None:
        viol = max(float(np.abs(col.phi_x[~mask.state]).max(initial=0.0)),
                   float(np.abs(col.phi_u[~mask.inputs]).max(initial=0.0)))
    return ColumnReport(res, bnd, viol, res <= tol and bnd <= tol and viol <= 1e-12)


@dataclass
class GrammianReport:
    W_u_H: np.ndarray
    W_w_H: np.ndarray
    alpha_H: float
    sigma_u_min: float
    sigma_u_max: float
    sigma_w_min: float
    sigma_w_max: float


def controllability_grammians(A, B, H):
    """``W^u_H = sum_{k<H} A^k B B' A^k'`` by the recursion ``W_t = A W_{t-1} A' + B B'``."""
    if H < 1:
        raise ValueError("H must be >= 1")
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n = A.shape[0]
    Wu = np.zeros((n, n))
    Ww = np.zeros((n, n))
    BB = B @ B.T
    for _ in range(H):
        Wu = A @ Wu @ A.T + BB
        Ww = A @ Ww @ A.T + np.eye(n)
    Ak = np.eye(n)
    alpha = 1.0
    for _ in range(H):
        Ak = Ak @ A
        alpha = max(alpha, float(np.linalg.norm(Ak, 2)))
    eu = np.linalg.eigvalsh((Wu + Wu.T) / 2)
    ew = np.linalg.eigvalsh((Ww + Ww.T) / 2)
    return GrammianReport(Wu, Ww, alpha, float(max(eu[0], 0.0)), float(eu[-1]), float(max(ew[0], 0.0)), float(ew[-1]))


@dataclass
class SensitivityConstants:
    Gamma_A: float
    Gamma_B: float
    kappa_CD: float
    Gamma1: float
    Gamma2: float


def sensitivity_constants(sigma_u_min, sigma_u_max, sigma_w_max, alpha_H, beta, Q, R, H):
    """Lipschitz constants of the optimal unconstrained column in ``(A, B)``.

    Every norm appearing in the pairwise perturbation bound is replaced by
    its uniform bound over a family of systems: ``sigma_u_min``,
    ``sigma_u_max`` bound the spectrum of the input grammian, ``sigma_w_max``
    the disturbance grammian, ``alpha_H`` the powers of ``A`` and ``beta``
    the norm of ``B``. ``Q`` and ``R`` are the cost weights (``C = Q^{1/2}``,
    ``D = R^{1/2}``).
    """
    if not sigma_u_min > 0:
        raise NotControllableError("input grammian is singular: the family is not H-controllable")
    sq = np.sqrt(np.linalg.eigvalsh(np.atleast_2d(np.diag(Q) if np.ndim(Q) == 1 else Q)))
    sr = np.sqrt(np.linalg.eigvalsh(np.atleast_2d(np.diag(R) if np.ndim(R) == 1 else R)))
    kappa = max(sq.max(), sr.max()) / min(sq.min(), sr.min())
    Gu = np.sqrt(H * sigma_u_max)
    Gw = np.sqrt(H * sigma_w_max)
    P = np.sqrt(sigma_u_max)
    Pp = sigma_u_min ** -0.5
    Fp = 1.0 / sr.min()
    g = (sq.max() * np.sqrt(H) * np.sqrt(sigma_u_max) + sr.max()) * Pp * alpha_H
    phi = GOLDEN
    G1 = alpha_H * alpha_H * H * (1.0 + Gu) * Pp
    G2 = (alpha_H * Pp * (1.0 + phi * Pp + phi * Pp * Gu)
          + g * 2.0 * Fp
          + phi * g * 2.0 * Fp * Pp * Pp * 2.0 * P * (1.0 + Gu))
    GA = kappa * G1 + kappa * G2 * beta * Gw * Gw
    GB = kappa * G2 * Gw
    return SensitivityConstants(float(GA), float(GB), float(kappa), float(G1), float(G2))


def family_bounds(models, H):
    """Uniform grammian bounds over a finite sample of ``(A, B)`` pairs."""
    su_min, su_max, sw_max, alpha, beta = np.inf, 0.0, 0.0, 0.0, 0.0
    for A, B in models:
        g = controllability_grammians(A, B, H)
        su_min = min(su_min, g.sigma_u_min)
        su_max = max(su_max, g.sigma_u_max)
        sw_max = max(sw_max, g.sigma_w_max)
        alpha = max(alpha, g.alpha_H)
        beta = max(beta, float(np.linalg.norm(B, 2)))
    return dict(sigma_u_min=su_min, sigma_u_max=su_max, sigma_w_max=sw_max, alpha_H=alpha, beta=beta)


def decay_fit(columns, grid=None):
    """Constants ``(C, rho)`` with ``||phi[k]||_2 <= C rho^k`` for all given columns.

    ``rho`` is chosen on a grid in (0, 1) to minimize ``C / (1 - rho)``.
    """
    norms = np.zeros(max(c.H for c in columns) + 1)
    for c in columns:
        for k in range(c.H + 1):
            norms[k] = max(norms[k], float(np.linalg.norm(c.stacked(k))))
    grid = np.linspace(0.05, 0.95, 19) if grid is None else np.asarray(grid)
    best = None
    for rho in grid:
        C = float(np.max(norms / rho ** np.arange(norms.size)))
        if best is None or C / (1 - rho) < best[0] / (1 - best[1]):
            best = (C, float(rho))
    return best


@dataclass
class ProbeReport:
    trials: int
    passed: int
    failures: list
    worst: dict
    decay: tuple

    @property
    def pass_rate(self):
        return self.passed / self.trials if self.trials else float("nan")


def fir_feasibility_probe(topology, lo, hi, dbar, H, trials, seed=0, Q=None, R=None):
    """Attempt synthesis of every column on models sampled from the prior box.

    Samples are box corners first (all of them when few, else random
    corners) followed by uniform interior draws. ``lo`` and ``hi`` are
    per-subsystem lists of parameter bounds.
    """
    from .dynamics import assemble_global  # local import avoids a cycle at module load
    rng = np.random.default_rng(seed)
    flat_lo = np.concatenate([np.asarray(l, dtype=float) for l in lo])
    flat_hi = np.concatenate([np.asarray(h, dtype=float) for h in hi])
    free = np.flatnonzero(flat_lo < flat_hi)
    sizes = np.cumsum([0] + [len(l) for l in lo])
    samples = []
    if free.size <= 6:
        for bits in itertools.product([0, 1], repeat=free.size):
            v = flat_lo.copy()
            v[free] = np.where(np.array(bits, dtype=bool), flat_hi[free], flat_lo[free])
            samples.append(v)
    else:
        for _ in range(min(trials, 2 ** min(free.size, 20)) // 2 + 1):
            v = flat_lo.copy()
            v[free] = np.where(rng.random(free.size) < 0.5, flat_hi[free], flat_lo[free])
            samples.append(v)
    while len(samples) < trials:
        samples.append(flat_lo + rng.random(flat_lo.size) * (flat_hi - flat_lo))
    samples = samples[:max(trials, 1)]
    masks = [build_sparsity_masks(topology, i, H, dbar) for i in range(topology.N)]
    passed, failures, cols = 0, [], []
    worst = {"residual": 0.0, "theta": None}
    for v in samples:
        thetas = [v[sizes[i]:sizes[i + 1]] for i in range(topology.N)]
        dyn = assemble_global(topology, thetas)
        try:
            for i in range(topology.N):
                idx = list(topology.state_indices([i]))
                cs = synthesize_columns(dyn.A, dyn.B, idx, masks[i], Q=Q, R=R, owner=i)
                for c in cs:
                    rep = verify_column(c, dyn.A, dyn.B, masks[i])
                    if rep.max_residual > worst["residual"]:
                        worst = {"residual": rep.max_residual, "theta": v.tolist()}
                cols.extend(cs)
            passed += 1
        except SynthesisInfeasibleError as exc:
            failures.append({"theta": v.tolist(), "reason": str(exc)})
    if failures:
        worst = {"residual": np.inf, "theta": failures[0]["theta"], "reason": failures[0]["reason"]}
    decay = decay_fit(cols) if cols else (np.nan, np.nan)
    return ProbeReport(len(samples), passed, failures, worst, decay)


@dataclass
class BlockColumn:
    """All columns of one subsystem, stacked along a trailing axis.

    ``phi_x[k][:, c]`` is the column for the ``c``-th state of ``owner``.
    """

    owner: int
    H: int
    phi_x: np.ndarray  # (H+1, n_x, n_owner)
    phi_u: np.ndarray  # (H, n_u, n_owner)
    synthesized_at: int = 0
    model_stamp: str = ""
    kkt_residual: float = 0.0

    @classmethod
    def from_columns(cls, owner, cols):
        return cls(owner, cols[0].H,
                   np.stack([c.phi_x for c in cols], axis=-1),
                   np.stack([c.phi_u for c in cols], axis=-1),
                   cols[0].synthesized_at, cols[0].model_stamp,
                   max(c.kkt_residual for c in cols))

    def columns(self, topology):
        idx = topology.state_indices([self.owner])
        return [ClosedLoopColumn(self.owner, int(c), self.H, self.phi_x[..., n], self.phi_u[..., n],
                                 self.synthesized_at, self.model_stamp)
                for n, c in enumerate(idx)]


def synthesize_block(topology, i, A, B, mask, rows, Q=None, R=None, t=0):
    """Synthesize every column of subsystem ``i`` from the local model rows."""
    idx = list(topology.state_indices([i]))
    cols = synthesize_columns(A, B, idx, mask, Q=Q, R=R, rows=rows, t=t, owner=i)
    return BlockColumn.from_columns(i, cols)
