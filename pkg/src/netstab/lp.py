"""Dense two-phase revised simplex for standard-form linear programs.

Solves ``min c @ y  s.t.  A @ y = b, y >= 0`` where ``A`` has few rows.
Pivoting uses the most negative reduced cost and falls back to Bland's
smallest-index rule after a run of degenerate pivots, which rules out
cycling.
"""
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass
class SimplexResult:
    status: str
    y: np.ndarray = None
    basis: np.ndarray = None
    value: float = np.nan
    multipliers: np.ndarray = None  # solution of B^T pi = c_B at the final basis
    iterations: int = 0


class _Stall(Exception):
    pass


def _iterate(c, A, b, basis, tol, max_iter, allowed=None):
    """Primal simplex from a feasible basis. Returns (status, basis, xB, pi, iters)."""
    p = A.shape[0]
    basis = np.array(basis, dtype=int)
    degenerate_run = 0
    bland = False
    for it in range(max_iter):
        lu = lu_factor(A[:, basis], check_finite=False)
        xB = lu_solve(lu, b, check_finite=False)
        pi = lu_solve(lu, c[basis], trans=1, check_finite=False)
        red = c - A.T @ pi
        red[basis] = 0.0
        if allowed is not None:
            red[~allowed] = 0.0
        neg = np.flatnonzero(red < -tol)
        if neg.size == 0:
            return OPTIMAL, basis, xB, pi, it
        e = int(neg[0]) if bland else int(neg[np.argmin(red[neg])])
        d = lu_solve(lu, A[:, e], check_finite=False)
        pos = np.flatnonzero(d > tol)
        if pos.size == 0:
            return UNBOUNDED, basis, xB, pi, it
        ratios = np.maximum(xB[pos], 0.0) / d[pos]
        rmin = ratios.min()
        ties = pos[ratios <= rmin + tol * max(1.0, rmin)]
        r = int(ties[np.argmin(basis[ties])])
        if rmin <= tol:
            degenerate_run += 1
            if degenerate_run > 2 * p:
                bland = True
        else:
            degenerate_run = 0
            bland = False
        basis[r] = e
    raise _Stall()


def simplex(c, A, b, basis=None, tol=1e-9, max_iter=None):
    """Minimize ``c @ y`` subject to ``A @ y = b`` and ``y >= 0``.

    Parameters
    ----------
    basis : array of int, optional
        Warm-start basis (one column per row of ``A``). Used only when it is
        non-singular and primal feasible; otherwise phase one runs.

    Returns
    -------
    SimplexResult
        ``status`` is ``"optimal"``, ``"infeasible"`` or ``"unbounded"``.
    """
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    p, q = A.shape
    if max_iter is None:
        max_iter = 50 * (p + q) + 100

    if basis is not None and len(basis) == p:
        try:
            B = A[:, basis]
            if np.linalg.cond(B) < 1e12:
                xB = np.linalg.solve(B, b)
                if np.all(xB >= -tol):
                    return _phase_two(c, A, b, np.asarray(basis), tol, max_iter)
        except (np.linalg.LinAlgError, IndexError):
            pass

    # phase one: artificial identity on sign-normalized rows
    sign = np.where(b < 0, -1.0, 1.0)
    A1 = np.hstack([A * sign[:, None], np.eye(p)])
    b1 = b * sign
    c1 = np.concatenate([np.zeros(q), np.ones(p)])
    try:
        status, basis1, xB, _, it1 = _iterate(c1, A1, b1, np.arange(q, q + p), tol, max_iter)
    except _Stall:
        raise RuntimeError("simplex phase one did not terminate") from None
    scale = max(1.0, np.abs(b1).max(initial=0.0))
    if xB[basis1 >= q].sum() > 1e3 * tol * scale:
        return SimplexResult(INFEASIBLE, iterations=it1)

    # drive artificial columns out of the basis; drop rows that are redundant
    keep_rows = np.ones(p, dtype=bool)
    basis1 = basis1.copy()
    for r in range(p):
        if basis1[r] < q:
            continue
        lu = lu_factor(A1[:, basis1], check_finite=False)
        row = lu_solve(lu, np.eye(p)[r], trans=1, check_finite=False) @ A1[:, :q]
        row[basis1[basis1 < q]] = 0.0
        cand = np.flatnonzero(np.abs(row) > 1e-9 * max(1.0, np.abs(row).max(initial=0.0)))
        if cand.size:
            basis1[r] = int(cand[0])
        else:
            keep_rows[r] = False
    if not keep_rows.all():
        A_red, b_red = A1[keep_rows][:, :q], b1[keep_rows]
        res = _phase_two(c, A_red, b_red, basis1[keep_rows], tol, max_iter)
        if res.multipliers is not None:
            full = np.zeros(p)
            full[keep_rows] = res.multipliers
            res.multipliers = full * sign
        res.iterations += it1
        return res
    res = _phase_two(c, A1[:, :q], b1, basis1, tol, max_iter)
    if res.multipliers is not None:
        res.multipliers = res.multipliers * sign
    res.iterations += it1
    return res


def _phase_two(c, A, b, basis, tol, max_iter):
    try:
        status, basis, xB, pi, it = _iterate(c, A, b, basis, tol, max_iter)
    except _Stall:
        raise RuntimeError("simplex phase two did not terminate") from None
    if status == UNBOUNDED:
        return SimplexResult(UNBOUNDED, basis=basis, iterations=it)
    y = np.zeros(A.shape[1])
    y[basis] = np.maximum(xB, 0.0)
    return SimplexResult(OPTIMAL, y, basis, float(c @ y), pi, it)
