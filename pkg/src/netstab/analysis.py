"""Post-hoc checks on recorded episodes.

All quantities use the infinity norm on vectors and the induced infinity
norm (largest absolute row sum) on matrices.
"""
from dataclasses import dataclass
import csv
import io

import numpy as np

from .controller import assemble_global_operators
from .topology import compute_delay_table


def induced_inf(M):
    return float(np.abs(M).sum(axis=1).max(initial=0.0)) if M.size else 0.0


def vec_inf(v):
    return float(np.abs(v).max(initial=0.0))


class _Operators:
    """Lazily assembled implemented operators of a trace."""

    def __init__(self, trace):
        self.trace = trace
        sc = trace.scenario
        self.delay = trace.info.get("delay") or compute_delay_table(sc.topology)
        self._cache = {}
        self._models = {}

    def __call__(self, t):
        if t not in self._cache:
            sc = self.trace.scenario
            self._cache[t] = assemble_global_operators(sc.topology, self.delay, self.trace.column_at, t, sc.H)
        return self._cache[t]

    def model(self, t):
        if t not in self._models:
            self._models[t] = self.trace.model_at(t)
        return self._models[t]

    def mismatch(self, t, k):
        """``A_t Phi_x_{t-1}[k-1] + B_t Phi_u_{t-1}[k-1] - Phi_x_t[k]``."""
        dyn = self.model(t)
        prev, cur = self(t - 1), self(t)
        return dyn.A @ prev.Phi_x[k - 1] + dyn.B @ prev.Phi_u[k - 1] - cur.Phi_x[k]


@dataclass
class ErrorSeries:
    """``a[t, k]`` for ``t >= 1`` and ``k = 1..H`` (row 0 and column 0 are zero)."""

    a: np.ndarray
    cumulative: np.ndarray  # running total over t

    @property
    def total(self):
        return float(self.cumulative[-1]) if self.cumulative.size else 0.0


def compute_error_series(trace, ops=None):
    ops = ops or _Operators(trace)
    H = trace.scenario.H
    T = len(trace.columns) - 1
    a = np.zeros((T + 1, H + 1))
    for t in range(1, T + 1):
        for k in range(1, H + 1):
            a[t, k] = induced_inf(ops.mismatch(t, k))
    return ErrorSeries(a, np.cumsum(a.sum(axis=1)))


def convolution_bound(s0, W, H, L):
    """``t -> exp(-t/H) exp(L) s0 + W (exp(L) + e - 1) / (e - 1)``.

    Bounds any non-negative sequence with ``s_t <= sum_{k=1}^H a_t[k] s_{t-k} + W``
    whose coefficients sum to at most ``L`` over all ``t`` and ``k``.
    """
    if L < 0 or H < 1:
        raise ValueError("need L >= 0 and H >= 1")
    e = np.e
    eL = np.exp(L)
    tail = W * (eL + e - 1.0) / (e - 1.0)
    return lambda t: np.exp(-np.asarray(t, dtype=float) / H) * eL * s0 + tail


@dataclass
class IdentityResiduals:
    x: float
    u: float
    what: float  # largest ||r(t)||_inf of the estimate recursion
    what_excess: float  # largest ||r(t)||_inf - W_assumed
    per_step: np.ndarray  # (T+1, 3): x, u and recursion residuals
    ok: bool


def verify_closed_loop_identity(trace, tol=1e-7, ops=None):
    """Residuals of the closed-loop representation along a trace.

    ``x(t) = sum_{k<H} Phi_x_t[k] what(t-k)`` (same for ``u``) and
    ``what(t) - sum_{k=1}^H M_t[k] what(t-k)`` must be a disturbance within
    the assumed bound, where ``M_t[k]`` is the operator mismatch of
    :func:`compute_error_series`.
    """
    ops = ops or _Operators(trace)
    sc = trace.scenario
    H = sc.H
    X, U, _ = trace.arrays()
    Wh = np.array(trace.what)
    T = len(trace.columns) - 1
    past = lambda s: Wh[s] if s >= 0 else np.zeros(Wh.shape[1])
    per = np.zeros((T + 1, 3))
    for t in range(T + 1):
        op = ops(t)
        xr = X[t] - sum(op.Phi_x[k] @ past(t - k) for k in range(H))
        ur = U[t] - sum(op.Phi_u[k] @ past(t - k) for k in range(H))
        per[t, 0], per[t, 1] = vec_inf(xr), vec_inf(ur)
        if t >= 1:
            r = Wh[t] - sum(ops.mismatch(t, k) @ past(t - k) for k in range(1, H + 1))
            per[t, 2] = vec_inf(r)
    xm, um, wm = (float(per[:, c].max(initial=0.0)) for c in range(3))
    excess = wm - sc.W_assumed
    return IdentityResiduals(xm, um, wm, excess, per, xm <= tol and um <= tol and excess <= tol)


def bound_chain(trace, series=None, ops=None):
    """Compare ``||what(t)||_inf`` with the convolution bound built from the measured series.

    Returns ``(margin, norms, bound)`` where ``margin = min_t bound(t) - ||what(t)||``.
    """
    series = series or compute_error_series(trace, ops)
    sc = trace.scenario
    Wh = np.array(trace.what)
    norms = np.abs(Wh).max(axis=1)
    t = np.arange(len(norms))
    bound = convolution_bound(vec_inf(np.asarray(trace.x[0])), sc.W_assumed, sc.H, series.total)(t)
    return float(np.min(bound - norms)), norms, bound


@dataclass
class StabilityReport:
    sup_x: float
    sup_u: float
    decay_rate: float  # slope of log ||x(t)||_inf after the stop; -inf if x vanished at once
    fit_window: tuple
    final_ratio: float  # ||x(T)||_inf / sup_x
    stable: bool
    blowup_t: int = None
    decay_ok: bool = None


def stability_report(trace, T_stop=None, c=0.01):
    """Sup norms and the post-disturbance decay rate.

    The decay rate is the least-squares slope of ``log ||x(t)||_inf`` over
    ``t`` from ``T_stop + H`` to the first time the norm drops below 1e-9.
    ``decay_ok`` tests ``rate <= -c / H``.
    """
    X = np.array(trace.x)
    U = np.array(trace.u) if trace.u else np.zeros((0, 0))
    norms = np.abs(X).max(axis=1) if X.size else np.zeros(0)
    sup_x = float(np.nanmax(norms)) if norms.size else 0.0
    sup_u = float(np.abs(U).max(initial=0.0)) if U.size else 0.0
    if trace.verdict == "unstable":
        return StabilityReport(sup_x, sup_u, np.inf, (), np.inf, False, trace.blowup_t, False)
    H = trace.scenario.H
    rate, window, decay_ok = np.nan, (), None
    if T_stop is not None:
        start = T_stop + H
        small = np.flatnonzero(norms[start:] < 1e-9)
        stop = start + int(small[0]) if small.size else norms.size
        window = (start, stop)
        if stop - start >= 2:
            tt = np.arange(start, stop)
            rate = float(np.polyfit(tt, np.log(norms[start:stop]), 1)[0])
        elif start < norms.size:
            rate = -np.inf
        decay_ok = bool(rate <= -c / H)
    final = float(norms[-1] / sup_x) if sup_x > 0 else 0.0
    return StabilityReport(sup_x, sup_u, rate, window, final, True, None, decay_ok)


def path_lengths(trace):
    """Total movement of each subsystem's selected parameter over the trace."""
    if not trace.thetas:
        return np.zeros(0)
    N = len(trace.thetas[0])
    return np.array([sum(float(np.linalg.norm(trace.thetas[t][i] - trace.thetas[t - 1][i]))
                         for t in range(1, len(trace.thetas))) for i in range(N)])


def compare_runs(trace_a, trace_b, T_stop=None):
    """Side-by-side metrics; ``peak_ratio`` is ``sup_x(b) / sup_x(a)``."""
    rows = {}
    for name, tr in (("a", trace_a), ("b", trace_b)):
        rep = stability_report(tr, T_stop)
        L = compute_error_series(tr).total if tr.columns else np.nan
        move = float(path_lengths(tr).sum())
        rows[name] = {"algorithm": tr.algorithm, "sup_x": rep.sup_x, "sup_u": rep.sup_u,
                      "L_hat": L, "movement": move, "verdict": tr.verdict}
    sa, sb = rows["a"]["sup_x"], rows["b"]["sup_x"]
    ratio = sb / sa if sa > 0 else (1.0 if sb == 0 else np.inf)
    return {"a": rows["a"], "b": rows["b"], "peak_ratio": ratio}


def comparison_csv(cmp):
    buf = io.StringIO()
    w = csv.writer(buf)
    keys = ["algorithm", "sup_x", "sup_u", "L_hat", "movement", "verdict"]
    w.writerow(["run"] + keys)
    for name in ("a", "b"):
        w.writerow([name] + [repr(cmp[name][k]) if isinstance(cmp[name][k], float) else cmp[name][k] for k in keys])
    w.writerow(["peak_ratio", repr(float(cmp["peak_ratio"]))])
    return buf.getvalue()
