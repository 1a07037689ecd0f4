"""Command line interface: ``netstab run | verify | probe | compare``.

Exit codes
----------
0 success, 1 a verification check failed, 2 usage / load / parse error,
3 inconsistency (assumed disturbance bound falsified), 4 synthesis
infeasible, 5 instability verdict (state blow-up).
"""
import argparse
from concurrent.futures import ProcessPoolExecutor
import csv
import json
import logging
import os
from pathlib import Path
import sys

import numpy as np

from . import analysis
from .dynamics import assemble_global, param_dim
from .errors import IdentificationError, InconsistencyError, NotControllableError, ScenarioError, SynthesisInfeasibleError
from .sim import Scenario, TraceLog, run_episode
from .sls import BlockColumn, family_bounds, fir_feasibility_probe, sensitivity_constants
from .topology import NetworkTopology

log = logging.getLogger("netstab")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_INCONSISTENT, EXIT_INFEASIBLE, EXIT_UNSTABLE = 0, 1, 2, 3, 4, 5

TRACE_CSV, COLUMNS_JSON, REPORT_JSON = "trace.csv", "columns.json", "report.json"


# ---------------------------------------------------------------- scenarios

def _need(doc, key, path=""):
    if key not in doc:
        raise ScenarioError(f"{path}{key}: required field missing")
    return doc[key]


def _float_list(v, path):
    try:
        arr = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(f"{path}: expected a list of numbers") from None
    if arr.ndim != 1:
        raise ScenarioError(f"{path}: expected a flat list of numbers")
    return arr


def _int(doc, key, default=None):
    v = doc.get(key, default)
    if v is None:
        if default is None and key in doc:
            return None
        raise ScenarioError(f"{key}: required field missing")
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ScenarioError(f"{key}: expected an integer, got {v!r}")
    return int(v)


def scenario_from_dict(doc):
    """Build and validate a Scenario from its JSON document."""
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object")
    topo = _need(doc, "topology")
    subs = _need(topo, "subsystems", "topology.")
    try:
        n = [int(s["n"]) for s in subs]
        m = [int(s.get("m", 0)) for s in subs]
    except (KeyError, TypeError, ValueError):
        raise ScenarioError("topology.subsystems: each entry needs integer 'n' and optional 'm'") from None
    try:
        top = NetworkTopology.build(n, m, [tuple(e) for e in topo.get("dyn_edges", [])],
                                    [tuple(e) for e in topo.get("comm_edges", [])])
    except (ValueError, TypeError) as exc:
        raise ScenarioError(f"topology: {exc}") from None
    truth = [_float_list(v, f"truth[{i}]") for i, v in enumerate(_need(doc, "truth"))]
    box = _need(doc, "param_box")
    try:
        lo = [_float_list(b["lo"], f"param_box[{i}].lo") for i, b in enumerate(box)]
        hi = [_float_list(b["hi"], f"param_box[{i}].hi") for i, b in enumerate(box)]
    except (KeyError, TypeError):
        raise ScenarioError("param_box: each entry needs 'lo' and 'hi'") from None
    weights = doc.get("weights") or {}
    W_true = float(_need(doc, "W_true"))
    sc = Scenario(
        top, truth, lo, hi, W_true, float(doc.get("W_assumed", W_true)),
        _int(doc, "dbar"), _int(doc, "H"), _int(doc, "T"),
        T_stop=doc.get("T_stop"),
        disturbance=dict(doc.get("disturbance") or {"policy": "uniform"}),
        seed=_int(doc, "seed", 0),
        algorithm=doc.get("algorithm", "consist-sls"),
        Q=weights.get("Q"), R=weights.get("R"),
        synthesis_cadence=doc.get("synthesis_cadence", "every-step"),
        x0=doc.get("x0"),
        steiner_samples=doc.get("steiner_samples"),
        sysid=dict(doc.get("sysid") or {}),
    )
    if sc.T_stop is not None:
        sc.T_stop = _int(doc, "T_stop")
    return sc.validate()


def scenario_to_dict(sc):
    top = sc.topology
    doc = {
        "topology": {
            "subsystems": [{"n": int(a), "m": int(b)} for a, b in zip(top.state_dims, top.input_dims)],
            "dyn_edges": [list(map(int, e)) for e in top.dyn_edges() if e[0] != e[1]],
            "comm_edges": [list(map(int, e)) for e in top.comm_edges() if e[0] != e[1]],
        },
        "truth": [v.tolist() for v in sc.truth],
        "param_box": [{"lo": l.tolist(), "hi": h.tolist()} for l, h in zip(sc.lo, sc.hi)],
        "W_true": sc.W_true, "W_assumed": sc.W_assumed,
        "dbar": sc.dbar, "H": sc.H, "T": sc.T, "T_stop": sc.T_stop,
        "disturbance": dict(sc.disturbance), "seed": sc.seed, "algorithm": sc.algorithm,
        "weights": {"Q": sc.Q.tolist(), "R": sc.R.tolist()},
        "synthesis_cadence": sc.synthesis_cadence, "x0": sc.x0.tolist(),
    }
    if sc.steiner_samples is not None:
        doc["steiner_samples"] = int(sc.steiner_samples)
    if sc.sysid:
        doc["sysid"] = dict(sc.sysid)
    return doc


def load_scenario(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(doc), doc


# ---------------------------------------------------------------- traces

def _header(top, sc):
    nx, nu = max(top.state_dims), max(top.input_dims, default=0)
    npar = max(param_dim(top, i) for i in range(top.N))
    cols = ["t", "subsystem"]
    for name, k in (("x", nx), ("u", nu), ("w", nx), ("what", nx), ("theta", npar)):
        cols += [f"{name}{c}" for c in range(k)]
    return cols, nx, nu, npar


def _cells(v, width):
    out = ["" if v is None else repr(float(a)) for a in (v if v is not None else [])]
    return out + [""] * (width - len(out))


def write_trace_csv(trace, path):
    sc = trace.scenario
    top = sc.topology
    cols, nx, nu, npar = _header(top, sc)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for t in range(len(trace.x)):
            for i in range(top.N):
                si, ui = top.state_slice(i), top.input_slice(i)
                row = [t, i]
                row += _cells(trace.x[t][si], nx)
                row += _cells(trace.u[t][ui] if t < len(trace.u) else None, nu)
                row += _cells(trace.w[t][si] if t < len(trace.w) else None, nx)
                row += _cells(trace.what[t][si] if t < len(trace.what) else None, nx)
                row += _cells(trace.thetas[t][i] if t < len(trace.thetas) else None, npar)
                w.writerow(row)


def read_trace_csv(path, sc):
    top = sc.topology
    cols, nx, nu, npar = _header(top, sc)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != cols:
        raise ValueError(f"{path}: unexpected header")
    data = {}
    for line, r in enumerate(rows[1:], start=2):
        if len(r) != len(cols):
            raise ValueError(f"{path}: line {line} has {len(r)} fields, expected {len(cols)}")
        try:
            data[(int(r[0]), int(r[1]))] = r[2:]
        except ValueError:
            raise ValueError(f"{path}: line {line}: bad time or subsystem") from None
    T1 = max(t for t, _ in data) + 1 if data else 0
    offs = np.cumsum([0, nx, nu, nx, nx, npar])

    def field(t, i, f, size):
        cells = data[(t, i)][offs[f]:offs[f] + size]
        if any(c == "" for c in cells):
            return None
        try:
            return np.array([float(c) for c in cells])
        except ValueError:
            raise ValueError(f"{path}: non-numeric entry at t={t}, subsystem {i}") from None

    out = {"x": [], "u": [], "w": [], "what": [], "theta": []}
    for t in range(T1):
        per = {k: [] for k in out}
        for i in range(top.N):
            if (t, i) not in data:
                raise ValueError(f"{path}: missing row t={t}, subsystem {i}")
            per["x"].append(field(t, i, 0, top.state_dims[i]))
            per["u"].append(field(t, i, 1, top.input_dims[i]))
            per["w"].append(field(t, i, 2, top.state_dims[i]))
            per["what"].append(field(t, i, 3, top.state_dims[i]))
            per["theta"].append(field(t, i, 4, param_dim(top, i)))
        for k, parts in per.items():
            if all(p is not None for p in parts):
                out[k].append(parts if k == "theta" else np.concatenate(parts) if parts else np.zeros(0))
    return out


def columns_to_json(trace):
    """Columns at the stamps where they changed, as sparse triplets."""
    top = trace.scenario.topology
    entries = []
    for t, cols in enumerate(trace.columns):
        for i, col in enumerate(cols):
            if t > 0 and trace.columns[t - 1][i] is col:
                continue
            idx = top.state_indices([i])
            per = {}
            for c, g in enumerate(idx):
                px = [[int(k), int(r), repr(float(col.phi_x[k, r, c]))] for k, r in zip(*np.nonzero(col.phi_x[:, :, c]))]
                pu = [[int(k), int(r), repr(float(col.phi_u[k, r, c]))] for k, r in zip(*np.nonzero(col.phi_u[:, :, c]))]
                per[str(int(g))] = {"phi_x": px, "phi_u": pu}
            entries.append({"owner": i, "stamp": t, "synthesized_at": int(col.synthesized_at),
                            "model_stamp": col.model_stamp, "columns": per})
    return {"H": trace.scenario.H, "entries": entries}


def columns_from_json(doc, sc, T1):
    top = sc.topology
    H = int(doc["H"])
    by_owner = {i: {} for i in range(top.N)}
    for e in doc["entries"]:
        i = int(e["owner"])
        n_i = top.state_dims[i]
        px = np.zeros((H + 1, top.n_x, n_i))
        pu = np.zeros((H, top.n_u, n_i))
        for c, g in enumerate(top.state_indices([i])):
            part = e["columns"][str(int(g))]
            for k, r, v in part["phi_x"]:
                px[k, r, c] = float(v)
            for k, r, v in part["phi_u"]:
                pu[k, r, c] = float(v)
        by_owner[i][int(e["stamp"])] = BlockColumn(i, H, px, pu, int(e["synthesized_at"]), e["model_stamp"])
    out = []
    current = [None] * top.N
    for t in range(T1):
        for i in range(top.N):
            if t in by_owner[i]:
                current[i] = by_owner[i][t]
            if current[i] is None:
                raise ValueError(f"no column for subsystem {i} at stamp {t}")
        out.append(list(current))
    return out


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(a) for k, a in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(a) for a in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if np.isfinite(f) else repr(f)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def summarize(trace):
    """Analysis results for a trace as a plain dict."""
    sc = trace.scenario
    rep = analysis.stability_report(trace, sc.T_stop)
    out = {"verdict": trace.verdict, "blowup_t": trace.blowup_t,
           "stability": {k: getattr(rep, k) for k in ("sup_x", "sup_u", "decay_rate", "fit_window", "final_ratio",
                                                       "stable", "decay_ok")}}
    if trace.columns and trace.what:
        ops = analysis._Operators(trace)
        ident = analysis.verify_closed_loop_identity(trace, ops=ops)
        series = analysis.compute_error_series(trace, ops)
        margin, _, _ = analysis.bound_chain(trace, series, ops)
        out["identity"] = {"x": ident.x, "u": ident.u, "what": ident.what, "what_excess": ident.what_excess,
                           "ok": ident.ok}
        out["L_hat"] = series.total
        out["bound_margin"] = margin
        out["movement"] = trace.movement[-1] if trace.movement else []
        out["syntheses"] = trace.syntheses
        out["reselections"] = trace.reselections
    for k in ("identified_at", "error_bound"):
        if k in trace.info:
            out[k] = trace.info[k]
    return out


def write_trace(trace, out_dir, scenario_doc=None, exit_code=EXIT_OK):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(trace, out / TRACE_CSV)
    (out / COLUMNS_JSON).write_text(json.dumps(columns_to_json(trace)))
    report = summarize(trace)
    report["algorithm"] = trace.algorithm
    report["exit_code"] = exit_code
    report["scenario"] = scenario_doc if scenario_doc is not None else scenario_to_dict(trace.scenario)
    (out / REPORT_JSON).write_text(json.dumps(_jsonable(report), indent=1))
    return report


def load_trace(trace_dir):
    """Rebuild a TraceLog from a run directory."""
    d = Path(trace_dir)
    try:
        report = json.loads((d / REPORT_JSON).read_text())
        sc = scenario_from_dict(report["scenario"])
        data = read_trace_csv(d / TRACE_CSV, sc)
        cols_doc = json.loads((d / COLUMNS_JSON).read_text())
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise ValueError(f"{trace_dir}: cannot read trace ({exc})") from None
    tr = TraceLog(sc, report.get("algorithm", sc.algorithm))
    tr.x, tr.u, tr.w, tr.what, tr.thetas = data["x"], data["u"], data["w"], data["what"], data["theta"]
    tr.verdict = report.get("verdict", "ok")
    tr.blowup_t = report.get("blowup_t")
    if cols_doc["entries"]:
        tr.columns = columns_from_json(cols_doc, sc, len(tr.thetas))
    for k in ("identified_at",):
        if k in report:
            tr.info[k] = report[k]
    return tr


# ---------------------------------------------------------------- commands

def _run_one(path, out_dir):
    try:
        sc, doc = load_scenario(path)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        trace = run_episode(sc)
        code = EXIT_UNSTABLE if trace.verdict == "unstable" else EXIT_OK
    except InconsistencyError as exc:
        print(f"inconsistent: {exc}", file=sys.stderr)
        trace, code = exc.trace, EXIT_INCONSISTENT
    except SynthesisInfeasibleError as exc:
        print(f"synthesis infeasible: {exc}", file=sys.stderr)
        trace, code = exc.trace, EXIT_INFEASIBLE
    except IdentificationError as exc:
        print(f"identification failed: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    if trace.columns and len(trace.columns) < len(trace.x):
        trace.x = trace.x[:len(trace.columns)]  # drop the state that was never acted on
    write_trace(trace, out_dir, doc, code)
    print(f"{path}: {trace.verdict} ({len(trace.x) - 1} steps) -> {out_dir}")
    return code


def cmd_run(scenarios, out_dir, jobs=1):
    if len(scenarios) == 1:
        return _run_one(scenarios[0], out_dir)
    dirs = [str(Path(out_dir) / Path(p).stem) for p in scenarios]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            codes = list(ex.map(_run_one, scenarios, dirs))
    else:
        codes = [_run_one(p, d) for p, d in zip(scenarios, dirs)]
    return max(codes)


def cmd_verify(trace_dir, tol=1e-7):
    try:
        trace = load_trace(trace_dir)
    except (ValueError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    rows = []
    rep = analysis.stability_report(trace, trace.scenario.T_stop)
    rows.append(("no blow-up", trace.verdict != "unstable", rep.sup_x))
    if trace.columns and trace.what:
        ops = analysis._Operators(trace)
        ident = analysis.verify_closed_loop_identity(trace, tol, ops=ops)
        series = analysis.compute_error_series(trace, ops)
        margin, _, _ = analysis.bound_chain(trace, series, ops)
        rows.append(("state representation", ident.x <= tol, ident.x))
        rows.append(("input representation", ident.u <= tol, ident.u))
        rows.append(("estimate recursion within W", ident.what_excess <= tol, ident.what_excess))
        rows.append(("convolution bound chain", margin >= 0, margin))
        print(f"L_hat = {series.total!r}")
    if rep.decay_ok is not None:
        rows.append(("post-stop decay", bool(rep.decay_ok), rep.decay_rate))
    width = max(len(r[0]) for r in rows)
    for name, ok, val in rows:
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {val!r}")
    return EXIT_OK if all(ok for _, ok, _ in rows) else EXIT_CHECK


def probe_report(sc, trials, seed=None):
    top = sc.topology
    seed = sc.seed if seed is None else seed
    rep = fir_feasibility_probe(top, sc.lo, sc.hi, sc.dbar, sc.H, trials, seed=seed, Q=sc.Q, R=sc.R)
    rng = np.random.default_rng(seed)
    models = []
    for _ in range(max(trials, 1)):
        th = [l + rng.random(l.size) * (h - l) for l, h in zip(sc.lo, sc.hi)]
        dyn = assemble_global(top, th)
        models.append((dyn.A, dyn.B))
    bounds = family_bounds(models, sc.H)
    out = {"trials": rep.trials, "passed": rep.passed, "pass_rate": rep.pass_rate,
           "failures": rep.failures[:10], "worst": rep.worst,
           "decay_C": rep.decay[0], "decay_rho": rep.decay[1], "family_bounds": bounds}
    try:
        const = sensitivity_constants(Q=sc.Q, R=sc.R, H=sc.H, **bounds)
        out.update(Gamma_A=const.Gamma_A, Gamma_B=const.Gamma_B, kappa_CD=const.kappa_CD)
    except NotControllableError as exc:
        out["sensitivity_error"] = str(exc)
    return out


def cmd_probe(path, trials):
    try:
        sc, _ = load_scenario(path)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(json.dumps(_jsonable(probe_report(sc, trials)), indent=1))
    return EXIT_OK


def cmd_compare(dir_a, dir_b, out=None):
    try:
        a, b = load_trace(dir_a), load_trace(dir_b)
    except (ValueError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if a.scenario.topology.n_x != b.scenario.topology.n_x:
        print("error: traces have different state dimensions", file=sys.stderr)
        return EXIT_USAGE
    text = analysis.comparison_csv(analysis.compare_runs(a, b, a.scenario.T_stop))
    if out:
        Path(out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="netstab", description="Distributed consistent-model SLS control.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="simulate scenarios and write traces")
    r.add_argument("scenario", nargs="+")
    r.add_argument("-o", "--out", required=True)
    r.add_argument("--jobs", type=int, default=1)
    v = sub.add_parser("verify", help="check a written trace")
    v.add_argument("trace_dir")
    pr = sub.add_parser("probe", help="feasibility and sensitivity probe of a scenario")
    pr.add_argument("scenario")
    pr.add_argument("--trials", type=int, default=20)
    c = sub.add_parser("compare", help="compare two traces")
    c.add_argument("dir_a")
    c.add_argument("dir_b")
    c.add_argument("-o", "--out")
    return p


def main(argv=None):
    level = os.environ.get("NETSTAB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.command == "run":
        return cmd_run(args.scenario, args.out, args.jobs)
    if args.command == "verify":
        return cmd_verify(args.trace_dir)
    if args.command == "probe":
        if args.trials < 1:
            print("error: --trials must be >= 1", file=sys.stderr)
            return EXIT_USAGE
        return cmd_probe(args.scenario, args.trials)
    return cmd_compare(args.dir_a, args.dir_b, args.out)


if __name__ == "__main__":
    sys.exit(main())
