"""Command line runner: ``jacobi-entropy {curvature,lyapunov,bound,verify} --config FILE``.

Exit codes: 0 success, 2 configuration error, 3 hypothesis violation,
4 numerical failure (also used when ``verify`` finds a failing property).

Samples are drawn once in the parent process and cut into fixed-size chunks.
Chunks fan out over a process pool; each worker rebuilds the system from the
plain-data config. Chunk boundaries do not depend on ``--workers``, so
reports are identical for any pool size.
"""

import argparse
import csv
import datetime
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import __version__
from .config import PROPERTIES, ExperimentConfig, build_level_set, build_system, load_config
from .entropy import (
    EntropyConfig,
    SampleOutcome,
    _failure,
    bound_samples,
    build_report,
    lyapunov_batch,
    pesin_samples,
    riccati_integrate,
    riccati_via_linear,
    rprime_samples,
    summarize,
    trace_inequality,
    unstable_solution,
)
from .errors import ConfigError, HypothesisViolation, JacobiEntropyError, NumericalFailure
from .flow import IntegratorConfig, tangent_flow
from .jacobi import closed_form_reduced, reduced_curvature_batch
from .symplin import standard_form
from .systems import (
    geodesic2d,
    harmonic_potential,
    hyperbolic_metric,
    liouville_sample_array,
    mechanical,
    pendulum_potential,
    polynomial_potential,
    trig_potential,
    zero_potential,
)

EXIT_OK, EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_NUMERICAL = 0, 2, 3, 4
DEFAULT_BATCH = 8

# ------------------------------------------------------------------ workers

_SYSTEMS = {}


def _system(spec):
    key = json.dumps(spec, sort_keys=True)
    if key not in _SYSTEMS:
        _SYSTEMS[key] = build_system(spec)
    return _SYSTEMS[key]


def _entropy_config(run, bit_repro):
    return replace(ExperimentConfig("bound", {}, run).entropy_config(), bit_repro=bit_repro)


def _task(args):
    kind, spec, run, bit_repro, points = args
    system = _system(spec)
    cfg = _entropy_config(run, bit_repro)
    if kind == "curvature":
        return _curvature_rows(system, points, cfg)
    if kind == "lyapunov":
        return _lyapunov_rows(system, points, cfg, run)
    if kind == "bound":
        return bound_samples(system, points, cfg)
    if kind == "pesin":
        return pesin_samples(system, points, cfg)
    if kind == "rprime":
        return rprime_samples(system, points, cfg)
    raise ValueError(kind)


def _curvature_rows(system, points, cfg):
    ops = reduced_curvature_batch(system, points, cfg.jacobi)
    rows = []
    for z, op in zip(points, ops):
        row = {"z": z.tolist()}
        if isinstance(op, Exception):
            o = _failure(op)
            row.update(status=o.status, message=o.message)
            rows.append(row)
            continue
        row.update(status="ok", message="", eigenvalues=op.eigenvalues.tolist(), asym_defect=op.asym_defect,
                   richardson_error=_clean(op.richardson_error))
        try:
            ref = np.sort(np.linalg.eigvalsh(closed_form_reduced(system, z).symmetrized))
            row["closed_form"] = ref.tolist()
            row["delta"] = float(np.abs(op.eigenvalues - ref).max() / max(1.0, np.abs(ref).max()))
        except (JacobiEntropyError, ValueError):
            row["closed_form"] = None
            row["delta"] = None
        rows.append(row)
    return rows


def _lyapunov_rows(system, points, cfg, run):
    integ = cfg.integrator(system)
    try:
        specs = lyapunov_batch(system, points, cfg.T, cfg.renorm_interval, integ, cfg.transient,
                               step_doubling=cfg.step_doubling)
    except JacobiEntropyError:
        if len(points) == 1:
            o = _failure(sys.exc_info()[1])
            return [{"z": points[0].tolist(), "outcome": o, "history": ()}]
        return [r for p in points for r in _lyapunov_rows(system, p[None], cfg, run)]
    every = run.get("history_every", 1)
    rows = []
    for z, s in zip(points, specs):
        err = math.hypot(_zero(s.convergence_error), _zero(s.discretization_error))
        o = SampleOutcome(s.chi, error=err, extra={"exponents": s.exponents.tolist(),
                                                   "pairing_defect": s.pairing_defect,
                                                   "convergence_error": _zero(s.convergence_error),
                                                   "discretization_error": _zero(s.discretization_error)})
        hist = tuple((t, float(np.sum(np.maximum(v, 0)))) for t, v in s.convergence_history[::every])
        rows.append({"z": z.tolist(), "outcome": o, "history": hist})
    return rows


def _zero(x):
    return float(x) if np.isfinite(x) else 0.0


def _clean(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _fan_out(kind, cfg, points, workers, bit_repro):
    size = cfg.run.get("batch_size", DEFAULT_BATCH)
    chunks = [points[i:i + size] for i in range(0, len(points), size)]
    tasks = [(kind, cfg.system, cfg.run, bit_repro, c) for c in chunks]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            parts = list(pool.map(_task, tasks))
    else:
        parts = [_task(t) for t in tasks]
    return [r for part in parts for r in part]


# ------------------------------------------------------------------ outputs


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def _write_report(out, cfg, result, bit_repro, workers):
    report = {
        "command": cfg.command,
        "config": cfg.resolved(),
        "bit_repro": bit_repro,
        "version": __version__,
        "result": result,
        "metadata": {
            "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "workers": workers,
        },
    }
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(_jsonable(report), fh, sort_keys=True, indent=2)
        fh.write("\n")
    return report


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _z_header(n):
    return [f"p{i}" for i in range(n)] + [f"q{i}" for i in range(n)]


# ----------------------------------------------------------------- commands


def _samples(cfg):
    ls = build_level_set(cfg.system)
    return ls, liouville_sample_array(ls, cfg.run["sample_count"], cfg.seed)


def cmd_curvature(cfg, out, workers=1, bit_repro=False):
    ls, pts = _samples(cfg)
    n = ls.system.n
    rows = _fan_out("curvature", cfg, pts, workers, bit_repro)
    m = max((len(r["eigenvalues"]) for r in rows if r["status"] == "ok"), default=n - 1)
    header = ["index"] + _z_header(n) + ["status"] + [f"eig{i}" for i in range(m)] + \
        ["asym_defect", "richardson_error"] + [f"closed_eig{i}" for i in range(m)] + ["closed_form_delta", "message"]
    table = []
    for i, r in enumerate(rows):
        eig = r.get("eigenvalues") or [None] * m
        ref = r.get("closed_form") or [None] * m
        table.append([i] + r["z"] + [r["status"]] + eig + [r.get("asym_defect"), r.get("richardson_error")] + ref
                     + [r.get("delta"), r["message"]])
    _write_csv(os.path.join(out, "samples.csv"), header, table)
    ec = cfg.entropy_config()
    summarize([SampleOutcome(0.0, r["status"], r["message"]) for r in rows], len(rows), ec.exclusion_cap,
              label="curvature")
    ok = [r for r in rows if r["status"] == "ok"]
    deltas = [r["delta"] for r in ok if r["delta"] is not None]
    eig_min = min((min(r["eigenvalues"]) for r in ok), default=None)
    eig_max = max((max(r["eigenvalues"]) for r in ok), default=None)
    result = {
        "sample_count": len(rows),
        "ok": len(ok),
        "excluded": {k: sum(r["status"] == k for r in rows) for k in ("hypothesis", "numerical")},
        "eigenvalue_min": eig_min,
        "eigenvalue_max": eig_max,
        "max_asym_defect": max((r["asym_defect"] for r in ok), default=None),
        "max_closed_form_delta": max(deltas) if deltas else None,
        # same clamp as the bound integrand
        "nonpositive": eig_max is not None
        and eig_max <= ec.clamp_rel * max(abs(eig_min), abs(eig_max)) + ec.clamp_abs,
    }
    return result


def cmd_lyapunov(cfg, out, workers=1, bit_repro=False):
    ls, pts = _samples(cfg)
    n = ls.system.n
    rows = _fan_out("lyapunov", cfg, pts, workers, bit_repro)
    m = max((len(r["outcome"].extra["exponents"]) for r in rows if r["outcome"].status == "ok"), default=0)
    header = ["index"] + _z_header(n) + ["status", "chi"] + [f"lambda{i}" for i in range(m)] + \
        ["pairing_defect", "convergence_error", "discretization_error", "message"]
    table = []
    conv = []
    for i, r in enumerate(rows):
        o = r["outcome"]
        ex = o.extra
        lam = ex.get("exponents") or [None] * m
        table.append([i] + r["z"] + [o.status, o.value if o.status == "ok" else None] + lam
                     + [ex.get("pairing_defect"), ex.get("convergence_error"), ex.get("discretization_error"),
                        o.message])
        conv.extend([i, t, chi] for t, chi in r["history"])
    _write_csv(os.path.join(out, "samples.csv"), header, table)
    _write_csv(os.path.join(out, "convergence.csv"), ["index", "time", "chi"], conv)
    ec = cfg.entropy_config()
    est = summarize([r["outcome"] for r in rows], len(rows), ec.exclusion_cap, bit_repro, "lyapunov")
    return {
        "sample_count": len(rows),
        "chi_estimate": {"estimate": est.estimate, "stderr": est.stderr, "count": est.count,
                         "excluded": est.excluded, "numerical_error": est.numerical_error},
        "max_pairing_defect": max((r["outcome"].extra["pairing_defect"] for r in rows
                                   if r["outcome"].status == "ok"), default=None),
        "T": ec.T,
        "dt": ec.dt,
        "renorm_interval": ec.renorm_interval,
        "transient": ec.transient,
    }


def cmd_bound(cfg, out, workers=1, bit_repro=False):
    ls, pts = _samples(cfg)
    n = ls.system.n
    ec = replace(cfg.entropy_config(), bit_repro=bit_repro)
    b = _fan_out("bound", cfg, pts, workers, bit_repro)
    # fail fast (e.g. positive curvature) before the expensive Lyapunov runs
    summarize(b, len(pts), ec.exclusion_cap, bit_repro, "bound")
    p = _fan_out("pesin", cfg, pts, workers, bit_repro)
    r = None
    k = cfg.run.get("rprime_count", 0)
    if k:
        r = _fan_out("rprime", cfg, pts[:k], workers, bit_repro)
    report = build_report(len(pts), b, p, r, ec)
    header = ["index"] + _z_header(n) + ["bound_status", "bound", "bound_error", "pesin_status", "pesin",
                                         "pesin_error", "pairing_defect", "rprime", "message"]
    table = []
    for i, (bo, po) in enumerate(zip(b, p)):
        ro = r[i] if r is not None and i < len(r) else None
        msg = "; ".join(m for m in (bo.message, po.message, ro.message if ro else "") if m)
        table.append([i] + pts[i].tolist() + [bo.status, _ok(bo), _ok(bo, "error"), po.status, _ok(po),
                                              _ok(po, "error"), po.extra.get("pairing_defect"),
                                              _ok(ro) if ro else None, msg])
    _write_csv(os.path.join(out, "samples.csv"), header, table)
    return report.as_dict()


def _ok(o, attr="value"):
    return getattr(o, attr) if o.status == "ok" else None


# ------------------------------------------------------------------- verify


def benchmark_systems():
    """Named systems used by ``verify`` (all with R̂ ⪯ 0 except the chaotic pair)."""
    return {
        "hyperbolic": (geodesic2d(hyperbolic_metric()), np.array([0.3, 0.4, 0.2, 1.1])),
        "free_torus": (mechanical(zero_potential(2), periods=(1.0, 1.0)), np.array([0.6, 0.8, 0.1, 0.2])),
        "trig_2d": (mechanical(trig_potential([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], [1.0, 1.0, 0.5]),
                               periods=(2 * np.pi, 2 * np.pi)), np.array([1.2, 0.7, 0.3, 1.9])),
        "harmonic_3d": (mechanical(harmonic_potential(3)), np.array([0.5, -0.2, 0.3, 0.1, 0.4, -0.6])),
    }


def _prop_pairing(rng, fault):
    worst = 0.0
    for name, (system, z) in benchmark_systems().items():
        integ = EntropyConfig(dt=2e-3).integrator(system)
        if fault:
            integ = IntegratorConfig("explicit_euler", integ.dt)
        s = lyapunov_batch(system, z[None], 20.0, 0.5, integ, 2.0)[0]
        worst = max(worst, s.pairing_defect)
    return worst <= 1e-3, {"max_pairing_defect": worst, "tolerance": 1e-3}


def _prop_riccati(rng, fault):
    st = riccati_integrate(lambda t: -np.eye(1), np.zeros((1, 1)), (0.0, 5.0))
    tanh_err = abs(float(st.V[0, 0]) - math.tanh(5.0))
    blow = riccati_integrate(lambda t: np.eye(1), np.zeros((1, 1)), (0.0, 3.0))
    blow_ok = blow.blowup_flag and 1.5 < blow.blowup_time < 1.6
    # dual route: nonlinear integration vs the linear (ξ, η) system
    a = rng.normal(size=(3, 3))
    R = lambda t: -(a @ a.T + np.eye(3)) * (1 + 0.3 * math.sin(t))
    V0 = np.eye(3)
    direct = riccati_integrate(R, V0, (0.0, 2.0)).V
    linear = riccati_via_linear(R, V0, (0.0, 2.0))(2.0)
    dual = float(np.abs(direct - linear).max())
    hyp = geodesic2d(hyperbolic_metric())
    z = np.array([0.3, 0.4, 0.2, 1.1])
    v = unstable_solution(hyp, z).V
    # V = √(-R̂) = |p|_g on the constant-curvature plane
    v_err = abs(float(v[0, 0]) - math.sqrt(2 * float(hyp.eval_h(z))))
    ok = tanh_err <= 1e-6 and blow_ok and dual <= 1e-6 and v_err <= 1e-6
    return ok, {"tanh_error": tanh_err, "blowup_time": blow.blowup_time, "dual_route_error": dual,
                "hyperbolic_V_error": v_err}


def _prop_trace(rng, fault):
    worst = -math.inf
    for _ in range(300):
        d = int(rng.integers(1, 7))
        m, nn, u = (rng.normal(size=(d, d)) for _ in range(3))
        M, N, U = m @ m.T, nn @ nn.T, u @ u.T + 0.1 * np.eye(d)
        lhs, rhs, _ = trace_inequality(M, N, U)
        worst = max(worst, (rhs - lhs) / max(1.0, abs(lhs)))
    eq = 0.0
    for _ in range(20):
        d = int(rng.integers(1, 7))
        m = rng.normal(size=(d, d))
        M = m @ m.T + 0.1 * np.eye(d)
        # U commuting with M makes √M U symmetric, so N = (√M U)² is an equality case
        _, v = np.linalg.eigh(M)
        U = v @ np.diag(rng.uniform(0.5, 2.0, d)) @ v.T
        N = U @ M @ U
        lhs, rhs, _ = trace_inequality(M, N, U)
        eq = max(eq, abs(lhs - rhs) / max(1.0, abs(lhs)))
    ok = worst <= 1e-10 and eq <= 1e-8
    return ok, {"max_violation": worst, "equality_defect": eq}


def _prop_oracle(rng, fault):
    worst = 0.0
    for _ in range(3):
        a = rng.normal(size=(2, 2))
        pot = polynomial_potential(a @ a.T, rng.normal(size=2), 0.1 * rng.normal(size=2), 0.05 * rng.uniform(size=2))
        system = mechanical(pot)
        z = np.concatenate([rng.normal(size=2) + np.array([1.0, 0.0]), rng.normal(size=2)])
        op = reduced_curvature_batch(system, z[None])[0]
        if isinstance(op, Exception):
            raise op
        ref = closed_form_reduced(system, z).symmetrized
        worst = max(worst, float(np.abs(op.eigenvalues - np.linalg.eigvalsh(ref)).max() / max(1.0, np.abs(ref).max())))
    hyp = geodesic2d(hyperbolic_metric())
    z = np.array([0.3, 0.4, 0.2, 1.1])
    k = reduced_curvature_batch(hyp, z[None])[0]
    hyp_err = abs(float(k.eigenvalues[0]) + 2 * float(hyp.eval_h(z)))
    ok = worst <= 1e-4 and hyp_err <= 1e-4
    return ok, {"max_relative_error": worst, "hyperbolic_error": hyp_err}


def _prop_symplecticity(rng, fault):
    system = mechanical(pendulum_potential(1.0))
    z = np.array([0.5, 1.0])
    scheme = "explicit_euler" if fault else "stormer_verlet"
    integ = IntegratorConfig(scheme, 1e-3)
    frame = rng.normal(size=(2, 2))
    traj = tangent_flow(system, z, frame, 10.0, integ)
    omega = standard_form(1).form
    f0, f1 = traj.frames[0], traj.frames[-1]
    s0, s1 = f0[:, 0] @ omega @ f0[:, 1], f1[:, 0] @ omega @ f1[:, 1]
    defect = abs(s1 - s0) / abs(s0)
    e0 = float(system.eval_h(z))
    drift = traj.energy_drift / abs(e0)
    ok = defect <= 1e-6 and drift <= 1e-6
    return ok, {"scheme": scheme, "sigma_defect": defect, "relative_energy_drift": drift}


VERIFY = {
    "pairing": _prop_pairing,
    "riccati": _prop_riccati,
    "trace": _prop_trace,
    "oracle": _prop_oracle,
    "symplecticity": _prop_symplecticity,
}


def cmd_verify(cfg, out, workers=1, bit_repro=False):
    props = cfg.run["properties"]
    fault = cfg.run.get("inject_fault", "none") == "non_symplectic"
    results = {}
    table = []
    for name in props:
        rng = np.random.default_rng([cfg.seed, PROPERTIES.index(name)])
        try:
            ok, detail = VERIFY[name](rng, fault)
        except JacobiEntropyError as exc:
            ok, detail = False, {"error": f"{type(exc).__name__}: {exc}"}
        results[name] = {"pass": bool(ok), **detail}
        table.append([name, "pass" if ok else "fail"])
        print(f"{name}: {'PASS' if ok else 'FAIL'}")
    _write_csv(os.path.join(out, "samples.csv"), ["property", "result"], table)
    return {"properties": results, "all_pass": all(r["pass"] for r in results.values()),
            "inject_fault": cfg.run.get("inject_fault", "none")}


COMMANDS = {
    "curvature": cmd_curvature,
    "lyapunov": cmd_lyapunov,
    "bound": cmd_bound,
    "verify": cmd_verify,
}


# --------------------------------------------------------------------- main


def build_parser():
    parser = argparse.ArgumentParser(prog="jacobi-entropy", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI file with [system], [run], [output]")
        p.add_argument("--out", help="output directory (default: [output] dir, else the current directory)")
        p.add_argument("--workers", type=int, default=1, help="process pool size for sample batches")
        p.add_argument("--bit-repro", action="store_true", help="fixed-order tree reductions")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg = load_config(args.config, args.command)
        out = args.out or cfg.output.get("dir") or "."
        os.makedirs(out, exist_ok=True)
        result = COMMANDS[args.command](cfg, out, args.workers, args.bit_repro)
        _write_report(out, cfg, result, args.bit_repro, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HypothesisViolation as exc:
        print(f"hypothesis violation: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if args.command == "verify" and not result["all_pass"]:
        return EXIT_NUMERICAL
    _summary(args.command, result)
    return EXIT_OK


def _summary(command, result):
    if command == "bound":
        print(f"bound {result['bound_estimate']['estimate']:.6g}  pesin {result['pesin_estimate']['estimate']:.6g}"
              f"  gap {result['equality_gap']:.3g} ({result['gap_sigma']:.2f} sigma)")
    elif command == "lyapunov":
        e = result["chi_estimate"]
        print(f"chi {e['estimate']:.6g} +- {e['stderr']:.2g}  pairing {result['max_pairing_defect']}")
    elif command == "curvature":
        print(f"{result['ok']}/{result['sample_count']} points  eigenvalues in "
              f"[{result['eigenvalue_min']}, {result['eigenvalue_max']}]  closed-form delta "
              f"{result['max_closed_form_delta']}")


if __name__ == "__main__":
    sys.exit(main())
