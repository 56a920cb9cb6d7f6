"""End-to-end acceptance checks, one test per criterion, at the stated tolerances.

Run with ``pytest tests/test_acceptance.py -v``; a summary with one PASS/FAIL
line per criterion is printed at the end of the session.
"""

import time

import numpy as np
import pytest

from jacobi_entropy.cli import EXIT_HYPOTHESIS, benchmark_systems, main
from jacobi_entropy.entropy import (
    EntropyConfig,
    entropy_report,
    lyapunov_spectrum,
    riccati_integrate,
    sqrt_neg_trace,
    trace_inequality,
    unstable_solution,
)
from jacobi_entropy.flow import IntegratorConfig, default_config, flow, tangent_flow
from jacobi_entropy.jacobi import closed_form_reduced, geodesic_closed_form, mechanical_closed_form, reduced_curvature
from jacobi_entropy.symplin import standard_form
from jacobi_entropy.systems import (
    geodesic2d,
    hyperbolic_metric,
    level_set,
    liouville_sample_array,
    mechanical,
    pendulum_potential,
    polynomial_potential,
    sphere_metric,
    trig_potential,
    zero_potential,
)

HALF_PLANE_BOX = ((-1.0, 1.0), (0.5, 2.0))


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        if exc[0] is None:
            assert self.elapsed <= self.seconds, f"runtime {self.elapsed:.1f} s over budget {self.seconds} s"


def _report(label, ok, **values):
    detail = "  ".join(f"{k}={v:.3g}" if isinstance(v, float) else f"{k}={v}" for k, v in values.items())
    print(f"\n{label}: {'PASS' if ok else 'FAIL'}  {detail}")


def _seeded_mechanical(seed):
    rng = np.random.default_rng([7, seed])
    if seed % 2 == 0:
        a = rng.normal(size=(2, 2))
        pot = polynomial_potential(a @ a.T + 0.5 * np.eye(2), rng.normal(size=2), 0.3 * rng.normal(size=2),
                                   0.1 * rng.uniform(size=2))
    else:
        pot = trig_potential(rng.integers(-2, 3, size=(3, 2)), rng.normal(size=3), rng.uniform(0, 2 * np.pi, 3))
    p = rng.normal(size=2)
    p *= rng.uniform(0.5, 2.0) / np.linalg.norm(p)
    return mechanical(pot), np.concatenate([p, rng.uniform(-1.5, 1.5, 2)])


def test_criterion_1_closed_form_oracle():
    with Budget(60):
        worst = 0.0
        for seed in range(20):
            system, z = _seeded_mechanical(seed)
            num = reduced_curvature(system, z).matrix
            _, ref = mechanical_closed_form(system, z)
            # the pipeline works in a different orthonormal basis of the quotient: compare spectra
            err = np.abs(np.linalg.eigvalsh(0.5 * (num + num.T)) - np.linalg.eigvalsh(closed_form_reduced(system, z).matrix))
            worst = max(worst, float(err.max() / np.linalg.norm(ref, 2)))
        ok = worst <= 1e-4
        _report("criterion 1", ok, max_relative_error=worst)
        assert ok


def test_criterion_2_riemannian_oracle(tmp_path):
    with Budget(30):
        rng = np.random.default_rng(2)
        hyp, sph = geodesic2d(hyperbolic_metric()), geodesic2d(sphere_metric())
        hyp_err = sph_err = 0.0
        for _ in range(5):
            x, y = rng.uniform(-1, 1), rng.uniform(0.5, 2.0)
            th = rng.uniform(0, 2 * np.pi)
            z = np.array([np.cos(th) / y, np.sin(th) / y, x, y])  # |p|_g = 1, E = ½
            hyp_err = max(hyp_err, abs(reduced_curvature(hyp, z).matrix[0, 0] + 1))
            t, ph = rng.uniform(0.5, 2.6), rng.uniform(0, 2 * np.pi)
            zs = np.array([np.cos(th), np.sin(th) * np.sin(t), t, ph])
            sph_err = max(sph_err, abs(reduced_curvature(sph, zs).matrix[0, 0] - 1))
        cfg = tmp_path / "sphere.ini"
        cfg.write_text("[system]\nfamily = geodesic2d\nmetric = sphere\nenergy = 0.5\n"
                       "q_bounds = [[0.5, 2.6], [0, 6.283185307179586]]\n"
                       "[run]\nseed = 5\nsample_count = 4\nT = 20\ndt = 1e-3\n")
        rc = main(["bound", "--config", str(cfg), "--out", str(tmp_path / "out")])
        ok = hyp_err <= 1e-4 and sph_err <= 1e-4 and rc == EXIT_HYPOTHESIS
        _report("criterion 2", ok, hyperbolic_error=hyp_err, sphere_error=sph_err, sphere_bound_exit=rc)
        assert ok


@pytest.fixture(scope="module")
def hyperbolic_half():
    """Shared T = 200 run on the hyperbolic level set E = ½ (criteria 3 and 8)."""
    t0 = time.perf_counter()
    ls = level_set(geodesic2d(hyperbolic_metric()), 0.5, q_bounds=HALF_PLANE_BOX)
    cfg = EntropyConfig(T=200.0, dt=1e-3, transient=10.0)
    rep = entropy_report(ls, 8, seed=17, config=cfg, rprime_count=2)
    return ls, cfg, rep, time.perf_counter() - t0


def test_criterion_3_equality_case(hyperbolic_half):
    ls, cfg, rep, spent = hyperbolic_half
    with Budget(300 - spent):
        system = ls.system
        pts = liouville_sample_array(ls, 8, 17)
        spec = lyapunov_spectrum(system, pts[0], 200.0, 0.5, IntegratorConfig("implicit_midpoint", 1e-3), 10.0)
        lam_err = abs(spec.exponents[0] - 1)
        v_err = max(abs(unstable_solution(system, z, config=cfg).V[0, 0] - 1) for z in pts[:2])
        exact = max(abs(sqrt_neg_trace(geodesic_closed_form(hyperbolic_metric(), z)) - 1) for z in pts)
        pipe = abs(rep.bound.estimate - 1)
        gap, sigma = rep.equality_gap, rep.combined_stderr
        ok = lam_err <= 1e-2 and v_err <= 1e-6 and exact <= 1e-12 and pipe <= 1e-6 and abs(gap) <= 2 * sigma
        _report("criterion 3", ok, lambda_plus=float(spec.exponents[0]), V_error=float(v_err),
                closed_form_integrand_error=float(exact), pipeline_bound_error=pipe, gap=gap, sigma=sigma,
                symmetric=rep.diagnostics["symmetric_jacobi_curves"])
    assert ok and rep.diagnostics["symmetric_jacobi_curves"]


def test_criterion_4_riccati_analytics():
    with Budget(1):
        v5 = riccati_integrate(lambda t: -1.0, [[0.0]], (0.0, 5.0)).V[0, 0]
        blow = riccati_integrate(lambda t: 1.0, [[0.0]], (0.0, 3.0))
        ok = abs(v5 - np.tanh(5.0)) <= 1e-6 and blow.blowup_flag and 1.5 < blow.blowup_time < 1.6
        _report("criterion 4", ok, tanh_error=abs(v5 - np.tanh(5.0)), blowup_time=blow.blowup_time)
        assert ok


def test_criterion_5_trace_inequality():
    with Budget(5):
        rng = np.random.default_rng(5)
        violations, worst = 0, -np.inf
        for _ in range(1000):
            d = int(rng.integers(1, 7))
            m, n, u = (rng.normal(size=(d, d)) for _ in range(3))
            lhs, rhs, _ = trace_inequality(m @ m.T, n @ n.T, u @ u.T + 0.1 * np.eye(d))
            worst = max(worst, rhs - lhs)
            violations += rhs - lhs > 1e-10
        eq = 0.0
        for _ in range(200):
            d = int(rng.integers(1, 7))
            q, _ = np.linalg.qr(rng.normal(size=(d, d)))
            mw, uw = rng.uniform(0.1, 5.0, d), rng.uniform(0.2, 5.0, d)
            M, U = (q * mw) @ q.T, (q * uw) @ q.T
            N = U @ M @ U  # √N = √M U
            lhs, rhs, defect = trace_inequality(M, N, U)
            eq = max(eq, abs(lhs - rhs), defect)
        ok = violations == 0 and eq <= 1e-8
        _report("criterion 5", ok, violations=violations, worst_excess=float(worst), equality_defect=eq)
        assert ok


def test_criterion_6_symplectic_hygiene():
    system = mechanical(pendulum_potential(1.0), periods=(2 * np.pi,))
    z = np.array([0.5, 1.0])
    integ = IntegratorConfig("stormer_verlet", 1e-3)
    rng = np.random.default_rng(6)
    frame = rng.normal(size=(2, 6))
    traj = tangent_flow(system, z, frame, 100.0, integ)
    drift = traj.energy_drift / abs(float(system.eval_h(z)))
    omega = standard_form(1).form
    f0, f1 = traj.frames[0], traj.frames[-1]
    s0, s1 = f0.T @ omega @ f0, f1.T @ omega @ f1
    sigma_defect = float(np.abs(s1 - s0).max() / np.abs(s0).max())
    pairing = {}
    for name, (sys_, z0) in benchmark_systems().items():
        spec = lyapunov_spectrum(sys_, z0, 50.0, 0.5, default_config(sys_, 1e-3), 5.0)
        pairing[name] = spec.pairing_defect
    ok = drift <= 1e-6 and sigma_defect <= 1e-6 and max(pairing.values()) <= 1e-3
    _report("criterion 6", ok, energy_drift=drift, sigma_defect=sigma_defect,
            max_pairing_defect=max(pairing.values()))
    assert ok


def test_criterion_7_liouville_sampler():
    system = mechanical(zero_potential(2), periods=(2 * np.pi, 2 * np.pi))
    ls = level_set(system, 0.5)
    pts = liouville_sample_array(ls, 10_000, seed=7)
    on_level = float(np.abs(system.eval_h(pts) - 0.5).max())
    pushed = flow(system, pts, 1.0, IntegratorConfig("stormer_verlet", 1e-2), record_every=10**9).final

    def observables(z):
        p0, p1, q0, q1 = z.T
        return np.stack([np.cos(q0), np.sin(q0 + 2 * q1), p0 * np.cos(q1), np.cos(q0 - q1) * p1 ** 2])

    before, after = observables(pts), observables(pushed)
    n = len(pts)
    se = np.sqrt(before.var(axis=1, ddof=1) / n + after.var(axis=1, ddof=1) / n)
    score = np.abs(after.mean(axis=1) - before.mean(axis=1)) / se
    # ∫1 dμ = 1: every sample carries weight 1/N on the level set
    ok = pts.shape == (n, 4) and on_level <= 1e-12 and bool(np.all(score <= 4))
    _report("criterion 7", ok, level_defect=on_level, max_standard_errors=float(score.max()))
    assert ok


def test_criterion_8_inequality_never_violated(hyperbolic_half):
    results = {"hyperbolic_E0.5": hyperbolic_half[2]}
    hyp2 = level_set(geodesic2d(hyperbolic_metric()), 2.0, q_bounds=HALF_PLANE_BOX)
    results["hyperbolic_E2"] = entropy_report(hyp2, 8, seed=8, config=EntropyConfig(T=50.0, dt=1e-3, transient=5.0))
    torus = level_set(mechanical(zero_potential(2), periods=(2 * np.pi, 2 * np.pi)), 0.5)
    results["free_torus"] = entropy_report(torus, 8, seed=8, config=EntropyConfig(T=2e4, dt=1.0, renorm_interval=50.0,
                                                                                  transient=1e4))
    lines = {k: (r.bound.estimate, r.pesin.estimate, r.combined_stderr) for k, r in results.items()}
    ok = all(r.inequality_holds for r in results.values())
    print()
    for k, (b, p, s) in lines.items():
        print(f"  {k}: bound={b:.6g} pesin={p:.6g} sigma={s:.3g}")
    _report("criterion 8", ok, systems=len(results))
    assert ok
