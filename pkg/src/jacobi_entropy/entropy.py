"""Lyapunov spectra, Riccati machinery and Monte Carlo estimates of both sides
of the entropy inequality ``h_μ ≥ ∫ Tr √(-R̂) dμ``.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .errors import (
    ConvergenceError,
    HypothesisViolation,
    JacobiEntropyError,
    NumericalFailure,
    PositiveCurvatureError,
    RiccatiBlowup,
)
from .flow import (
    IntegratorConfig,
    default_config,
    flow,
    reduced_basis,
    reduced_coordinates,
    reduction_projector,
    step_with_tangent,
    tangent_flow,
)
from .jacobi import (
    JacobiConfig,
    closed_form_reduced,
    derivative_frame,
    reduced_curvature_batch,
)
from .systems import as_array, liouville_sample_array

# ------------------------------------------------------------------ Lyapunov


@dataclass(frozen=True)
class LyapunovSpectrum:
    exponents: np.ndarray
    chi: float
    T: float
    renorm_interval: float
    transient: float = 0.0
    convergence_history: tuple = ()
    discretization_error: float = float("nan")

    @property
    def pairing_defect(self):
        return pairing_defect(self.exponents)

    @property
    def convergence_error(self):
        """|χ(T) - χ(T/2)| from the running history, a finite-time error proxy."""
        hist = self.convergence_history
        if len(hist) < 2:
            return float("nan")
        times = np.array([h[0] for h in hist])
        chis = np.array([_chi(h[1]) for h in hist])
        half = np.searchsorted(times, self.transient + 0.5 * (times[-1] - self.transient))
        return float(abs(chis[-1] - chis[min(half, len(chis) - 1)]))


def _chi(exponents):
    return float(np.sum(np.maximum(exponents, 0.0)))


def pairing_defect(exponents):
    lam = np.sort(np.asarray(exponents))[::-1]
    if lam.size == 0:
        return 0.0
    return float(np.max(np.abs(lam + lam[::-1])))


def lyapunov_spectrum(system, z, T, renorm_interval=0.5, config=None, transient=0.0, overflow=1e6,
                      step_doubling=False):
    """Benettin QR spectrum of the reduced flow at ``z``."""
    return lyapunov_batch(system, as_array(z)[None], T, renorm_interval, config, transient, overflow,
                          step_doubling)[0]


def lyapunov_batch(system, zs, T, renorm_interval=0.5, config=None, transient=0.0, overflow=1e6,
                   step_doubling=False):
    """Spectra for every row of ``zs``, integrated together.

    The frame spans the complement C_z of the flow direction in ker dh. At each
    renormalization it is re-projected onto C at the current point and
    QR-factorized in the norm ‖L(z)·‖ of the system; log|diag R| accumulates
    once ``transient`` has elapsed.

    With ``step_doubling`` the run is repeated at 2·dt and
    |χ(dt) - χ(2dt)| / (2^p - 1) (p the order of the scheme) is stored as
    ``discretization_error``.
    """
    if not T > renorm_interval:
        raise ValueError("T must exceed the renormalization interval")
    if not 0 <= transient < T:
        raise ValueError("transient must lie in [0, T)")
    zs = np.atleast_2d(as_array(zs))
    zs0 = zs
    config = config or default_config(system)
    frames = np.stack([reduced_basis(system, z) for z in zs])
    zs = zs.copy()
    frames, _ = _renormalize(system, zs, frames)
    n_steps = max(1, int(round(renorm_interval / config.dt)))
    dt = renorm_interval / n_steps
    sums = np.zeros(frames.shape[:1] + frames.shape[-1:])
    t, t_acc = 0.0, 0.0
    history = []
    while t < T - 1e-12:
        interval = min(renorm_interval, T - t)
        steps = max(1, int(round(interval / dt)))
        h = interval / steps
        for _ in range(steps):
            zs, frames = step_with_tangent(system, zs, frames, config, dt=h)
            if np.abs(frames).max() > overflow:
                frames, logs = _renormalize(system, zs, frames)
                if t >= transient:
                    sums += logs
        if not np.all(np.isfinite(frames)):
            raise NumericalFailure("tangent frame overflowed before renormalization")
        t += interval
        frames, logs = _renormalize(system, zs, frames)
        if t > transient + 1e-12:
            if t - interval < transient:
                # first interval crossing the transient: start fresh
                sums[:] = 0.0
                t_acc = t - transient
            else:
                sums += logs
                t_acc = t - transient
            history.append((t, sums / max(t_acc, 1e-300)))
    out = []
    for i in range(len(zs)):
        lam = np.sort(sums[i] / t_acc)[::-1]
        hist = tuple((ht, np.sort(hv[i])[::-1]) for ht, hv in history)
        out.append(LyapunovSpectrum(lam, _chi(lam), T, renorm_interval, transient, hist))
    if step_doubling:
        coarse = lyapunov_batch(system, zs0, T, renorm_interval, replace(config, dt=2 * dt), transient, overflow)
        order = 1 if config.scheme == "explicit_euler" else 2
        out = [replace(s, discretization_error=abs(s.chi - c.chi) / (2**order - 1)) for s, c in zip(out, coarse)]
    return out


def _renormalize(system, zs, frames):
    proj = reduction_projector(system, zs)
    frames = proj @ frames
    L = system.norm_matrix(zs)
    q, r = np.linalg.qr(L @ frames)
    logs = np.log(np.abs(np.diagonal(r, axis1=-2, axis2=-1)))
    return np.linalg.solve(L, q), logs


# ------------------------------------------------------------------ Riccati


@dataclass(frozen=True)
class RiccatiConfig:
    rtol: float = 1e-11
    atol: float = 1e-12
    method: str = "DOP853"
    blowup_threshold: float = 1e6
    max_step: float = np.inf

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0 and self.blowup_threshold > 0):
            raise ValueError("Riccati tolerances must be positive")


@dataclass(frozen=True)
class RiccatiState:
    V: np.ndarray
    t: float
    blowup_flag: bool = False
    convergence_residual: float = float("nan")
    blowup_time: Optional[float] = None
    horizon: Optional[float] = None
    rank: Optional[int] = None

    @property
    def trace(self):
        return float(np.trace(self.V))


def _as_matrix_callback(R_of_t):
    def cb(t):
        r = np.asarray(R_of_t(t), dtype=float)
        return r.reshape(1, 1) if r.ndim == 0 else r

    return cb


def riccati_integrate(R_of_t: Callable, V0, t_span, config=None):
    """Integrate V̇ = -V² - R(t) over ``t_span`` with an adaptive embedded scheme.

    V is symmetrized at every right-hand-side evaluation. A terminal event at
    ‖V‖ = blowup_threshold flags blowup (not an exception).
    """
    config = config or RiccatiConfig()
    R = _as_matrix_callback(R_of_t)
    V0 = np.atleast_2d(np.asarray(V0, dtype=float))
    k = V0.shape[0]

    def rhs(t, y):
        v = y.reshape(k, k)
        v = 0.5 * (v + v.T)
        return (-(v @ v) - R(t)).ravel()

    def blowup(t, y):
        return config.blowup_threshold - np.abs(y).max()

    blowup.terminal = True
    t0, t1 = map(float, t_span)
    if t0 == t1:
        return RiccatiState(0.5 * (V0 + V0.T), t1)
    sol = solve_ivp(rhs, (t0, t1), V0.ravel(), method=config.method, rtol=config.rtol, atol=config.atol,
                    events=blowup, max_step=config.max_step)
    if sol.status == -1:
        raise NumericalFailure(f"Riccati integration failed: {sol.message}")
    v = sol.y[:, -1].reshape(k, k)
    v = 0.5 * (v + v.T)
    if sol.status == 1:
        tb = float(sol.t_events[0][0])
        return RiccatiState(v, tb, True, blowup_time=tb)
    return RiccatiState(v, float(sol.t[-1]))


def riccati_via_linear(R_of_t: Callable, V0, t_span, config=None):
    """V(t) = -η ξ⁻¹ from the linear system ξ̇ = -η, η̇ = R ξ with ξ(t0) = I, η(t0) = -V0.

    Independent route to the Riccati solution, valid until ξ becomes singular.
    """
    config = config or RiccatiConfig()
    R = _as_matrix_callback(R_of_t)
    V0 = np.atleast_2d(np.asarray(V0, dtype=float))
    k = V0.shape[0]

    def rhs(t, y):
        xi, eta = y[: k * k].reshape(k, k), y[k * k:].reshape(k, k)
        return np.concatenate([(-eta).ravel(), (R(t) @ xi).ravel()])

    y0 = np.concatenate([np.eye(k).ravel(), (-V0).ravel()])
    sol = solve_ivp(rhs, tuple(map(float, t_span)), y0, method=config.method, rtol=config.rtol,
                    atol=config.atol, dense_output=True)
    if sol.status != 0:
        raise NumericalFailure(f"linear Jacobi system failed: {sol.message}")

    def V(t):
        y = sol.sol(t)
        xi, eta = y[: k * k].reshape(k, k), y[k * k:].reshape(k, k)
        return -eta @ np.linalg.inv(xi)

    return V


# ---------------------------------------------------- curvature along orbits


@dataclass(frozen=True)
class EntropyConfig:
    """Settings shared by the Monte Carlo estimators.

    ``curvature_source`` selects the numerical pipeline or, for the built-in
    families, the closed-form reduced curvature.
    """

    jacobi: JacobiConfig = field(default_factory=JacobiConfig)
    dt: float = 1e-3
    scheme: Optional[str] = None
    T: float = 200.0
    renorm_interval: float = 0.5
    transient: float = 10.0
    curvature_source: str = "pipeline"
    clamp_rel: float = 1e-8
    # absolute floor for the clamp: pipeline roundoff on a flat R̂ is ~1e-10
    clamp_abs: float = 1e-8
    exclusion_cap: float = 0.05
    kernel_rel: float = 1e-8
    kernel_curvature_tol: float = 1e-6
    riccati: RiccatiConfig = field(default_factory=RiccatiConfig)
    riccati_tol: float = 1e-6
    riccati_grid: float = 0.25
    initial_horizon: float = 2.0
    max_horizon: float = 64.0
    unstable_method: str = "auto"
    symmetric_tol: float = 1e-4
    bit_repro: bool = False
    # rerun Lyapunov spectra at 2·dt to budget the integrator error
    step_doubling: bool = True

    def __post_init__(self):
        if self.curvature_source not in ("pipeline", "closed_form"):
            raise ValueError("curvature_source must be 'pipeline' or 'closed_form'")
        if self.unstable_method not in ("auto", "riccati", "pushforward"):
            raise ValueError("unstable_method must be 'auto', 'riccati' or 'pushforward'")
        if self.clamp_abs < 0:
            raise ValueError("clamp_abs must be nonnegative")
        for name in ("dt", "renorm_interval", "clamp_rel", "kernel_rel", "kernel_curvature_tol", "riccati_tol",
                     "riccati_grid", "initial_horizon", "max_horizon", "symmetric_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.exclusion_cap <= 1:
            raise ValueError("exclusion_cap must lie in [0, 1]")

    def integrator(self, system):
        scheme = self.scheme or ("stormer_verlet" if system.is_separable else "implicit_midpoint")
        return IntegratorConfig(scheme, self.dt)


def curvature_batch(system, zs, config):
    """Reduced curvature operators at the rows of ``zs`` (exceptions for failed points)."""
    zs = np.atleast_2d(as_array(zs))
    if config.curvature_source == "closed_form":
        out = []
        for z in zs:
            try:
                out.append(closed_form_reduced(system, z))
            except JacobiEntropyError as exc:
                out.append(exc)
        return out
    return reduced_curvature_batch(system, zs, config.jacobi)


def _curvature(system, z, config):
    res = curvature_batch(system, as_array(z)[None], config)[0]
    if isinstance(res, Exception):
        raise res
    return res


def _check_nonpositive(matrix, clamp_rel, clamp_abs=0.0):
    w = np.linalg.eigvalsh(0.5 * (matrix + matrix.T))
    tol = clamp_rel * float(np.linalg.norm(matrix, 2)) + clamp_abs
    if w.size and w[-1] > tol:
        raise PositiveCurvatureError(f"reduced curvature has positive eigenvalue {w[-1]:.6g}", float(w[-1]))


def _orbit_curvature(system, z, times, config, cache=None):
    """R̂ at φᵗz for an increasing grid of times containing 0.

    ``cache`` maps rounded times to (point, matrix) and lets callers extend
    the grid without recomputing known samples.
    """
    times = np.asarray(times, dtype=float)
    cache = {} if cache is None else cache
    integ = config.integrator(system)
    pts = {}
    for direction in (1, -1):
        cur, t_cur = as_array(z), 0.0
        todo = times[times > 0] if direction == 1 else times[times < 0][::-1]
        for t in todo:
            key = round(float(t), 9)
            if key in cache:
                cur, t_cur = cache[key][0], float(t)
                continue
            cur = flow(system, cur, t - t_cur, integ, record_every=10**9).final
            t_cur = float(t)
            pts[key] = cur
    if round(0.0, 9) not in cache:
        pts[0.0] = as_array(z)
    keys = sorted(pts)
    if keys:
        for key, op in zip(keys, curvature_batch(system, np.array([pts[k] for k in keys]), config)):
            if isinstance(op, Exception):
                raise op
            _check_nonpositive(op.matrix, config.clamp_rel, config.clamp_abs)
            cache[key] = (pts[key], op.symmetrized)
    return np.array([cache[round(float(t), 9)][1] for t in times])


def unstable_solution(system, z, horizon=None, config=None):
    """Converged V_z: graph operator of the expanding Lagrangian family at ``z``.

    Horizons double from ``horizon`` (default ``config.initial_horizon``) until
    two consecutive results agree within ``riccati_tol``. Two routes:

    * ``riccati`` (reduced dimension 1): integrate V̇ + V² + R̂(φᵗz) = 0 from
      V(-T) = 0, with R̂ interpolated along the orbit.
    * ``pushforward`` (any dimension): push J°(0) at φ^{-T}z forward to z and
      read V = -η ξ⁻¹ from its components (η on E, ξ on ė(0)).
    """
    config = config or EntropyConfig()
    z = as_array(z)
    method = config.unstable_method
    if method == "auto":
        method = "riccati" if system.n == 2 else "pushforward"
    if method == "riccati" and system.n != 2:
        raise ValueError("the scalar Riccati route needs reduced dimension 1; use pushforward")
    solver = _unstable_riccati if method == "riccati" else _unstable_pushforward
    T = horizon or config.initial_horizon
    cache = {}
    prev = solver(system, z, T, config, cache)
    while True:
        T *= 2
        if T > config.max_horizon:
            raise ConvergenceError(f"unstable solution did not converge by horizon {config.max_horizon}")
        cur = solver(system, z, T, config, cache)
        res = float(np.linalg.norm(cur - prev))
        prev = cur
        if res < config.riccati_tol:
            break
    w = np.linalg.eigvalsh(cur)
    rank = int(np.sum(w > config.kernel_rel * max(np.abs(w).max(), 1e-300)))
    return RiccatiState(cur, 0.0, False, res, horizon=T, rank=rank)


def _unstable_riccati(system, z, T, config, cache=None):
    k = max(8, int(math.ceil(T / config.riccati_grid)))
    times = np.linspace(-T, 0.0, k + 1)
    rs = _orbit_curvature(system, z, times, config, cache)[:, 0, 0]
    spline = CubicSpline(times, rs)
    st = riccati_integrate(spline, np.zeros((1, 1)), (-T, 0.0), config.riccati)
    if st.blowup_flag:
        raise RiccatiBlowup(f"Riccati solution blew up at t = {st.blowup_time:.4g}", st.blowup_time)
    return st.V


def _unstable_pushforward(system, z, T, config, cache=None):
    integ = config.integrator(system)
    w = flow(system, z, -T, integ, record_every=10**9).final
    _check_nonpositive(_curvature(system, w, config).matrix, config.clamp_rel, config.clamp_abs)
    _, _, d_w, _ = derivative_frame(system, w, config.jacobi)
    _, _, lift_w = reduced_coordinates(system, w)
    traj = tangent_flow(system, w, lift_w @ d_w, T, integ)
    pushed = traj.final_frame
    # read off at the endpoint as integrated: a recentred chart shows z through a symmetry
    z_end = traj.base_points[-1]
    coords_z, _, _ = reduced_coordinates(system, z_end)
    e, e_dot, _, _ = derivative_frame(system, z_end, config.jacobi)
    comp = np.linalg.solve(np.hstack([e, e_dot]), coords_z @ pushed)
    m = e.shape[1]
    eta, xi = comp[:m], comp[m:]
    v = -eta @ np.linalg.inv(xi)
    return 0.5 * (v + v.T)


# --------------------------------------------------------- trace expressions


class KernelMismatchError(HypothesisViolation):
    """R does not vanish on ker V."""


def _split_kernel(V, R, kernel_rel, kernel_tol):
    V = np.atleast_2d(np.asarray(getattr(V, "V", V), dtype=float))
    R = np.atleast_2d(np.asarray(getattr(R, "symmetrized", R), dtype=float))
    V = 0.5 * (V + V.T)
    R = 0.5 * (R + R.T)
    w, q = np.linalg.eigh(V)
    scale = np.abs(w).max() if w.size else 0.0
    cut = kernel_rel * scale
    if w.size and w[0] < -max(cut, 1e-12):
        raise ValueError(f"V is not nonnegative (eigenvalue {w[0]:.3e})")
    keep = w > cut
    ker = q[:, ~keep]
    if ker.size and np.linalg.norm(R @ ker) > kernel_tol * (1 + np.linalg.norm(R)):
        raise KernelMismatchError(f"R does not vanish on ker V (|R|ker V| = {np.linalg.norm(R @ ker):.3e})")
    qk = q[:, keep]
    return np.diag(w[keep]), qk.T @ R @ qk


def r_prime(V, R, kernel_rel=1e-8, kernel_tol=1e-6):
    """½ Tr[V⁰ - R⁰ (V⁰)⁻¹] on the complement of ker V."""
    v0, r0 = _split_kernel(V, R, kernel_rel, kernel_tol)
    if v0.size == 0:
        return 0.0
    return 0.5 * float(np.trace(v0 - r0 @ np.linalg.inv(v0)))


def r_full(V, R, kernel_rel=1e-8, kernel_tol=1e-6):
    """Tr[(V⁰ - R⁰ V⁰)(I + V⁰²)⁻¹] on the complement of ker V."""
    v0, r0 = _split_kernel(V, R, kernel_rel, kernel_tol)
    if v0.size == 0:
        return 0.0
    eye = np.eye(v0.shape[0])
    return float(np.trace((v0 - r0 @ v0) @ np.linalg.inv(eye + v0 @ v0)))


def sqrt_neg_trace(matrix, clamp_rel=1e-8, clamp_abs=0.0):
    """Tr √(-R) of the symmetrized R, clamping eigenvalues in [-tol, 0) ∪ (0, tol] to 0.

    tol = clamp_rel·‖R‖ + clamp_abs; an eigenvalue above tol raises PositiveCurvatureError.
    """
    m = np.atleast_2d(np.asarray(getattr(matrix, "symmetrized", matrix), dtype=float))
    m = 0.5 * (m + m.T)
    w = np.linalg.eigvalsh(m)
    tol = clamp_rel * float(np.linalg.norm(m, 2)) + clamp_abs
    if w.size and w[-1] > tol:
        raise PositiveCurvatureError(f"reduced curvature has positive eigenvalue {w[-1]:.6g}", float(w[-1]))
    w = np.where(np.abs(w) <= tol, 0.0, w)
    return float(np.sum(np.sqrt(-w)))


def bound_integrand(system, z, config=None):
    config = config or EntropyConfig()
    return sqrt_neg_trace(_curvature(system, z, config), config.clamp_rel, config.clamp_abs)


def trace_inequality(M, N, U, tol=1e-12):
    """(Tr[MU + NU⁻¹], 2 Tr[√M √N], ‖√M U - √N‖) for symmetric M, N ⪰ 0 and U ≻ 0."""
    M, N, U = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (M, N, U))
    for name, a in (("M", M), ("N", N), ("U", U)):
        if a.shape[0] != a.shape[1] or a.shape != M.shape:
            raise ValueError(f"{name} must be square and of matching size")
        if np.abs(a - a.T).max() > tol * max(1.0, np.abs(a).max()):
            raise ValueError(f"{name} is not symmetric")
    wm, wn, wu = (np.linalg.eigvalsh(a) for a in (M, N, U))
    if wm[0] < -tol * max(1.0, wm[-1]) or wn[0] < -tol * max(1.0, wn[-1]):
        raise ValueError("M and N must be positive semidefinite")
    if wu[0] <= 0:
        raise ValueError("U must be positive definite")
    sm, sn = _psd_sqrt(M), _psd_sqrt(N)
    lhs = float(np.trace(M @ U + N @ np.linalg.inv(U)))
    rhs = 2.0 * float(np.trace(sm @ sn))
    return lhs, rhs, float(np.linalg.norm(sm @ U - sn))


def _psd_sqrt(a):
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


# ---------------------------------------------------------- orbit diagnostics


@dataclass(frozen=True)
class OrbitAverages:
    """Time averages along [0, T] of r′, r and Tr√(-R̂), plus max ‖V̇‖."""

    rprime: float
    rfull: float
    bound: float
    max_vdot: float
    T: float


def orbit_averages(system, z, T, config=None, grid=None):
    """Integrate the Riccati equation forward from the converged V_z along the orbit."""
    config = config or EntropyConfig()
    if system.n != 2:
        raise ValueError("orbit averages use the scalar Riccati route (n = 2)")
    v0 = unstable_solution(system, z, config=config).V
    grid = grid or config.riccati_grid
    k = max(8, int(math.ceil(T / grid)))
    times = np.linspace(0.0, T, k + 1)
    rs = _orbit_curvature(system, z, times, config)[:, 0, 0]
    spline = CubicSpline(times, rs)
    sol = solve_ivp(lambda t, y: -(y * y) - spline(t), (0.0, T), v0.ravel(), method=config.riccati.method,
                    rtol=config.riccati.rtol, atol=config.riccati.atol, t_eval=times)
    if sol.status != 0:
        raise NumericalFailure(f"forward Riccati failed: {sol.message}")
    vs = sol.y[0]
    rp = np.array([r_prime([[v]], [[r]], config.kernel_rel, config.kernel_curvature_tol) for v, r in zip(vs, rs)])
    rf = np.array([r_full([[v]], [[r]], config.kernel_rel, config.kernel_curvature_tol) for v, r in zip(vs, rs)])
    bd = np.array([sqrt_neg_trace([[r]], config.clamp_rel, config.clamp_abs) for r in rs])
    vdot = np.abs(-(vs * vs) - rs)
    return OrbitAverages(_trapezoid_mean(times, rp), _trapezoid_mean(times, rf), _trapezoid_mean(times, bd),
                         float(vdot.max()), T)


def _trapezoid_mean(t, y):
    return float(np.trapezoid(y, t) / (t[-1] - t[0]))


# --------------------------------------------------------------- Monte Carlo


def tree_sum(values, arity=2):
    """Sum in a fixed pairwise tree order, independent of how values were produced."""
    vals = [float(v) for v in values]
    if not vals:
        return 0.0
    while len(vals) > 1:
        vals = [_plain_sum(vals[i:i + arity]) for i in range(0, len(vals), arity)]
    return vals[0]


def _plain_sum(chunk):
    total = 0.0
    for v in chunk:
        total += v
    return total


def mean_stderr(values, bit_repro=False):
    vals = np.asarray(values, dtype=float)
    n = vals.size
    if n == 0:
        return float("nan"), float("nan")
    if bit_repro:
        mean = tree_sum(vals) / n
        var = tree_sum((vals - mean) ** 2) / (n - 1) if n > 1 else 0.0
    else:
        mean = float(vals.mean())
        var = float(vals.var(ddof=1)) if n > 1 else 0.0
    return mean, math.sqrt(var / n)


@dataclass(frozen=True)
class SampleOutcome:
    """Per-sample value or the reason it was excluded ('ok', 'hypothesis', 'numerical')."""

    value: float
    status: str = "ok"
    message: str = ""
    error: float = 0.0
    extra: dict = field(default_factory=dict)


def _failure(exc):
    status = "hypothesis" if isinstance(exc, HypothesisViolation) else "numerical"
    return SampleOutcome(float("nan"), status, f"{type(exc).__name__}: {exc}")


def bound_samples(system, points, config):
    """Bound integrand at each point."""
    out = []
    for op in curvature_batch(system, points, config):
        if isinstance(op, Exception):
            out.append(_failure(op))
            continue
        try:
            value = sqrt_neg_trace(op, config.clamp_rel, config.clamp_abs)
            out.append(SampleOutcome(value, error=_op_error(op),
                                     extra={"eigenvalues": op.eigenvalues.tolist(),
                                            "asym_defect": op.asym_defect}))
        except JacobiEntropyError as exc:
            out.append(_failure(exc))
    return out


def _op_error(op):
    err = op.richardson_error
    return 0.0 if not np.isfinite(err) else float(err)


def pesin_samples(system, points, config):
    """χ at each point from the Benettin spectrum (batched; isolates failures)."""
    points = np.atleast_2d(points)
    try:
        specs = lyapunov_batch(system, points, config.T, config.renorm_interval, config.integrator(system),
                               config.transient, step_doubling=config.step_doubling)
    except JacobiEntropyError:
        if len(points) == 1:
            raise
        out = []
        for p in points:
            out.extend(_pesin_single(system, p, config))
        return out
    return [SampleOutcome(s.chi, error=math.hypot(_finite(s.convergence_error), _finite(s.discretization_error)),
                          extra={"exponents": s.exponents.tolist(), "pairing_defect": s.pairing_defect,
                                 "convergence_error": _finite(s.convergence_error),
                                 "discretization_error": _finite(s.discretization_error)})
            for s in specs]


def _pesin_single(system, p, config):
    try:
        return pesin_samples(system, p[None], config)
    except JacobiEntropyError as exc:
        return [_failure(exc)]


def _finite(x):
    return float(x) if np.isfinite(x) else 0.0


def rprime_samples(system, points, config):
    out = []
    for z in np.atleast_2d(points):
        try:
            st = unstable_solution(system, z, config=config)
            op = _curvature(system, z, config)
            vdot = float(np.linalg.norm(st.V @ st.V + op.symmetrized))
            out.append(SampleOutcome(r_prime(st, op, config.kernel_rel, config.kernel_curvature_tol),
                                     extra={"trace_V": st.trace, "vdot": vdot}))
        except JacobiEntropyError as exc:
            out.append(_failure(exc))
    return out


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo mean with its standard error; unpacks as ``(estimate, stderr)``."""

    estimate: float
    stderr: float
    count: int
    excluded: int = 0
    numerical_error: float = 0.0
    values: tuple = field(default=(), repr=False)

    def __iter__(self):
        return iter((self.estimate, self.stderr))


def summarize(outcomes, total, cap, bit_repro=False, label="estimate"):
    """Mean and stderr over successful samples; fail loudly above the exclusion cap."""
    ok = [o for o in outcomes if o.status == "ok"]
    bad = [o for o in outcomes if o.status != "ok"]
    if total and len(bad) > cap * total:
        kinds = {o.status for o in bad}
        msg = f"{label}: {len(bad)} of {total} samples excluded (cap {cap:.0%}); first: {bad[0].message}"
        if "hypothesis" in kinds and sum(o.status == "hypothesis" for o in bad) >= len(bad) / 2:
            raise HypothesisViolation(msg)
        raise NumericalFailure(msg)
    vals = [o.value for o in ok]
    mean, se = mean_stderr(vals, bit_repro)
    num = float(np.mean([o.error for o in ok])) if ok else 0.0
    return Estimate(mean, se, len(ok), len(bad), num, tuple(vals))


def entropy_bound(level_set, sample_count, seed, config=None):
    """Monte Carlo estimate of ∫ Tr √(-R̂) dμ over Liouville samples."""
    config = config or EntropyConfig()
    if sample_count < 1:
        raise ValueError("sample_count must be positive")
    pts = liouville_sample_array(level_set, sample_count, seed)
    return summarize(bound_samples(level_set.system, pts, config), sample_count, config.exclusion_cap,
                     config.bit_repro, "bound")


def entropy_pesin(level_set, sample_count, T, seed, config=None):
    """Monte Carlo estimate of ∫ χ dμ (entropy via the Pesin sum)."""
    config = replace(config or EntropyConfig(), T=T)
    if sample_count < 1:
        raise ValueError("sample_count must be positive")
    pts = liouville_sample_array(level_set, sample_count, seed)
    return summarize(pesin_samples(level_set.system, pts, config), sample_count, config.exclusion_cap,
                     config.bit_repro, "pesin")


@dataclass(frozen=True)
class EntropyReport:
    """Both sides of the inequality with their uncertainties.

    ``combined_stderr`` adds in quadrature the two standard errors and the
    mean per-sample numerical error estimates (Lyapunov finite-time drift,
    Richardson error of the curvature), since the latter are deterministic
    biases that sampling noise does not cover.
    """

    bound: Estimate
    pesin: Estimate
    rprime: Optional[Estimate]
    sample_count: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def equality_gap(self):
        return self.pesin.estimate - self.bound.estimate

    @property
    def statistical_stderr(self):
        return math.hypot(self.bound.stderr, self.pesin.stderr)

    @property
    def combined_stderr(self):
        return math.sqrt(self.bound.stderr**2 + self.pesin.stderr**2 + self.bound.numerical_error**2
                         + self.pesin.numerical_error**2)

    @property
    def gap_sigma(self):
        s = self.combined_stderr
        if s == 0:
            return 0.0 if self.equality_gap == 0 else math.copysign(math.inf, self.equality_gap)
        return self.equality_gap / s

    @property
    def inequality_holds(self):
        """pesin ≥ bound - 3·combined stderr."""
        return self.pesin.estimate >= self.bound.estimate - 3 * self.combined_stderr

    def as_dict(self):
        def est(e):
            if e is None:
                return None
            return {"estimate": e.estimate, "stderr": e.stderr, "count": e.count, "excluded": e.excluded,
                    "numerical_error": e.numerical_error}

        return {
            "bound_estimate": est(self.bound),
            "pesin_estimate": est(self.pesin),
            "pesin_label": "entropy (Pesin sum)",
            "rprime_estimate": est(self.rprime),
            "sample_count": self.sample_count,
            "equality_gap": self.equality_gap,
            "statistical_stderr": self.statistical_stderr,
            "combined_stderr": self.combined_stderr,
            "gap_sigma": self.gap_sigma,
            "inequality_holds": self.inequality_holds,
            "diagnostics": self.diagnostics,
        }


def build_report(sample_count, bound_out, pesin_out, rprime_out, config):
    bound = summarize(bound_out, sample_count, config.exclusion_cap, config.bit_repro, "bound")
    pesin = summarize(pesin_out, sample_count, config.exclusion_cap, config.bit_repro, "pesin")
    rprime = None
    diag = {
        "excluded": {
            "bound": _count_status(bound_out),
            "pesin": _count_status(pesin_out),
        },
        "max_pairing_defect": max((o.extra.get("pairing_defect", 0.0) for o in pesin_out if o.status == "ok"),
                                  default=0.0),
        "ergodicity_note": "∫χ dμ equals the metric entropy for ergodic μ; otherwise it aggregates the ergodic "
                           "components and still dominates the bound",
    }
    if rprime_out is not None:
        rprime = summarize(rprime_out, len(rprime_out), config.exclusion_cap, config.bit_repro, "rprime")
        diag["excluded"]["rprime"] = _count_status(rprime_out)
        vdots = [o.extra["vdot"] for o in rprime_out if o.status == "ok"]
        diag["max_vdot"] = max(vdots, default=float("nan"))
        diag["symmetric_jacobi_curves"] = bool(vdots) and max(vdots) <= config.symmetric_tol
    return EntropyReport(bound, pesin, rprime, sample_count, diag)


def _count_status(outcomes):
    return {k: sum(o.status == k for o in outcomes) for k in ("hypothesis", "numerical")}


def entropy_report(level_set, sample_count, seed, config=None, rprime_count=None):
    """Both estimates on the same Liouville samples; r′ on the first ``rprime_count`` of them."""
    config = config or EntropyConfig()
    if sample_count < 1:
        raise ValueError("sample_count must be positive")
    system = level_set.system
    pts = liouville_sample_array(level_set, sample_count, seed)
    b = bound_samples(system, pts, config)
    p = pesin_samples(system, pts, config)
    r = None
    if rprime_count:
        r = rprime_samples(system, pts[:rprime_count], config)
    return build_report(sample_count, b, p, r, config)
