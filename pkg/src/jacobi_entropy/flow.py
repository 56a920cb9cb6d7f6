"""Symplectic time stepping of the Hamiltonian flow and of its linearization.

The tangent map of a step is the exact differential of the numerical one-step
map, so pushed frames stay symplectic with respect to the discrete flow.
Every function accepts phase points with leading batch axes.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space

from .errors import ChartEscapeError, NewtonConvergenceError
from .systems import PhasePoint, as_array

SCHEMES = ("stormer_verlet", "implicit_midpoint", "explicit_euler")


@dataclass(frozen=True)
class IntegratorConfig:
    """``explicit_euler`` is not symplectic; it exists for fault injection only."""

    scheme: str = "implicit_midpoint"
    dt: float = 1e-3
    newton_tol: float = 1e-13
    newton_max_iter: int = 50

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not (self.newton_tol > 0 and self.newton_max_iter > 0):
            raise ValueError("Newton tolerances must be positive")


def default_config(system, dt=1e-3):
    scheme = "stormer_verlet" if system.is_separable else "implicit_midpoint"
    return IntegratorConfig(scheme, dt)


def _check_scheme(system, config):
    if config.scheme == "stormer_verlet" and not system.is_separable:
        raise ValueError("stormer_verlet needs a separable (mechanical) Hamiltonian; use implicit_midpoint")


def _verlet(system, z, dt, frames=None):
    n = system.n
    pot = system.potential
    p, q = z[..., :n], z[..., n:]
    p_half = p - 0.5 * dt * pot.grad(q)
    q_new = q + dt * p_half
    p_new = p_half - 0.5 * dt * pot.grad(q_new)
    z_new = np.concatenate([p_new, q_new], axis=-1)
    if frames is None:
        return z_new, None
    dp, dq = frames[..., :n, :], frames[..., n:, :]
    dp_half = dp - 0.5 * dt * pot.hess(q) @ dq
    dq_new = dq + dt * dp_half
    dp_new = dp_half - 0.5 * dt * pot.hess(q_new) @ dq_new
    return z_new, np.concatenate([dp_new, dq_new], axis=-2)


def _midpoint(system, z, dt, frames, config):
    """Solve m = z + dt/2·X(m), then z' = 2m - z.

    Fixed-point iteration first (contraction ~ dt·|DX|, cheap: no Hessians);
    Newton with the analytic Jacobian if it stalls.
    """
    dim = z.shape[-1]
    eye = np.eye(dim)
    half = 0.5 * dt
    # componentwise relative tolerance (charts may mix coordinates of very
    # different size), floored at the roundoff level of the whole point
    scale = np.abs(z).max(axis=-1, keepdims=True)
    tol = config.newton_tol * np.abs(z) + 4 * np.finfo(float).eps * scale + 1e-300
    m = z + half * system.vf(z)
    converged = False
    for _ in range(8):
        m_new = z + half * system.vf(m)
        delta = np.abs(m_new - m)
        m = m_new
        if np.all(delta <= tol):
            converged = True
            break
        if not np.all(np.isfinite(delta)):
            break
    if not converged:
        m = z + half * system.vf(z)
        for _ in range(config.newton_max_iter):
            resid = m - z - half * system.vf(m)
            jac = eye - half * system.vf_jacobian(m)
            delta = np.linalg.solve(jac, resid[..., None])[..., 0]
            m = m - delta
            err = np.abs(delta).max()
            if not np.isfinite(err):
                raise NewtonConvergenceError("implicit midpoint Newton diverged")
            if np.all(np.abs(delta) <= tol):
                break
        else:
            raise NewtonConvergenceError(f"implicit midpoint Newton did not converge (last update {err:.3e})")
    z_new = 2 * m - z
    if frames is None:
        return z_new, None
    a = half * system.vf_jacobian(m)
    return z_new, np.linalg.solve(eye - a, (eye + a) @ frames)


def _euler(system, z, dt, frames):
    z_new = z + dt * system.vf(z)
    if frames is None:
        return z_new, None
    return z_new, frames + dt * system.vf_jacobian(z) @ frames


def _advance(system, z, dt, config, frames=None):
    if config.scheme == "stormer_verlet":
        z_new, f_new = _verlet(system, z, dt, frames)
    elif config.scheme == "implicit_midpoint":
        z_new, f_new = _midpoint(system, z, dt, frames, config)
    else:
        z_new, f_new = _euler(system, z, dt, frames)
    if not np.all(system.in_domain(z_new)):
        raise ChartEscapeError("trajectory left the chart domain")
    z_new = system.wrap(z_new)
    if system.recenter is not None:
        z_new, d = system.recenter(z_new)
        if f_new is not None:
            f_new = d @ f_new
    return z_new, f_new


def step(system, z, config, dt=None):
    """One step of size ``dt`` (default ``config.dt``; negative steps run backward)."""
    _check_scheme(system, config)
    arr = as_array(z)
    system.check_noncritical(arr)
    out, _ = _advance(system, arr, config.dt if dt is None else dt, config)
    return PhasePoint.from_array(out) if isinstance(z, PhasePoint) else out


def step_with_tangent(system, z, frames, config, dt=None):
    _check_scheme(system, config)
    return _advance(system, as_array(z), config.dt if dt is None else dt, config, np.asarray(frames, dtype=float))


def _schedule(T, dt):
    """Steps of size ≤ dt (signed) covering [0, T] exactly."""
    if T == 0:
        return 0, 0.0
    k = int(np.ceil(abs(T) / dt - 1e-9))
    return k, T / k


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    points: np.ndarray
    energy_drift: float

    @property
    def final(self):
        return self.points[-1]


@dataclass(frozen=True)
class TangentTrajectory:
    times: np.ndarray
    base_points: np.ndarray
    frames: np.ndarray
    energy_drift: float = 0.0

    @property
    def final_frame(self):
        return self.frames[-1]


def flow(system, z, T, config, record_every=1):
    """Integrate from ``z`` for time ``T``; records every ``record_every`` steps."""
    _check_scheme(system, config)
    arr = as_array(z)
    system.check_noncritical(arr)
    k, h = _schedule(T, config.dt)
    e0 = system.eval_h(arr)
    times, points = [0.0], [arr]
    drift = 0.0
    for i in range(1, k + 1):
        arr, _ = _advance(system, arr, h, config)
        drift = max(drift, float(np.max(np.abs(system.eval_h(arr) - e0))))
        if i % record_every == 0 or i == k:
            times.append(i * h)
            points.append(arr)
    return Trajectory(np.array(times), np.array(points), drift)


def tangent_flow(system, z, frame, T, config, record_every=None):
    """Push ``frame`` (columns in T_zM) along the discrete flow for time ``T``.

    Only the endpoints are recorded unless ``record_every`` is given.
    """
    _check_scheme(system, config)
    arr = as_array(z)
    system.check_noncritical(arr)
    frames = np.asarray(frame, dtype=float)
    k, h = _schedule(T, config.dt)
    e0 = system.eval_h(arr)
    every = record_every or max(k, 1)
    times, points, stack = [0.0], [arr], [frames]
    drift = 0.0
    for i in range(1, k + 1):
        arr, frames = _advance(system, arr, h, config, frames)
        drift = max(drift, float(np.max(np.abs(system.eval_h(arr) - e0))))
        if i % every == 0 or i == k:
            times.append(i * h)
            points.append(arr)
            stack.append(frames)
    return TangentTrajectory(np.array(times), np.array(points), np.array(stack), drift)


def fundamental_matrix(system, z, T, config):
    """Differential of the discrete time-T map at ``z`` (batched)."""
    arr = as_array(z)
    eye = np.broadcast_to(np.eye(arr.shape[-1]), arr.shape + (arr.shape[-1],)).copy()
    traj = tangent_flow(system, arr, eye, T, config)
    return traj.base_points[-1], traj.frames[-1]


# ----------------------------------------------------------------- reduction


@dataclass(frozen=True)
class ReducedFrame:
    """Vectors of ker(d_z h) modulo the flow direction.

    ``columns`` are the projected input vectors. ``basis`` is an orthonormal
    basis of the complement C_z used to represent the quotient: the
    σ-orthogonal complement of span{X_h, Y} inside ker(d_z h), where Y is the
    metric-normalized gradient direction with d_z h(Y) = 1.
    """

    columns: np.ndarray
    basis: np.ndarray
    base: PhasePoint

    def coordinates(self):
        return self.basis.T @ self.columns


def transversal_direction(system, z):
    """Y = G⁻¹∇h / (∇hᵀG⁻¹∇h) with G = LᵀL the tangent-norm metric; d_z h(Y) = 1."""
    z = as_array(z)
    g = system.check_noncritical(z)
    L = system.norm_matrix(z)
    y = np.linalg.solve(np.swapaxes(L, -1, -2) @ L, g[..., None])[..., 0]
    return y / np.einsum("...i,...i->...", g, y)[..., None]


def reduction_projector(system, z):
    """P v = v + σ(v, Y) X_h - d_z h(v) Y.

    P kills X_h, maps onto C_z and fixes C_z pointwise.
    """
    z = as_array(z)
    g = system.check_noncritical(z)
    x = system.vf(z)
    y = transversal_direction(system, z)
    form = system.space.form
    sy = form @ y[..., None]  # σ(v, Y) = v · (form Y)
    dim = z.shape[-1]
    eye = np.eye(dim)
    return eye + x[..., :, None] * np.swapaxes(sy, -1, -2) - y[..., :, None] * g[..., None, :]


def reduced_coordinates(system, z):
    """(T, form): T maps T_zM to coordinates on Σ_z, form is σ in those coordinates.

    T = Bᵀ L P, with P the reduction projector, L the tangent-norm matrix and
    B an orthonormal basis of L·C_z. Coordinates are then isometric for the
    system norm, which keeps the linear algebra well scaled on any chart.
    ``T⁺ = L⁻¹ B`` lifts coordinates back to vectors of C_z.
    """
    z = as_array(z)
    L = system.norm_matrix(z)
    b = null_space_basis(L @ reduced_basis(system, z))
    linv = np.linalg.inv(L)
    form = b.T @ linv.T @ system.space.form @ linv @ b
    return b.T @ L @ reduction_projector(system, z), form, linv @ b


def null_space_basis(frame):
    q, _ = np.linalg.qr(frame)
    return q


def reduced_basis(system, z):
    """Orthonormal basis of C_z (2n × (2n-2)) for a single point."""
    z = as_array(z)
    g = system.check_noncritical(z)
    y = transversal_direction(system, z)
    sy = system.space.form @ y
    return null_space(np.vstack([g, sy]))


def reduce(system, z, vectors):
    z_arr = as_array(z)
    vecs = np.asarray(vectors, dtype=float)
    if vecs.ndim == 1:
        vecs = vecs[:, None]
    proj = reduction_projector(system, z_arr)
    return ReducedFrame(proj @ vecs, reduced_basis(system, z_arr), PhasePoint.from_array(z_arr))
