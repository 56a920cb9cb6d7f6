"""Jacobi curves, derivative curves and the curvature of a Hamiltonian field.

The Jacobi curve at ``z`` with respect to a Lagrangian distribution Λ (by
default the vertical one, span of the momentum directions) is
``J(t) = (Dφᵗ)⁻¹ Λ_{φᵗz}``. Its derivative curve ``J°(t)`` is read off the
free term of the Laurent expansion of the projector onto ``J(t)`` along
``J(t + s)``. In a Darboux splitting where both are graphs ``{(x, S x)}``,
``{(x, S° x)}`` the curvature is

    R = (S° - S)⁻¹ Ṡ° (S° - S)⁻¹ Ṡ.

The reduced variant runs the same pipeline on ker(dh)/span{X_h}.
"""

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .errors import (
    ConvergenceError,
    DegenerateIntersectionError,
    LaurentFitError,
    NotMonotoneError,
    SingularFormulaError,
    TransversalityError,
)
from .flow import (
    IntegratorConfig,
    fundamental_matrix,
    reduced_coordinates,
    tangent_flow,
)
from .symplin import (
    darboux_complete,
    darboux_dual,
    gram_gh,
    graph_coordinate,
    orthonormalize,
    projector_matrix,
    signature,
    sym_sqrt,
)
from .systems import as_array

# 5-point central difference weights for the first derivative
_D1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0


@dataclass(frozen=True)
class JacobiConfig:
    """Stencil and tolerance settings for the curvature pipeline.

    ``h`` is the initial stencil spacing; the integrator takes
    ``steps_per_h`` steps per spacing. With ``auto_tune`` the spacing is halved
    until two consecutive results agree to ``richardson_tol·(1 + |R|)`` or
    ``h`` drops below ``floor_factor`` times the characteristic time. A final
    Richardson estimate above ``curvature_tol·(1 + |R|)`` is a failure.
    """

    h: float = 0.02
    steps_per_h: int = 40
    auto_tune: bool = True
    richardson_tol: float = 1e-6
    max_halvings: int = 12
    floor_factor: float = 1e-5
    fit_tol: float = 1e-4
    projector_tol: float = 1e-5
    curvature_tol: float = 1e-4
    intersection_tol: float = 1e-8
    scheme: Optional[str] = None
    newton_tol: float = 1e-14

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("stencil spacing h must be positive")
        if self.steps_per_h < 2 or self.steps_per_h % 2:
            raise ValueError("steps_per_h must be an even integer >= 2")
        for name in ("richardson_tol", "floor_factor", "fit_tol", "projector_tol", "curvature_tol",
                     "intersection_tol", "newton_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def integrator(self, system, h=None):
        scheme = self.scheme or ("stormer_verlet" if system.is_separable else "implicit_midpoint")
        return IntegratorConfig(scheme, (h or self.h) / self.steps_per_h, newton_tol=self.newton_tol)


@dataclass(frozen=True)
class JacobiCurveData:
    """Graph coordinates of J and J° at the stencil centers ``times``.

    ``S`` and ``S_circ`` hold one matrix per center; the derivative fields
    are evaluated at the middle center.
    """

    times: np.ndarray
    S: np.ndarray
    S_deriv: np.ndarray
    S_circ: np.ndarray
    S_circ_deriv: np.ndarray
    reduced: bool = False
    h: float = float("nan")
    fit_residual: float = 0.0

    @property
    def center(self):
        return len(self.times) // 2

    def at_center(self):
        c = self.center
        return self.S[c], self.S_deriv, self.S_circ[c], self.S_circ_deriv


@dataclass(frozen=True)
class CurvatureOperator:
    matrix: np.ndarray
    kind: str = "full"
    h: float = float("nan")
    richardson_error: float = float("nan")
    data: Optional[JacobiCurveData] = field(default=None, repr=False, compare=False)

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def symmetrized(self):
        return 0.5 * (self.matrix + self.matrix.T)

    @property
    def asym_defect(self):
        return float(np.linalg.norm(0.5 * (self.matrix - self.matrix.T)))

    @property
    def relative_asym_defect(self):
        return self.asym_defect / max(float(np.linalg.norm(self.matrix)), 1e-300)

    @cached_property
    def eigen(self):
        """(eigenvalues ascending, eigenvectors) of the symmetrized matrix."""
        return np.linalg.eigh(self.symmetrized)

    @property
    def eigenvalues(self):
        return self.eigen[0]


def curvature(S, S_dot, S_circ, S_circ_dot, kind="full"):
    """(S° - S)⁻¹ Ṡ° (S° - S)⁻¹ Ṡ, evaluated as written."""
    diff = np.asarray(S_circ, dtype=float) - np.asarray(S, dtype=float)
    if np.linalg.cond(diff) > 1e12:
        raise np.linalg.LinAlgError("S° - S is singular")
    left = np.linalg.solve(diff, S_circ_dot)
    return CurvatureOperator(left @ np.linalg.solve(diff, S_dot), kind)


# -------------------------------------------------- curve-level machinery


def laurent_fit(stencil, values):
    """Fit A₋₁/s + A₀ + A₁s + A₂s² to ``values[i]`` at ``stencil[i]`` (least squares)."""
    s = np.asarray(stencil, dtype=float)
    vals = np.asarray(values, dtype=float)
    design = np.stack([1 / s, np.ones_like(s), s, s**2], axis=1)
    coef, *_ = np.linalg.lstsq(design, vals.reshape(len(s), -1), rcond=None)
    return coef.reshape((4,) + vals.shape[1:])


def laurent_eval(coef, s):
    return coef[0] / s + coef[1] + coef[2] * s + coef[3] * s**2


def derivative_element(onto, neighbours, h, check=None, config=None):
    """Frame of the derivative element of a curve at the point ``onto``.

    ``neighbours`` maps offsets ``±h, ±2h`` (and optionally ``±h/2`` for the
    residual check) to frames of the curve. Returns (frame, fit residual).
    """
    config = config or JacobiConfig()
    stencil = (-2 * h, -h, h, 2 * h)
    pis = [projector_matrix(onto, neighbours[s]) for s in stencil]
    coef = laurent_fit(stencil, pis)
    residual = 0.0
    if check:
        for s in check:
            pi = projector_matrix(onto, neighbours[s])
            residual = max(residual, np.linalg.norm(laurent_eval(coef, s) - pi) / np.linalg.norm(pi))
        if residual > config.fit_tol:
            raise LaurentFitError(f"Laurent fit residual {residual:.3e} exceeds {config.fit_tol:.1e}; "
                                  "the curve is not regular at this stencil scale")
    a0 = coef[1]
    defect = np.linalg.norm(a0 @ a0 - a0) / max(np.linalg.norm(a0), 1.0)
    if defect > config.projector_tol:
        raise LaurentFitError(f"free Laurent term is not a projector (defect {defect:.3e})")
    m = onto.shape[1]
    _, sv, vt = np.linalg.svd(a0)
    return vt[m:].T, residual


@dataclass(frozen=True)
class SampledCurve:
    """A curve of Lagrangian frames at times ``center + k·h/2``, |k| ≤ ``reach``."""

    frames: dict
    omega: np.ndarray
    h: float
    center: float = 0.0
    reduced: bool = False

    def at(self, k):
        return self.frames[k]


def sample_curve(frame_at: Callable, omega, h, center=0.0, reach=8, reduced=False):
    """Sample an explicit curve ``frame_at(t)``; mainly for analytic test curves."""
    frames = {k: np.asarray(frame_at(center + k * h / 2), dtype=float) for k in range(-reach, reach + 1)}
    return SampledCurve(frames, np.asarray(omega, dtype=float), h, center, reduced)


def curve_data(curve: SampledCurve, basis=None, config=None, centers=2):
    """Graph coordinates of J, J° at centers ``center + k·h`` for |k| ≤ ``centers``.

    The reference Darboux splitting is (E, F°+E), with E = ``basis`` spanning
    J(center) and F° dual to the derivative element there, so that S = 0 and
    S° = -I at the middle center.
    """
    config = config or JacobiConfig()
    h = curve.h
    derived = {}
    residual = 0.0
    for k in range(-centers, centers + 1):
        idx = 2 * k
        onto = curve.at(idx)
        neigh = {s * h / 2: curve.at(idx + s) for s in (-4, -2, 2, 4)}
        check = None
        if k == 0:
            neigh.update({-h / 2: curve.at(-1), h / 2: curve.at(1)})
            check = (-h / 2, h / 2)
        derived[k], res = derivative_element(onto, neigh, h, check, config)
        residual = max(residual, res)
    e = curve.at(0) if basis is None else np.asarray(basis, dtype=float)
    f = darboux_dual(e, derived[0], curve.omega) + e
    ks = range(-centers, centers + 1)
    S = np.array([graph_coordinate(curve.at(2 * k), e, f) for k in ks])
    Sc = np.array([graph_coordinate(derived[k], e, f) for k in ks])
    mid = centers
    S_dot = np.tensordot(_D1, S[mid - 2:mid + 3], axes=1) / h
    Sc_dot = np.tensordot(_D1, Sc[mid - 2:mid + 3], axes=1) / h
    times = curve.center + h * np.arange(-centers, centers + 1)
    return JacobiCurveData(times, S, S_dot, Sc, Sc_dot, curve.reduced, h, residual)


def derivative_curve(data: JacobiCurveData):
    """(S°, Ṡ°) at the middle center."""
    return data.S_circ[data.center], data.S_circ_deriv


def curve_curvature(curve: SampledCurve, basis=None, config=None):
    data = curve_data(curve, basis, config)
    S, S_dot, Sc, Sc_dot = data.at_center()
    op = curvature(S, S_dot, Sc, Sc_dot, "reduced" if curve.reduced else "full")
    return replace(op, h=curve.h, data=data)


def moving_frame_defect(curve: SampledCurve, basis=None, config=None):
    """‖ë + e R‖ at the center for the canonical moving frame.

    The frame is e(t) = E X(t) + F S(t) X(t) with X(center) = I and
    Ẋ = (S° - S)⁻¹ Ṡ X, which keeps ė(t) inside J°(t). X is integrated with
    RK4 on the stencil grid, and ë uses a 5-point second difference.
    Needs a curve sampled with ``reach >= 16``.
    """
    config = config or JacobiConfig()
    h = curve.h
    data = curve_data(curve, basis, config, centers=6)
    # derivative of S at each center from 5-point differences
    S, Sc = data.S, data.S_circ
    idx = range(2, len(S) - 2)
    S_dot = {i: np.tensordot(_D1, S[i - 2:i + 3], axes=1) / h for i in idx}

    def gen(i):
        return np.linalg.solve(Sc[i] - S[i], S_dot[i])

    mid = len(S) // 2
    m = S.shape[1]
    X = {mid: np.eye(m)}
    for direction in (1, -1):
        x = np.eye(m)
        for j in range(2):
            i0 = mid + direction * 2 * j
            a = gen(i0)
            b = gen(i0 + direction)
            c = gen(i0 + 2 * direction)
            dt = 2 * h * direction
            k1 = a @ x
            k2 = b @ (x + dt / 2 * k1)
            k3 = b @ (x + dt / 2 * k2)
            k4 = c @ (x + dt * k3)
            x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            X[i0 + 2 * direction] = x
    e_ref = curve.at(0) if basis is None else np.asarray(basis, dtype=float)
    # F' from the middle derivative element, reconstructed from S° = -I
    f_ref = _reference_dual(curve, e_ref, config)
    frames = {i: e_ref @ X[i] + f_ref @ (S[i] @ X[i]) for i in X}
    H = 2 * h
    e_ddot = (-frames[mid - 4] + 16 * frames[mid - 2] - 30 * frames[mid] + 16 * frames[mid + 2]
              - frames[mid + 4]) / (12 * H * H)
    S0, Sd, Sc0, Scd = S[mid], S_dot[mid], Sc[mid], np.tensordot(_D1, Sc[mid - 2:mid + 3], axes=1) / h
    R = curvature(S0, Sd, Sc0, Scd).matrix
    defect = np.linalg.norm(e_ddot + frames[mid] @ R)
    return float(defect), R


def _reference_dual(curve, e, config):
    h = curve.h
    neigh = {s * h / 2: curve.at(s) for s in (-4, -2, 2, 4)}
    d, _ = derivative_element(curve.at(0), neigh, h, None, config)
    return darboux_dual(e, d, curve.omega) + e


# ---------------------------------------------------- system-level curves


def vertical_frame(n):
    return np.vstack([np.eye(n), np.zeros((n, n))])


def characteristic_time(system, z):
    norm = np.linalg.norm(system.vf_jacobian(as_array(z)), 2)
    return 1.0 / np.sqrt(max(norm, 1e-12))


def _propagators(system, z, center, h, reach, config):
    """Tangent maps D φ^t at z for t = center + k h/2, |k| ≤ reach. Batched over z."""
    integ = config.integrator(system, h)
    z = as_array(z)
    dim = z.shape[-1]
    eye = np.broadcast_to(np.eye(dim), z.shape + (dim,)).copy()
    if center != 0:
        zc, mc = fundamental_matrix(system, z, center, replace(integ, dt=min(integ.dt, 1e-3)))
    else:
        zc, mc = z, eye
    every = config.steps_per_h // 2
    out = {0: mc}
    points = {0: zc}
    for sign in (1, -1):
        traj = tangent_flow(system, zc, eye, sign * reach * h / 2, integ, record_every=every)
        for k in range(1, reach + 1):
            out[sign * k] = traj.frames[k] @ mc
            points[sign * k] = traj.base_points[k]
    return out, points, zc, mc


def _gram_basis(gram, what):
    sig = signature(gram)
    if sig[2]:
        raise NotMonotoneError(f"g_z^h is degenerate on {what} (signature {sig})", sig)
    if sig[0] and sig[1]:
        raise NotMonotoneError(f"g_z^h is not sign-definite on {what} (signature {sig})", sig)
    sign = 1.0 if sig[0] else -1.0
    return sym_sqrt(sign * gram, inverse=True), sign


def monotonicity_check(system, z, lambda_frame=None):
    """Raise NotMonotoneError unless g_z^h is sign-definite on Λ; returns the GramForm."""
    frame = vertical_frame(system.n) if lambda_frame is None else lambda_frame
    g = gram_gh(system, z, frame)
    _gram_basis(g.matrix, "Λ")
    return g


def _ambient_basis(system, zc, lam, reduced):
    """g-orthonormal basis of Λ (or Λ ∩ ker dh) at ``zc``."""
    if reduced:
        k = _null(system.grad_h(zc) @ lam)
        frame = lam @ k
        what = "Λ ∩ ker dh"
    else:
        frame = lam
        what = "Λ"
    g = gram_gh(system, zc, frame).matrix
    w, _ = _gram_basis(g, what)
    return frame @ w


def _null(row, tol=1e-12):
    row = np.atleast_2d(row)
    _, s, vt = np.linalg.svd(row)
    rank = int(np.sum(s > tol * max(s.max(initial=0.0), 1e-300)))
    return vt[rank:].T


def _system_curves(system, zs, h, config, reduced, center, reach, lam):
    """Sampled curves for a batch of base points; failed points carry their exception."""
    zs = np.atleast_2d(as_array(zs))
    mats, _, zcs, mcs = _propagators(system, zs, center, h, reach, config)
    out = []
    for i, z in enumerate(zs):
        try:
            out.append(_point_curve(system, z, {k: m[i] for k, m in mats.items()}, zcs[i], mcs[i],
                                    h, config, reduced, center, lam))
        except (NotMonotoneError, DegenerateIntersectionError, np.linalg.LinAlgError) as exc:
            out.append(exc)
    return out


def _point_curve(system, z, mats, zc, mc, h, config, reduced, center, lam):
    """Curve frames in coordinates normalized by the tangent norm at ``z``."""
    monotonicity_check(system, z, lam)
    e_amb = _ambient_basis(system, zc, lam, reduced)
    if center != 0:
        monotonicity_check(system, zc, lam)
        e_amb = np.linalg.solve(mc, e_amb)
    L = system.norm_matrix(z)
    if not reduced:
        linv = np.linalg.inv(L)
        omega = linv.T @ system.space.form @ linv
        frames = {k: L @ np.linalg.solve(m, lam) for k, m in mats.items()}
        return SampledCurve(frames, omega, h, center, False), L @ e_amb
    coords, omega, _ = reduced_coordinates(system, z)
    grad = system.grad_h(z)
    grad_norm = np.linalg.norm(np.linalg.solve(L.T, grad))
    frames = {}
    for k, m in mats.items():
        y = np.linalg.solve(m, lam)
        row = grad @ y
        if np.linalg.norm(row) <= config.intersection_tol * grad_norm * np.linalg.norm(L @ y, 2):
            raise DegenerateIntersectionError(
                f"J(t) ⊂ ker dh at t = {center + k * h / 2:.4g}: the intersection does not drop dimension by one")
        frames[k] = coords @ (y @ _null(row))
    return SampledCurve(frames, omega, h, center, True), coords @ e_amb


def jacobi_curve(system, z, config=None, reduced=False, center=0.0, h=None, reach=8, lambda_frame=None):
    """Sampled Jacobi curve of ``system`` at ``z`` plus the g-orthonormal basis E of J(center)."""
    config = config or JacobiConfig()
    lam = vertical_frame(system.n) if lambda_frame is None else np.asarray(lambda_frame, dtype=float)
    res = _system_curves(system, as_array(z)[None], h or config.h, config, reduced, center, reach, lam)[0]
    if isinstance(res, Exception):
        raise res
    return res


def jacobi_coord(system, z, t, lambda_frame=None, config=None):
    """S_t: J(t) as a graph over the Darboux splitting (Λ_z, complement)."""
    config = config or JacobiConfig()
    z = as_array(z)
    lam = orthonormalize(vertical_frame(system.n) if lambda_frame is None else lambda_frame)
    if t == 0:
        return np.zeros((system.n, system.n))
    integ = config.integrator(system)
    _, m = fundamental_matrix(system, z, t, integ)
    basis = darboux_complete(system.space, lam)
    n = system.n
    s = graph_coordinate(np.linalg.solve(m, lam), basis[:, :n], basis[:, n:])
    return 0.5 * (s + s.T)


def _curvatures(system, zs, config, reduced, center, lambda_frame, h):
    lam = vertical_frame(system.n) if lambda_frame is None else np.asarray(lambda_frame, dtype=float)
    out = []
    for res in _system_curves(system, zs, h, config, reduced, center, 8, lam):
        if not isinstance(res, Exception):
            try:
                res = curve_curvature(res[0], res[1], config)
            except (LaurentFitError, np.linalg.LinAlgError, TransversalityError) as exc:
                res = exc
        out.append(res)
    return out


def _run_batch(system, zs, config, reduced, center=0.0, lambda_frame=None):
    """Pipeline with Richardson control, batched over base points.

    The truncation error is O(h⁴), so |R(h) - R(h/2)|/15 estimates the error
    of R(h/2) and (16 R(h/2) - R(h))/15 removes the leading term. Halving
    stops once the estimate is below ``richardson_tol·(1 + |R|)``, or when it
    starts growing again after having converged (roundoff regime). A point whose Laurent fit fails at
    the starting spacing (fast dynamics) restarts at half the spacing. Each
    point keeps its own spacing, so results do not depend on the batch.
    Entries of the returned list are CurvatureOperator or the exception
    raised for that point.
    """
    zs = np.atleast_2d(as_array(zs))
    kind = "reduced" if reduced else "full"
    floor = np.array([config.floor_factor * characteristic_time(system, z) for z in zs])
    h = np.full(len(zs), float(config.h))

    def run(idx):
        # group by spacing so equal-h points still share one batched integration
        res = {}
        for hv in sorted({h[i] for i in idx}, reverse=True):
            grp = [i for i in idx if h[i] == hv]
            res.update(zip(grp, _curvatures(system, zs[grp], config, reduced, center, lambda_frame, hv)))
        return res

    first = run(list(range(len(zs))))
    prev = [first[i] for i in range(len(zs))]
    if config.auto_tune:
        for _ in range(config.max_halvings):
            retry = [i for i, r in enumerate(prev) if isinstance(r, LaurentFitError) and h[i] / 2 >= floor[i]]
            if not retry:
                break
            h[retry] /= 2
            for i, r in run(retry).items():
                prev[i] = r
    best = list(prev)
    err = [float("inf")] * len(zs)
    # set once a halving shrinks the estimate at least 4x (the O(h⁴) regime is reached);
    # before that, growth of the estimate means the stencil is still too coarse
    converging = [False] * len(zs)
    active = [not isinstance(r, Exception) for r in prev] if config.auto_tune else [False] * len(zs)
    for _ in range(config.max_halvings):
        idx = [i for i, a in enumerate(active) if a and h[i] / 2 >= floor[i]]
        if not idx:
            break
        h[idx] /= 2
        for i, c in run(idx).items():
            if isinstance(c, Exception):
                active[i] = False
                continue
            est = float(np.linalg.norm(c.matrix - prev[i].matrix)) / 15
            if est > err[i] and converging[i]:
                # roundoff now dominates; keep the previous extrapolation
                active[i] = False
                continue
            converging[i] = converging[i] or (np.isfinite(err[i]) and 4 * est <= err[i])
            err[i] = est
            best[i] = replace(c, matrix=(16 * c.matrix - prev[i].matrix) / 15)
            prev[i] = c
            if est < config.richardson_tol * (1 + np.linalg.norm(c.matrix)):
                active[i] = False
    for i, (b, e) in enumerate(zip(best, err)):
        if isinstance(b, Exception) or not np.isfinite(e):
            continue
        if e > config.curvature_tol * (1 + np.linalg.norm(b.matrix)):
            best[i] = ConvergenceError(f"curvature did not converge under stencil refinement "
                                       f"(Richardson error {e:.3e}, |R| = {np.linalg.norm(b.matrix):.3g})")
    return [b if isinstance(b, Exception) else replace(b, kind=kind, richardson_error=e)
            for b, e in zip(best, err)]


def _single(results):
    res = results[0]
    if isinstance(res, Exception):
        raise res
    return res


def full_curvature(system, z, config=None, center=0.0, lambda_frame=None):
    """R_z^h on J(center) ≅ Λ in the g-orthonormal basis."""
    return _single(_run_batch(system, as_array(z)[None], config or JacobiConfig(), False, center, lambda_frame))


def reduced_curvature(system, z, config=None, center=0.0, lambda_frame=None):
    """R̂_z^h on the reduced Jacobi curve, (n-1)×(n-1), in the g-orthonormal basis."""
    if system.n < 2:
        raise ValueError("the reduced curve is empty for n = 1")
    return _single(_run_batch(system, as_array(z)[None], config or JacobiConfig(), True, center, lambda_frame))


def reduced_curvature_batch(system, zs, config=None, center=0.0):
    """Reduced curvature at each row of ``zs``; failed points carry their exception."""
    if system.n < 2:
        raise ValueError("the reduced curve is empty for n = 1")
    return _run_batch(system, zs, config or JacobiConfig(), True, center)


def derivative_frame(system, z, config=None, reduced=True):
    """(E, ė(0), J°(0) frame, form) at ``z``: the canonical frame data at t = 0.

    E is the g-orthonormal basis of J(0) and ė(0) = F° Ṡ(0) = -sign(g)·F°,
    F° the Darboux dual of J°(0) against E.
    """
    config = config or JacobiConfig()
    curve, e = jacobi_curve(system, z, config, reduced, 0.0, config.h, 4)
    h = curve.h
    d, _ = derivative_element(curve.at(0), {s * h / 2: curve.at(s) for s in (-4, -2, 2, 4)}, h, None, config)
    f_circ = darboux_dual(e, d, curve.omega)
    lam = vertical_frame(system.n)
    frame = lam @ _null(system.grad_h(as_array(z)) @ lam) if reduced else lam
    sign = np.sign(np.linalg.eigvalsh(gram_gh(system, z, frame).matrix)[0])
    return e, -sign * f_circ, d, curve.omega


# -------------------------------------------------------- closed forms


def reduced_direction_basis(system, z):
    """Columns e_i in position space with g(e_i, e_j) = δ_ij and ⟨p, e_i⟩ = 0.

    These are the directions the numerical reduced curvature is expressed in.
    """
    z = as_array(z)
    n = system.n
    lam = vertical_frame(n)
    e = _ambient_basis(system, z, lam, True)[:n]
    # vertical covectors δp -> velocity-like vectors ∂²h/∂p² δp
    hpp = system.hess_h(z)[:n, :n]
    return hpp @ e


def mechanical_closed_form(system, z):
    """(Hess U, Hess U + 3/|p|² ∇U ∇Uᵀ) for h = ½|p|² + U."""
    if system.family_tag != "mechanical":
        raise ValueError("mechanical_closed_form needs a mechanical system")
    z = as_array(z)
    n = system.n
    p, q = z[:n], z[n:]
    pp = float(p @ p)
    if pp == 0:
        raise SingularFormulaError("p = 0: the reduced formula divides by |p|²")
    hu = system.potential.hess(q)
    gu = system.potential.grad(q)
    return hu, hu + 3.0 / pp * np.outer(gu, gu)


def restrict(matrix, directions):
    """Dᵀ M D for orthonormal direction columns D."""
    return directions.T @ matrix @ directions


def mechanical_reduced_closed_form(system, z):
    """The printed representative restricted to the reduced directions."""
    _, rep = mechanical_closed_form(system, z)
    return CurvatureOperator(restrict(rep, reduced_direction_basis(system, z)), "reduced")


def geodesic_closed_form(metric, z):
    """[K(q)·pᵀg⁻¹p]: Gauss curvature times twice the energy."""
    z = as_array(z)
    p, q = z[:2], z[2:]
    k = float(metric.gaussian_curvature(q))
    speed2 = float(p @ metric.inverse(q) @ p)
    return CurvatureOperator(np.array([[k * speed2]]), "reduced")


def mechanical_on_metric_closed_form(metric, potential, z):
    """K|p|²_g + (∇²U)(e, e) + 3 dU(e)² / (2(h - U)), e the g-unit normal to the velocity.

    ∇²U is the covariant Hessian. Since 2(h - U) = |p|²_g, this is the
    Euclidean formula with |p|² read in the metric.
    """
    z = as_array(z)
    p, q = z[:2], z[2:]
    gi = metric.inverse(q)
    speed2 = float(p @ gi @ p)
    if speed2 <= 0:
        raise SingularFormulaError("h = U: turning point, the correction term is singular")
    g = metric.g(q)
    e = np.array([-p[1], p[0]])
    e = e / np.sqrt(e @ g @ e)
    grad_u = potential.grad(q)
    cov_hess = metric.covariant_hessian(q, grad_u, potential.hess(q))
    k = float(metric.gaussian_curvature(q))
    du = float(grad_u @ e)
    value = k * speed2 + float(e @ cov_hess @ e) + 3.0 * du * du / speed2
    return CurvatureOperator(np.array([[value]]), "reduced")


def closed_form_reduced(system, z):
    """Closed-form R̂ for the built-in families, in the reduced-direction basis."""
    if system.family_tag == "mechanical":
        return mechanical_reduced_closed_form(system, z)
    if system.family_tag == "geodesic2d":
        return geodesic_closed_form(system.metric, z)
    if system.family_tag == "mechanical_on_metric":
        return mechanical_on_metric_closed_form(system.metric, system.potential, z)
    raise ValueError("no closed form for custom systems")
