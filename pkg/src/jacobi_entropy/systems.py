"""Hamiltonian systems in a chart of R^{2n}, with phase points ``z = (p, q)``.

Every callback broadcasts over leading axes: ``eval_h(z[..., 2n]) -> [...]``,
``grad_h -> [..., 2n]``, ``hess_h -> [..., 2n, 2n]``. Potentials and metrics
follow the same rule in ``q``. This lets Monte Carlo batches integrate in one
pass.
"""

from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, Optional

import numpy as np

from .errors import CriticalPointError, SamplerError
from .symplin import standard_form, sym_sqrt

FAMILIES = ("mechanical", "geodesic2d", "mechanical_on_metric", "custom")

# |∇h| below this (relative to 1 + |h|) counts as a critical point
CRITICAL_TOL = 1e-12


@dataclass(frozen=True)
class PhasePoint:
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).reshape(-1)
        q = np.asarray(self.q, dtype=float).reshape(-1)
        if p.shape != q.shape:
            raise ValueError("p and q must have the same length")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValueError("phase point has non-finite entries")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @property
    def z(self):
        return np.concatenate([self.p, self.q])

    @classmethod
    def from_array(cls, z):
        z = np.asarray(z, dtype=float)
        n = z.shape[-1] // 2
        return cls(z[:n], z[n:])


def as_array(z):
    if isinstance(z, PhasePoint):
        return z.z
    return np.asarray(z, dtype=float)


# ---------------------------------------------------------------- potentials


@dataclass(frozen=True)
class Potential:
    n: int
    value: Callable
    grad: Callable
    hess: Callable
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)


def zero_potential(n):
    return constant_potential(n, 0.0, name="zero")


def constant_potential(n, c, name="constant"):
    return Potential(
        n,
        lambda q: np.full(np.shape(q)[:-1], float(c)),
        lambda q: np.zeros(np.shape(q)),
        lambda q: np.zeros(np.shape(q) + (n,)),
        name=name,
        params={"c": c},
    )


def quadratic_potential(a, b=None, name="quadratic"):
    """U(q) = ½ qᵀAq + b·q."""
    a = np.asarray(a, dtype=float)
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    b = np.zeros(n) if b is None else np.asarray(b, dtype=float)
    return Potential(
        n,
        lambda q: 0.5 * np.einsum("...i,ij,...j->...", q, a, q) + q @ b,
        lambda q: q @ a + b,
        lambda q: np.broadcast_to(a, np.shape(q)[:-1] + (n, n)).copy(),
        name=name,
        params={"a": a.tolist(), "b": b.tolist()},
    )


def harmonic_potential(n, k=1.0):
    return quadratic_potential(k * np.eye(n), name="harmonic")


def linear_potential(b):
    b = np.asarray(b, dtype=float)
    return quadratic_potential(np.zeros((b.size, b.size)), b, name="linear")


def polynomial_potential(a, b=None, cubic=None, quartic=None):
    """½ qᵀAq + b·q + Σ c_i q_i³/3 + Σ d_i q_i⁴/4."""
    base = quadratic_potential(a, b)
    n = base.n
    c = np.zeros(n) if cubic is None else np.asarray(cubic, dtype=float)
    d = np.zeros(n) if quartic is None else np.asarray(quartic, dtype=float)

    def hess(q):
        h = base.hess(q)
        diag = 2 * c * q + 3 * d * q**2
        idx = np.arange(n)
        h[..., idx, idx] += diag
        return h

    return Potential(
        n,
        lambda q: base.value(q) + (c * q**3).sum(-1) / 3 + (d * q**4).sum(-1) / 4,
        lambda q: base.grad(q) + c * q**2 + d * q**3,
        hess,
        name="polynomial",
        params={**base.params, "cubic": c.tolist(), "quartic": d.tolist()},
    )


def trig_potential(wavevectors, amplitudes, phases=None):
    """U(q) = Σ_j a_j cos(k_j·q + φ_j)."""
    k = np.atleast_2d(np.asarray(wavevectors, dtype=float))
    a = np.asarray(amplitudes, dtype=float)
    ph = np.zeros(a.size) if phases is None else np.asarray(phases, dtype=float)
    n = k.shape[1]

    def arg(q):
        return q @ k.T + ph

    return Potential(
        n,
        lambda q: (a * np.cos(arg(q))).sum(-1),
        lambda q: -(a * np.sin(arg(q))) @ k,
        lambda q: -np.einsum("...j,jk,jl->...kl", a * np.cos(arg(q)), k, k),
        name="trig",
        params={"wavevectors": k.tolist(), "amplitudes": a.tolist(), "phases": ph.tolist()},
    )


def cosine_potential(amplitudes, period):
    """U(q) = -Σ a_i cos(2π q_i / L), periodic with period L in every coordinate."""
    a = np.asarray(amplitudes, dtype=float)
    n = a.size
    w = 2 * np.pi / period
    pot = trig_potential(w * np.eye(n), -a)
    return Potential(n, pot.value, pot.grad, pot.hess, name="cosine",
                     params={"amplitudes": a.tolist(), "period": period})


def pendulum_potential(strength=1.0):
    """U(q) = -strength·cos q (n = 1)."""
    pot = trig_potential([[1.0]], [-strength])
    return Potential(1, pot.value, pot.grad, pot.hess, name="pendulum", params={"strength": strength})


# ------------------------------------------------------------------- metrics


@dataclass(frozen=True)
class Metric2D:
    """Riemannian metric on a 2D chart.

    ``dg[..., i, j, k] = ∂_k g_ij`` and ``d2g[..., i, j, k, l] = ∂_k ∂_l g_ij``.
    """

    g: Callable
    dg: Callable
    d2g: Callable
    domain: Optional[Callable] = None
    name: str = "custom"
    # (λ, ∇λ, Hess λ) when g = λ I; enables closed-form Hamiltonian derivatives
    conformal: Optional[tuple] = field(default=None, compare=False)
    # q -> (q', A): an isometry pulling q back to a bounded window, A = dq'/dq
    isometry: Optional[Callable] = field(default=None, compare=False)

    def inverse(self, q):
        return np.linalg.inv(self.g(q))

    def christoffel(self, q):
        """Γ[..., i, j, k] = Γ^i_{jk}."""
        gi = self.inverse(q)
        dg = self.dg(q)
        t = dg.transpose(*range(dg.ndim - 3), -3, -1, -2) + dg - _move(dg)
        return 0.5 * np.einsum("...im,...mjk->...ijk", gi, t)

    def gaussian_curvature(self, q):
        g = self.g(q)
        gi = np.linalg.inv(g)
        dg = self.dg(q)
        d2g = self.d2g(q)
        lead = dg.ndim - 3
        # T[m, j, k] = ∂_j g_mk + ∂_k g_mj - ∂_m g_jk
        t = dg.transpose(*range(lead), lead, lead + 2, lead + 1) + dg - _move(dg)
        # ∂_l T[m, j, k]
        dt = (
            d2g.transpose(*range(lead), lead, lead + 2, lead + 1, lead + 3)
            + d2g
            - d2g.transpose(*range(lead), lead + 2, lead, lead + 1, lead + 3)
        )
        dgi = -np.einsum("...ia,...abl,...bm->...iml", gi, dg, gi)
        gam = 0.5 * np.einsum("...im,...mjk->...ijk", gi, t)
        # dgam[..., i, j, k, l] = ∂_l Γ^i_{jk}
        dgam = 0.5 * (np.einsum("...iml,...mjk->...ijkl", dgi, t) + np.einsum("...im,...mjkl->...ijkl", gi, dt))
        # R^i_{jkl} = ∂_k Γ^i_{lj} - ∂_l Γ^i_{kj} + Γ^i_{km} Γ^m_{lj} - Γ^i_{lm} Γ^m_{kj}
        i, j, k, l = 0, 1, 0, 1
        r_up = (
            dgam[..., :, l, j, k]
            - dgam[..., :, k, j, l]
            + np.einsum("...im,...m->...i", gam[..., :, k, :], gam[..., :, l, j])
            - np.einsum("...im,...m->...i", gam[..., :, l, :], gam[..., :, k, j])
        )
        r1212 = np.einsum("...m,...m->...", g[..., i, :], r_up)
        return r1212 / np.linalg.det(g)

    def covariant_hessian(self, q, grad_u, hess_u):
        gam = self.christoffel(q)
        return hess_u - np.einsum("...kij,...k->...ij", gam, grad_u)


def _move(dg):
    """dg[..., i, j, k] -> arr[..., m, j, k] = ∂_m g_jk, i.e. move the derivative index first."""
    lead = dg.ndim - 3
    return dg.transpose(*range(lead), lead + 2, lead, lead + 1)


def euclidean_metric():
    return conformal_metric(
        lambda q: np.ones(np.shape(q)[:-1]),
        lambda q: np.zeros(np.shape(q)),
        lambda q: np.zeros(np.shape(q) + (2,)),
        name="euclidean",
    )


def conformal_metric(lam, dlam, d2lam, domain=None, name="conformal"):
    """g(q) = λ(q)·I with ``dlam -> [..., 2]`` and ``d2lam -> [..., 2, 2]``."""
    eye = np.eye(2)

    def g(q):
        return lam(q)[..., None, None] * eye

    def dg(q):
        return np.einsum("ij,...k->...ijk", eye, dlam(q))

    def d2g(q):
        return np.einsum("ij,...kl->...ijkl", eye, d2lam(q))

    return Metric2D(g, dg, d2g, domain=domain, name=name, conformal=(lam, dlam, d2lam))


def hyperbolic_metric():
    """Upper half-plane g = y⁻² I, q = (x, y), y > 0. Gauss curvature -1."""

    def lam(q):
        return q[..., 1] ** -2

    def dlam(q):
        y = q[..., 1]
        return np.stack([np.zeros_like(y), -2 * y**-3], axis=-1)

    def d2lam(q):
        y = q[..., 1]
        out = np.zeros(np.shape(q) + (2,))
        out[..., 1, 1] = 6 * y**-4
        return out

    metric = conformal_metric(lam, dlam, d2lam, domain=lambda q: q[..., 1] > 0, name="hyperbolic")
    return replace(metric, isometry=_half_plane_recenter)


def _half_plane_recenter(q, window=3.0):
    """Map q to (0, 1) by (x, y) -> ((x - x0)/s, y/s) wherever |log y| or |x| leaves the window.

    Orbits of the half-plane reach y ~ e^{-t}; without this the metric
    derivatives overflow long before T = 200.
    """
    x, y = q[..., 0], q[..., 1]
    move = (np.abs(np.log(y)) > window) | (np.abs(x) > np.exp(window))
    s = np.where(move, y, 1.0)
    x0 = np.where(move, x, 0.0)
    q_new = np.stack([(x - x0) / s, y / s], axis=-1)
    a = np.zeros(np.shape(q) + (2,))
    a[..., 0, 0] = a[..., 1, 1] = 1 / s
    return q_new, a


def sphere_metric():
    """Round unit sphere, q = (θ, φ), g = diag(1, sin²θ), 0 < θ < π. Curvature +1."""

    def g(q):
        th = q[..., 0]
        out = np.zeros(np.shape(q) + (2,))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = np.sin(th) ** 2
        return out

    def dg(q):
        th = q[..., 0]
        out = np.zeros(np.shape(q) + (2, 2))
        out[..., 1, 1, 0] = np.sin(2 * th)
        return out

    def d2g(q):
        th = q[..., 0]
        out = np.zeros(np.shape(q) + (2, 2, 2))
        out[..., 1, 1, 0, 0] = 2 * np.cos(2 * th)
        return out

    return Metric2D(g, dg, d2g, domain=lambda q: (q[..., 0] > 0) & (q[..., 0] < np.pi), name="sphere")


# -------------------------------------------------------------------- systems


@dataclass(frozen=True)
class HamiltonianSystem:
    n: int
    eval_h: Callable
    grad_h: Callable
    hess_h: Callable
    periods: tuple = None
    family_tag: str = "custom"
    potential: Optional[Potential] = field(default=None, compare=False)
    metric: Optional[Metric2D] = field(default=None, compare=False)
    domain: Optional[Callable] = field(default=None, compare=False)
    name: str = ""
    # z -> (z', D): symmetry of h applied after each step to keep the chart
    # bounded; D is its (symplectic) differential, applied to tangent frames
    recenter: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.family_tag not in FAMILIES:
            raise ValueError(f"unknown family {self.family_tag!r}")
        periods = (None,) * self.n if self.periods is None else tuple(self.periods)
        if len(periods) != self.n:
            raise ValueError("periods must have one entry per position coordinate")
        for L in periods:
            if L is not None and not L > 0:
                raise ValueError("periods must be positive")
        object.__setattr__(self, "periods", periods)

    @property
    def space(self):
        return standard_form(self.n)

    @property
    def is_separable(self):
        return self.family_tag == "mechanical"

    @property
    def periodic_mask(self):
        return np.array([L is not None for L in self.periods])

    def vf(self, z):
        """X_h(z) = (-∂h/∂q, ∂h/∂p)."""
        g = self.grad_h(z)
        n = self.n
        return np.concatenate([-g[..., n:], g[..., :n]], axis=-1)

    def vf_jacobian(self, z):
        """D X_h(z) = J·Hess h with J = [[0, -I], [I, 0]]."""
        hs = self.hess_h(z)
        n = self.n
        return np.concatenate([-hs[..., n:, :], hs[..., :n, :]], axis=-2)

    def wrap(self, z):
        if not any(L is not None for L in self.periods):
            return z
        z = np.array(z, dtype=float, copy=True)
        for i, L in enumerate(self.periods):
            if L is not None:
                z[..., self.n + i] = np.mod(z[..., self.n + i], L)
        return z

    def in_domain(self, z):
        z = np.asarray(z, dtype=float)
        ok = np.all(np.isfinite(z), axis=-1)
        if self.domain is not None:
            ok &= self.domain(z)
        return ok

    def check_noncritical(self, z):
        z = np.asarray(z, dtype=float)
        g = self.grad_h(z)
        gn = np.linalg.norm(g, axis=-1)
        if not np.all(np.isfinite(gn)):
            raise CriticalPointError("non-finite gradient")
        scale = 1.0 + np.abs(self.eval_h(z))
        if np.any(gn <= CRITICAL_TOL * scale):
            raise CriticalPointError(f"critical point: |grad h| = {np.min(gn):.3e}")
        return g

    def norm_matrix(self, z):
        """L(z) with tangent norm ||v||_z = |L(z) v|.

        Identity for Euclidean charts. For metric families this is the
        Sasaki-type norm |δq|_g² + |Dp|²_{g⁻¹}, Dp the covariant differential of
        the covector p; isometry invariant, so exponents do not pick up chart
        distortion on non-compact charts.
        """
        z = np.asarray(z, dtype=float)
        if self.metric is None:
            return np.broadcast_to(np.eye(2 * self.n), z.shape[:-1] + (2 * self.n, 2 * self.n))
        return _sasaki_matrix(self.metric, z)


def _sasaki_matrix(metric, z):
    p, q = z[..., :2], z[..., 2:]
    g = metric.g(q)
    gam = metric.christoffel(q)
    # (Dp)_k = δp_k - Γ^j_{ik} p_j δq^i  => C[k, i] = Γ^j_{ik} p_j
    c = np.einsum("...jik,...j->...ki", gam, p)
    w, v = np.linalg.eigh(g)
    g_half = np.einsum("...ij,...j,...kj->...ik", v, np.sqrt(w), v)
    g_mhalf = np.einsum("...ij,...j,...kj->...ik", v, 1 / np.sqrt(w), v)
    top = np.concatenate([g_mhalf, -g_mhalf @ c], axis=-1)
    bottom = np.concatenate([np.zeros_like(g), g_half], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def mechanical(potential, periods=None, name="mechanical"):
    """h(p, q) = ½|p|² + U(q)."""
    n = potential.n

    def eval_h(z):
        return 0.5 * (z[..., :n] ** 2).sum(-1) + potential.value(z[..., n:])

    def grad_h(z):
        return np.concatenate([z[..., :n], potential.grad(z[..., n:])], axis=-1)

    def hess_h(z):
        lead = np.shape(z)[:-1]
        out = np.zeros(lead + (2 * n, 2 * n))
        idx = np.arange(n)
        out[..., idx, idx] = 1.0
        out[..., n:, n:] = potential.hess(z[..., n:])
        return out

    return HamiltonianSystem(n, eval_h, grad_h, hess_h, periods=periods, family_tag="mechanical",
                             potential=potential, name=name)


def _metric_parts(metric, z):
    p, q = z[..., :2], z[..., 2:]
    gi = metric.inverse(q)
    dg = metric.dg(q)
    # ∂_k g⁻¹ = -g⁻¹ ∂_k g g⁻¹
    dgi = -np.einsum("...ia,...abk,...bj->...ijk", gi, dg, gi)
    return p, q, gi, dg, dgi


def mechanical_on_metric(metric, potential, periods=None, name=None):
    """h(p, q) = ½ pᵀ g(q)⁻¹ p + U(q) on a 2D chart."""
    if potential.n != 2:
        raise ValueError("metric families live on 2D charts")

    if metric.conformal is not None:
        eval_h, grad_h, hess_h = _conformal_callbacks(metric.conformal, potential)
        return _on_metric(metric, potential, eval_h, grad_h, hess_h, periods, name)

    def eval_h(z):
        p, q = z[..., :2], z[..., 2:]
        gi = metric.inverse(q)
        return 0.5 * np.einsum("...i,...ij,...j->...", p, gi, p) + potential.value(q)

    def grad_h(z):
        p, q, gi, dg, dgi = _metric_parts(metric, z)
        hp = np.einsum("...ij,...j->...i", gi, p)
        hq = 0.5 * np.einsum("...i,...ijk,...j->...k", p, dgi, p) + potential.grad(q)
        return np.concatenate([hp, hq], axis=-1)

    def hess_h(z):
        p, q, gi, dg, dgi = _metric_parts(metric, z)
        d2g = metric.d2g(q)
        # ∂_k∂_l g⁻¹ = g⁻¹∂_k g g⁻¹∂_l g g⁻¹ + g⁻¹∂_l g g⁻¹∂_k g g⁻¹ - g⁻¹ ∂_k∂_l g g⁻¹
        a = np.einsum("...ia,...abk->...ibk", gi, dg)  # g⁻¹ ∂_k g
        t1 = np.einsum("...iak,...abl,...bj->...ijkl", a, a, gi)
        d2gi = t1 + t1.swapaxes(-1, -2) - np.einsum("...ia,...abkl,...bj->...ijkl", gi, d2g, gi)
        hpp = gi
        hpq = np.einsum("...ijk,...j->...ik", dgi, p)
        hqq = 0.5 * np.einsum("...i,...ijkl,...j->...kl", p, d2gi, p) + potential.hess(q)
        top = np.concatenate([hpp, hpq], axis=-1)
        bottom = np.concatenate([hpq.swapaxes(-1, -2), hqq], axis=-1)
        return np.concatenate([top, bottom], axis=-2)

    return _on_metric(metric, potential, eval_h, grad_h, hess_h, periods, name)


def _conformal_callbacks(conformal, potential):
    """h = |p|²/(2λ) + U in closed form."""
    lam, dlam, d2lam = conformal

    def eval_h(z):
        p, q = z[..., :2], z[..., 2:]
        return 0.5 * (p * p).sum(-1) / lam(q) + potential.value(q)

    def grad_h(z):
        p, q = z[..., :2], z[..., 2:]
        li = 1.0 / lam(q)
        pp = (p * p).sum(-1)
        hq = (-0.5 * pp * li * li)[..., None] * dlam(q) + potential.grad(q)
        return np.concatenate([li[..., None] * p, hq], axis=-1)

    def hess_h(z):
        p, q = z[..., :2], z[..., 2:]
        li = 1.0 / lam(q)
        pp = (p * p).sum(-1)
        dl = dlam(q)
        out = np.empty(np.shape(z) + (4,))
        out[..., 0, 0] = out[..., 1, 1] = li
        out[..., 0, 1] = out[..., 1, 0] = 0.0
        hpq = -(li * li)[..., None, None] * p[..., :, None] * dl[..., None, :]
        out[..., :2, 2:] = hpq
        out[..., 2:, :2] = np.swapaxes(hpq, -1, -2)
        hqq = (pp * li**3)[..., None, None] * dl[..., :, None] * dl[..., None, :]
        hqq -= (0.5 * pp * li * li)[..., None, None] * d2lam(q)
        out[..., 2:, 2:] = hqq + potential.hess(q)
        return out

    return eval_h, grad_h, hess_h


def _on_metric(metric, potential, eval_h, grad_h, hess_h, periods, name):
    def domain(z):
        return metric.domain(z[..., 2:]) if metric.domain is not None else np.ones(z.shape[:-1], bool)

    return HamiltonianSystem(2, eval_h, grad_h, hess_h, periods=periods, family_tag="mechanical_on_metric",
                             potential=potential, metric=metric, domain=domain,
                             name=name or f"{metric.name}+{potential.name}")


def geodesic2d(metric, periods=None, name=None):
    """h(p, q) = ½ pᵀ g(q)⁻¹ p."""
    base = mechanical_on_metric(metric, zero_potential(2), periods=periods)
    recenter = None
    if metric.isometry is not None and all(L is None for L in base.periods):
        recenter = partial(_lift_isometry, metric.isometry)
    return HamiltonianSystem(2, base.eval_h, base.grad_h, base.hess_h, periods=base.periods,
                             family_tag="geodesic2d", potential=base.potential, metric=metric,
                             domain=base.domain, name=name or f"geodesic:{metric.name}", recenter=recenter)


def _lift_isometry(isometry, z):
    """Cotangent lift: q' = ψ(q), p' = A⁻ᵀ p; differential blockdiag(A⁻ᵀ, A)."""
    q_new, a = isometry(z[..., 2:])
    a_it = np.swapaxes(np.linalg.inv(a), -1, -2)
    p_new = (a_it @ z[..., :2, None])[..., 0]
    d = np.zeros(z.shape + (4,))
    d[..., :2, :2] = a_it
    d[..., 2:, 2:] = a
    return np.concatenate([p_new, q_new], axis=-1), d


def custom(n, eval_h, grad_h, hess_h, periods=None, domain=None, batched=True, name="custom"):
    """Wrap user callbacks; ``batched=False`` loops pointwise callbacks over leading axes."""
    if not batched:
        eval_h, grad_h, hess_h = (_looped(f) for f in (eval_h, grad_h, hess_h))
    return HamiltonianSystem(n, eval_h, grad_h, hess_h, periods=periods, family_tag="custom",
                             domain=domain, name=name)


def _looped(f):
    def wrapped(z):
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            return np.asarray(f(z), dtype=float)
        flat = z.reshape(-1, z.shape[-1])
        out = np.stack([np.asarray(f(row), dtype=float) for row in flat])
        return out.reshape(z.shape[:-1] + out.shape[1:])

    return wrapped


def hamiltonian_vf(system, z):
    """X_h at ``z``; raises CriticalPointError where ∇h vanishes."""
    z = as_array(z)
    system.check_noncritical(z)
    return system.vf(z)


# ----------------------------------------------------------------- level sets


@dataclass(frozen=True)
class LevelSet:
    """Regular level set {h = energy}.

    ``q_bounds`` is a box ((lo, hi) per position coordinate, ``None`` for
    periodic ones) that bounds the sampling region on non-compact or
    non-periodic charts. On a non-compact level set only pointwise quantities
    are meaningful; the box-restricted Liouville measure is then a sampling
    device, not an invariant measure.
    """

    system: HamiltonianSystem
    energy: float
    q_bounds: Optional[tuple] = None
    regularity_floor: float = float("nan")

    def box(self):
        n = self.system.n
        bounds = self.q_bounds if self.q_bounds is not None else (None,) * n
        lo, hi = np.empty(n), np.empty(n)
        for i in range(n):
            L = self.system.periods[i]
            b = bounds[i]
            if b is None:
                if L is None:
                    raise SamplerError(f"coordinate q{i} is neither periodic nor bounded by q_bounds")
                lo[i], hi[i] = 0.0, L
            else:
                lo[i], hi[i] = b
        return lo, hi


def level_set(system, energy, q_bounds=None, probe=512, seed=0):
    """Build a LevelSet and record the minimal |∇h| over a probe sample."""
    ls = LevelSet(system, float(energy), q_bounds)
    pts = _sample_array(ls, probe, np.random.default_rng(seed))
    floor = float(np.linalg.norm(system.grad_h(pts), axis=-1).min())
    if not floor > 0:
        raise CriticalPointError(f"level set h = {energy} is not regular (min |grad h| = {floor})")
    return LevelSet(system, float(energy), q_bounds, floor)


def liouville_sample(level_set, count, seed):
    """``count`` points of N distributed by the normalized Liouville measure."""
    if count == 0:
        return []
    pts = _sample_array(level_set, count, np.random.default_rng(seed))
    return [PhasePoint.from_array(z) for z in pts]


def liouville_sample_array(level_set, count, seed):
    if count == 0:
        return np.zeros((0, 2 * level_set.system.n))
    return _sample_array(level_set, count, np.random.default_rng(seed))


def _sample_array(ls, count, rng):
    system = ls.system
    if system.family_tag in ("mechanical", "geodesic2d", "mechanical_on_metric"):
        z = _microcanonical(ls, count, rng)
    else:
        z = _constrained_metropolis(ls, count, rng)
    return system.wrap(newton_project(system, z, ls.energy))


def newton_project(system, z, energy, iters=1):
    z = np.array(z, dtype=float, copy=True)
    for _ in range(iters):
        g = system.grad_h(z)
        r = system.eval_h(z) - energy
        z -= (r / np.einsum("...i,...i->...", g, g))[..., None] * g
    return z


def _q_density(ls, q):
    """Liouville marginal of q: √det g · (2(E - U))^{(n-2)/2} on {U < E}."""
    system = ls.system
    n = system.n
    u = system.potential.value(q) if system.potential is not None else np.zeros(q.shape[:-1])
    ke = 2 * (ls.energy - u)
    dens = np.where(ke > 0, np.abs(ke) ** ((n - 2) / 2), 0.0)
    if system.metric is not None:
        inside = system.metric.domain(q) if system.metric.domain is not None else True
        qs = np.where(np.asarray(inside)[..., None], q, 1.0)
        dens = np.where(inside, dens * np.sqrt(np.abs(np.linalg.det(system.metric.g(qs)))), 0.0)
    return dens, ke


def _microcanonical(ls, count, rng, probe=8192):
    system = ls.system
    n = system.n
    lo, hi = ls.box()
    probe_q = lo + (hi - lo) * rng.random((probe, n))
    dens, _ = _q_density(ls, probe_q)
    bound = 1.5 * dens.max()
    if not bound > 0:
        raise SamplerError(f"no accessible region {{U < E}} for E = {ls.energy} inside the sampling box")
    out = np.empty((0, n))
    tries = 0
    while out.shape[0] < count:
        tries += 1
        if tries > 1000:
            raise SamplerError("rejection sampler acceptance too low")
        q = lo + (hi - lo) * rng.random((max(2 * count, 256), n))
        d, _ = _q_density(ls, q)
        if d.max() > bound:
            raise SamplerError("density bound underestimated; refine the sampling box")
        keep = rng.random(q.shape[0]) * bound < d
        out = np.vstack([out, q[keep]])
    q = out[:count]
    _, ke = _q_density(ls, q)
    u = rng.normal(size=(count, n))
    u /= np.linalg.norm(u, axis=-1, keepdims=True)
    w = np.sqrt(ke)[:, None] * u
    if system.metric is not None:
        g = system.metric.g(q)
        p = np.einsum("...ij,...j->...i", np.stack([sym_sqrt(gi) for gi in g]), w)
    else:
        p = w
    return np.concatenate([p, q], axis=-1)


def _constrained_metropolis(ls, count, rng, step=0.2, burn_in=1000, thin=10, start=None):
    """Random walk on N targeting |∇h|⁻¹ dA (coarea form of the Liouville measure).

    Tangent Gaussian proposal, Newton retraction along ∇h(z), and a reverse
    retraction check so the chain stays reversible.
    """
    system = ls.system
    if start is None:
        start = _find_start(ls, rng)
    z = start
    out = []
    total = burn_in + thin * count
    for it in range(total):
        z_new, v = _metropolis_move(system, ls.energy, z, rng, step)
        if z_new is not None:
            g_old = np.linalg.norm(system.grad_h(z))
            g_new = np.linalg.norm(system.grad_h(z_new))
            # reverse tangent step
            grad_new = system.grad_h(z_new)
            d = z - z_new
            v_rev = d - (d @ grad_new) / (grad_new @ grad_new) * grad_new
            back = _retract(system, ls.energy, z_new, v_rev)
            if back is not None and np.linalg.norm(back - z) < 1e-8 * (1 + np.linalg.norm(z)):
                log_a = np.log(g_old) - np.log(g_new) - (v_rev @ v_rev - v @ v) / (2 * step**2)
                if np.log(rng.random()) < log_a:
                    z = z_new
        if it >= burn_in and (it - burn_in) % thin == thin - 1:
            out.append(z.copy())
    return np.array(out)


def _metropolis_move(system, energy, z, rng, step):
    g = system.grad_h(z)
    v = rng.normal(size=z.shape) * step
    v -= (v @ g) / (g @ g) * g
    return _retract(system, energy, z, v), v


def _retract(system, energy, z, v, iters=30):
    g = system.grad_h(z)
    base = z + v
    a = 0.0
    for _ in range(iters):
        w = base + a * g
        r = system.eval_h(w) - energy
        if abs(r) < 1e-13 * (1 + abs(energy)):
            return w
        slope = system.grad_h(w) @ g
        if slope == 0:
            return None
        a -= r / slope
    return None


def _find_start(ls, rng, tries=10000):
    system = ls.system
    lo, hi = ls.box()
    n = system.n
    for _ in range(tries):
        q = lo + (hi - lo) * rng.random(n)
        p = rng.normal(size=n)
        z = np.concatenate([p, q])
        for _ in range(50):
            g = system.grad_h(z)
            r = system.eval_h(z) - ls.energy
            if abs(r) < 1e-12:
                return z
            z = z - r / (g @ g) * g
    raise SamplerError("could not locate the level set")
