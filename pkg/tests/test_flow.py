import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jacobi_entropy.errors import ChartEscapeError, CriticalPointError
from jacobi_entropy.flow import (
    IntegratorConfig,
    default_config,
    flow,
    fundamental_matrix,
    reduce,
    reduced_coordinates,
    reduction_projector,
    step,
    tangent_flow,
)
from jacobi_entropy.systems import (
    PhasePoint,
    geodesic2d,
    harmonic_potential,
    hyperbolic_metric,
    mechanical,
    pendulum_potential,
    sphere_metric,
    trig_potential,
    zero_potential,
)

VERLET = IntegratorConfig("stormer_verlet", 1e-3)
MIDPOINT = IntegratorConfig("implicit_midpoint", 1e-3)


@pytest.mark.parametrize("scheme", ["stormer_verlet", "implicit_midpoint"])
def test_free_flight_exact(scheme):
    out = step(mechanical(zero_potential(1)), PhasePoint([1.0], [0.0]), IntegratorConfig(scheme, 0.5))
    assert np.array_equal(out.z, [1.0, 0.5])


def test_midpoint_conserves_quadratic_energy():
    sys = mechanical(harmonic_potential(1))
    z = step(sys, np.array([1.0, 0.0]), IntegratorConfig("implicit_midpoint", 0.3))
    assert abs(sys.eval_h(z) - 0.5) <= 1e-15


def test_step_rejects_critical_point():
    with pytest.raises(CriticalPointError):
        step(mechanical(harmonic_potential(1)), np.zeros(2), VERLET)


def test_verlet_needs_separable():
    with pytest.raises(ValueError):
        step(geodesic2d(hyperbolic_metric()), np.array([0.1, 0.2, 0.0, 1.0]), VERLET)


def test_torus_period():
    sys = mechanical(zero_potential(1), periods=(1.0,))
    traj = flow(sys, np.array([1.0, 0.0]), 2.0, IntegratorConfig("stormer_verlet", 0.1))
    assert abs(np.sin(np.pi * traj.final[1])) < 1e-12


def test_zero_time():
    z = np.array([0.3, 0.2])
    traj = flow(mechanical(pendulum_potential()), z, 0.0, VERLET)
    assert np.array_equal(traj.final, z)


def test_pendulum_energy_drift():
    sys = mechanical(pendulum_potential())
    z = np.array([0.5, 1.0])
    traj = flow(sys, z, 100.0, VERLET, record_every=1000)
    assert traj.energy_drift / abs(sys.eval_h(z)) <= 1e-6


def test_tangent_free_particle():
    free = mechanical(zero_potential(1))
    z = np.array([1.0, 0.0])
    assert np.allclose(tangent_flow(free, z, np.array([[0.0], [1.0]]), 1.0, VERLET).final_frame[:, 0], [0, 1])
    assert np.allclose(tangent_flow(free, z, np.array([[1.0], [0.0]]), 1.0, VERLET).final_frame[:, 0], [1, 1])


def test_tangent_harmonic_rotation():
    osc = mechanical(harmonic_potential(1))
    traj = tangent_flow(osc, np.array([1.0, 0.0]), np.array([[1.0], [0.0]]), np.pi / 2, VERLET)
    assert np.linalg.norm(traj.final_frame[:, 0] - [0, 1]) <= 1e-6


def test_tangent_matches_finite_difference():
    sys = mechanical(trig_potential([[1, 0], [0, 1], [1, 1]], [1.0, 0.5, 0.3]))
    z = np.array([0.4, -0.2, 0.3, 1.0])
    _, m = fundamental_matrix(sys, z, 2.0, IntegratorConfig("stormer_verlet", 1e-2))
    eps = 1e-6
    fd = np.array([(flow(sys, z + eps * e, 2.0, IntegratorConfig("stormer_verlet", 1e-2)).final
                    - flow(sys, z - eps * e, 2.0, IntegratorConfig("stormer_verlet", 1e-2)).final) / (2 * eps)
                   for e in np.eye(4)]).T
    assert np.allclose(m, fd, atol=1e-7)


def _sigma_drift(sys, z, config, T, seed=0):
    frame = np.random.default_rng(seed).normal(size=(2 * sys.n, 2))
    traj = tangent_flow(sys, z, frame, T, config)
    f0, f1 = traj.frames[0], traj.frames[-1]
    s0 = sys.space.omega(f0[:, 0], f0[:, 1])
    return abs(sys.space.omega(f1[:, 0], f1[:, 1]) - s0) / abs(s0)


def test_symplecticity_mechanical_both_schemes():
    sys = mechanical(trig_potential([[1, 0], [0, 1]], [1.0, 0.5]))
    z = np.array([0.4, -0.2, 0.3, 1.0])
    assert _sigma_drift(sys, z, VERLET, 100.0) <= 1e-6
    assert _sigma_drift(sys, z, MIDPOINT, 20.0) <= 1e-6


def test_symplecticity_geodesic():
    sys = geodesic2d(hyperbolic_metric())
    assert _sigma_drift(sys, np.array([0.3, -0.4, 0.1, 1.2]), MIDPOINT, 100.0) <= 1e-6


def test_euler_is_not_symplectic():
    sys = mechanical(pendulum_potential())
    assert _sigma_drift(sys, np.array([0.5, 1.0]), IntegratorConfig("explicit_euler", 1e-3), 10.0) > 1e-4


def test_flow_direction_transported():
    sys = mechanical(trig_potential([[1, 0], [0, 1]], [1.0, 0.5]))
    z = np.array([0.4, -0.2, 0.3, 1.0])
    # φ_* X_h = X_h∘φ holds for the discrete map up to O(dt²)
    traj = tangent_flow(sys, z, sys.vf(z)[:, None], 10.0, IntegratorConfig("stormer_verlet", 5e-4))
    assert np.linalg.norm(traj.final_frame[:, 0] - sys.vf(traj.base_points[-1])) <= 1e-6


@given(st.integers(0, 2**32 - 1))
def test_level_tangent_transported(seed):
    rng = np.random.default_rng(seed)
    sys = mechanical(trig_potential([[1, 0], [0, 1]], [1.0, 0.5]))
    z = np.concatenate([rng.normal(size=2) + [1.0, 0.0], rng.uniform(0, 6, 2)])
    v = rng.normal(size=4)
    g = sys.grad_h(z)
    v -= (v @ g) / (g @ g) * g
    # the discrete map conserves a modified energy, so this is O(dt²)
    traj = tangent_flow(sys, z, v[:, None], 2.0, IntegratorConfig("stormer_verlet", 5e-4))
    assert abs(sys.grad_h(traj.base_points[-1]) @ traj.final_frame[:, 0]) <= 1e-6 * np.linalg.norm(v)


def test_default_scheme_selection():
    assert default_config(mechanical(zero_potential(2))).scheme == "stormer_verlet"
    assert default_config(geodesic2d(sphere_metric())).scheme == "implicit_midpoint"


def test_chart_escape():
    # sphere chart: θ runs out of (0, π) along a meridian
    with pytest.raises(ChartEscapeError):
        flow(geodesic2d(sphere_metric()), np.array([1.0, 0.0, 1.0, 0.0]), 5.0, IntegratorConfig("implicit_midpoint", 1e-2))


def test_half_plane_recentring():
    sys = geodesic2d(hyperbolic_metric())
    z = np.array([0.3, 0.7, 0.1, 1.0])
    traj = flow(sys, z, 40.0, IntegratorConfig("implicit_midpoint", 1e-2), record_every=100)
    y = traj.points[:, 3]
    assert np.all(np.abs(np.log(y)) <= 3.5)
    assert traj.energy_drift <= 1e-4
    # the re-centring differential is symplectic
    _, d = sys.recenter(np.array([0.2, 0.5, 40.0, 1e-3]))
    form = sys.space.form
    assert np.allclose(d.T @ form @ d, form)


def test_reduce_kills_flow_direction():
    sys = mechanical(harmonic_potential(2))
    z = np.array([1.0, 0.0, 0.0, 0.0])
    rf = reduce(sys, z, sys.vf(z))
    assert np.allclose(rf.columns, 0)


def test_reduce_idempotent_on_complement():
    sys = mechanical(trig_potential([[1, 0], [0, 1]], [1.0, 0.5]))
    z = np.array([0.4, -0.2, 0.3, 1.0])
    rf = reduce(sys, z, np.eye(4))
    again = reduce(sys, z, rf.columns)
    assert np.allclose(again.columns, rf.columns)
    assert np.allclose(rf.basis @ rf.coordinates(), rf.columns)


def test_reduce_example():
    sys = mechanical(harmonic_potential(2))
    z = np.array([1.0, 0.0, 0.0, 0.0])
    v = reduce(sys, z, np.array([0.0, 0.0, 0.0, 1.0])).columns[:, 0]
    assert np.linalg.norm(v) > 0.5
    assert abs(sys.grad_h(z) @ v) <= 1e-14


@given(st.integers(0, 2**32 - 1))
def test_reduction_projector_properties(seed):
    rng = np.random.default_rng(seed)
    sys = geodesic2d(hyperbolic_metric())
    z = np.concatenate([rng.normal(size=2), [rng.normal(), rng.uniform(0.2, 3)]])
    P = reduction_projector(sys, z)
    assert np.allclose(P @ P, P, atol=1e-10 * np.linalg.norm(P) ** 2)
    assert np.allclose(P @ sys.vf(z), 0, atol=1e-10 * np.linalg.norm(P))
    assert np.allclose(sys.grad_h(z) @ P, 0, atol=1e-10 * np.linalg.norm(P) * np.linalg.norm(sys.grad_h(z)))
    T, form, lift = reduced_coordinates(sys, z)
    assert np.allclose(T @ lift, np.eye(2), atol=1e-10)
    assert abs(np.linalg.det(form)) > 1e-6
