import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jacobi_entropy.errors import NotMonotoneError, SingularFormulaError
from jacobi_entropy.flow import IntegratorConfig, flow
from jacobi_entropy.jacobi import (
    JacobiConfig,
    closed_form_reduced,
    curvature,
    curve_curvature,
    curve_data,
    derivative_curve,
    derivative_element,
    full_curvature,
    geodesic_closed_form,
    jacobi_coord,
    jacobi_curve,
    laurent_eval,
    laurent_fit,
    mechanical_closed_form,
    mechanical_on_metric_closed_form,
    mechanical_reduced_closed_form,
    monotonicity_check,
    moving_frame_defect,
    reduced_curvature,
    reduced_curvature_batch,
    sample_curve,
)
from jacobi_entropy.symplin import standard_form
from jacobi_entropy.systems import (
    constant_potential,
    custom,
    euclidean_metric,
    geodesic2d,
    harmonic_potential,
    hyperbolic_metric,
    mechanical,
    mechanical_on_metric,
    polynomial_potential,
    sphere_metric,
    trig_potential,
    zero_potential,
)


def _rotation_curve(t):
    # J(t) = φ^{-t}_* (vertical) for the unit oscillator
    return np.array([[np.cos(t)], [-np.sin(t)]])


def test_curvature_formula_linear_in_scircdot():
    S, Sd, Sc = np.zeros((2, 2)), np.eye(2), -np.eye(2)
    assert np.allclose(curvature(S, Sd, Sc, np.zeros((2, 2))).matrix, 0)
    assert np.allclose(curvature(S, Sd, Sc, 2 * np.eye(2)).matrix, 2 * np.eye(2))


def test_laurent_fit_exact_on_model():
    coef = np.array([[1.0, 2.0], [0.5, -1.0], [3.0, 0.0], [0.1, 0.2]])
    s = [-0.2, -0.1, 0.1, 0.2]
    vals = [laurent_eval(coef, x) for x in s]
    assert np.allclose(laurent_fit(s, vals), coef)


def test_jacobi_coord_zero_time():
    assert np.array_equal(jacobi_coord(mechanical(harmonic_potential(2)), np.ones(4), 0.0), np.zeros((2, 2)))


@pytest.mark.parametrize("t", [0.3, -0.5, 1.0])
def test_jacobi_coord_harmonic_rotation(t):
    s = jacobi_coord(mechanical(harmonic_potential(1)), np.array([0.3, 1.0]), t)
    assert abs(s[0, 0] + np.tan(t)) <= 1e-6


def test_jacobi_coord_free_particle_linear():
    sys = mechanical(zero_potential(1))
    ts = np.array([0.25, 0.5, 1.0, 2.0])
    s = np.array([jacobi_coord(sys, np.array([1.0, 0.0]), t)[0, 0] for t in ts])
    assert np.allclose(s, -ts, atol=1e-12)


def test_analytic_curve_curvature_one():
    curve = sample_curve(_rotation_curve, standard_form(1).form, 0.02)
    assert abs(curve_curvature(curve).matrix[0, 0] - 1) <= 1e-5


def test_free_particle_curve_flat():
    curve = sample_curve(lambda t: np.array([[1.0], [-t]]), standard_form(1).form, 0.02)
    data = curve_data(curve)
    sc, scd = derivative_curve(data)
    assert np.all(np.isfinite(sc))
    assert abs(curve_curvature(curve).matrix[0, 0]) <= 1e-8


def test_pipeline_harmonic_and_free_n1():
    assert abs(full_curvature(mechanical(harmonic_potential(1)), np.array([0.3, 1.0])).matrix[0, 0] - 1) <= 1e-5
    assert abs(full_curvature(mechanical(zero_potential(1)), np.array([1.0, 0.0])).matrix[0, 0]) <= 1e-8


def test_derivative_element_convergence_order():
    # free Laurent term converges at least quadratically in the stencil spacing
    curve_at = lambda t: np.array([[1.0], [np.sin(t) + 0.5 * t * t]])
    a0 = {}
    for h in (0.08, 0.04, 0.02):
        onto = curve_at(0.0)
        neigh = {s: curve_at(s) for s in (-2 * h, -h, h, 2 * h)}
        d, _ = derivative_element(onto, neigh, h)
        a0[h] = d[:, 0] / d[0, 0]
    e1 = np.linalg.norm(a0[0.08] - a0[0.04])
    e2 = np.linalg.norm(a0[0.04] - a0[0.02])
    assert np.log2(e1 / e2) >= 1.8


def test_full_curvature_mechanical_harmonic():
    R = full_curvature(mechanical(harmonic_potential(2)), np.array([0.3, -0.5, 1.0, 0.2]))
    assert np.allclose(R.matrix, np.eye(2), atol=1e-5)


def test_reduced_free_flat():
    R = reduced_curvature(mechanical(zero_potential(2)), np.array([1.0, 0.5, 0.0, 0.0]))
    assert np.abs(R.matrix).max() <= 1e-8


def test_reduced_harmonic_example():
    sys = mechanical(harmonic_potential(2))
    z = np.array([1.0, 0.0, 1.0, 1.0])
    R = reduced_curvature(sys, z)
    # restriction of I + 3[[1,1],[1,1]] to the direction orthogonal to p
    assert abs(R.matrix[0, 0] - 4.0) <= 4e-4


def test_mechanical_closed_form_examples():
    sys = mechanical(harmonic_potential(2))
    R, Rhat = mechanical_closed_form(sys, np.array([1.0, 0.0, 1.0, 1.0]))
    assert np.allclose(R, np.eye(2))
    assert np.allclose(Rhat, [[4, 3], [3, 4]])
    R0, Rh0 = mechanical_closed_form(mechanical(zero_potential(2)), np.array([1.0, 0.0, 1.0, 1.0]))
    assert np.allclose(R0, 0) and np.allclose(Rh0, 0)
    with pytest.raises(SingularFormulaError):
        mechanical_closed_form(sys, np.array([0.0, 0.0, 1.0, 1.0]))


def test_geodesic_closed_forms():
    z = np.array([0.6, 0.8, 0.3, 1.0])  # on h = ½ for the half-plane at y = 1
    assert np.allclose(geodesic_closed_form(euclidean_metric(), z).matrix, 0)
    assert np.allclose(geodesic_closed_form(hyperbolic_metric(), z).matrix, -1)
    zs = np.array([0.6, 0.8 * np.sin(1.2), 1.2, 0.4])
    assert np.allclose(geodesic_closed_form(sphere_metric(), zs).matrix, 1)


def test_metric_closed_form_reductions():
    z = np.array([0.3, -0.8, 0.2, 1.3])
    c = mechanical_on_metric_closed_form(hyperbolic_metric(), constant_potential(2, 0.7), z)
    assert np.allclose(c.matrix, geodesic_closed_form(hyperbolic_metric(), z).matrix)
    pot = polynomial_potential([[2.0, 0.3], [0.3, 1.0]], [0.1, 0.2], [0.2, -0.1])
    e = mechanical_on_metric_closed_form(euclidean_metric(), pot, z)
    ref = mechanical_reduced_closed_form(mechanical(pot), z)
    assert np.allclose(e.matrix, ref.matrix, rtol=1e-12)
    with pytest.raises(SingularFormulaError):
        mechanical_on_metric_closed_form(hyperbolic_metric(), pot, np.array([0.0, 0.0, 0.2, 1.3]))


def test_geodesic_pipelines():
    hyp = reduced_curvature(geodesic2d(hyperbolic_metric()), np.array([0.6, 0.8, 0.3, 1.0]))
    assert abs(hyp.matrix[0, 0] + 1) <= 1e-4
    sph = reduced_curvature(geodesic2d(sphere_metric()), np.array([0.6, 0.8 * np.sin(1.2), 1.2, 0.4]))
    assert abs(sph.matrix[0, 0] - 1) <= 1e-4


def _random_mechanical(rng):
    a = rng.normal(size=(2, 2))
    if rng.random() < 0.5:
        pot = polynomial_potential(a @ a.T - np.eye(2), rng.normal(size=2), 0.3 * rng.normal(size=2),
                                   0.1 * rng.uniform(size=2))
    else:
        pot = trig_potential(rng.integers(-2, 3, size=(3, 2)), rng.normal(size=3), rng.uniform(0, 6, 3))
    p = rng.normal(size=2)
    p *= rng.uniform(0.5, 2) / np.linalg.norm(p)
    return mechanical(pot), np.concatenate([p, rng.normal(size=2)])


@settings(max_examples=10)
@given(st.integers(0, 2**32 - 1))
def test_oracle_equivalence_mechanical(seed):
    sys, z = _random_mechanical(np.random.default_rng(seed))
    R = reduced_curvature(sys, z)
    ref = closed_form_reduced(sys, z).matrix
    assert np.abs(R.matrix - ref).max() <= 1e-4 * max(1.0, np.abs(ref).max())
    assert R.relative_asym_defect <= 1e-4


@pytest.mark.parametrize("metric", [hyperbolic_metric, sphere_metric])
def test_oracle_equivalence_metric_families(metric):
    rng = np.random.default_rng(8)
    pot = trig_potential([[1, 0], [0, 1]], [0.3, 0.2], [0.4, 1.0])
    sys = mechanical_on_metric(metric(), pot)
    zs = np.column_stack([rng.normal(size=(4, 2)), rng.uniform(0.5, 1.5, size=(4, 2))])
    for z, R in zip(zs, reduced_curvature_batch(sys, zs)):
        ref = closed_form_reduced(sys, z).matrix
        assert abs(R.matrix[0, 0] - ref[0, 0]) <= 1e-4 * max(1.0, abs(ref[0, 0]))


def test_energy_scaling_of_geodesic_curvature():
    # R̂ = K·2E: curvature grows linearly with the energy
    z = np.array([1.2, -0.9, 0.3, 0.8])
    sys = geodesic2d(hyperbolic_metric())
    R = reduced_curvature(sys, z).matrix[0, 0]
    assert abs(R + 2 * sys.eval_h(z)) <= 1e-4 * 2 * sys.eval_h(z)


def test_monotonicity_gate():
    def h(z):
        return 0.5 * (z[..., 0] ** 2 - z[..., 1] ** 2) + 0.5 * (z[..., 2:] ** 2).sum(-1)

    def grad(z):
        return np.concatenate([z[..., :1], -z[..., 1:2], z[..., 2:]], axis=-1)

    def hess(z):
        return np.broadcast_to(np.diag([1.0, -1.0, 1.0, 1.0]), z.shape + (4,)).copy()

    sys = custom(2, h, grad, hess)
    z = np.array([0.5, 0.2, 0.1, 0.3])
    with pytest.raises(NotMonotoneError) as info:
        monotonicity_check(sys, z)
    assert info.value.signature == (1, 1, 0)
    with pytest.raises(NotMonotoneError):
        reduced_curvature(sys, z)


def test_reduced_needs_two_degrees_of_freedom():
    with pytest.raises(ValueError):
        reduced_curvature(mechanical(harmonic_potential(1)), np.array([1.0, 0.0]))


def test_flow_covariance():
    sys = mechanical(trig_potential([[1, 0], [0, 1], [1, 1]], [1.0, 0.6, 0.3]))
    z = np.array([0.7, -0.4, 0.3, 1.1])
    t = 0.3
    transported = reduced_curvature(sys, z, center=t).eigenvalues
    zt = flow(sys, z, t, IntegratorConfig("stormer_verlet", 1e-4), record_every=10**9).final
    direct = reduced_curvature(sys, zt).eigenvalues
    assert np.allclose(transported, direct, atol=1e-4 * max(1.0, np.abs(direct).max()))


def test_moving_frame_analytic():
    curve = sample_curve(_rotation_curve, standard_form(1).form, 0.02, reach=16)
    defect, R = moving_frame_defect(curve)
    assert defect <= 1e-4
    assert abs(R[0, 0] - 1) <= 1e-5


def test_moving_frame_pipeline():
    sys = mechanical(polynomial_potential([[1.0, 0.2], [0.2, 2.0]], [0.1, 0.0], [0.2, 0.1]))
    z = np.array([0.4, -0.3, 0.5, 0.7])
    curve, e = jacobi_curve(sys, z, JacobiConfig(), reduced=False, reach=16)
    defect, R = moving_frame_defect(curve, e)
    assert defect <= 1e-4 * max(1.0, np.linalg.norm(R))


def test_richardson_error_reported():
    R = reduced_curvature(geodesic2d(hyperbolic_metric()), np.array([0.6, 0.8, 0.3, 1.0]))
    assert 0 <= R.richardson_error < 1e-5
    assert R.kind == "reduced"
