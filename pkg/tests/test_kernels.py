import math

import numpy as np
import pytest
from scipy import integrate, stats

from kernels import (
    ContractViolation,
    KernelSpec,
    angular_moment,
    bobylev_constant,
    describe_kernel,
    pair_rate,
    post_collision,
    sample_sigma,
    sample_theta,
    spectral_gap,
    sphere_area,
    sphere_quadrature,
)


def _unit_rows(u: np.ndarray, size: int) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return np.tile(u / np.linalg.norm(u), (size, 1))


# ---------------------------------------------------------------------------
# post_collision
# ---------------------------------------------------------------------------

def test_post_collision_coincident_velocities_is_identity():
    v = np.array([1.0, 0.0, 0.0])
    v_new, w_new = post_collision(v, v, np.array([0.0, 1.0, 0.0]))
    np.testing.assert_allclose(v_new, v)
    np.testing.assert_allclose(w_new, v)


def test_post_collision_sigma_along_relative_velocity_is_identity():
    v, w = np.array([1.0, 0.0, 0.0]), np.array([-1.0, 0.0, 0.0])
    v_new, w_new = post_collision(v, w, np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(v_new, v)
    np.testing.assert_allclose(w_new, w)


def test_post_collision_orthogonal_sigma():
    v, w = np.array([1.0, 0.0, 0.0]), np.array([-1.0, 0.0, 0.0])
    v_new, w_new = post_collision(v, w, np.array([0.0, 1.0, 0.0]))
    np.testing.assert_allclose(v_new, [0.0, 1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(w_new, [0.0, -1.0, 0.0], atol=1e-15)


def test_post_collision_conserves_momentum_and_energy():
    rng = np.random.default_rng(0)
    v, w = rng.standard_normal((50, 3)), rng.standard_normal((50, 3))
    sigma = rng.standard_normal((50, 3))
    sigma /= np.linalg.norm(sigma, axis=1, keepdims=True)
    v_new, w_new = post_collision(v, w, sigma)
    np.testing.assert_allclose(v_new + w_new, v + w, atol=1e-13)
    np.testing.assert_allclose(np.sum(v_new ** 2 + w_new ** 2, axis=1), np.sum(v ** 2 + w ** 2, axis=1), rtol=1e-13)


# ---------------------------------------------------------------------------
# Kernel construction and angular quantities
# ---------------------------------------------------------------------------

def test_grad_cutoff_default_has_unit_angular_mass():
    spec = KernelSpec.grad_cutoff(3)
    assert spec.b_const == pytest.approx(1.0 / (4.0 * math.pi))
    assert spec.angular_mass == pytest.approx(1.0, rel=1e-10)


def test_spectral_gap_grad_d3_matches_riemann_oracle():
    spec = KernelSpec.grad_cutoff(3)
    # oracle : somme de Riemann sur c = cos θ, densité 1/2 sur [-1, 1]
    c = np.linspace(-1.0, 1.0, 1_000_001)
    mid = 0.5 * (c[1:] + c[:-1])
    oracle_gap = float(np.sum((1.0 - mid ** 2) / 2.0 * 0.5) * (c[1] - c[0]))
    oracle_bob = float(np.sum((1.0 + mid ** 2) / 2.0 * 0.5) * (c[1] - c[0]))
    assert spectral_gap(spec) == pytest.approx(oracle_gap, rel=1e-8)
    assert spectral_gap(spec) == pytest.approx(1.0 / 3.0, rel=1e-8)
    assert bobylev_constant(spec) == pytest.approx(oracle_bob, rel=1e-8)


def test_power_law_angular_mass_matches_closed_form():
    nu, eps = 0.5, 0.1
    spec = KernelSpec.power_law(nu, eps, dimension=3)
    expected, _ = integrate.quad(lambda t: t ** (-2.0 - nu) * math.sin(t), eps, math.pi, limit=200)
    assert spec.angular_mass == pytest.approx(2.0 * math.pi * expected, rel=1e-6)


def test_tabulated_law_integrates_like_grad_when_constant():
    theta = np.linspace(0.0, math.pi, 9)
    spec = KernelSpec.tabulated(theta, np.full(9, 1.0 / (4.0 * math.pi)), dimension=3)
    assert spec.angular_mass == pytest.approx(1.0, rel=1e-8)
    assert angular_moment(spec, lambda c: c ** 2) == pytest.approx(1.0 / 3.0, rel=1e-6)


@pytest.mark.parametrize("kwargs", [
    dict(dimension=1),
    dict(gamma_exponent=2),
    dict(angular_law="power", nu=2.5, eps_cut=0.1),
    dict(angular_law="power", nu=0.5, eps_cut=None),
    dict(angular_law="grad", b_const=-1.0),
    dict(angular_law="tabulated", table_theta=(0.0, 1.0), table_b=(1.0,)),
])
def test_invalid_kernel_specs_are_rejected(kwargs):
    with pytest.raises(ValueError):
        KernelSpec(**kwargs)


def test_describe_kernel_reports_family_and_gap():
    info = describe_kernel(KernelSpec.grad_cutoff(3, gamma_exponent=1))
    assert info["family"] == "hard_spheres"
    assert info["angular_mass"] == pytest.approx(1.0)
    assert info["spectral_gap"] == pytest.approx(1.0 / 3.0, rel=1e-6)


# ---------------------------------------------------------------------------
# pair_rate
# ---------------------------------------------------------------------------

def test_pair_rate_examples():
    maxwell = KernelSpec.grad_cutoff(3)
    hard = KernelSpec.grad_cutoff(3, gamma_exponent=1)
    assert pair_rate([3.0, 1.0, 0.0], [0.0, 0.0, 5.0], maxwell) == pytest.approx(1.0)
    assert pair_rate([2.0, 0.0, 0.0], [0.0, 0.0, 0.0], hard) == pytest.approx(2.0)
    assert pair_rate([1.0, 1.0, 1.0], [1.0, 1.0, 1.0], hard) == 0.0


# ---------------------------------------------------------------------------
# sample_sigma
# ---------------------------------------------------------------------------

def test_grad_cutoff_cosine_is_uniform():
    spec = KernelSpec.grad_cutoff(3)
    rng = np.random.default_rng(1)
    sigma = sample_sigma(_unit_rows([1.0, 0.0, 0.0], 100_000), spec, rng)
    np.testing.assert_allclose(np.linalg.norm(sigma, axis=1), 1.0, atol=1e-12)
    assert stats.kstest(sigma[:, 0], "uniform", args=(-1.0, 2.0)).pvalue > 0.01


def test_power_law_theta_histogram_matches_density():
    nu, eps = 0.5, 0.1
    spec = KernelSpec.power_law(nu, eps, dimension=3)
    rng = np.random.default_rng(2)
    theta = sample_theta(spec, rng, 100_000)
    edges = np.geomspace(eps, math.pi, 21)
    counts, _ = np.histogram(theta, bins=edges)
    density = lambda t: t ** (-2.0 - nu) * math.sin(t)
    mass = np.array([integrate.quad(density, a, b)[0] for a, b in zip(edges[:-1], edges[1:])])
    expected = counts.sum() * mass / mass.sum()
    assert stats.chisquare(counts, expected).pvalue > 0.01


def test_sigma_law_is_rotation_equivariant():
    spec = KernelSpec.power_law(1.0, 0.2, dimension=3)
    u = np.array([1.0, 2.0, -2.0]) / 3.0
    a = sample_sigma(_unit_rows([1.0, 0.0, 0.0], 20_000), spec, np.random.default_rng(3))[:, 0]
    b = sample_sigma(_unit_rows(u, 20_000), spec, np.random.default_rng(4)) @ u
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_sample_sigma_single_vector_shape():
    spec = KernelSpec.grad_cutoff(4)
    sigma = sample_sigma(np.array([0.0, 0.0, 1.0, 0.0]), spec, np.random.default_rng(5))
    assert sigma.shape == (4,)
    assert np.linalg.norm(sigma) == pytest.approx(1.0)


def test_sample_sigma_rejects_zero_relative_velocity():
    spec = KernelSpec.grad_cutoff(3)
    with pytest.raises(ContractViolation):
        sample_sigma(np.zeros(3), spec, np.random.default_rng(0))
    with pytest.raises(ContractViolation):
        sample_sigma(np.array([1.0, 0.0]), spec, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# sphere_quadrature
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("d", [2, 3, 4])
def test_sphere_quadrature_weights_sum_to_angular_mass(d):
    spec = KernelSpec.grad_cutoff(d)
    u = np.zeros(d)
    u[0] = 1.0
    sigmas, weights = sphere_quadrature(u, spec, 12)
    assert weights.sum() == pytest.approx(spec.angular_mass, rel=1e-6)
    np.testing.assert_allclose(np.linalg.norm(sigmas, axis=1), 1.0, atol=1e-12)


def test_sphere_quadrature_integrates_polynomial_in_cosine():
    spec = KernelSpec.grad_cutoff(3)
    u = np.array([0.0, 0.6, 0.8])
    sigmas, weights = sphere_quadrature(u, spec, 16)
    assert float(weights @ (sigmas @ u) ** 2) == pytest.approx(1.0 / 3.0, rel=1e-10)
    assert float(weights @ sigmas[:, 0] ** 2) == pytest.approx(1.0 / 3.0, rel=1e-10)


def test_sphere_area_small_dimensions():
    assert sphere_area(2) == pytest.approx(2.0 * math.pi)
    assert sphere_area(3) == pytest.approx(4.0 * math.pi)
