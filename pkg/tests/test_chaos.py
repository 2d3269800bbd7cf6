import math
from functools import partial

import numpy as np
import pytest
from scipy import stats

from chaos import (
    InitialDataSpec,
    build_dictionary,
    chaos_gap,
    kac_sphere_sample,
    lln_identity,
    lln_rate_scan,
    mehler_marginal_check,
    sample_conditioned,
    sample_initial,
    split_rhat,
    wn_functional,
)
from kernels import KernelSpec
from limit import Maxwellian, mean_field_reference
from measures import EmpiricalMeasure
from particle import simulate

# W₁(½δ₋₁ + ½δ₁, N(0, 1)) = 2 (2φ(1) - 2Φ(-1) + 1/2 - φ(0))
MEHLER_ORACLE_N1 = 2.0 * (2.0 * stats.norm.pdf(1.0) - 2.0 * stats.norm.cdf(-1.0) + 0.5 - stats.norm.pdf(0.0))


# ---------------------------------------------------------------------------
# Initial data
# ---------------------------------------------------------------------------

def test_kac_sphere_sample_has_exact_energy():
    V = kac_sphere_sample(50, 3, 2.0, np.random.default_rng(0))
    assert float(np.sum(V ** 2)) == pytest.approx(100.0, rel=1e-12)


def test_kac_sphere_sample_projects_momentum():
    V = kac_sphere_sample(20, 3, 1.0, np.random.default_rng(1), project_momentum=True)
    np.testing.assert_allclose(V.sum(axis=0), 0.0, atol=1e-12)
    assert float(np.sum(V ** 2)) == pytest.approx(20.0, rel=1e-12)


def test_tensor_gaussian_data_pass_a_normality_test():
    V = sample_initial(InitialDataSpec(dimension=3), 2000, np.random.default_rng(2))
    assert V.shape == (2000, 3)
    for k in range(3):
        result = stats.anderson(V[:, k], dist="norm")
        assert result.statistic < result.critical_values[-1]


def test_uniform_ball_and_two_point_laws():
    rng = np.random.default_rng(3)
    ball = sample_initial(InitialDataSpec(base_law="uniform_ball", dimension=2, radius=2.0), 5000, rng)
    assert np.max(np.linalg.norm(ball, axis=1)) <= 2.0
    # |X|² uniforme sur la boule de rayon 2 en d=2 : E|X|² = 2
    assert np.mean(np.sum(ball ** 2, axis=1)) == pytest.approx(2.0, abs=0.1)
    two = sample_initial(InitialDataSpec(base_law="two_point", dimension=2, atom=(0.0, 3.0)), 100, rng)
    assert set(map(tuple, two)) <= {(0.0, 3.0), (-0.0, -3.0)}


def test_compact_support_truncates():
    spec = InitialDataSpec(dimension=1, compact_support=True, support_radius=0.5)
    V = sample_initial(spec, 1000, np.random.default_rng(4))
    assert V.shape == (1000, 1)
    assert np.max(np.abs(V)) <= 0.5


def test_sample_file_law(tmp_path):
    path = tmp_path / "pool.csv"
    path.write_text("v_1,v_2\n1.0,2.0\n-1.0,0.5\n")
    V = sample_initial(InitialDataSpec(base_law="sample_file", dimension=2, sample_path=str(path)), 10,
                       np.random.default_rng(5))
    assert set(map(tuple, V)) <= {(1.0, 2.0), (-1.0, 0.5)}


@pytest.mark.parametrize("kwargs", [
    dict(base_law="cauchy"),
    dict(mode="ring"),
    dict(base_law="sample_file"),
    dict(mode="conditioned", base_law="two_point"),
    dict(mode="conditioned", sub_gaussian=False),
    dict(dimension=2, variances=(1.0,)),
])
def test_invalid_initial_specs(kwargs):
    with pytest.raises(ValueError):
        InitialDataSpec(**kwargs)


def test_conditioned_sampler_stays_on_the_sphere():
    spec = InitialDataSpec(base_law="uniform_ball", dimension=2, radius=3.0, mode="conditioned", energy=1.0,
                           burn_in=200, thinning=2, chains=2)
    draw = sample_conditioned(spec, 6, np.random.default_rng(6), n_keep=20)
    assert float(np.sum(draw.sample ** 2)) == pytest.approx(6.0, rel=1e-10)
    assert 0.0 < draw.acceptance <= 1.0
    assert math.isfinite(draw.rhat)


def test_extra_chains_only_feed_the_diagnostic():
    base = dict(base_law="gaussian", dimension=2, mode="conditioned", burn_in=50, thinning=1)
    single = sample_conditioned(InitialDataSpec(chains=1, **base), 5, np.random.default_rng(22), n_keep=10)
    several = sample_conditioned(InitialDataSpec(chains=3, **base), 5, np.random.default_rng(22), n_keep=10)
    np.testing.assert_array_equal(single.sample, several.sample)
    assert math.isnan(single.rhat)
    assert single.converged
    assert math.isfinite(several.rhat)


def test_split_rhat_of_identical_chains_is_one():
    chains = np.tile(np.random.default_rng(7).standard_normal(400), (4, 1))
    assert split_rhat(chains) == pytest.approx(1.0, abs=0.05)
    shifted = np.vstack([np.zeros(100), np.ones(100) * 10]) + np.random.default_rng(8).standard_normal((2, 100))
    assert split_rhat(shifted) > 1.1


# ---------------------------------------------------------------------------
# Law of large numbers
# ---------------------------------------------------------------------------

def test_lln_identity_for_gaussian_data():
    f0 = InitialDataSpec(dimension=1)
    entry = wn_functional(f0, "sobolev_sq", 20, 2000, np.random.default_rng(9), s=0.75)
    assert entry.exact == pytest.approx(lln_identity(Maxwellian.standard(1), 0.75, 20))
    assert abs(entry.mean - entry.exact) <= 4 * entry.stderr


def test_two_point_w1_matches_enumeration():
    # N=2 sur ±1 : W₁ vaut 0 avec probabilité 1/2 et 1 sinon
    f0 = InitialDataSpec(base_law="two_point", dimension=1)
    entry = wn_functional(f0, "W1", 2, 4000, np.random.default_rng(10))
    assert abs(entry.mean - 0.5) <= 4 * entry.stderr


def test_single_particle_at_a_dirac_is_exact():
    f0 = InitialDataSpec(base_law="two_point", dimension=1, atom=(0.0,))
    entry = wn_functional(f0, "W1", 1, 5, np.random.default_rng(11))
    assert entry.mean == 0.0


def test_lln_scan_needs_a_geometric_grid():
    f0 = InitialDataSpec(dimension=1)
    with pytest.raises(ValueError):
        lln_rate_scan(f0, "W1", [10, 20, 40], 5, seed=0)
    with pytest.raises(ValueError):
        lln_rate_scan(f0, "W1", [10, 20, 30, 40], 5, seed=0)
    with pytest.raises(ValueError):
        wn_functional(f0, "W3", 10, 5, np.random.default_rng(0))


def test_lln_scan_reports_bound_exponents():
    f0 = InitialDataSpec(dimension=1)
    result = lln_rate_scan(f0, "W2sq", [8, 16, 32, 64], 5, seed=12)
    assert result.bound_exponent == pytest.approx(-0.5)
    assert result.classical_exponent == pytest.approx(-0.4)
    frame = result.to_frame()
    assert list(frame["N"]) == [8, 16, 32, 64]
    assert frame["exact"].isna().all()


@pytest.mark.slow
def test_lln_sobolev_slope_is_minus_one():
    result = lln_rate_scan(InitialDataSpec(dimension=1), "sobolev_sq", [10, 100, 1000, 10_000], 2000, seed=13, s=0.75)
    assert abs(result.slope.slope + 1.0) <= 0.1


@pytest.mark.slow
@pytest.mark.parametrize("distance", ["W1", "W2sq"])
def test_lln_transport_slope_in_one_dimension(distance):
    result = lln_rate_scan(InitialDataSpec(dimension=1), distance, [16, 64, 256, 1024], 200, seed=23)
    assert result.slope.slope <= result.bound_exponent
    assert result.slope.slope <= -0.45


@pytest.mark.slow
@pytest.mark.parametrize("distance", ["W1", "W2sq"])
def test_lln_transport_slope_in_three_dimensions(distance):
    # N ≤ 81 : la référence de 50 N points reste sous le budget du solveur exact
    result = lln_rate_scan(InitialDataSpec(dimension=3), distance, [10, 20, 40, 80], 40, seed=24)
    assert result.bound_exponent == pytest.approx(-0.25)
    assert result.slope.slope <= result.bound_exponent


# ---------------------------------------------------------------------------
# Dictionaries and chaos gap
# ---------------------------------------------------------------------------

def test_dictionary_entries_have_unit_norm():
    fourier = build_dictionary(3, 2, "fourier", n_packets=8)
    assert len(fourier) == 8
    assert all(phi.ell == 2 and phi.declared_norm() <= 1.0 + 1e-12 for phi in fourier)
    lipschitz = build_dictionary(3, 1, "lipschitz", n_packets=4, n_ramps=3)
    assert [phi.label for phi in lipschitz][-3:] == ["ramp_00", "ramp_01", "ramp_02"]
    assert all(phi.declared_norm() <= 1.0 + 1e-12 for phi in lipschitz)


def test_dictionary_is_fixed_by_its_seed():
    a = build_dictionary(2, 1, n_packets=3, seed=1)
    b = build_dictionary(2, 1, n_packets=3, seed=1)
    assert [phi.factors for phi in a] == [phi.factors for phi in b]


def test_chaos_gap_of_reference_against_itself():
    rng = np.random.default_rng(14)
    V = rng.standard_normal((40, 2))
    gap = chaos_gap([V], EmpiricalMeasure.uniform(V), build_dictionary(2, 1, n_packets=6), 1, rng, n_boot=10)
    assert gap.value == pytest.approx(0.0, abs=1e-12)
    assert len(gap.per_entry) == 6


def test_chaos_gap_two_factors_within_symmetrization_bound():
    rng = np.random.default_rng(15)
    V = rng.standard_normal((30, 2))
    dictionary = build_dictionary(2, 2, n_packets=6)
    gap = chaos_gap([V], EmpiricalMeasure.uniform(V), dictionary, 2, rng, n_boot=10)
    assert gap.value <= 2 * 4 / 30
    with pytest.raises(ValueError):
        chaos_gap([V[:3]], EmpiricalMeasure.uniform(V), dictionary, 2, rng)
    with pytest.raises(ValueError):
        chaos_gap([V], EmpiricalMeasure.uniform(V), dictionary, 1, rng)


def test_chaos_gap_of_particle_system_is_small():
    spec = InitialDataSpec(dimension=3)
    kernel = KernelSpec.grad_cutoff(3)
    trajectories = simulate(partial(sample_initial, spec, 20), kernel, [0.0, 1.0], 40, seed=16)
    reference = Maxwellian.standard(3).sample_measure(20_000, np.random.default_rng(17))
    gap = chaos_gap([tr.at(1.0) for tr in trajectories], reference, build_dictionary(3, 1, n_packets=8), 1,
                    np.random.default_rng(18), n_boot=50)
    assert gap.value <= 0.1
    assert gap.stderr > 0


@pytest.mark.slow
@pytest.mark.parametrize("kernel", [KernelSpec.grad_cutoff(3), KernelSpec.grad_cutoff(3, gamma_exponent=1)])
def test_chaos_gap_decreases_with_n(kernel):
    initial = partial(sample_initial, InitialDataSpec(base_law="two_point", dimension=3))
    times = [0.0, 1.0]
    reference = mean_field_reference(initial, kernel, times, 2000, 2, seed=25)
    dictionary = build_dictionary(3, 1, "fourier" if kernel.is_maxwell else "lipschitz")
    half_a, half_b = reference.halves(1.0)
    floor = chaos_gap([half_a.points], half_b, dictionary, 1, np.random.default_rng(26), n_boot=10).value

    gaps = []
    for k, n in enumerate([2, 8, 32]):
        trajectories = simulate(partial(initial, n), kernel, times, 2000, seed=27)
        gaps.append(chaos_gap([tr.at(1.0) for tr in trajectories], reference.at(1.0), dictionary, 1,
                              np.random.default_rng(28 + k), n_boot=100))
    for small, large in zip(gaps, gaps[1:]):
        assert large.value <= small.value + 2 * math.hypot(small.stderr, large.stderr) + floor
    assert gaps[0].value - gaps[-1].value > 2 * math.hypot(gaps[0].stderr, gaps[-1].stderr) + floor


# ---------------------------------------------------------------------------
# Equilibrium chaoticity
# ---------------------------------------------------------------------------

def test_mehler_single_particle_matches_closed_form():
    frame = mehler_marginal_check([1], 1, 1, 2000, seed=19, repeats=5)
    row = frame.iloc[0]
    assert abs(row["w1"] - MEHLER_ORACLE_N1) <= 3 * row["noise_floor"] + 4 * row["stderr"]


def test_mehler_rejects_large_marginals():
    with pytest.raises(ValueError):
        mehler_marginal_check([10], 2, 2, 100, seed=0)
    with pytest.raises(ValueError):
        mehler_marginal_check([10], 1, 1, 100, seed=0, evolve_to=1.0)
    with pytest.raises(ValueError):
        mehler_marginal_check([1], 1, 2, 100, seed=0)


@pytest.mark.slow
def test_mehler_marginal_approaches_gaussian():
    frame = mehler_marginal_check([10, 100, 1000], 1, 1, 2000, seed=20)
    assert frame["w1"].is_monotonic_decreasing


@pytest.mark.slow
def test_conditioned_and_kac_sphere_marginals_agree_for_gaussian_base():
    base = dict(base_law="gaussian", dimension=1, energy=1.0)
    rng = np.random.default_rng(21)
    conditioned = np.concatenate([
        sample_initial(InitialDataSpec(mode="conditioned", chains=1, **base), 20, rng)[:1, 0] for _ in range(300)
    ])
    kac = np.concatenate([sample_initial(InitialDataSpec(mode="kac_sphere", **base), 20, rng)[:1, 0] for _ in range(300)])
    assert stats.ks_2samp(conditioned, kac).pvalue > 0.01
