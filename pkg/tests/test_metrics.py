import itertools
import math

import numpy as np
import pytest
from scipy import integrate

from limit import Maxwellian
from measures import EmpiricalMeasure
from metrics import (
    BATTERY_COLUMNS,
    EXPLICIT_INEQUALITIES,
    AdmissibilityError,
    BatterySettings,
    FrequencyGrid,
    MomentConstraintError,
    SolverBudgetError,
    dual_lipschitz,
    inequality_battery,
    multi_indices,
    random_discrete_pair,
    riesz_constant,
    sobolev_neg_norm,
    toscani_norm,
    transport_cost,
    wasserstein,
)


def _uniform(points) -> EmpiricalMeasure:
    return EmpiricalMeasure.uniform(np.asarray(points, dtype=float))


# ---------------------------------------------------------------------------
# Wasserstein
# ---------------------------------------------------------------------------

def test_wasserstein_of_identical_measures_is_zero():
    mu = _uniform(np.random.default_rng(0).standard_normal((20, 3)))
    assert wasserstein(mu, mu, 1.0).value == pytest.approx(0.0, abs=1e-12)
    assert wasserstein(mu, mu, 2.0).value == pytest.approx(0.0, abs=1e-12)


def test_wasserstein_between_diracs_is_the_distance():
    x, y = [[0.0, 0.0, 0.0]], [[1.0, 2.0, 2.0]]
    for q in (1.0, 2.0, 3.0):
        assert wasserstein(_uniform(x), _uniform(y), q).value == pytest.approx(3.0)


def test_assignment_matches_enumeration_of_permutations():
    rng = np.random.default_rng(1)
    x, y = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
    best = min(np.mean(np.linalg.norm(x - y[list(p)], axis=1)) for p in itertools.permutations(range(3)))
    result = wasserstein(_uniform(x), _uniform(y), 1.0)
    assert result.diagnostics["solver"] == "assignment"
    assert result.value == pytest.approx(best, rel=1e-12)


def test_dirac_against_symmetric_two_point_law():
    mu = _uniform([[0.0]])
    nu = _uniform([[1.0], [-1.0]])
    assert wasserstein(mu, nu, 1.0).value == pytest.approx(1.0)
    assert dual_lipschitz(mu, nu).value == pytest.approx(1.0)


def test_exact_solver_budget_is_enforced():
    rng = np.random.default_rng(2)
    mu = _uniform(rng.standard_normal((4097, 2)))
    nu = _uniform(rng.standard_normal((10, 2)))
    with pytest.raises(SolverBudgetError):
        wasserstein(mu, nu, 1.0)


def test_sorted_solver_agrees_with_network_simplex():
    rng = np.random.default_rng(3)
    x, y = rng.standard_normal(7), rng.standard_normal(11)
    wx, wy = rng.dirichlet(np.ones(7)), rng.dirichlet(np.ones(11))
    line = wasserstein(EmpiricalMeasure(x[:, None], wx / wx.sum()), EmpiricalMeasure(y[:, None], wy / wy.sum()), 2.0)
    # mêmes mesures plongées dans le plan
    zeros_x, zeros_y = np.zeros(7), np.zeros(11)
    plane = wasserstein(EmpiricalMeasure(np.column_stack([x, zeros_x]), wx / wx.sum()),
                        EmpiricalMeasure(np.column_stack([y, zeros_y]), wy / wy.sum()), 2.0)
    assert line.diagnostics["solver"] == "sorted"
    assert plane.diagnostics["solver"] == "network_simplex"
    assert line.value == pytest.approx(plane.value, rel=1e-8)


def test_transport_rejects_mismatched_inputs():
    with pytest.raises(ValueError):
        wasserstein(_uniform([[0.0]]), _uniform([[0.0, 1.0]]))
    with pytest.raises(ValueError):
        wasserstein(_uniform([[0.0]]), _uniform([[1.0]]), 0.5)
    with pytest.raises(TypeError):
        transport_cost(_uniform([[0.0]]), Maxwellian.standard(1), 1.0)


def _random_law(rng: np.random.Generator, n: int, d: int, uniform: bool) -> EmpiricalMeasure:
    pts = rng.standard_normal((n, d)) * rng.uniform(0.5, 2.0) + rng.normal(0.0, 1.0, d)
    if uniform:
        return EmpiricalMeasure.uniform(pts)
    w = rng.dirichlet(np.ones(n))
    return EmpiricalMeasure(pts, w / w.sum())


@pytest.mark.parametrize("q", [1.0, 2.0])
@pytest.mark.parametrize("d, uniform", [(1, True), (3, True), (2, False)])
def test_wasserstein_is_symmetric_and_satisfies_the_triangle_inequality(q, d, uniform):
    rng = np.random.default_rng(30)
    for _ in range(8):
        sizes = (12, 12, 12) if uniform else tuple(int(k) for k in rng.integers(3, 15, size=3))
        a, b, c = (_random_law(rng, n, d, uniform) for n in sizes)
        ab = wasserstein(a, b, q).value
        assert wasserstein(b, a, q).value == pytest.approx(ab, rel=1e-9, abs=1e-12)
        assert wasserstein(a, c, q).value <= ab + wasserstein(b, c, q).value + 1e-9


# ---------------------------------------------------------------------------
# Toscani norms
# ---------------------------------------------------------------------------

def test_multi_indices_counts():
    assert multi_indices(2, 2, 1) == [(1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    assert len(multi_indices(3, 2)) == 10


def test_toscani_between_gaussians_of_different_temperatures():
    # |e^{-ξ²/2} - e^{-ξ²}| / ξ² décroît depuis 1/2 en 0
    grid = FrequencyGrid(1e-3, 10.0, 200, 1)
    value = toscani_norm(Maxwellian((0.0,), 1.0), Maxwellian((0.0,), 2.0), 2.0, grid).value
    assert value == pytest.approx(0.5, abs=1e-3)


def test_toscani_dilation_identity():
    mu = _uniform([[1.0], [-1.0]])
    nu = _uniform([[0.5], [-0.5]])
    grid = FrequencyGrid(0.05, 20.0, 128, 1)
    s = 2.0
    scaled = toscani_norm(mu.pushforward(2.0), nu.pushforward(2.0), s, grid.scaled(0.5)).value
    assert scaled == pytest.approx(2.0 ** s * toscani_norm(mu, nu, s, grid).value, rel=1e-10)


def test_toscani_needs_matching_moments_unless_compensated():
    mu = _uniform([[0.0], [1.0]])
    nu = _uniform([[0.0], [-1.0]])
    with pytest.raises(MomentConstraintError):
        toscani_norm(mu, nu, 2.0)
    compensated = toscani_norm(mu, nu, 2.0, compensate=True)
    assert compensated.diagnostics["moment_mass"] == pytest.approx(1.0)
    assert math.isfinite(compensated.value)
    # s <= 1 : aucune contrainte
    assert toscani_norm(mu, nu, 1.0).value > 0


@pytest.mark.parametrize("d", [1, 3])
@pytest.mark.parametrize("s", [0.5, 1.0])
def test_toscani_grid_refinement_never_lowers_the_sup(d, s):
    rng = np.random.default_rng(31)
    mu = _uniform(rng.standard_normal((15, d)))
    nu = _uniform(1.3 * rng.standard_normal((15, d)))
    grid = FrequencyGrid(1e-2, 20.0, 33, 16)
    finer = grid.refined()
    assert finer.n_radii == 65
    np.testing.assert_allclose(finer.radii()[::2], grid.radii(), rtol=1e-12)
    coarse = toscani_norm(mu, nu, s, grid).value
    assert toscani_norm(mu, nu, s, finer).value >= coarse * (1.0 - 1e-12)


def test_fourier_norms_separate_a_small_perturbation():
    rng = np.random.default_rng(32)
    pts = rng.standard_normal((20, 3))
    mu = _uniform(pts)
    nudged = _uniform(pts + 1e-3 * rng.standard_normal((20, 3)))
    assert toscani_norm(mu, _uniform(pts.copy()), 1.0).value == 0.0
    assert toscani_norm(mu, nudged, 1.0).value > 0.0
    assert sobolev_neg_norm(mu, _uniform(pts.copy()), 1.75).value == 0.0
    assert sobolev_neg_norm(mu, nudged, 1.75).value > 0.0


# ---------------------------------------------------------------------------
# Negative Sobolev norms
# ---------------------------------------------------------------------------

def _sobolev_oracle_two_point() -> float:
    """‖½(δ₁ + δ₋₁) - δ₀‖²_{Ḣ^-0.75} in d=1: 2 ∫₀^∞ (1 - cos ξ)² ξ^{-1.5} dξ."""
    head, _ = integrate.quad(lambda x: (1 - math.cos(x)) ** 2 * x ** -1.5, 0.0, 50.0, limit=400)
    # queue : (1 - cos)² = 3/2 - 2 cos x + cos(2x)/2
    flat = 1.5 * 2.0 / math.sqrt(50.0)
    osc1, _ = integrate.quad(lambda x: x ** -1.5, 50.0, np.inf, weight="cos", wvar=1.0)
    osc2, _ = integrate.quad(lambda x: x ** -1.5, 50.0, np.inf, weight="cos", wvar=2.0)
    return 2.0 * (head + flat - 2.0 * osc1 + 0.5 * osc2)


def test_sobolev_riesz_form_matches_fourier_integral():
    mu = _uniform([[1.0], [-1.0]])
    nu = _uniform([[0.0]])
    oracle = _sobolev_oracle_two_point()
    assert sobolev_neg_norm(mu, nu, 0.75, method="riesz").value ** 2 == pytest.approx(oracle, rel=1e-6)
    truncated = sobolev_neg_norm(mu, nu, 0.75)
    tail = truncated.diagnostics["tail_estimate"]
    assert 0.0 < tail <= truncated.diagnostics["tail_bound"]
    assert truncated.value ** 2 < oracle
    assert truncated.value ** 2 + tail == pytest.approx(oracle, rel=1e-3)


def test_riesz_constant_closed_form():
    value, _ = integrate.quad(lambda x: 2 * (1 - math.cos(x)) * x ** -1.5, 0.0, 1.0)
    tail = 2.0 * 2.0 - 2.0 * integrate.quad(lambda x: x ** -1.5, 1.0, np.inf, weight="cos", wvar=1.0)[0]
    assert riesz_constant(1, 0.5) == pytest.approx(value + tail, rel=1e-6)


def test_sobolev_of_identical_measures_is_zero():
    mu = _uniform(np.random.default_rng(4).standard_normal((15, 2)))
    assert sobolev_neg_norm(mu, mu, 1.25, method="riesz").value == pytest.approx(0.0, abs=1e-7)


def test_sobolev_index_window_and_mean_constraint():
    mu, nu = _uniform([[0.0]]), _uniform([[1.0]])
    with pytest.raises(AdmissibilityError):
        sobolev_neg_norm(mu, nu, 0.5)
    with pytest.raises(AdmissibilityError):
        sobolev_neg_norm(mu, nu, 1.5)
    with pytest.raises(MomentConstraintError):
        sobolev_neg_norm(mu, nu, 1.2)
    assert sobolev_neg_norm(mu, nu, 1.2, method="riesz", constrained=False).value > 0


def test_sobolev_against_a_maxwellian_uses_closed_forms():
    law = Maxwellian.standard(1)
    sample = law.sample_measure(4000, np.random.default_rng(5))
    value = sobolev_neg_norm(sample, law, 0.75, method="riesz", constrained=False).value
    assert 0.0 < value < 0.2


# ---------------------------------------------------------------------------
# Inequality battery
# ---------------------------------------------------------------------------

def _small_settings() -> BatterySettings:
    return BatterySettings(dimension=1, calibration_trials=10, grid=FrequencyGrid(1e-2, 50.0, 48, 1))


def test_battery_has_one_row_per_trial_and_inequality():
    report = inequality_battery(random_discrete_pair, 20, np.random.default_rng(6), _small_settings(),
                                np.random.default_rng(7))
    assert list(report.columns) == BATTERY_COLUMNS
    assert len(report) == 20 * 7
    explicit = report[report["inequality_id"].isin(EXPLICIT_INEQUALITIES)]
    assert not explicit["violated"].any()


def test_battery_identical_measures_give_zero_lhs():
    def same(rng):
        mu = _uniform(rng.standard_normal((5, 1)))
        return mu, mu
    report = inequality_battery(same, 3, np.random.default_rng(8), _small_settings())
    np.testing.assert_allclose(report["lhs"], 0.0, atol=1e-7)
    assert not report["violated"].any()


def test_battery_settings_validation():
    assert BatterySettings(q=2.0, k=4.0).alpha == pytest.approx(0.75)
    assert BatterySettings(dimension=3).s_sobolev == pytest.approx(1.75)
    with pytest.raises(ValueError):
        BatterySettings(q=1.0)
    with pytest.raises(ValueError):
        BatterySettings(s_fourier=1.5)
