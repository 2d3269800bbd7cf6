"""
Distances between probability measures on R^d: Wasserstein, dual-Lipschitz,
Toscani Fourier norms, homogeneous negative Sobolev norms, and the battery
checking the comparison inequalities between them.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import ot
import pandas as pd
from scipy import sparse
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import gamma as gamma_fn, ndtri
from scipy.stats import qmc

from constants import (
    ASSIGNMENT_BUDGET, MOMENT_TOLERANCE, NETWORK_SIMPLEX_BUDGET, NETWORK_SIMPLEX_MAX_ITER,
    SOBOLEV_QUADRATURE, TOSCANI_GRID,
)
from kernels import sphere_area
from measures import EmpiricalMeasure, moment

logger = logging.getLogger(__name__)


class SolverBudgetError(ValueError):
    """Transport problem larger than the exact solvers accept."""


class MomentConstraintError(ValueError):
    """Moments of μ - ν that must vanish for the norm to be finite do not."""


class AdmissibilityError(ValueError):
    """Smoothness index outside the admissible window."""


@dataclass
class MetricResult:
    kind: str
    value: float
    diagnostics: Dict[str, object] = field(default_factory=dict)

    def __float__(self) -> float:
        return float(self.value)


def _dimension(law) -> int:
    if isinstance(law, EmpiricalMeasure):
        return law.dimension
    return int(law.dimension)


def _check_dimensions(mu, nu) -> int:
    d_mu, d_nu = _dimension(mu), _dimension(nu)
    if d_mu != d_nu:
        raise ValueError(f"measures live in different dimensions: {d_mu} and {d_nu}")
    return d_mu


def _require_empirical(mu, nu) -> None:
    for law in (mu, nu):
        if not isinstance(law, EmpiricalMeasure):
            raise TypeError(f"transport distances need empirical measures, got {type(law).__name__}")


# ---------------------------------------------------------------------------
# Optimal transport
# ---------------------------------------------------------------------------

def _sorted_coupling_cost(mu: EmpiricalMeasure, nu: EmpiricalMeasure, q: float) -> float:
    x, y = mu.points[:, 0], nu.points[:, 0]
    if mu.is_uniform and nu.is_uniform and mu.size == nu.size:
        return float(np.mean(np.abs(np.sort(x) - np.sort(y)) ** q))
    coupling = sparse.coo_matrix(ot.lp.emd_1d(x, y, mu.weights, nu.weights, metric="minkowski", p=1.0, dense=False))
    return float(np.sum(coupling.data * np.abs(x[coupling.row] - y[coupling.col]) ** q))


def transport_cost(mu: EmpiricalMeasure, nu: EmpiricalMeasure, q: float) -> MetricResult:
    """min over couplings of ∫ |x - y|^q dπ, without the 1/q root."""
    if not q > 0:
        raise ValueError(f"transport exponent must be positive, got {q}")
    _require_empirical(mu, nu)
    d = _check_dimensions(mu, nu)

    if d == 1 and q >= 1:
        return MetricResult("transport_cost", _sorted_coupling_cost(mu, nu, q), {"solver": "sorted", "q": q})

    largest = max(mu.size, nu.size)
    if largest > NETWORK_SIMPLEX_BUDGET:
        raise SolverBudgetError(
            f"{largest} support points exceed the exact solver budget of {NETWORK_SIMPLEX_BUDGET}; "
            "subsample the measures before computing the distance"
        )
    C = cdist(mu.points, nu.points) ** q
    if mu.size == nu.size and mu.is_uniform and nu.is_uniform and mu.size <= ASSIGNMENT_BUDGET:
        rows, cols = linear_sum_assignment(C)
        return MetricResult("transport_cost", float(C[rows, cols].mean()), {"solver": "assignment", "q": q})

    plan, log = ot.emd(mu.weights, nu.weights, np.ascontiguousarray(C), numItermax=NETWORK_SIMPLEX_MAX_ITER, log=True)
    converged = not log.get("warning")
    if not converged:
        logger.warning("Network simplex did not converge: %s", log.get("warning"))
    return MetricResult("transport_cost", float(np.sum(plan * C)),
                        {"solver": "network_simplex", "q": q, "converged": converged})


def wasserstein(mu: EmpiricalMeasure, nu: EmpiricalMeasure, q: float = 1.0) -> MetricResult:
    """W_q = cost_q^{1/q}, the rooted metric convention."""
    if q < 1:
        raise ValueError(f"W_q needs q >= 1, got {q}")
    cost = transport_cost(mu, nu, q)
    return MetricResult(f"W{q:g}", max(cost.value, 0.0) ** (1.0 / q), dict(cost.diagnostics, cost=cost.value))


def dual_lipschitz(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> MetricResult:
    """[μ - ν]*_1, equal to W_1 by Kantorovich-Rubinstein duality."""
    result = wasserstein(mu, nu, 1.0)
    return MetricResult("dual_lipschitz", result.value, result.diagnostics)


# ---------------------------------------------------------------------------
# Fourier grids and moments
# ---------------------------------------------------------------------------

def sphere_directions(d: int, n: int, half: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """Direction set on S^{d-1} with equal quadrature weights summing to |S^{d-1}|."""
    area = sphere_area(d)
    if d == 1:
        dirs = np.array([[1.0]]) if half else np.array([[1.0], [-1.0]])
    elif d == 2:
        span = np.pi if half else 2 * np.pi
        ang = span * np.arange(n) / n
        dirs = np.column_stack([np.cos(ang), np.sin(ang)])
    elif d == 3:
        # Fibonacci sphere
        i = np.arange(n) + 0.5
        z = 1.0 - 2.0 * i / n
        phi = np.pi * (3.0 - math.sqrt(5.0)) * np.arange(n)
        rho = np.sqrt(1.0 - z ** 2)
        dirs = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    else:
        pts = qmc.Sobol(d, scramble=True, seed=0).random(n)
        dirs = ndtri(np.clip(pts, 1e-12, 1 - 1e-12))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    weights = np.full(dirs.shape[0], area / dirs.shape[0])
    return dirs, weights


@dataclass(frozen=True)
class FrequencyGrid:
    """Log-spaced radii times a direction set."""

    r_min: float = TOSCANI_GRID["r_min"]
    r_max: float = TOSCANI_GRID["r_max"]
    n_radii: int = TOSCANI_GRID["n_radii"]
    n_directions: int = TOSCANI_GRID["n_directions"]

    def __post_init__(self) -> None:
        if not 0 < self.r_min < self.r_max:
            raise ValueError(f"grid radii must satisfy 0 < r_min < r_max, got [{self.r_min}, {self.r_max}]")
        if self.n_radii < 2 or self.n_directions < 1:
            raise ValueError("grid needs at least two radii and one direction")

    def radii(self) -> np.ndarray:
        return np.geomspace(self.r_min, self.r_max, self.n_radii)

    def points(self, d: int) -> Tuple[np.ndarray, np.ndarray]:
        # |μ̂(-ξ)| = |μ̂(ξ)| : une demi-sphère suffit
        dirs, _ = sphere_directions(d, self.n_directions, half=True)
        r = self.radii()
        xi = (r[:, None, None] * dirs[None, :, :]).reshape(-1, d)
        return xi, np.repeat(r, dirs.shape[0])

    def refined(self) -> "FrequencyGrid":
        """Nested refinement: every old radius is kept."""
        return FrequencyGrid(self.r_min, self.r_max, 2 * self.n_radii - 1, self.n_directions)

    def scaled(self, factor: float) -> "FrequencyGrid":
        return FrequencyGrid(self.r_min * factor, self.r_max * factor, self.n_radii, self.n_directions)

    def as_dict(self) -> Dict[str, float]:
        return {"r_min": self.r_min, "r_max": self.r_max, "n_radii": self.n_radii, "n_directions": self.n_directions}


def multi_indices(d: int, max_order: int, min_order: int = 0) -> List[Tuple[int, ...]]:
    """All j ∈ N^d with min_order ≤ |j| ≤ max_order."""
    out = []
    for order in range(min_order, max_order + 1):
        for combo in itertools.combinations_with_replacement(range(d), order):
            out.append(tuple(np.bincount(np.asarray(combo, dtype=int), minlength=d).tolist()))
    return out


def moment_differences(mu, nu, max_order: int) -> Dict[Tuple[int, ...], float]:
    d = _check_dimensions(mu, nu)
    return {j: mu.raw_moment(j) - nu.raw_moment(j) for j in multi_indices(d, max_order, 1)}


def cutoff_bump(r: np.ndarray) -> np.ndarray:
    """Smooth χ(|ξ|): 1 on [0, 1], 0 on [2, ∞)."""
    r = np.asarray(r, dtype=float)

    def psi(x: np.ndarray) -> np.ndarray:
        out = np.zeros_like(x)
        pos = x > 0
        out[pos] = np.exp(-1.0 / x[pos])
        return out

    a, b = psi(2.0 - r), psi(r - 1.0)
    return a / (a + b)


def toscani_norm(mu, nu, s: float, grid: Optional[FrequencyGrid] = None, compensate: bool = False,
                 tolerance: float = MOMENT_TOLERANCE) -> MetricResult:
    """
    sup_ξ |μ̂(ξ) - ν̂(ξ)| / |ξ|^s over the grid.

    Moments of order up to ⌈s⌉-1 must agree unless compensate is set, in which
    case the smooth Taylor part χ Σ (-i)^|j| ξ^j M_j / j! is removed first and
    Σ |M_j| is added back.
    """
    if not s > 0:
        raise ValueError(f"Toscani index must be positive, got {s}")
    d = _check_dimensions(mu, nu)
    grid = grid or FrequencyGrid()
    xi, r = grid.points(d)
    diff = mu.characteristic(xi) - nu.characteristic(xi)

    max_order = int(math.ceil(s)) - 1
    deltas = moment_differences(mu, nu, max_order) if max_order >= 1 else {}
    extra = 0.0
    if not compensate:
        for j, delta in deltas.items():
            if abs(delta) > tolerance:
                raise MomentConstraintError(
                    f"moment {j} of μ - ν is {delta:.3g}, must vanish for |·|_{s:g}; use compensate=True"
                )
    elif deltas:
        taylor = np.zeros(xi.shape[0], dtype=complex)
        for j, delta in deltas.items():
            order = sum(j)
            factorial = float(np.prod([math.factorial(k) for k in j]))
            taylor += (-1j) ** order * np.prod(xi ** np.asarray(j, dtype=float), axis=1) * delta / factorial
        diff = diff - cutoff_bump(r) * taylor
        extra = float(sum(abs(v) for v in deltas.values()))

    ratio = np.abs(diff) / r ** s
    idx = int(np.argmax(ratio))
    diagnostics = dict(grid.as_dict(), argmax_radius=float(r[idx]), compensated=compensate, moment_mass=extra)
    return MetricResult(f"toscani_{s:g}", float(ratio[idx]) + extra, diagnostics)


# ---------------------------------------------------------------------------
# Negative Sobolev norms
# ---------------------------------------------------------------------------

def admissible_window(d: int) -> Tuple[float, float]:
    return d / 2.0, d / 2.0 + 1.0


def riesz_constant(d: int, alpha: float) -> float:
    """C with ∫ (1 - cos ξ·x) |ξ|^{-d-α} dξ = C |x|^α, α ∈ (0, 2)."""
    return 2.0 * math.pi ** (d / 2.0) * gamma_fn(1.0 - alpha / 2.0) / (alpha * 2.0 ** alpha * gamma_fn((d + alpha) / 2.0))


def _riesz_cross(mu, nu, alpha: float) -> float:
    """E |X - Y|^α with X ~ μ, Y ~ ν independent."""
    if isinstance(mu, EmpiricalMeasure) and isinstance(nu, EmpiricalMeasure):
        return float(mu.weights @ (cdist(mu.points, nu.points) ** alpha) @ nu.weights)
    if isinstance(mu, EmpiricalMeasure):
        return float(mu.weights @ nu.riesz_expectation(mu.points, alpha))
    if isinstance(nu, EmpiricalMeasure):
        return float(nu.weights @ mu.riesz_expectation(nu.points, alpha))
    raise TypeError("at least one of the measures must be empirical")


def riesz_self_energy(law, alpha: float) -> float:
    if isinstance(law, EmpiricalMeasure):
        return _riesz_cross(law, law, alpha)
    return float(law.riesz_self(alpha))


def _atom_mass(mu, nu) -> float:
    """Σ c_a² over the merged atoms of μ - ν: the mean of |μ̂ - ν̂|² at high frequency."""
    pts, wts = [], []
    for law, sign in ((mu, 1.0), (nu, -1.0)):
        if isinstance(law, EmpiricalMeasure):
            pts.append(law.points)
            wts.append(sign * law.weights)
    if not pts:
        return 0.0
    uniq, inverse = np.unique(np.vstack(pts), axis=0, return_inverse=True)
    merged = np.bincount(np.ravel(inverse), weights=np.concatenate(wts), minlength=uniq.shape[0])
    return float(np.sum(merged ** 2))


def _radial_nodes(config: Dict[str, float]) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre in log r on [r_low, 1], then panels in r up to r_max."""
    r_low, r_max = config["r_low"], config["r_max"]
    x, w = np.polynomial.legendre.leggauss(int(config["n_log_nodes"]))
    lo, hi = math.log(r_low), 0.0
    u = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    nodes = [np.exp(u)]
    weights = [0.5 * (hi - lo) * w * np.exp(u)]
    xp, wp = np.polynomial.legendre.leggauss(int(config["nodes_per_panel"]))
    edges = np.arange(1.0, r_max + 1e-12, config["panel_width"])
    if edges[-1] < r_max:
        edges = np.append(edges, r_max)
    for a, b in zip(edges[:-1], edges[1:]):
        nodes.append(0.5 * (b - a) * xp + 0.5 * (b + a))
        weights.append(0.5 * (b - a) * wp)
    return np.concatenate(nodes), np.concatenate(weights)


def sobolev_neg_norm(mu, nu, s: float, quadrature: Optional[Dict[str, float]] = None, method: str = "quadrature",
                     constrained: bool = True) -> MetricResult:
    """
    ‖μ - ν‖_{Ḣ^{-s}} = (∫ |μ̂ - ν̂|² |ξ|^{-2s} dξ)^{1/2}, s ∈ (d/2, d/2 + 1).

    The quadrature value is truncated at r_max; the worst-case tail bound and
    the atomic tail estimate are reported in the diagnostics only.
    """
    d = _check_dimensions(mu, nu)
    lo, hi = admissible_window(d)
    if not lo < s < hi:
        raise AdmissibilityError(f"Ḣ^-s needs s in ({lo:g}, {hi:g}) for d={d}, got s={s}")
    if constrained and s >= lo + 0.5:
        mean_gap = np.asarray(mu.mean(), dtype=float) - np.asarray(nu.mean(), dtype=float)
        if np.max(np.abs(mean_gap)) > MOMENT_TOLERANCE:
            raise MomentConstraintError(f"first moments differ by {mean_gap.tolist()}, required equal for s >= d/2 + 1/2")

    alpha = 2.0 * s - d
    if method == "riesz":
        energy = 2.0 * _riesz_cross(mu, nu, alpha) - riesz_self_energy(mu, alpha) - riesz_self_energy(nu, alpha)
        value2 = riesz_constant(d, alpha) * max(energy, 0.0)
        return MetricResult(f"sobolev_{s:g}", math.sqrt(value2), {"method": "riesz", "alpha": alpha})
    if method != "quadrature":
        raise ValueError(f"Unknown Sobolev method: {method}")

    config = dict(SOBOLEV_QUADRATURE, **(quadrature or {}))
    r_nodes, r_weights = _radial_nodes(config)
    dirs, dir_weights = sphere_directions(d, int(config["n_directions"]))
    total = 0.0
    for r, wr in zip(r_nodes, r_weights):
        delta = mu.characteristic(r * dirs) - nu.characteristic(r * dirs)
        total += wr * r ** (d - 1 - 2 * s) * float(dir_weights @ np.abs(delta) ** 2)

    r_low, r_max = config["r_low"], config["r_max"]
    delta_low = mu.characteristic(r_low * dirs) - nu.characteristic(r_low * dirs)
    small = float(dir_weights @ np.abs(delta_low) ** 2) * r_low ** (d - 2 * s) / (d + 2 - 2 * s)
    area = sphere_area(d)
    tail_bound = 4.0 * area * r_max ** (d - 2 * s) / (2 * s - d)
    tail_estimate = _atom_mass(mu, nu) * area * r_max ** (d - 2 * s) / (2 * s - d)
    value2 = total + small
    diagnostics = {
        "method": "quadrature",
        "r_max": r_max,
        "radial_nodes": int(r_nodes.size),
        "directions": int(dirs.shape[0]),
        "tail_bound": tail_bound,
        "tail_estimate": tail_estimate,
    }
    return MetricResult(f"sobolev_{s:g}", math.sqrt(max(value2, 0.0)), diagnostics)


# ---------------------------------------------------------------------------
# Comparison inequalities
# ---------------------------------------------------------------------------

BATTERY_COLUMNS = ["trial", "inequality_id", "lhs", "rhs", "margin", "violated"]

EXPLICIT_INEQUALITIES = ("W1_le_Wq", "Wq_le_moment_W1", "fourier_le_cost", "cost_le_W1")
FITTED_INEQUALITIES = ("sobolev_le_fourier1", "W1_le_fourier", "W1_le_sobolev")

PairGenerator = Callable[[np.random.Generator], Tuple[EmpiricalMeasure, EmpiricalMeasure]]


@dataclass
class BatterySettings:
    dimension: int = 1
    q: float = 2.0
    k: float = 4.0
    s_fourier: float = 0.5
    s_sobolev: Optional[float] = None
    calibration_trials: int = 50
    safety: float = 2.0
    grid: FrequencyGrid = field(default_factory=FrequencyGrid)

    def __post_init__(self) -> None:
        if self.s_sobolev is None:
            self.s_sobolev = max(1.0, self.dimension / 2.0 + 0.25)
        if not (self.q > 1 and self.k > 0):
            raise ValueError(f"battery needs q > 1 and k > 0, got q={self.q}, k={self.k}")
        if not 0 < self.s_fourier <= 1:
            raise ValueError(f"s_fourier must lie in (0, 1], got {self.s_fourier}")

    @property
    def alpha(self) -> float:
        return 1.0 - (self.q - 1.0) / self.k


def random_discrete_pair(rng: np.random.Generator, dimension: int = 1, min_points: int = 2,
                         max_points: int = 24) -> Tuple[EmpiricalMeasure, EmpiricalMeasure]:
    """Two random discrete laws; uniform weights on equal sizes half of the time."""
    def draw(n: int, uniform: bool) -> EmpiricalMeasure:
        pts = rng.standard_normal((n, dimension)) * rng.uniform(0.2, 2.0) + rng.normal(0, 0.5, dimension)
        if uniform:
            return EmpiricalMeasure.uniform(pts)
        w = rng.dirichlet(np.ones(n))
        return EmpiricalMeasure(pts, w / w.sum())

    if rng.random() < 0.5:
        n = int(rng.integers(min_points, max_points + 1))
        return draw(n, True), draw(n, True)
    n, m = rng.integers(min_points, max_points + 1, size=2)
    return draw(int(n), False), draw(int(m), False)


def _moment_bound(mu: EmpiricalMeasure, nu: EmpiricalMeasure, order: float) -> float:
    return max(1.0 + moment(mu, order), 1.0 + moment(nu, order))


def _battery_terms(mu: EmpiricalMeasure, nu: EmpiricalMeasure, settings: BatterySettings) -> Dict[str, Tuple[float, float]]:
    """(lhs, rhs) per inequality; fitted ones carry their rhs without the constant."""
    q, k, a = settings.q, settings.k, settings.alpha
    s_f, s_h = settings.s_fourier, settings.s_sobolev
    d = settings.dimension
    w1 = wasserstein(mu, nu, 1.0).value
    cost_q = transport_cost(mu, nu, q).value
    cost_s = transport_cost(mu, nu, s_f).value
    m_k1 = _moment_bound(mu, nu, k + 1.0)
    fourier_s = toscani_norm(mu, nu, s_f, settings.grid).value
    fourier_1 = toscani_norm(mu, nu, 1.0, settings.grid).value
    sobolev = sobolev_neg_norm(mu, nu, s_h, method="riesz", constrained=False).value

    alpha_1 = d / (d + k + k * (d + s_f - 1))
    gamma_1 = k / (d + k + k * (d + s_f - 1))
    alpha_2 = (d / 2) / (d / 2 + k + k * (s_h - 1))
    gamma_2 = k / (d / 2 + k + k * (s_h - 1))
    return {
        "W1_le_Wq": (w1, cost_q ** (1.0 / q)),
        "Wq_le_moment_W1": (cost_q, 2.0 ** ((k + 1) * (1 - a)) * m_k1 ** (1 - a) * w1 ** a),
        "fourier_le_cost": (fourier_s, 2.0 ** (1 - s_f) * cost_s),
        "cost_le_W1": (2.0 ** (1 - s_f) * cost_s, 2.0 ** (1 - s_f) * w1 ** s_f),
        "sobolev_le_fourier1": (sobolev ** 2, fourier_1 ** (2 * s_h - d)),
        "W1_le_fourier": (w1, m_k1 ** alpha_1 * fourier_s ** gamma_1),
        "W1_le_sobolev": (w1, m_k1 ** alpha_2 * sobolev ** gamma_2),
    }


def calibrate_constants(pair_generator: PairGenerator, settings: BatterySettings,
                        rng: np.random.Generator) -> Dict[str, float]:
    """Largest lhs/rhs ratio of the fitted inequalities over a calibration set, times the safety factor."""
    ratios = {name: 0.0 for name in FITTED_INEQUALITIES}
    for _ in range(settings.calibration_trials):
        mu, nu = pair_generator(rng)
        terms = _battery_terms(mu, nu, settings)
        for name in FITTED_INEQUALITIES:
            lhs, rhs = terms[name]
            if rhs > 0:
                ratios[name] = max(ratios[name], lhs / rhs)
    return {name: settings.safety * max(r, 1e-300) for name, r in ratios.items()}


def inequality_battery(pair_generator: PairGenerator, trials: int, rng: np.random.Generator,
                       settings: Optional[BatterySettings] = None,
                       calibration_rng: Optional[np.random.Generator] = None) -> pd.DataFrame:
    """Checks every comparison inequality on trials random pairs; one row per (trial, inequality)."""
    settings = settings or BatterySettings()
    constants = calibrate_constants(pair_generator, settings, calibration_rng or rng)
    rows = []
    for trial in range(trials):
        mu, nu = pair_generator(rng)
        for name, (lhs, rhs) in _battery_terms(mu, nu, settings).items():
            rhs = rhs * constants.get(name, 1.0)
            margin = rhs - lhs
            tol = 1e-9 * max(1.0, abs(rhs))
            rows.append((trial, name, lhs, rhs, margin, bool(margin < -tol)))
    report = pd.DataFrame(rows, columns=BATTERY_COLUMNS)
    n_bad = int(report["violated"].sum())
    if n_bad:
        logger.warning("Inequality battery: %d violations over %d trials", n_bad, trials)
    return report
