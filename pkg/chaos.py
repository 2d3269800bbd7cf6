"""
Chaotic initial data, law-of-large-numbers functionals for empirical measures,
chaos-gap estimators and the equilibrium chaoticity (Mehler) experiment.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache, partial
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import gammainc

from constants import DICTIONARY_DEFAULTS, MCMC_DEFAULTS, REFERENCE_SAMPLE_RATIO, RHAT_THRESHOLD
from kernels import KernelSpec
from limit import Maxwellian
from measures import (
    CosinePacket, EmpiricalMeasure, LipschitzRamp, TensorObservable, first_coordinates_observable,
    poly_observable, sym_observable, tensor_power,
)
from metrics import riesz_constant, riesz_self_energy, sobolev_neg_norm, wasserstein
from particle import simulate
from utils import SlopeFit, bootstrap_se, loglog_slope, mean_and_se, parallel_map, substream

logger = logging.getLogger(__name__)

BASE_LAWS = ("gaussian", "uniform_ball", "two_point", "sample_file")
MODES = ("tensor", "kac_sphere", "conditioned")
LLN_DISTANCES = ("W1", "W2sq", "sobolev_sq")

LLN_COLUMNS = ["N", "t", "ell", "estimator", "value", "stderr", "dictionary_id", "exact"]
CHAOS_COLUMNS = ["N", "t", "ell", "estimator", "value", "stderr", "dictionary_id"]


@lru_cache(maxsize=8)
def _load_sample_file(path: str) -> np.ndarray:
    frame = pd.read_csv(path)
    cols = [c for c in frame.columns if c.startswith("v_")] or list(frame.columns)
    return frame[cols].to_numpy(dtype=float)


@dataclass(frozen=True)
class InitialDataSpec:
    """Base law f0 and the way N-particle data are built from it."""

    base_law: str = "gaussian"
    dimension: int = 3
    mean: Optional[Tuple[float, ...]] = None
    temperature: float = 1.0
    variances: Optional[Tuple[float, ...]] = None
    radius: float = 1.0
    atom: Optional[Tuple[float, ...]] = None
    sample_path: Optional[str] = None
    mode: str = "tensor"
    energy: float = 1.0
    project_momentum: bool = False
    sub_gaussian: bool = True
    compact_support: bool = False
    support_radius: float = 4.0
    burn_in: int = MCMC_DEFAULTS["burn_in"]
    thinning: int = MCMC_DEFAULTS["thinning"]
    step: float = MCMC_DEFAULTS["step"]
    chains: int = MCMC_DEFAULTS["chains"]

    def __post_init__(self) -> None:
        if self.base_law not in BASE_LAWS:
            raise ValueError(f"Unknown base law: {self.base_law}")
        if self.mode not in MODES:
            raise ValueError(f"Unknown initial data mode: {self.mode}")
        if self.dimension < 1:
            raise ValueError(f"dimension must be >= 1, got {self.dimension}")
        if self.mode != "tensor" and not self.energy > 0:
            raise ValueError(f"Kac sphere energy must be positive, got {self.energy}")
        if self.mode == "conditioned":
            if not self.sub_gaussian:
                raise ValueError("conditioned data need a base law declared sub-Gaussian")
            if self.base_law in ("two_point", "sample_file"):
                raise ValueError(f"conditioned data need a density, base law {self.base_law} has none")
        if self.base_law == "sample_file" and not self.sample_path:
            raise ValueError("base law sample_file needs sample_path")
        if self.variances is not None and len(self.variances) != self.dimension:
            raise ValueError(f"variances must have {self.dimension} entries")
        if not self.temperature > 0 or not self.radius > 0:
            raise ValueError("temperature and radius must be positive")

    def center(self) -> np.ndarray:
        return np.zeros(self.dimension) if self.mean is None else np.asarray(self.mean, dtype=float)

    def law(self) -> Optional[Maxwellian]:
        """Analytic form of f0 when it is an isotropic Gaussian."""
        if self.base_law == "gaussian" and self.variances is None and not self.compact_support:
            return Maxwellian(tuple(self.center()), self.temperature)
        return None

    def exact_measure(self) -> Optional[EmpiricalMeasure]:
        """f0 itself when it is discrete."""
        if self.base_law == "two_point":
            a = self._atom()
            return EmpiricalMeasure.uniform(np.vstack([a, -a]))
        return None

    def _atom(self) -> np.ndarray:
        if self.atom is None:
            a = np.zeros(self.dimension)
            a[0] = 1.0
            return a
        return np.asarray(self.atom, dtype=float)

    def draw_base(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n i.i.d. draws of f0."""
        if not self.compact_support:
            return self._draw_raw(n, rng)
        out = np.empty((0, self.dimension))
        while out.shape[0] < n:
            batch = self._draw_raw(2 * (n - out.shape[0]) + 8, rng)
            out = np.vstack([out, batch[np.linalg.norm(batch, axis=1) <= self.support_radius]])
        return out[:n]

    def _draw_raw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        d = self.dimension
        if self.base_law == "gaussian":
            scale = np.sqrt(self.variances) if self.variances is not None else math.sqrt(self.temperature)
            return self.center() + scale * rng.standard_normal((n, d))
        if self.base_law == "uniform_ball":
            x = rng.standard_normal((n, d))
            ssq = np.sum(x ** 2, axis=1)
            fr = self.radius * gammainc(d / 2, ssq / 2) ** (1 / d) / np.sqrt(ssq)
            return self.center() + x * fr[:, None]
        if self.base_law == "two_point":
            signs = np.where(rng.random(n) < 0.5, 1.0, -1.0)
            return signs[:, None] * self._atom()[None, :]
        pool = _load_sample_file(self.sample_path)
        if pool.shape[1] != d:
            raise ValueError(f"sample file has d={pool.shape[1]}, expected {d}")
        return pool[rng.integers(0, pool.shape[0], size=n)]

    def log_density(self, points: np.ndarray) -> np.ndarray:
        """log f0 up to a constant, summed over the rows."""
        points = np.atleast_2d(points)
        if self.compact_support and np.any(np.linalg.norm(points, axis=1) > self.support_radius):
            return np.array(-np.inf)
        if self.base_law == "gaussian":
            var = np.asarray(self.variances) if self.variances is not None else self.temperature
            return np.array(-0.5 * np.sum((points - self.center()) ** 2 / var))
        if self.base_law == "uniform_ball":
            inside = np.all(np.linalg.norm(points - self.center(), axis=1) <= self.radius)
            return np.array(0.0 if inside else -np.inf)
        raise ValueError(f"base law {self.base_law} has no density")

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return sample_initial(self, n, rng)


# ---------------------------------------------------------------------------
# Initial data
# ---------------------------------------------------------------------------

def kac_sphere_sample(n: int, dimension: int, energy: float, rng: np.random.Generator,
                      project_momentum: bool = False) -> np.ndarray:
    """Uniform point of S^{Nd-1}(√(N E)), optionally restricted to zero momentum."""
    g = rng.standard_normal((n, dimension))
    if project_momentum and n > 1:
        g -= g.mean(axis=0)
    return g * (math.sqrt(n * energy) / np.linalg.norm(g))


def split_rhat(chains: np.ndarray) -> float:
    """Split-chain potential scale reduction of an (m, n) array of traces."""
    chains = np.asarray(chains, dtype=float)
    half = chains.shape[1] // 2
    if half < 2:
        return float("nan")
    split = np.vstack([chains[:, :half], chains[:, half:2 * half]])
    n = split.shape[1]
    within = float(np.mean(np.var(split, axis=1, ddof=1)))
    between = n * float(np.var(split.mean(axis=1), ddof=1))
    if within <= 0:
        return 1.0
    var_plus = (n - 1) / n * within + between / n
    return math.sqrt(var_plus / within)


@dataclass
class MCMCDraw:
    sample: np.ndarray
    rhat: float
    acceptance: float

    @property
    def converged(self) -> bool:
        return not self.rhat > RHAT_THRESHOLD


def _great_circle_chain(spec: InitialDataSpec, n: int, rng: np.random.Generator, n_keep: int) -> Tuple[np.ndarray, np.ndarray, float]:
    d = spec.dimension
    radius = math.sqrt(n * spec.energy)
    x = kac_sphere_sample(n, d, spec.energy, rng, spec.project_momentum).reshape(-1)
    log_p = float(spec.log_density(x.reshape(n, d)))
    trace = np.empty(n_keep)
    accepted = 0
    total = spec.burn_in + n_keep * spec.thinning
    for it in range(total):
        z = rng.standard_normal(x.size)
        if spec.project_momentum:
            z = (z.reshape(n, d) - z.reshape(n, d).mean(axis=0)).reshape(-1)
        z -= (z @ x) / (radius ** 2) * x
        y = z * (radius / np.linalg.norm(z))
        angle = spec.step * rng.standard_normal()
        proposal = math.cos(angle) * x + math.sin(angle) * y
        proposal *= radius / np.linalg.norm(proposal)
        log_q = float(spec.log_density(proposal.reshape(n, d)))
        if log_q > log_p or math.log(rng.random() + 1e-300) < log_q - log_p:
            x, log_p = proposal, log_q
            accepted += 1
        kept = it - spec.burn_in
        if kept >= 0 and (kept + 1) % spec.thinning == 0:
            trace[(kept + 1) // spec.thinning - 1] = np.mean(np.sum(x.reshape(n, d) ** 2, axis=1) ** 2)
    return x.reshape(n, d), trace, accepted / total


def sample_conditioned(spec: InitialDataSpec, n: int, rng: np.random.Generator, n_keep: int = 40) -> MCMCDraw:
    """
    Metropolis walk on the Kac sphere targeting Π f0(v_j).

    spec.chains independent chains are run in full and only the final state
    of the first one is returned: the others exist for the split R̂ on M₄, so
    a draw costs `chains` times a single chain. chains = 1 skips the
    diagnostic (R̂ is NaN and the draw counts as converged).
    """
    draws = [_great_circle_chain(spec, n, rng, n_keep) for _ in range(max(1, spec.chains))]
    rhat = split_rhat(np.vstack([trace for _, trace, _ in draws])) if spec.chains > 1 else float("nan")
    result = MCMCDraw(draws[0][0], rhat, float(np.mean([acc for _, _, acc in draws])))
    if not result.converged:
        logger.warning("Conditioned initial data: split R-hat %.3f above %.2f", rhat, RHAT_THRESHOLD)
    return result


def sample_initial(spec: InitialDataSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """N-particle initial velocities as an (N, d) array."""
    if n < 1:
        raise ValueError(f"N must be >= 1, got {n}")
    if spec.mode == "tensor":
        return spec.draw_base(n, rng)
    if spec.mode == "kac_sphere":
        return kac_sphere_sample(n, spec.dimension, spec.energy, rng, spec.project_momentum)
    return sample_conditioned(spec, n, rng).sample


# ---------------------------------------------------------------------------
# Law of large numbers
# ---------------------------------------------------------------------------

def default_sobolev_index(dimension: int) -> float:
    return dimension / 2.0 + 0.25


def lln_identity(law, s: float, n: int) -> float:
    """E‖μ^N - f‖²_{Ḣ^{-s}} = (1/N) ∫ (1 - |f̂|²) |ξ|^{-2s} dξ = C(d, α) E|X - X'|^α / N."""
    d = law.dimension
    alpha = 2.0 * s - d
    return riesz_constant(d, alpha) * riesz_self_energy(law, alpha) / n


@dataclass
class LLNEntry:
    n: int
    mean: float
    stderr: float
    reps: int
    exact: Optional[float] = None


@dataclass
class LLNResult:
    distance: str
    dimension: int
    s: Optional[float]
    entries: List[LLNEntry]
    slope: Optional[SlopeFit] = None
    bound_exponent: Optional[float] = None
    classical_exponent: Optional[float] = None

    def to_frame(self) -> pd.DataFrame:
        rows = [(e.n, 0.0, 1, self.distance, e.mean, e.stderr, "", np.nan if e.exact is None else e.exact) for e in self.entries]
        return pd.DataFrame(rows, columns=LLN_COLUMNS)


def _reference_for(f0: InitialDataSpec, n: int, rng: np.random.Generator):
    exact = f0.exact_measure()
    if exact is not None:
        return exact
    return EmpiricalMeasure.uniform(f0.draw_base(REFERENCE_SAMPLE_RATIO * n, rng))


def wn_functional(f0: InitialDataSpec, distance: str, n: int, reps: int, rng: np.random.Generator,
                  s: Optional[float] = None) -> LLNEntry:
    """Monte Carlo mean over reps of D(μ^N_V, f0)."""
    if distance not in LLN_DISTANCES:
        raise ValueError(f"Unknown LLN distance: {distance}")
    if reps < 2:
        raise ValueError(f"need at least 2 repetitions for a standard error, got {reps}")
    d = f0.dimension
    law = f0.law()
    s = s if s is not None else default_sobolev_index(d)
    values = np.empty(reps)
    for r in range(reps):
        mu = EmpiricalMeasure.uniform(sample_initial(f0, n, rng))
        if distance == "sobolev_sq":
            target = law if law is not None and f0.mode == "tensor" else _reference_for(f0, n, rng)
            values[r] = sobolev_neg_norm(mu, target, s, method="riesz", constrained=False).value ** 2
        else:
            target = _reference_for(f0, n, rng)
            q = 1.0 if distance == "W1" else 2.0
            w = wasserstein(mu, target, q).value
            values[r] = w if distance == "W1" else w ** 2
    mean, se = mean_and_se(values)
    exact = None
    if distance == "sobolev_sq" and f0.mode == "tensor":
        source = law if law is not None else f0.exact_measure()
        if source is not None:
            exact = lln_identity(source, s, n)
    return LLNEntry(n, mean, se, reps, exact)


def _scan_point(index_and_n: Tuple[int, int], f0: InitialDataSpec, distance: str, reps: int, seed: int,
                s: Optional[float]) -> LLNEntry:
    index, n = index_and_n
    return wn_functional(f0, distance, n, reps, substream(seed, "lln", index), s)


def lln_rate_scan(f0: InitialDataSpec, distance: str, n_grid: Sequence[int], reps: int, seed: int,
                  s: Optional[float] = None, workers: Optional[int] = None) -> LLNResult:
    """W^N_D over a geometric N grid and the fitted log-log slope."""
    n_grid = [int(n) for n in n_grid]
    if len(n_grid) < 4:
        raise ValueError(f"N grid needs at least 4 points, got {len(n_grid)}")
    ratios = np.diff(np.log(n_grid))
    if np.any(ratios <= 0) or np.ptp(ratios) > 0.1 * np.mean(ratios):
        raise ValueError(f"N grid must be geometric and increasing, got {n_grid}")
    d = f0.dimension
    job = partial(_scan_point, f0=f0, distance=distance, reps=reps, seed=seed, s=s)
    entries = parallel_map(job, list(enumerate(n_grid)), workers)
    means = [e.mean for e in entries]
    slope = loglog_slope(n_grid, means) if all(m > 0 for m in means) else None
    if distance == "sobolev_sq":
        bound, classical = -1.0, None
    else:
        bound = -1.0 / (d + 1)
        classical = -2.0 / (d + 4) if distance == "W2sq" else None
    result = LLNResult(distance, d, s if distance == "sobolev_sq" else None, entries, slope, bound, classical)
    if slope is not None:
        logger.info("LLN %s d=%d: slope %.3f [%.3f, %.3f]", distance, d, slope.slope, slope.ci_low, slope.ci_high)
    return result


# ---------------------------------------------------------------------------
# Chaos gap
# ---------------------------------------------------------------------------

def build_dictionary(dimension: int, ell: int, norm_kind: str = "fourier", n_packets: int = DICTIONARY_DEFAULTS["n_packets"],
                     n_ramps: int = DICTIONARY_DEFAULTS["n_ramps"], seed: int = DICTIONARY_DEFAULTS["seed"]) -> List[TensorObservable]:
    """Unit-norm tensor powers of cosine packets and, for the Lipschitz norm, smoothed ramps."""
    rng = np.random.default_rng(seed)
    lo, hi = DICTIONARY_DEFAULTS["freq_min"], DICTIONARY_DEFAULTS["freq_max"]
    entries = []
    for m in range(n_packets):
        terms = int(rng.integers(1, 4))
        dirs = rng.standard_normal((terms, dimension))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        speeds = np.exp(rng.uniform(math.log(lo), math.log(hi), terms))
        packet = CosinePacket(
            tuple(rng.uniform(0.2, 1.0, terms)),
            tuple(tuple(row) for row in dirs * speeds[:, None]),
            tuple(rng.uniform(0, 2 * np.pi, terms)),
            norm_kind,
        ).normalized()
        entries.append(tensor_power(packet, ell, f"packet_{m:02d}"))
    if norm_kind == "lipschitz":
        for m in range(n_ramps):
            direction = rng.standard_normal(dimension)
            ramp = LipschitzRamp(tuple(direction / np.linalg.norm(direction)), float(np.exp(rng.uniform(math.log(0.5), math.log(4.0)))),
                                 float(rng.normal(0, 0.5))).normalized()
            entries.append(tensor_power(ramp, ell, f"ramp_{m:02d}"))
    return entries


@dataclass
class ChaosGap:
    """Lower estimate of the chaos sup over a dictionary."""

    value: float
    stderr: float
    dictionary_id: str
    first_coordinates: float
    per_entry: pd.DataFrame = field(repr=False)


def chaos_gap(replicas: Sequence[np.ndarray], reference: EmpiricalMeasure, dictionary: Sequence[TensorObservable], ell: int,
              rng: np.random.Generator, n_boot: int = 200) -> ChaosGap:
    """max over φ of |Ê[(φ ⊗ 1)_sym(V)] - R^ℓ_φ(f_t)| with a replica bootstrap standard error."""
    if not dictionary:
        raise ValueError("chaos gap needs a nonempty dictionary")
    replicas = [np.asarray(V, dtype=float) for V in replicas]
    n = replicas[0].shape[0]
    if n < 2 * ell:
        raise ValueError(f"chaos gap needs N >= 2 ell, got N={n}, ell={ell}")
    for phi in dictionary:
        if phi.ell != ell:
            raise ValueError(f"dictionary entry {phi.label} has ell={phi.ell}, expected {ell}")
        if phi.declared_norm() > 1.0 + 1e-9:
            raise ValueError(f"dictionary entry {phi.label} has norm {phi.declared_norm():.3g} > 1")

    sym = np.array([[sym_observable(V, phi) for phi in dictionary] for V in replicas])
    first = np.array([[first_coordinates_observable(V, phi) for phi in dictionary] for V in replicas])
    target = np.array([poly_observable(reference, phi) for phi in dictionary])
    gaps = np.abs(sym.mean(axis=0) - target)
    best = int(np.argmax(gaps))
    stderr = bootstrap_se(sym, lambda rows: float(np.max(np.abs(rows.mean(axis=0) - target))), rng, n_boot)
    per_entry = pd.DataFrame({
        "dictionary_id": [phi.label for phi in dictionary],
        "estimate": sym.mean(axis=0),
        "reference": target,
        "gap": gaps,
    })
    return ChaosGap(float(gaps[best]), stderr, dictionary[best].label,
                    float(np.max(np.abs(first.mean(axis=0) - target))), per_entry)


# ---------------------------------------------------------------------------
# Equilibrium chaoticity
# ---------------------------------------------------------------------------

def _marginals(n: int, dimension: int, ell: int, samples: int, rng: np.random.Generator,
               kernel: Optional[KernelSpec], evolve_to: Optional[float], initial: Optional[InitialDataSpec],
               seed: int, index: int) -> np.ndarray:
    if evolve_to is None:
        draws = [kac_sphere_sample(n, dimension, 1.0, rng)[:ell].reshape(-1) for _ in range(samples)]
        return np.array(draws)
    initial = initial or InitialDataSpec(base_law="two_point", dimension=dimension)
    sampler = partial(_energy_normalized, initial, n)
    trajectories = simulate(sampler, kernel, [float(evolve_to)], samples, seed + index, stage="mehler")
    return np.array([tr.snapshots[-1][:ell].reshape(-1) for tr in trajectories])


def _energy_normalized(initial: InitialDataSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Initial data rescaled onto S^{Nd-1}(√N) (E = 1) with zero mean."""
    V = sample_initial(initial, n, rng)
    V = V - V.mean(axis=0) if n > 1 else V
    norm = np.linalg.norm(V)
    if norm == 0:
        return kac_sphere_sample(n, initial.dimension, 1.0, rng)
    return V * (math.sqrt(n) / norm)


def mehler_marginal_check(n_grid: Sequence[int], dimension: int, ell: int, samples: int, seed: int, repeats: int = 5,
                          kernel: Optional[KernelSpec] = None, evolve_to: Optional[float] = None,
                          initial: Optional[InitialDataSpec] = None) -> pd.DataFrame:
    """W₁ between the ℓ-particle marginal of Kac-sphere data and the product Gaussian, per N."""
    if ell * dimension > 3:
        raise ValueError(f"ell * d must be <= 3 for the exact transport solver, got {ell * dimension}")
    if evolve_to is not None and kernel is None:
        raise ValueError("evolve_to needs a collision kernel")
    gaussian = Maxwellian.standard(ell * dimension)
    rows = []
    for index, n in enumerate(int(v) for v in n_grid):
        if n < ell:
            raise ValueError(f"N={n} is smaller than ell={ell}")
        rng = substream(seed, "mehler", index)
        values, floors = [], []
        for rep in range(repeats):
            marg = EmpiricalMeasure.uniform(_marginals(n, dimension, ell, samples, rng, kernel, evolve_to, initial,
                                                       seed, index * repeats + rep))
            values.append(wasserstein(marg, gaussian.sample_measure(samples, rng), 1.0).value)
            floors.append(wasserstein(gaussian.sample_measure(samples, rng), gaussian.sample_measure(samples, rng), 1.0).value)
        mean, se = mean_and_se(values)
        rows.append((n, mean, se, float(np.mean(floors))))
    return pd.DataFrame(rows, columns=["N", "w1", "stderr", "noise_floor"])
