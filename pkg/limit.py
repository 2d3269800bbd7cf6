"""
Reference solutions of the spatially homogeneous Boltzmann equation, the
Maxwellian equilibrium, and the contraction and relaxation checks built on them.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import gamma as gamma_fn, hyp1f1

from constants import MIN_R_SQUARED, MIN_REFERENCE_PARTICLES
from kernels import KernelSpec, bobylev_constant, spectral_gap
from measures import EmpiricalMeasure, moment
from metrics import FrequencyGrid, sobolev_neg_norm, toscani_norm, wasserstein
from particle import Trajectory, momentum, simulate
from utils import fit_line, substream

logger = logging.getLogger(__name__)

InitialSampler = Callable[[int, np.random.Generator], np.ndarray]

DISTANCE_KINDS = ("W1", "W2", "toscani2", "sobolev")


class ZeroTemperatureError(ValueError):
    """Data with no thermal spread has no Maxwellian equilibrium."""


@dataclass(frozen=True)
class Maxwellian:
    """Gaussian law N(u, θ Id) on R^d."""

    center: Tuple[float, ...]
    temperature: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if not self.temperature > 0:
            raise ZeroTemperatureError(f"Maxwellian temperature must be positive, got {self.temperature}")

    @classmethod
    def standard(cls, dimension: int) -> "Maxwellian":
        return cls(tuple([0.0] * dimension), 1.0)

    @property
    def dimension(self) -> int:
        return len(self.center)

    def mean(self) -> np.ndarray:
        return np.asarray(self.center)

    def characteristic(self, xi: np.ndarray) -> np.ndarray:
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        return np.exp(-1j * (xi @ self.mean()) - 0.5 * self.temperature * np.sum(xi ** 2, axis=1))

    def raw_moment(self, multi_index: Sequence[int]) -> float:
        scale = math.sqrt(self.temperature)
        return float(np.prod([stats.norm.moment(int(j), loc=u, scale=scale) for j, u in zip(multi_index, self.center)]))

    def moment(self, k: float) -> float:
        """E|X|^k."""
        return float(self._abs_power(np.zeros((1, self.dimension)), k, self.temperature)[0])

    def _abs_power(self, points: np.ndarray, alpha: float, variance: float) -> np.ndarray:
        # E|x - Y|^α, Y ~ N(u, variance Id) : forme fermée via 1F1
        d = self.dimension
        shift2 = np.sum((np.atleast_2d(points) - self.mean()) ** 2, axis=1)
        pref = (2.0 * variance) ** (alpha / 2.0) * gamma_fn((d + alpha) / 2.0) / gamma_fn(d / 2.0)
        return pref * hyp1f1(-alpha / 2.0, d / 2.0, -shift2 / (2.0 * variance))

    def riesz_expectation(self, points: np.ndarray, alpha: float) -> np.ndarray:
        """E|x - Y|^α at every row x of points."""
        return self._abs_power(points, alpha, self.temperature)

    def riesz_self(self, alpha: float) -> float:
        """E|Y - Y'|^α for independent Y, Y'."""
        d = self.dimension
        return float((4.0 * self.temperature) ** (alpha / 2.0) * gamma_fn((d + alpha) / 2.0) / gamma_fn(d / 2.0))

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        return self.mean() + math.sqrt(self.temperature) * rng.standard_normal((size, self.dimension))

    def sample_measure(self, size: int, rng: np.random.Generator) -> EmpiricalMeasure:
        return EmpiricalMeasure.uniform(self.sample(size, rng))


def equilibrium_from_moments(mean: Sequence[float], second_moment: float) -> Maxwellian:
    """u = mean, θ = (M₂ - |u|²)/d."""
    u = np.atleast_1d(np.asarray(mean, dtype=float))
    theta = (float(second_moment) - float(u @ u)) / u.size
    if theta <= 1e-14 * max(1.0, float(second_moment)):
        raise ZeroTemperatureError(f"zero temperature: M2={second_moment}, |u|^2={float(u @ u)}")
    return Maxwellian(tuple(u), theta)


def equilibrium(f0: Union[EmpiricalMeasure, np.ndarray, Maxwellian]) -> Maxwellian:
    """Maxwellian with the mean and energy of f0."""
    if isinstance(f0, Maxwellian):
        return f0
    if not isinstance(f0, EmpiricalMeasure):
        f0 = EmpiricalMeasure.uniform(np.asarray(f0, dtype=float))
    return equilibrium_from_moments(f0.mean(), moment(f0, 2))


@dataclass
class ReferenceSolution:
    """Replica-pooled large-N snapshots standing for f_t."""

    times: np.ndarray
    trajectories: List[Trajectory]
    seed: int
    spec: KernelSpec
    n_ref: int
    _pooled: Dict[int, EmpiricalMeasure] = field(default_factory=dict, repr=False)

    @property
    def replicas(self) -> int:
        return len(self.trajectories)

    def _index(self, t: float) -> int:
        idx = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-12))
        if idx.size == 0:
            raise KeyError(f"reference has no snapshot at t={t}")
        return int(idx[0])

    def points(self, t: float) -> np.ndarray:
        k = self._index(t)
        return np.concatenate([tr.snapshots[k] for tr in self.trajectories])

    def at(self, t: float) -> EmpiricalMeasure:
        k = self._index(t)
        if k not in self._pooled:
            self._pooled[k] = EmpiricalMeasure.uniform(self.points(t))
        return self._pooled[k]

    @property
    def snapshots(self) -> List[EmpiricalMeasure]:
        return [self.at(t) for t in self.times]

    def halves(self, t: float) -> Tuple[EmpiricalMeasure, EmpiricalMeasure]:
        """Two independent halves: by replica parity, or by particle index for a single replica."""
        k = self._index(t)
        if self.replicas >= 2:
            even = np.concatenate([tr.snapshots[k] for tr in self.trajectories[0::2]])
            odd = np.concatenate([tr.snapshots[k] for tr in self.trajectories[1::2]])
            return EmpiricalMeasure.uniform(even), EmpiricalMeasure.uniform(odd)
        snap = self.trajectories[0].snapshots[k]
        mid = snap.shape[0] // 2
        return EmpiricalMeasure.uniform(snap[:mid]), EmpiricalMeasure.uniform(snap[mid:2 * mid])

    def subsample(self, t: float, size: int, rng: np.random.Generator) -> EmpiricalMeasure:
        pts = self.points(t)
        if size >= pts.shape[0]:
            return EmpiricalMeasure.uniform(pts)
        return EmpiricalMeasure.uniform(pts[rng.choice(pts.shape[0], size=size, replace=False)])

    def conservation_drift(self) -> float:
        """Largest relative change of any replica's momentum or energy along the snapshots."""
        worst = 0.0
        for tr in self.trajectories:
            p0 = momentum(tr.snapshots[0])
            e0 = float(np.sum(tr.snapshots[0] ** 2))
            for snap in tr.snapshots[1:]:
                worst = max(worst, abs(float(np.sum(snap ** 2)) - e0) / max(e0, 1e-300))
                worst = max(worst, float(np.max(np.abs(momentum(snap) - p0))) / max(math.sqrt(e0), 1e-300))
        return worst


def mean_field_reference(f0_sampler: InitialSampler, spec: KernelSpec, times: Sequence[float], n_ref: int,
                         replicas: int, seed: int, workers: Optional[int] = None) -> ReferenceSolution:
    """Runs the particle system at large N as a proxy for S^NL_t(f0)."""
    if n_ref < MIN_REFERENCE_PARTICLES:
        raise ValueError(f"reference needs N_ref >= {MIN_REFERENCE_PARTICLES}, got {n_ref}")
    trajectories = simulate(partial(f0_sampler, n_ref), spec, times, replicas, seed, workers,
                            stage="reference", initial_stage="reference_sample")
    logger.info("Reference solution: N_ref=%d, %d replicas, %d snapshots", n_ref, replicas, len(times))
    return ReferenceSolution(np.asarray(times, dtype=float), trajectories, seed, spec, n_ref)


def _check_matched(f: EmpiricalMeasure, g: EmpiricalMeasure, n_sigma: float = 5.0) -> None:
    """Means and energies must agree within sampling noise."""
    for name, stat in (("mean", lambda p: p), ("energy", lambda p: np.sum(p ** 2, axis=1, keepdims=True))):
        a, b = stat(f.points), stat(g.points)
        se = np.sqrt(a.var(axis=0) / a.shape[0] + b.var(axis=0) / b.shape[0])
        gap = np.abs(a.mean(axis=0) - b.mean(axis=0))
        if np.any(gap > n_sigma * se + 1e-12):
            raise ValueError(f"contraction check needs matched {name}: gap {gap.tolist()} exceeds {n_sigma} standard errors")


@dataclass
class ContractionReport:
    frame: pd.DataFrame
    f_reference: Optional[ReferenceSolution] = field(default=None, repr=False)
    g_reference: Optional[ReferenceSolution] = field(default=None, repr=False)

    @property
    def violations(self) -> int:
        return int(self.frame["toscani_violation"].sum() + self.frame["w2_violation"].sum())


def flag_contraction_violations(frame: pd.DataFrame) -> pd.DataFrame:
    """
    Marks the rows that break contraction beyond the noise floor.

    |f_t - g_t|_2 may not exceed the previous snapshot by more than twice its
    noise floor; W_2(f_t, g_t) must stay below W_2(f_0, g_0) (1 + 3 noise).
    """
    frame = frame.copy()
    previous = frame["toscani"].shift(1)
    frame["toscani_violation"] = (frame["toscani"] > previous + 2.0 * frame["toscani_noise"]).fillna(False)
    frame["w2_violation"] = frame["w2"] > frame["w2"].iloc[0] * (1.0 + 3.0 * frame["w2_noise"])
    return frame


def contraction_check(f0_sampler: InitialSampler, g0_sampler: InitialSampler, spec: KernelSpec, times: Sequence[float],
                      n_ref: int, replicas: int, seed: int, grid: Optional[FrequencyGrid] = None,
                      w2_points: int = 1024, workers: Optional[int] = None) -> ContractionReport:
    """Time series of |f_t - g_t|_2 and W_2(f_t, g_t) against the split-replica noise floor."""
    if not spec.is_maxwell:
        raise ValueError("contraction check is defined for Maxwell molecules only")
    f_ref = mean_field_reference(f0_sampler, spec, times, n_ref, replicas, seed, workers)
    g_ref = mean_field_reference(g0_sampler, spec, times, n_ref, replicas, seed + 1, workers)
    _check_matched(f_ref.at(times[0]), g_ref.at(times[0]))
    rng = substream(seed, "contraction", 0)

    rows = []
    for t in times:
        f_t, g_t = f_ref.at(t), g_ref.at(t)
        toscani = toscani_norm(f_t, g_t, 2.0, grid, compensate=True).value
        f_a, f_b = f_ref.halves(t)
        g_a, g_b = g_ref.halves(t)
        toscani_noise = max(toscani_norm(f_a, f_b, 2.0, grid, compensate=True).value,
                            toscani_norm(g_a, g_b, 2.0, grid, compensate=True).value)
        w2 = wasserstein(f_ref.subsample(t, w2_points, rng), g_ref.subsample(t, w2_points, rng), 2.0).value
        w2_noise = max(_half_w2(f_a, f_b, w2_points, rng), _half_w2(g_a, g_b, w2_points, rng))
        rows.append((t, toscani, toscani_noise, w2, w2_noise))

    frame = flag_contraction_violations(pd.DataFrame(rows, columns=["t", "toscani", "toscani_noise", "w2", "w2_noise"]))
    report = ContractionReport(frame, f_ref, g_ref)
    if report.violations:
        logger.warning("Contraction check: %d violations beyond the noise floor", report.violations)
    return report


def _half_w2(a: EmpiricalMeasure, b: EmpiricalMeasure, size: int, rng: np.random.Generator) -> float:
    def sub(m: EmpiricalMeasure) -> EmpiricalMeasure:
        if m.size <= size:
            return m
        return EmpiricalMeasure.uniform(m.points[rng.choice(m.size, size=size, replace=False)])
    return wasserstein(sub(a), sub(b), 2.0).value


def distance_to_equilibrium(reference: ReferenceSolution, kind: str = "W1", points: int = 1024,
                            target: Optional[Maxwellian] = None, rng: Optional[np.random.Generator] = None) -> pd.DataFrame:
    """Distance of every reference snapshot to its Maxwellian, with a same-size Maxwellian noise floor."""
    if kind not in DISTANCE_KINDS:
        raise ValueError(f"Unknown distance kind: {kind}")
    target = target or equilibrium(reference.at(reference.times[0]))
    rng = rng or substream(reference.seed, "reference_sample", 1)
    d = target.dimension
    s_sobolev = d / 2.0 + 0.5

    def distance(mu: EmpiricalMeasure, size: int) -> float:
        if kind in ("W1", "W2"):
            q = 1.0 if kind == "W1" else 2.0
            sub = mu if mu.size <= size else EmpiricalMeasure.uniform(mu.points[rng.choice(mu.size, size=size, replace=False)])
            return wasserstein(sub, target.sample_measure(sub.size, rng), q).value
        if kind == "toscani2":
            return toscani_norm(mu, target, 2.0, compensate=True).value
        return sobolev_neg_norm(mu, target, s_sobolev, method="riesz", constrained=False).value

    rows = []
    for t in reference.times:
        mu = reference.at(t)
        floor = distance(target.sample_measure(min(mu.size, points) if kind in ("W1", "W2") else mu.size, rng), points)
        rows.append((float(t), distance(mu, points), floor))
    return pd.DataFrame(rows, columns=["t", "distance", "noise_floor"])


@dataclass
class RelaxationFit:
    rate: float
    ci_low: float
    ci_high: float
    r_squared: float
    spectral_gap: float
    bobylev_constant: float
    status: str
    distances: pd.DataFrame

    @property
    def flagged(self) -> bool:
        return self.status != "ok"


def relaxation_fit(reference: ReferenceSolution, kind: str = "toscani2", points: int = 1024) -> RelaxationFit:
    """Slope of log distance-to-equilibrium against t over the part of the curve above twice the noise floor."""
    gap = spectral_gap(reference.spec)
    lam_k = bobylev_constant(reference.spec)
    if reference.times[-1] < 5.0 / gap:
        logger.warning("Reference ends at t=%.3g, before 5/lambda_bar=%.3g", reference.times[-1], 5.0 / gap)
    frame = distance_to_equilibrium(reference, kind, points)
    above = frame[frame["distance"] > 2.0 * frame["noise_floor"]]
    # régime linéaire : on s'arrête au premier passage sous le plancher
    if len(above):
        first_below = frame.index[frame["distance"] <= 2.0 * frame["noise_floor"]]
        if len(first_below):
            above = above[above.index < first_below[0]]
    if len(above) < 3:
        logger.info("Relaxation fit: no decay above the noise floor")
        return RelaxationFit(float("nan"), float("nan"), float("nan"), float("nan"), gap, lam_k, "no_decay", frame)
    fit = fit_line(above["t"], np.log(above["distance"]))
    status = "ok" if fit.r_squared >= MIN_R_SQUARED else "no_linear_regime"
    if status != "ok":
        logger.warning("Relaxation fit: R^2=%.3f below %.2f", fit.r_squared, MIN_R_SQUARED)
    return RelaxationFit(-fit.slope, -fit.ci_high, -fit.ci_low, fit.r_squared, gap, lam_k, status, frame)
