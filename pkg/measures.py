"""
Empirical measures, test functions and the symmetrization combinatorics
linking N-particle observables with polynomials on measures.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

NORM_KINDS = ("sup", "lipschitz", "fourier")

# Fréquences évaluées par bloc pour limiter la mémoire
_CHAR_CHUNK = 4096


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Finite weighted point set on R^d."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        weights = np.asarray(self.weights, dtype=float)
        if points.ndim != 2 or weights.shape != (points.shape[0],):
            raise ValueError(f"points {points.shape} and weights {weights.shape} do not match")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {weights.sum()!r}")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, points: np.ndarray) -> "EmpiricalMeasure":
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        n = points.shape[0]
        if n == 0:
            raise ValueError("an empirical measure needs at least one point")
        return cls(points, np.full(n, 1.0 / n))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def expect(self, func: Callable[[np.ndarray], np.ndarray]) -> float:
        """⟨μ, φ⟩ for a vectorized φ."""
        return float(self.weights @ np.asarray(func(self.points), dtype=float))

    def raw_moment(self, multi_index: Sequence[int]) -> float:
        """M_j[μ] = Σ w_m x_m^j for a multi-index j."""
        powers = np.prod(self.points ** np.asarray(multi_index, dtype=float), axis=1)
        return float(self.weights @ powers)

    def characteristic(self, xi: np.ndarray) -> np.ndarray:
        """μ̂(ξ) = Σ w_m exp(-i ξ·x_m) at the rows of xi."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        out = np.empty(xi.shape[0], dtype=complex)
        for start in range(0, xi.shape[0], _CHAR_CHUNK):
            phase = xi[start:start + _CHAR_CHUNK] @ self.points.T
            out[start:start + _CHAR_CHUNK] = np.exp(-1j * phase) @ self.weights
        return out

    def pushforward(self, scale: float) -> "EmpiricalMeasure":
        """Image measure under x ↦ scale·x."""
        return EmpiricalMeasure(self.points * scale, self.weights)

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(self.size, size=size, p=self.weights)
        return self.points[idx]


def as_particles(V: np.ndarray, dimension: Optional[int] = None) -> np.ndarray:
    """Reshapes a flat velocity vector of R^{dN} into an (N, d) array."""
    V = np.asarray(V, dtype=float)
    if V.ndim == 2:
        return V
    if dimension is None:
        raise ValueError("a flat velocity vector needs an explicit dimension")
    if V.size % dimension:
        raise ValueError(f"vector of size {V.size} is not a multiple of d={dimension}")
    return V.reshape(-1, dimension)


def empirical(V: np.ndarray, dimension: Optional[int] = None) -> EmpiricalMeasure:
    """μ^N_V: uniform weights 1/N on the N velocities."""
    return EmpiricalMeasure.uniform(as_particles(V, dimension))


def moment(mu: EmpiricalMeasure, k: float) -> float:
    """Σ w_i |x_i|^k."""
    if k < 0:
        raise ValueError(f"moment order must be nonnegative, got {k}")
    return float(mu.weights @ np.linalg.norm(mu.points, axis=1) ** k)


class TestFunction:
    """Observable on R^d with a declared norm of a given kind."""

    __test__ = False
    norm_kind = "sup"

    def __call__(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def declared_norm(self) -> float:
        raise NotImplementedError

    def sup_norm(self) -> float:
        """Upper bound of ‖φ‖_∞; every supported norm dominates the sup norm."""
        return self.declared_norm()

    def sampled_norm(self, dimension: int, radius: float = 6.0, n_points: int = 2000, seed: int = 0) -> float:
        """Numerical lower estimate of the declared norm on a standard point set."""
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-radius, radius, size=(n_points, dimension))
        sup = float(np.max(np.abs(self(pts))))
        if self.norm_kind == "sup":
            return sup
        h = 1e-4
        shift = rng.standard_normal((n_points, dimension))
        shift /= np.linalg.norm(shift, axis=1, keepdims=True)
        lip = float(np.max(np.abs(self(pts + h * shift) - self(pts)) / h))
        return sup + lip


@dataclass(frozen=True)
class ConstantFunction(TestFunction):
    value: float = 1.0
    norm_kind: str = "sup"

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.full(np.atleast_2d(points).shape[0], self.value)

    def declared_norm(self) -> float:
        return abs(self.value)


@dataclass(frozen=True)
class CosinePacket(TestFunction):
    """φ(v) = Σ a_m cos(ξ_m·v + θ_m), with ‖φ‖_ℱ = Σ |a_m| (1 + |ξ_m|⁴)."""

    amplitudes: Tuple[float, ...]
    frequencies: Tuple[Tuple[float, ...], ...]
    phases: Tuple[float, ...]
    norm_kind: str = "fourier"

    def __post_init__(self) -> None:
        if not (len(self.amplitudes) == len(self.frequencies) == len(self.phases)) or not self.amplitudes:
            raise ValueError("cosine packet needs matching, nonempty amplitude/frequency/phase lists")
        if self.norm_kind not in NORM_KINDS:
            raise ValueError(f"Unknown norm kind: {self.norm_kind}")

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        freqs = np.asarray(self.frequencies, dtype=float)
        return np.cos(points @ freqs.T + np.asarray(self.phases)) @ np.asarray(self.amplitudes)

    def declared_norm(self) -> float:
        amps = np.abs(np.asarray(self.amplitudes))
        speeds = np.linalg.norm(np.asarray(self.frequencies, dtype=float), axis=1)
        if self.norm_kind == "fourier":
            return float(np.sum(amps * (1.0 + speeds ** 4)))
        if self.norm_kind == "lipschitz":
            return float(np.sum(amps) + np.sum(amps * speeds))
        return float(np.sum(amps))

    def normalized(self) -> "CosinePacket":
        """Rescales the amplitudes to unit declared norm."""
        scale = 1.0 / self.declared_norm()
        return CosinePacket(tuple(a * scale for a in self.amplitudes), self.frequencies, self.phases, self.norm_kind)


@dataclass(frozen=True)
class LipschitzRamp(TestFunction):
    """Smoothed ramp φ(v) = A tanh(k (e·v - c)), ‖φ‖_{W^{1,∞}} = |A| (1 + k)."""

    direction: Tuple[float, ...]
    steepness: float
    center: float = 0.0
    amplitude: float = 1.0
    norm_kind: str = "lipschitz"

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        e = np.asarray(self.direction, dtype=float)
        e = e / np.linalg.norm(e)
        return self.amplitude * np.tanh(self.steepness * (points @ e - self.center))

    def declared_norm(self) -> float:
        return abs(self.amplitude) * (1.0 + self.steepness)

    def normalized(self) -> "LipschitzRamp":
        return LipschitzRamp(self.direction, self.steepness, self.center, 1.0 / (1.0 + self.steepness), self.norm_kind)


@dataclass(frozen=True)
class FunctionObservable(TestFunction):
    """Wraps a vectorized callable; the declared norm is supplied by the caller."""

    func: Callable[[np.ndarray], np.ndarray]
    norm_value: float
    norm_kind: str = "sup"

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.func(np.atleast_2d(points)), dtype=float)

    def declared_norm(self) -> float:
        return self.norm_value


@dataclass(frozen=True)
class TensorObservable:
    """φ = φ₁ ⊗ … ⊗ φ_ℓ."""

    factors: Tuple[TestFunction, ...]
    label: str = ""

    def __post_init__(self) -> None:
        if len(self.factors) < 1:
            raise ValueError("a tensor observable needs at least one factor")
        object.__setattr__(self, "factors", tuple(self.factors))

    @property
    def ell(self) -> int:
        return len(self.factors)

    def declared_norm(self) -> float:
        return float(np.prod([f.declared_norm() for f in self.factors]))

    def concat(self, other: "TensorObservable") -> "TensorObservable":
        return TensorObservable(self.factors + other.factors, f"{self.label}|{other.label}")

    def evaluate_matrix(self, particles: np.ndarray) -> np.ndarray:
        """A[i, n] = φ_i(v_n), shape (ℓ, N)."""
        return np.stack([np.asarray(f(particles), dtype=float) for f in self.factors])

    def on_tuple(self, particles: np.ndarray) -> float:
        """φ(v_1, …, v_ℓ) for an (ℓ, d) array."""
        return float(np.prod([f(particles[i:i + 1])[0] for i, f in enumerate(self.factors)]))


def tensor_power(phi: TestFunction, ell: int, label: str = "") -> TensorObservable:
    return TensorObservable(tuple([phi] * ell), label)


def poly_observable(rho: EmpiricalMeasure, phi: TensorObservable) -> float:
    """R^ℓ_φ(ρ) = Π_i ⟨ρ, φ_i⟩."""
    return float(np.prod([rho.expect(f) for f in phi.factors]))


def set_partitions(items: Sequence[int]) -> Iterator[List[List[int]]]:
    """Enumerates all set partitions of items."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for partition in set_partitions(rest):
        yield [[first]] + partition
        for i in range(len(partition)):
            yield partition[:i] + [[first] + partition[i]] + partition[i + 1:]


def injective_tuple_sum(A: np.ndarray) -> float:
    """Σ over pairwise distinct (n_1, …, n_ℓ) of Π_i A[i, n_i], by Möbius inversion on set partitions."""
    ell = A.shape[0]
    total = 0.0
    for partition in set_partitions(range(ell)):
        coeff = 1.0
        term = 1.0
        for block in partition:
            coeff *= (-1) ** (len(block) - 1) * math.factorial(len(block) - 1)
            term *= float(np.sum(np.prod(A[block], axis=0)))
        total += coeff * term
    return total


def sym_observable(V: np.ndarray, phi: TensorObservable, dimension: Optional[int] = None) -> float:
    """(φ ⊗ 1^{N-ℓ})_sym(V): average of φ over injective index tuples."""
    particles = as_particles(V, dimension)
    n = particles.shape[0]
    if n < phi.ell:
        raise ValueError(f"sym_observable needs N >= ell, got N={n}, ell={phi.ell}")
    count = math.perm(n, phi.ell)
    return injective_tuple_sum(phi.evaluate_matrix(particles)) / count


def first_coordinates_observable(V: np.ndarray, phi: TensorObservable, dimension: Optional[int] = None) -> float:
    """φ(v_1, …, v_ℓ), the unsymmetrized marginal estimator."""
    particles = as_particles(V, dimension)
    if particles.shape[0] < phi.ell:
        raise ValueError(f"need N >= ell, got N={particles.shape[0]}, ell={phi.ell}")
    return phi.on_tuple(particles[:phi.ell])


def symmetrization_gap(V: np.ndarray, phi: TensorObservable, dimension: Optional[int] = None) -> float:
    """|R^ℓ_φ(μ^N_V) - (φ ⊗ 1)_sym(V)|, bounded by 2 ℓ² ‖φ‖_∞ / N."""
    particles = as_particles(V, dimension)
    n = particles.shape[0]
    if n < 2 * phi.ell:
        raise ValueError(f"symmetrization_gap needs N >= 2 ell, got N={n}, ell={phi.ell}")
    return abs(poly_observable(empirical(particles), phi) - sym_observable(particles, phi))


def symmetrization_bound(n: int, phi: TensorObservable) -> float:
    """2 ℓ² ‖φ‖_∞ / N."""
    sup = float(np.prod([f.sup_norm() for f in phi.factors]))
    return 2.0 * phi.ell ** 2 * sup / n
