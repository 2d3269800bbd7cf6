"""
Collision kernels B = Γ(|v - v*|) b(cos θ), the post-collision velocity map
and the sampling of scattering directions.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate
from scipy.linalg import null_space
from scipy.special import gamma as gamma_fn
from scipy.special import ndtri
from scipy.stats import qmc

from constants import DEFAULT_DIMENSION, THETA_TABLE_NODES

logger = logging.getLogger(__name__)

ANGULAR_LAWS = ("grad", "power", "tabulated")


class ContractViolation(ValueError):
    """Raised when an operation is called outside of its precondition."""


def sphere_area(n_dim: int) -> float:
    """Surface of the unit sphere S^{n_dim-1} embedded in R^{n_dim}."""
    return 2.0 * math.pi ** (n_dim / 2.0) / gamma_fn(n_dim / 2.0)


@dataclass(frozen=True)
class KernelSpec:
    """Collision kernel family with its angular law and precomputed sampling table."""

    dimension: int = DEFAULT_DIMENSION
    gamma_exponent: int = 0
    angular_law: str = "grad"
    b_const: Optional[float] = None
    nu: Optional[float] = None
    eps_cut: Optional[float] = None
    c_b: float = 1.0
    table_theta: Optional[Tuple[float, ...]] = None
    table_b: Optional[Tuple[float, ...]] = None

    angular_mass: float = field(init=False, compare=False)
    _theta_nodes: np.ndarray = field(init=False, repr=False, compare=False)
    _theta_cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if int(self.dimension) != self.dimension or self.dimension < 2:
            raise ValueError(f"dimension must be an integer >= 2, got {self.dimension}")
        if self.gamma_exponent not in (0, 1):
            raise ValueError(f"gamma_exponent must be 0 (Maxwell) or 1 (hard spheres), got {self.gamma_exponent}")
        if self.angular_law not in ANGULAR_LAWS:
            raise ValueError(f"Unknown angular law: {self.angular_law}")

        if self.angular_law == "grad":
            if self.b_const is None:
                object.__setattr__(self, "b_const", 1.0 / sphere_area(self.dimension))
            if self.b_const <= 0:
                raise ValueError(f"b_const must be positive, got {self.b_const}")
        elif self.angular_law == "power":
            if self.nu is None or not 0 < self.nu < 2:
                raise ValueError(f"power law needs nu in (0, 2), got {self.nu}")
            if self.eps_cut is None or not 0 < self.eps_cut < math.pi:
                raise ValueError(f"power law needs a cutoff eps_cut in (0, pi), got {self.eps_cut}")
            if self.c_b <= 0:
                raise ValueError(f"c_b must be positive, got {self.c_b}")
        else:
            theta = np.asarray(self.table_theta, dtype=float) if self.table_theta is not None else None
            values = np.asarray(self.table_b, dtype=float) if self.table_b is not None else None
            if theta is None or values is None or theta.shape != values.shape or theta.size < 2:
                raise ValueError("tabulated law needs matching theta/b grids with at least 2 nodes")
            if np.any(np.diff(theta) <= 0) or theta[0] < 0 or theta[-1] > math.pi:
                raise ValueError("tabulated theta grid must be increasing inside [0, pi]")
            if np.any(values < 0):
                raise ValueError("tabulated b values must be nonnegative")

        mass = angular_moment(self, lambda c: np.ones_like(c))
        if not np.isfinite(mass) or mass <= 0:
            raise ValueError(f"angular mass must be positive and finite, got {mass}")
        object.__setattr__(self, "angular_mass", float(mass))

        nodes, cdf = _build_theta_table(self)
        object.__setattr__(self, "_theta_nodes", nodes)
        object.__setattr__(self, "_theta_cdf", cdf)

    @classmethod
    def grad_cutoff(cls, dimension: int = DEFAULT_DIMENSION, gamma_exponent: int = 0, b_const: Optional[float] = None) -> "KernelSpec":
        """Bounded angular law b ≡ const (Grad cutoff)."""
        return cls(dimension=dimension, gamma_exponent=gamma_exponent, angular_law="grad", b_const=b_const)

    @classmethod
    def power_law(cls, nu: float, eps_cut: float, dimension: int = DEFAULT_DIMENSION, gamma_exponent: int = 0, c_b: float = 1.0) -> "KernelSpec":
        """Grazing singularity b ~ C_b θ^{-(d-1)-ν}, truncated below eps_cut."""
        return cls(dimension=dimension, gamma_exponent=gamma_exponent, angular_law="power", nu=nu, eps_cut=eps_cut, c_b=c_b)

    @classmethod
    def tabulated(cls, theta: Sequence[float], b_values: Sequence[float], dimension: int = DEFAULT_DIMENSION, gamma_exponent: int = 0) -> "KernelSpec":
        """Angular law interpolated linearly from a θ grid."""
        return cls(dimension=dimension, gamma_exponent=gamma_exponent, angular_law="tabulated",
                   table_theta=tuple(float(t) for t in theta), table_b=tuple(float(b) for b in b_values))

    @property
    def is_maxwell(self) -> bool:
        return self.gamma_exponent == 0

    @property
    def theta_support(self) -> Tuple[float, float]:
        """Interval of deviation angles carrying the angular law."""
        if self.angular_law == "power":
            return float(self.eps_cut), math.pi
        if self.angular_law == "tabulated":
            return float(self.table_theta[0]), float(self.table_theta[-1])
        return 0.0, math.pi

    def b_of_theta(self, theta: np.ndarray) -> np.ndarray:
        """Angular law b(cos θ) written as a function of the deviation angle."""
        theta = np.asarray(theta, dtype=float)
        if self.angular_law == "grad":
            return np.full_like(theta, self.b_const)
        if self.angular_law == "power":
            safe = np.maximum(theta, self.eps_cut)
            values = self.c_b * safe ** (-(self.dimension - 1) - self.nu)
            return np.where(theta >= self.eps_cut, values, 0.0)
        return np.interp(theta, self.table_theta, self.table_b, left=0.0, right=0.0)

    def b_of_cos(self, cos_theta: np.ndarray) -> np.ndarray:
        return self.b_of_theta(np.arccos(np.clip(cos_theta, -1.0, 1.0)))


def angular_moment(spec: KernelSpec, g: Callable[[np.ndarray], np.ndarray]) -> float:
    """Computes ∫_{S^{d-1}} b(σ·û) g(σ·û) dσ by 1-D quadrature in the deviation angle."""
    d = spec.dimension
    lo, hi = spec.theta_support
    azimuth = sphere_area(d - 1)

    def integrand(theta: float) -> float:
        th = np.array([theta])
        return float(spec.b_of_theta(th)[0] * g(np.cos(th))[0] * np.sin(theta) ** (d - 2))

    points = None
    if spec.angular_law == "tabulated":
        points = list(spec.table_theta[1:-1])
    if spec.angular_law == "power":
        # le poids est raide près de la coupure : intégration en log θ
        value, _ = integrate.quad(lambda t: integrand(math.exp(t)) * math.exp(t), math.log(lo), math.log(hi), limit=400)
    else:
        limit = 400 if points is None else max(400, 4 * len(points))
        value, _ = integrate.quad(integrand, lo, hi, points=points, limit=limit)
    return azimuth * value


def spectral_gap(spec: KernelSpec) -> float:
    """λ̄ = ∫ b(σ·ξ̂) (1 - (σ·ξ̂)²)/2 dσ, the decay rate of the Fourier distance."""
    return angular_moment(spec, lambda c: (1.0 - c ** 2) / 2.0)


def bobylev_constant(spec: KernelSpec) -> float:
    """λ_K = ∫ b(σ·ξ̂) (1 + (σ·ξ̂)²)/2 dσ from the quartic Fourier contraction."""
    return angular_moment(spec, lambda c: (1.0 + c ** 2) / 2.0)


def describe_kernel(spec: KernelSpec) -> Dict[str, object]:
    """Returns the kernel parameters and derived constants for manifests."""
    return {
        "family": "maxwell" if spec.is_maxwell else "hard_spheres",
        "angular_law": spec.angular_law,
        "dimension": spec.dimension,
        "nu": spec.nu,
        "eps_cut": spec.eps_cut,
        "b_const": spec.b_const,
        "c_b": spec.c_b,
        "angular_mass": spec.angular_mass,
        "spectral_gap": spectral_gap(spec),
    }


def _build_theta_table(spec: KernelSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Builds the normalized CDF of θ, density ∝ b(cos θ) sin^{d-2} θ."""
    lo, hi = spec.theta_support
    if lo > 0:
        nodes = np.geomspace(lo, hi, THETA_TABLE_NODES)
    else:
        nodes = np.linspace(lo, hi, THETA_TABLE_NODES)
    if spec.angular_law == "tabulated":
        nodes = np.union1d(nodes, np.asarray(spec.table_theta))
    density = spec.b_of_theta(nodes) * np.sin(nodes) ** (spec.dimension - 2)
    cdf = integrate.cumulative_trapezoid(density, nodes, initial=0.0)
    if cdf[-1] <= 0:
        raise ValueError("angular law has no mass on its support")
    return nodes, cdf / cdf[-1]


def sample_theta(spec: KernelSpec, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """Draws deviation angles by inverse-CDF lookup."""
    u = rng.random(size)
    return np.interp(u, spec._theta_cdf, spec._theta_nodes)


def sample_sigma(u_hat: np.ndarray, spec: KernelSpec, rng: np.random.Generator) -> np.ndarray:
    """Draws σ on S^{d-1} with density b(σ·û)/‖b‖₁, uniform in azimuth around û."""
    u_hat = np.asarray(u_hat, dtype=float)
    single = u_hat.ndim == 1
    u2 = np.atleast_2d(u_hat)
    if u2.shape[1] != spec.dimension:
        raise ContractViolation(f"û has dimension {u2.shape[1]}, kernel has {spec.dimension}")
    norms = np.linalg.norm(u2, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise ContractViolation("sample_sigma needs a unit relative velocity (zero relative velocity is not allowed)")

    n = u2.shape[0]
    theta = sample_theta(spec, rng, n)
    omega = _orthogonal_directions(u2, rng)
    sigma = np.cos(theta)[:, None] * u2 + np.sin(theta)[:, None] * omega
    return sigma[0] if single else sigma


def _orthogonal_directions(u2: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniform unit vectors orthogonal to each row of u2."""
    g = rng.standard_normal(u2.shape)
    g -= np.sum(g * u2, axis=1)[:, None] * u2
    norms = np.linalg.norm(g, axis=1)
    bad = norms < 1e-12
    while np.any(bad):
        redraw = rng.standard_normal((int(bad.sum()), u2.shape[1]))
        redraw -= np.sum(redraw * u2[bad], axis=1)[:, None] * u2[bad]
        g[bad] = redraw
        norms = np.linalg.norm(g, axis=1)
        bad = norms < 1e-12
    return g / norms[:, None]


def post_collision(v: np.ndarray, v_star: np.ndarray, sigma: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (v', v'_*) = ((v+v*)/2 ± |v-v*|σ/2)."""
    v = np.asarray(v, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    mid = 0.5 * (v + v_star)
    half = 0.5 * np.linalg.norm(v - v_star, axis=-1, keepdims=True) * np.asarray(sigma, dtype=float)
    return mid + half, mid - half


def gamma_factor(rel_speed: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """Γ(z) = z^γ, with Γ ≡ 1 for Maxwell molecules."""
    rel_speed = np.asarray(rel_speed, dtype=float)
    if spec.is_maxwell:
        return np.ones_like(rel_speed)
    return rel_speed


def pair_rate(v_i: np.ndarray, v_j: np.ndarray, spec: KernelSpec) -> float:
    """Collision intensity Γ(|v_i - v_j|) ‖b‖₁ of one pair."""
    rel = np.linalg.norm(np.asarray(v_i, dtype=float) - np.asarray(v_j, dtype=float))
    return float(gamma_factor(rel, spec) * spec.angular_mass)


def sphere_quadrature(u_hat: np.ndarray, spec: KernelSpec, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes σ and weights w with Σ w g(σ) ≈ ∫ b(σ·û) g(σ) dσ (Gauss-Legendre in θ × azimuth)."""
    d = spec.dimension
    lo, hi = spec.theta_support
    x, wx = np.polynomial.legendre.leggauss(order)
    if lo > 0:
        t = 0.5 * (math.log(hi) - math.log(lo)) * (x + 1.0) + math.log(lo)
        theta = np.exp(t)
        w_theta = 0.5 * (math.log(hi) - math.log(lo)) * wx * theta
    else:
        theta = 0.5 * (hi - lo) * (x + 1.0) + lo
        w_theta = 0.5 * (hi - lo) * wx
    w_theta = w_theta * spec.b_of_theta(theta) * np.sin(theta) ** (d - 2)

    basis = null_space(np.asarray(u_hat, dtype=float)[None, :])
    omegas, w_omega = _azimuth_design(d, order)
    directions = omegas @ basis.T

    sigma = (np.cos(theta)[:, None, None] * np.asarray(u_hat, dtype=float)[None, None, :]
             + np.sin(theta)[:, None, None] * directions[None, :, :])
    weights = w_theta[:, None] * w_omega[None, :]
    return sigma.reshape(-1, d), weights.reshape(-1)


def _azimuth_design(d: int, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Equal-weight point set on S^{d-2} expressed in an orthonormal basis of û⊥."""
    area = sphere_area(d - 1)
    if d == 2:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if d == 3:
        phi = 2.0 * math.pi * np.arange(2 * order) / (2 * order)
        pts = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        return pts, np.full(2 * order, area / (2 * order))
    n_pts = 2 ** int(math.ceil(math.log2(4 * order * order)))
    sobol = qmc.Sobol(d - 1, scramble=True, seed=0).random(n_pts)
    gauss = ndtri(np.clip(sobol, 1e-12, 1 - 1e-12))
    pts = gauss / np.linalg.norm(gauss, axis=1, keepdims=True)
    return pts, np.full(n_pts, area / n_pts)
