"""
Event-driven simulation of the N-particle Kac collision process.

Time is the scaled time of the master equation: the pair {i, j} collides at
rate (2/N) Γ(|v_i - v_j|) ‖b‖₁, which folds the ordered double sum of the
generator into a factor 2 over unordered pairs.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist, squareform

from constants import FICTITIOUS_COLLISION_THRESHOLD, MIN_QUADRATURE_ORDER, QUADRATURE_TOLERANCE, RATE_REFRESH_FACTOR
from kernels import KernelSpec, gamma_factor, post_collision, sample_sigma, sphere_quadrature
from utils import parallel_map, substream, write_frame, write_json

logger = logging.getLogger(__name__)

Sampler = Callable[[np.random.Generator], np.ndarray]


class PairRateTable:
    """Exact table of |v_i - v_j| with row sums, updated in O(N) per collision."""

    def __init__(self, particles: np.ndarray) -> None:
        self.n = particles.shape[0]
        self.rebuild(particles)

    def rebuild(self, particles: np.ndarray) -> None:
        self.G = squareform(pdist(particles))
        self.row = self.G.sum(axis=1)
        self.since_refresh = 0

    @property
    def weight_sum(self) -> float:
        """Σ_{i≠j} |v_i - v_j| over ordered pairs."""
        return float(self.row.sum())

    def select(self, rng: np.random.Generator) -> Tuple[int, int]:
        """Draws an unordered pair with probability ∝ |v_i - v_j|."""
        cum = np.cumsum(self.row)
        i = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        i = min(i, self.n - 1)
        cum_i = np.cumsum(self.G[i])
        j = int(np.searchsorted(cum_i, rng.random() * cum_i[-1], side="right"))
        return i, min(j, self.n - 1)

    def update(self, particles: np.ndarray, i: int, j: int) -> None:
        for k in (i, j):
            new = np.linalg.norm(particles - particles[k], axis=1)
            new[k] = 0.0
            delta = new - self.G[k]
            self.G[k, :] = new
            self.G[:, k] = new
            self.row += delta
            self.row[k] = new.sum()
        self.since_refresh += 1
        if self.since_refresh >= RATE_REFRESH_FACTOR * self.n:
            # recalcul complet pour éviter la dérive des sommes cumulées
            self.row = self.G.sum(axis=1)
            self.since_refresh = 0


@dataclass
class SystemState:
    """N velocities in R^d, the simulation clock and event counters."""

    V: np.ndarray
    t: float = 0.0
    n_events: int = 0
    n_rejected: int = 0
    _table: Optional[PairRateTable] = field(default=None, repr=False)
    _speed_bound: Optional[float] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.V = np.array(self.V, dtype=float)
        if self.V.ndim != 2:
            raise ValueError(f"velocities must be an (N, d) array, got shape {self.V.shape}")
        if self.V.shape[0] < 2:
            raise ValueError(f"the particle system needs N >= 2, got {self.V.shape[0]}")

    @property
    def n_particles(self) -> int:
        return self.V.shape[0]

    @property
    def dimension(self) -> int:
        return self.V.shape[1]

    def flat(self) -> np.ndarray:
        return self.V.reshape(-1)

    def copy(self) -> "SystemState":
        return SystemState(self.V.copy(), self.t, self.n_events, self.n_rejected)


def momentum(V: np.ndarray) -> np.ndarray:
    return np.asarray(V, dtype=float).sum(axis=0)


def energy(V: np.ndarray) -> float:
    return float(np.sum(np.asarray(V, dtype=float) ** 2))


def moment_n(V: np.ndarray, k: float) -> float:
    """M_k^N(V) = (1/N) Σ |v_j|^k."""
    return float(np.mean(np.linalg.norm(V, axis=1) ** k))


def _uses_majorant(state: SystemState, spec: KernelSpec) -> bool:
    return not spec.is_maxwell and state.n_particles > FICTITIOUS_COLLISION_THRESHOLD


def _rate_table(state: SystemState) -> PairRateTable:
    if state._table is None:
        state._table = PairRateTable(state.V)
    return state._table


def total_rate(state: SystemState, spec: KernelSpec) -> float:
    """Λ(V) = (2/N) Σ_{i<j} Γ(|v_i - v_j|) ‖b‖₁."""
    n = state.n_particles
    if spec.is_maxwell:
        return (n - 1) * spec.angular_mass
    if n > FICTITIOUS_COLLISION_THRESHOLD:
        return 2.0 * float(pdist(state.V).sum()) * spec.angular_mass / n
    return _rate_table(state).weight_sum * spec.angular_mass / n


def _speed_bound(state: SystemState) -> float:
    """Γ_max = 2 max_k |v_k - ū| ≥ max_{i,j} |v_i - v_j| (ū is conserved)."""
    if state._speed_bound is None:
        centered = state.V - state.V.mean(axis=0)
        state._speed_bound = 2.0 * float(np.max(np.linalg.norm(centered, axis=1)))
    return state._speed_bound


def _uniform_pair(n: int, rng: np.random.Generator) -> Tuple[int, int]:
    i = int(rng.integers(n))
    j = int(rng.integers(n - 1))
    if j >= i:
        j += 1
    return i, j


def _propose(state: SystemState, spec: KernelSpec, rng: np.random.Generator) -> Tuple[float, int, int, bool]:
    """Draws the next candidate event: (waiting time, i, j, accepted)."""
    n = state.n_particles
    if spec.is_maxwell:
        dt = rng.exponential(1.0 / ((n - 1) * spec.angular_mass))
        i, j = _uniform_pair(n, rng)
        return dt, i, j, True

    if _uses_majorant(state, spec):
        bound = _speed_bound(state)
        if bound <= 0:
            return math.inf, -1, -1, False
        dt = rng.exponential(1.0 / ((n - 1) * bound * spec.angular_mass))
        i, j = _uniform_pair(n, rng)
        rel = float(np.linalg.norm(state.V[i] - state.V[j]))
        return dt, i, j, rng.random() * bound < rel

    table = _rate_table(state)
    lam = table.weight_sum * spec.angular_mass / n
    if lam <= 0:
        return math.inf, -1, -1, False
    dt = rng.exponential(1.0 / lam)
    i, j = table.select(rng)
    return dt, i, j, True


def _collide(state: SystemState, spec: KernelSpec, rng: np.random.Generator, i: int, j: int) -> None:
    """Replaces (v_i, v_j) by their post-collision velocities."""
    u = state.V[i] - state.V[j]
    norm = float(np.linalg.norm(u))
    if norm > 0:
        u_hat = u / norm
    else:
        # vitesses confondues : axe arbitraire, la collision est sans effet
        u_hat = np.zeros(state.dimension)
        u_hat[0] = 1.0
    sigma = sample_sigma(u_hat, spec, rng)
    v_new, w_new = post_collision(state.V[i], state.V[j], sigma)
    state.V[i] = v_new
    state.V[j] = w_new
    state.n_events += 1

    if spec.is_maxwell:
        return
    if _uses_majorant(state, spec):
        center = state.V.mean(axis=0)
        reach = 2.0 * max(np.linalg.norm(v_new - center), np.linalg.norm(w_new - center))
        state._speed_bound = max(_speed_bound(state), float(reach))
        if state.n_events % state.n_particles == 0:
            state._speed_bound = None
    else:
        _rate_table(state).update(state.V, i, j)


def step(state: SystemState, spec: KernelSpec, rng: np.random.Generator) -> SystemState:
    """Advances to the next collision and applies it; t = +inf when no pair can collide."""
    if state.dimension != spec.dimension:
        raise ValueError(f"state has d={state.dimension}, kernel has d={spec.dimension}")
    while True:
        dt, i, j, accepted = _propose(state, spec, rng)
        if math.isinf(dt):
            state.t = math.inf
            return state
        state.t += dt
        if accepted:
            _collide(state, spec, rng, i, j)
            return state
        state.n_rejected += 1


def advance(state: SystemState, spec: KernelSpec, rng: np.random.Generator, horizon: float) -> SystemState:
    """Runs collisions up to the time horizon; the state is frozen between events."""
    if horizon < state.t:
        raise ValueError(f"horizon {horizon} is before the current time {state.t}")
    while True:
        dt, i, j, accepted = _propose(state, spec, rng)
        if state.t + dt > horizon:
            # le temps d'attente exponentiel est sans mémoire : on repart de l'horizon
            state.t = horizon
            return state
        state.t += dt
        if accepted:
            _collide(state, spec, rng, i, j)
        else:
            state.n_rejected += 1


@dataclass
class Trajectory:
    """Velocity snapshots of one replica at increasing times."""

    times: np.ndarray
    snapshots: np.ndarray
    event_counts: np.ndarray
    seed: int
    replica: int
    spec: KernelSpec

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("snapshot times must be strictly increasing")

    @property
    def n_particles(self) -> int:
        return self.snapshots.shape[1] if self.snapshots.size else 0

    def at(self, t: float) -> np.ndarray:
        idx = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-12))
        if idx.size == 0:
            raise KeyError(f"no snapshot at t={t}")
        return self.snapshots[idx[0]]

    def series(self, observable: Callable[[np.ndarray], float]) -> np.ndarray:
        return np.array([observable(V) for V in self.snapshots])

    def to_frame(self) -> pd.DataFrame:
        """Long format: one row per (snapshot, particle)."""
        if not self.times.size:
            return pd.DataFrame(columns=["replica", "t", "particle_index"] + [f"v_{k + 1}" for k in range(self.spec.dimension)])
        n_snap, n, d = self.snapshots.shape
        frame = pd.DataFrame(self.snapshots.reshape(-1, d), columns=[f"v_{k + 1}" for k in range(d)])
        frame.insert(0, "particle_index", np.tile(np.arange(n), n_snap))
        frame.insert(0, "t", np.repeat(self.times, n))
        frame.insert(0, "replica", self.replica)
        return frame


def run_trajectory(V0: np.ndarray, spec: KernelSpec, times: Sequence[float], rng: np.random.Generator,
                   seed: int = 0, replica: int = 0) -> Trajectory:
    """Simulates one replica from V0 and records V at every snapshot time."""
    state = SystemState(V0)
    snaps, counts = [], []
    for T in times:
        advance(state, spec, rng, float(T))
        snaps.append(state.V.copy())
        counts.append(state.n_events)
    snapshots = np.array(snaps) if snaps else np.empty((0, state.n_particles, state.dimension))
    return Trajectory(np.asarray(times, dtype=float), snapshots, np.asarray(counts, dtype=int), seed, replica, spec)


def _replica_job(replica: int, sampler: Sampler, spec: KernelSpec, times: Tuple[float, ...], seed: int, stage: str,
                 initial_stage: str) -> Trajectory:
    V0 = np.asarray(sampler(substream(seed, initial_stage, replica)), dtype=float)
    if V0.ndim != 2 or V0.shape[1] != spec.dimension:
        raise ValueError(f"sampler returned shape {V0.shape}, expected (N, {spec.dimension})")
    return run_trajectory(V0, spec, times, substream(seed, stage, replica), seed, replica)


def simulate(sampler: Sampler, spec: KernelSpec, times: Sequence[float], replicas: int, seed: int,
             workers: Optional[int] = None, stage: str = "simulate", initial_stage: str = "initial") -> List[Trajectory]:
    """R independent trajectories, one RNG substream per replica, merged in replica order."""
    times = tuple(float(t) for t in times)
    if any(t < 0 for t in times) or any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("snapshot times must be nonnegative and strictly increasing")
    if replicas < 1:
        raise ValueError(f"replicas must be >= 1, got {replicas}")
    job = partial(_replica_job, sampler=sampler, spec=spec, times=times, seed=seed, stage=stage,
                  initial_stage=initial_stage)
    trajectories = parallel_map(job, range(replicas), workers)
    logger.info("Simulated %d replicas, %d events in total", replicas,
                sum(int(tr.event_counts[-1]) for tr in trajectories if tr.event_counts.size))
    return trajectories


@dataclass
class GeneratorValue:
    """(G^N φ)(V) by product quadrature, with its refinement diagnostic."""

    value: float
    refined: float
    order: int
    converged: bool


def _generator_sum(phi: Callable[[np.ndarray], float], particles: np.ndarray, spec: KernelSpec, order: int) -> float:
    n = particles.shape[0]
    base = phi(particles)
    total = 0.0
    for i in range(n - 1):
        for j in range(i + 1, n):
            u = particles[i] - particles[j]
            rel = float(np.linalg.norm(u))
            if rel == 0.0:
                continue
            sigmas, weights = sphere_quadrature(u / rel, spec, order)
            v_new, w_new = post_collision(particles[i][None, :], particles[j][None, :], sigmas)
            values = np.empty(len(weights))
            moved = particles.copy()
            for m in range(len(weights)):
                moved[i] = v_new[m]
                moved[j] = w_new[m]
                values[m] = phi(moved)
            total += float(gamma_factor(rel, spec)) * float(weights @ (values - base))
    return 2.0 * total / n


def apply_generator(phi: Callable[[np.ndarray], float], V: np.ndarray, spec: KernelSpec, order: int = 16) -> GeneratorValue:
    """(G^N φ)(V) = (1/N) Σ_{i,j} Γ_ij ∫ b(cos θ_ij) [φ(V*_ij) - φ(V)] dσ."""
    if order < MIN_QUADRATURE_ORDER:
        raise ValueError(f"quadrature order must be >= {MIN_QUADRATURE_ORDER}, got {order}")
    particles = np.asarray(V, dtype=float)
    if particles.ndim == 1:
        particles = particles.reshape(-1, spec.dimension)
    coarse = _generator_sum(phi, particles, spec, order)
    fine = _generator_sum(phi, particles, spec, 2 * order)
    scale = max(abs(fine), abs(coarse), 1e-12 * max(1.0, abs(phi(particles))))
    converged = abs(fine - coarse) <= QUADRATURE_TOLERANCE * scale
    if not converged:
        logger.warning("Generator quadrature not converged: Q=%d gives %.6g, 2Q gives %.6g", order, coarse, fine)
    return GeneratorValue(value=fine, refined=coarse, order=order, converged=converged)


def write_trajectories(trajectories: Sequence[Trajectory], csv_path: Path, role: str = "simulation",
                       config_hash: str = "", extra: Optional[Dict[str, object]] = None) -> Dict[str, object]:
    """One CSV per snapshot set plus a JSON sidecar with seed, hash and event counts."""
    frame = pd.concat([tr.to_frame() for tr in trajectories], ignore_index=True)
    write_frame(frame, csv_path)
    sidecar = {
        "role": role,
        "seed": int(trajectories[0].seed) if trajectories else None,
        "config_hash": config_hash,
        "replicas": len(trajectories),
        "event_counts": {str(tr.replica): tr.event_counts.tolist() for tr in trajectories},
        "times": trajectories[0].times.tolist() if trajectories else [],
    }
    sidecar.update(extra or {})
    write_json(sidecar, Path(csv_path).with_suffix(".json"))
    return sidecar


def read_trajectories(csv_path: Path, spec: KernelSpec) -> List[Trajectory]:
    """Reads back trajectories written by write_trajectories."""
    frame = pd.read_csv(csv_path)
    sidecar = json.loads(Path(csv_path).with_suffix(".json").read_text())
    value_cols = [c for c in frame.columns if c.startswith("v_")]
    trajectories = []
    for replica, group in frame.groupby("replica", sort=True):
        times = np.sort(group["t"].unique())
        n = int(group["particle_index"].max()) + 1
        snaps = group.sort_values(["t", "particle_index"])[value_cols].to_numpy().reshape(len(times), n, len(value_cols))
        counts = np.asarray(sidecar["event_counts"][str(replica)], dtype=int)
        trajectories.append(Trajectory(times, snaps, counts, sidecar.get("seed") or 0, int(replica), spec))
    return trajectories
