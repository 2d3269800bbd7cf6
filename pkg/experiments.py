"""
One runner per experiment kind. Every runner reads an ExperimentConfig, writes its
CSV/JSON outputs into the run directory and returns the paths it wrote.
"""

import logging
import shutil
import time
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from about import __version__
from chaos import CHAOS_COLUMNS, build_dictionary, chaos_gap, lln_rate_scan, mehler_marginal_check, sample_initial
from config import ACCEPTANCE_THRESHOLDS, ExperimentConfig
from kernels import describe_kernel
from limit import contraction_check, distance_to_equilibrium, mean_field_reference, relaxation_fit
from metrics import BatterySettings, EXPLICIT_INEQUALITIES, inequality_battery, random_discrete_pair
from particle import energy, moment_n, momentum, simulate, write_trajectories
from utils import file_digest, substream, write_frame, write_json

logger = logging.getLogger(__name__)

Runner = Callable[[ExperimentConfig, Path, Optional[int]], List[Path]]


@dataclass
class RunRecord:
    """Manifest of one run: config hash, tool version, output digests, wall time and warnings."""

    kind: str
    seed: int
    config_hash: str
    tool_version: str
    files: Dict[str, str] = field(default_factory=dict)
    wall_time: float = 0.0
    warnings: List[str] = field(default_factory=list)
    kernel: Dict[str, object] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, object]:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "files": self.files,
            "wall_time": self.wall_time,
            "warnings": self.warnings,
            "kernel": self.kernel,
        }


class WarningCollector(logging.Handler):
    """Keeps the text of every warning logged during a run."""

    def __init__(self) -> None:
        super().__init__(level=logging.WARNING)
        self.messages: List[str] = []

    def emit(self, record: logging.LogRecord) -> None:
        self.messages.append(f"{record.name}: {record.getMessage()}")


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------

def run_simulate(cfg: ExperimentConfig, out: Path, workers: Optional[int] = None) -> List[Path]:
    """Trajectories of the particle system, one CSV per replica, plus conserved-quantity series."""
    exp = cfg.experiment
    spec = cfg.kernel_spec()
    sampler = partial(sample_initial, cfg.initial_spec(), exp["n"])
    trajectories = simulate(sampler, spec, exp["times"], exp["replicas"], cfg.seed, workers)

    paths = []
    rows = []
    for tr in trajectories:
        path = out / f"trajectory_r{tr.replica:03d}.csv"
        write_trajectories([tr], path, "simulation", cfg.config_hash, {"kernel": describe_kernel(spec)})
        paths += [path, path.with_suffix(".json")]
        for t, V, n_events in zip(tr.times, tr.snapshots, tr.event_counts):
            p = momentum(V)
            row = {"replica": tr.replica, "t": t, "n_events": int(n_events), "energy": energy(V), "m4": moment_n(V, 4)}
            row.update({f"momentum_{k + 1}": p[k] for k in range(spec.dimension)})
            rows.append(row)
    paths.append(write_frame(pd.DataFrame(rows), out / "observables.csv"))
    return paths


def run_lln(cfg: ExperimentConfig, out: Path, workers: Optional[int] = None) -> List[Path]:
    """W^N_D over the N grid, with the exact-identity column for the Sobolev distance."""
    exp = cfg.experiment
    metric = cfg.section("metric")
    result = lln_rate_scan(cfg.initial_spec(), metric["distance"], exp["n_grid"], exp["reps"], cfg.seed,
                           metric["s"], workers)
    fit = {
        "distance": result.distance,
        "dimension": result.dimension,
        "s": result.s,
        "bound_exponent": result.bound_exponent,
        "classical_exponent": result.classical_exponent,
        "slope": result.slope.as_dict() if result.slope is not None else None,
    }
    return [write_frame(result.to_frame(), out / "lln.csv"), write_json(fit, out / "lln_fit.json")]


def run_chaos(cfg: ExperimentConfig, out: Path, workers: Optional[int] = None) -> List[Path]:
    """Chaos gap against a large-N reference, per (N, t, ell)."""
    exp = cfg.experiment
    spec = cfg.kernel_spec()
    initial = cfg.initial_spec()
    ref_cfg = cfg.section("reference")
    times = exp["times"]
    reference = mean_field_reference(partial(sample_initial, initial), spec, times, ref_cfg["n_ref"],
                                     ref_cfg["replicas"], cfg.seed, workers)
    # dictionaries are fixed before any particle data is seen
    dictionaries = {ell: build_dictionary(spec.dimension, ell, cfg.dictionary_norm(), **cfg.section("dictionary"))
                    for ell in exp["ell"]}

    rows, entries = [], []
    boot_index = 0
    for n in exp["n_grid"]:
        trajectories = simulate(partial(sample_initial, initial, n), spec, times, exp["replicas"], cfg.seed, workers)
        for ell, dictionary in dictionaries.items():
            if n < 2 * ell:
                logger.warning("Skipping N=%d for ell=%d: chaos gap needs N >= 2 ell", n, ell)
                continue
            for t in times:
                gap = chaos_gap([tr.at(t) for tr in trajectories], reference.at(t), dictionary, ell,
                                substream(cfg.seed, "bootstrap", boot_index), exp["bootstrap"])
                boot_index += 1
                rows.append((n, t, ell, "sym", gap.value, gap.stderr, gap.dictionary_id))
                rows.append((n, t, ell, "first_coordinates", gap.first_coordinates, np.nan, gap.dictionary_id))
                per_entry = gap.per_entry.copy()
                per_entry.insert(0, "ell", ell)
                per_entry.insert(0, "t", t)
                per_entry.insert(0, "N", n)
                entries.append(per_entry)
        logger.info("Chaos gap computed for N=%d", n)

    frame = pd.DataFrame(rows, columns=CHAOS_COLUMNS)
    entry_frame = pd.concat(entries, ignore_index=True) if entries else pd.DataFrame(
        columns=["N", "t", "ell", "dictionary_id", "estimate", "reference", "gap"])
    return [write_frame(frame, out / "chaos.csv"), write_frame(entry_frame, out / "chaos_entries.csv")]


def run_contraction(cfg: ExperimentConfig, out: Path, workers: Optional[int] = None) -> List[Path]:
    """Maxwell contraction series for two matched laws, then relaxation of f_t to its Maxwellian."""
    exp = cfg.experiment
    spec = cfg.kernel_spec()
    ref_cfg = cfg.section("reference")
    metric = cfg.section("metric")
    f0 = partial(sample_initial, cfg.initial_spec("initial"))
    paths = []

    if spec.is_maxwell:
        report = contraction_check(f0, partial(sample_initial, cfg.initial_spec("initial_g")), spec, exp["times"],
                                   ref_cfg["n_ref"], ref_cfg["replicas"], cfg.seed, cfg.frequency_grid(),
                                   metric["w_points"], workers)
        paths.append(write_frame(report.frame, out / "contraction.csv"))
        reference = report.f_reference
    else:
        logger.info("Hard spheres: no contraction estimate, running the relaxation part only")
        reference = mean_field_reference(f0, spec, exp["times"], ref_cfg["n_ref"], ref_cfg["replicas"], cfg.seed,
                                         workers)

    fit = relaxation_fit(reference, "toscani2", metric["w_points"])
    w1 = distance_to_equilibrium(reference, "W1", metric["w_points"])
    distances = pd.concat([fit.distances.assign(kind="toscani2"), w1.assign(kind="W1")], ignore_index=True)
    paths.append(write_frame(distances[["kind", "t", "distance", "noise_floor"]], out / "equilibrium.csv"))
    relaxation = {
        "rate": fit.rate,
        "ci_low": fit.ci_low,
        "ci_high": fit.ci_high,
        "r_squared": fit.r_squared,
        "spectral_gap": fit.spectral_gap,
        "bobylev_constant": fit.bobylev_constant,
        "status": fit.status,
        "conservation_drift": reference.conservation_drift(),
    }
    paths.append(write_json(relaxation, out / "relaxation.json"))
    return paths


def run_mehler(cfg: ExperimentConfig, out: Path, workers: Optional[int] = None) -> List[Path]:
    """ell-marginal of Kac-sphere data against the product Gaussian, per N."""
    exp = cfg.experiment
    mehler = cfg.section("mehler")
    evolve_to = mehler["evolve_to"]
    kernel = cfg.kernel_spec() if evolve_to is not None else None
    initial = cfg.initial_spec() if evolve_to is not None else None
    frames = []
    for ell in exp["ell"]:
        frame = mehler_marginal_check(exp["n_grid"], cfg.section("kernel")["d"], ell, mehler["samples"], cfg.seed,
                                      mehler["repeats"], kernel, evolve_to, initial)
        frame.insert(1, "ell", ell)
        frames.append(frame)
    return [write_frame(pd.concat(frames, ignore_index=True), out / "mehler.csv")]


def battery_summary(report: pd.DataFrame) -> pd.DataFrame:
    """Violation count and worst lhs/rhs ratio per inequality."""
    ratio = report["lhs"] / report["rhs"].where(report["rhs"] > 0)
    summary = (
        report.assign(ratio=ratio)
        .groupby("inequality_id", sort=False)
        .agg(trials=("trial", "count"), violations=("violated", "sum"), min_margin=("margin", "min"),
             max_ratio=("ratio", "max"))
        .reset_index()
    )
    summary["explicit"] = summary["inequality_id"].isin(EXPLICIT_INEQUALITIES)
    summary["violations"] = summary["violations"].astype(int)
    return summary


def run_battery(cfg: ExperimentConfig, out: Path, workers: Optional[int] = None) -> List[Path]:
    """Comparison inequalities between the distances on random discrete pairs."""
    metric = cfg.section("metric")
    d = cfg.section("kernel")["d"]
    settings = BatterySettings(
        dimension=d,
        q=metric["q"],
        k=metric["k"],
        s_fourier=metric["s_fourier"],
        s_sobolev=metric["s"],
        calibration_trials=metric["calibration_trials"],
        safety=metric["safety"],
        grid=cfg.frequency_grid(),
    )
    report = inequality_battery(partial(random_discrete_pair, dimension=d), cfg.experiment["trials"],
                                substream(cfg.seed, "battery", 0), settings, substream(cfg.seed, "battery", 1))
    summary = battery_summary(report)
    limit = ACCEPTANCE_THRESHOLDS["battery"]["max_explicit_violations"]
    if int(summary.loc[summary["explicit"], "violations"].sum()) > limit:
        logger.warning("Explicit-constant inequalities violated: %s",
                       summary.loc[summary["explicit"] & (summary["violations"] > 0), "inequality_id"].tolist())
    return [write_frame(report, out / "battery.csv"), write_frame(summary, out / "battery_summary.csv")]


RUNNERS: Dict[str, Runner] = {
    "simulate": run_simulate,
    "lln": run_lln,
    "chaos": run_chaos,
    "contraction": run_contraction,
    "mehler": run_mehler,
    "battery": run_battery,
}


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------

def run_experiment(cfg: ExperimentConfig, workers: Optional[int] = None) -> RunRecord:
    """
    Executes the configured experiment into <dir>.partial, writes manifest.json and
    renames the directory on success. On failure the partial directory is removed.
    """
    out = cfg.output_dir
    staging = out.with_name(out.name + ".partial")
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir(parents=True)

    collector = WarningCollector()
    root = logging.getLogger()
    root.addHandler(collector)
    start = time.perf_counter()
    try:
        logger.info("Running %s experiment (seed %d, hash %s)", cfg.kind, cfg.seed, cfg.config_hash[:12])
        written = [write_json(cfg.data, staging / "config.json")]
        written += RUNNERS[cfg.kind](cfg, staging, workers)
        record = RunRecord(
            kind=cfg.kind,
            seed=cfg.seed,
            config_hash=cfg.config_hash,
            tool_version=__version__,
            files={p.name: file_digest(p) for p in sorted(written)},
            wall_time=time.perf_counter() - start,
            warnings=list(collector.messages),
            kernel=describe_kernel(cfg.kernel_spec()) if cfg.uses_kernel else {},
        )
        write_json(record.as_dict(), staging / "manifest.json")
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    finally:
        root.removeHandler(collector)

    if out.exists():
        shutil.rmtree(out)
    staging.rename(out)
    logger.info("Run written to %s (%.1f s, %d warnings)", out, record.wall_time, len(record.warnings))
    return record
