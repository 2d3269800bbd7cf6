"""
Central configuration for the kacsim experiment harness.
Contains the structured mappings and the experiment config loader.
Simple constants live in constants.py.
"""

import copy
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from constants import DEFAULT_DIMENSION, DICTIONARY_DEFAULTS, MCMC_DEFAULTS, MIN_REFERENCE_PARTICLES, TOSCANI_GRID
from utils import canonical_json, digest_text

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid experiment configuration; key is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"{key}: {message}")
        self.key = key


EXPERIMENT_KINDS = ("simulate", "lln", "chaos", "contraction", "mehler", "battery")

KERNEL_FAMILIES = {
    "maxwell": {"gamma_exponent": 0, "dictionary_norm": "fourier"},
    "hard_spheres": {"gamma_exponent": 1, "dictionary_norm": "lipschitz"},
}

# Types: "int", "float", "str", "bool", "ints", "floats", suffixed by "?" when the entry may be absent
SCHEMA: Dict[str, Dict[str, Tuple[str, Any]]] = {
    "experiment": {
        "kind": ("str", None),
        "seed": ("int", None),
        "n": ("int", 10),
        "n_grid": ("ints", [10, 20, 40, 80]),
        "times": ("floats", [0.0, 1.0]),
        "replicas": ("int", 2),
        "reps": ("int", 100),
        "ell": ("ints", [1]),
        "trials": ("int", 1000),
        "bootstrap": ("int", 200),
    },
    "kernel": {
        "family": ("str", "maxwell"),
        "d": ("int", DEFAULT_DIMENSION),
        "angular": ("str", "grad"),
        "b_const": ("float?", None),
        "nu": ("float?", None),
        "eps_cut": ("float?", None),
        "c_b": ("float", 1.0),
        "table_theta": ("floats", []),
        "table_b": ("floats", []),
    },
    "initial": {
        "law": ("str", "gaussian"),
        "mode": ("str", "tensor"),
        "mean": ("floats", []),
        "temperature": ("float", 1.0),
        "variances": ("floats", []),
        "radius": ("float", 1.0),
        "atom": ("floats", []),
        "sample_path": ("str?", None),
        "energy": ("float", 1.0),
        "project_momentum": ("bool", False),
        "sub_gaussian": ("bool", True),
        "compact_support": ("bool", False),
        "support_radius": ("float", 4.0),
        "burn_in": ("int", MCMC_DEFAULTS["burn_in"]),
        "thinning": ("int", MCMC_DEFAULTS["thinning"]),
        "step": ("float", MCMC_DEFAULTS["step"]),
        "chains": ("int", MCMC_DEFAULTS["chains"]),
    },
    "metric": {
        "distance": ("str", "sobolev_sq"),
        "s": ("float?", None),
        "q": ("float", 2.0),
        "k": ("float", 4.0),
        "s_fourier": ("float", 0.5),
        "calibration_trials": ("int", 50),
        "safety": ("float", 2.0),
        "r_min": ("float", TOSCANI_GRID["r_min"]),
        "r_max": ("float", TOSCANI_GRID["r_max"]),
        "n_radii": ("int", TOSCANI_GRID["n_radii"]),
        "n_directions": ("int", TOSCANI_GRID["n_directions"]),
        "w_points": ("int", 1024),
    },
    "reference": {
        "n_ref": ("int", 10_000),
        "replicas": ("int", 1),
    },
    "dictionary": {
        "n_packets": ("int", DICTIONARY_DEFAULTS["n_packets"]),
        "n_ramps": ("int", DICTIONARY_DEFAULTS["n_ramps"]),
        "seed": ("int", DICTIONARY_DEFAULTS["seed"]),
    },
    "mehler": {
        "samples": ("int", 2000),
        "repeats": ("int", 5),
        "evolve_to": ("float?", None),
    },
    "output": {
        "dir": ("str", "runs/default"),
    },
}

# The second initial law of a contraction run reuses the [initial] schema
SCHEMA["initial_g"] = copy.deepcopy(SCHEMA["initial"])

REQUIRED_KEYS = {
    "simulate": ["experiment.n", "experiment.times", "experiment.replicas"],
    "lln": ["experiment.n_grid", "experiment.reps", "metric.distance"],
    "chaos": ["experiment.n_grid", "experiment.times", "experiment.replicas", "experiment.ell"],
    "contraction": ["experiment.times", "initial_g.law"],
    "mehler": ["experiment.n_grid", "experiment.ell"],
    "battery": ["experiment.trials"],
}

# Pass/fail thresholds applied by the report command
ACCEPTANCE_THRESHOLDS = {
    "lln": {
        "sobolev_sq": {"slope_target": -1.0, "slope_tolerance": 0.1, "identity_n_sigma": 3.0},
        "W1": {"slope_max_d1": -0.45},
        "W2sq": {},
    },
    "simulate": {"max_relative_drift": 1e-10},
    "battery": {"max_explicit_violations": 0},
    "contraction": {"max_violations": 0, "equilibrium_ratio": 1.0 / 3.0},
    "chaos": {"n_sigma": 2.0, "uniform_in_time_factor": 2.0, "early_times": [1.0, 2.0], "late_time_min": 5.0},
    "mehler": {"n_sigma": 3.0},
}

# Output file names per experiment kind
OUTPUT_FILES = {
    "simulate": ["observables.csv"],
    "lln": ["lln.csv", "lln_fit.json"],
    "chaos": ["chaos.csv", "chaos_entries.csv"],
    "contraction": ["equilibrium.csv", "relaxation.json"],
    "mehler": ["mehler.csv"],
    "battery": ["battery.csv", "battery_summary.csv"],
}


def _coerce(key: str, kind: str, value: Any) -> Any:
    optional = kind.endswith("?")
    base = kind.rstrip("?")
    if value is None:
        if optional:
            return None
        raise ConfigError(key, "value is required")
    if base == "bool":
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected a boolean, got {value!r}")
        return value
    if base == "str":
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    if base in ("int", "float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        if base == "int":
            if float(value) != int(value):
                raise ConfigError(key, f"expected an integer, got {value!r}")
            return int(value)
        return float(value)
    if not isinstance(value, list):
        raise ConfigError(key, f"expected a list, got {value!r}")
    item = "int" if base == "ints" else "float"
    return [_coerce(f"{key}[{i}]", item, v) for i, v in enumerate(value)]


def normalize(raw: Dict[str, Any]) -> Dict[str, Any]:
    """Fills every default and coerces types; unknown sections or keys are rejected."""
    merged: Dict[str, Any] = {}
    for section in raw:
        if section not in SCHEMA:
            raise ConfigError(section, "unknown section")
        if not isinstance(raw[section], dict):
            raise ConfigError(section, "expected a table")
    for section, keys in SCHEMA.items():
        given = raw.get(section, {})
        for key in given:
            if key not in keys:
                raise ConfigError(f"{section}.{key}", "unknown key")
        merged[section] = {
            key: _coerce(f"{section}.{key}", kind, given.get(key, copy.deepcopy(default)))
            if key in given or default is not None else None
            for key, (kind, default) in keys.items()
        }
    return merged


@dataclass
class ExperimentConfig:
    """Validated, fully-defaulted experiment description."""

    data: Dict[str, Any]
    source: Optional[Path] = None

    @property
    def kind(self) -> str:
        return self.data["experiment"]["kind"]

    @property
    def seed(self) -> int:
        return self.data["experiment"]["seed"]

    @property
    def experiment(self) -> Dict[str, Any]:
        return self.data["experiment"]

    @property
    def output_dir(self) -> Path:
        return Path(self.data["output"]["dir"])

    def section(self, name: str) -> Dict[str, Any]:
        return self.data[name]

    def canonical(self) -> str:
        """Sorted-key JSON of the defaulted config; the output location is not part of the content."""
        return canonical_json({k: v for k, v in self.data.items() if k != "output"})

    @property
    def config_hash(self) -> str:
        return digest_text(self.canonical())

    def kernel_spec(self):
        from kernels import KernelSpec

        k = self.data["kernel"]
        gamma = KERNEL_FAMILIES[k["family"]]["gamma_exponent"]
        if k["angular"] == "grad":
            return KernelSpec.grad_cutoff(k["d"], gamma, k["b_const"])
        if k["angular"] == "power":
            return KernelSpec.power_law(k["nu"], k["eps_cut"], k["d"], gamma, k["c_b"])
        return KernelSpec.tabulated(k["table_theta"], k["table_b"], k["d"], gamma)

    def initial_spec(self, section: str = "initial"):
        from chaos import InitialDataSpec

        i = self.data[section]
        return InitialDataSpec(
            base_law=i["law"],
            dimension=self.data["kernel"]["d"],
            mean=tuple(i["mean"]) or None,
            temperature=i["temperature"],
            variances=tuple(i["variances"]) or None,
            radius=i["radius"],
            atom=tuple(i["atom"]) or None,
            sample_path=i["sample_path"],
            mode=i["mode"],
            energy=i["energy"],
            project_momentum=i["project_momentum"],
            sub_gaussian=i["sub_gaussian"],
            compact_support=i["compact_support"],
            support_radius=i["support_radius"],
            burn_in=i["burn_in"],
            thinning=i["thinning"],
            step=i["step"],
            chains=i["chains"],
        )

    def frequency_grid(self):
        from metrics import FrequencyGrid

        m = self.data["metric"]
        return FrequencyGrid(m["r_min"], m["r_max"], m["n_radii"], m["n_directions"])

    def dictionary_norm(self) -> str:
        return KERNEL_FAMILIES[self.data["kernel"]["family"]]["dictionary_norm"]

    @property
    def uses_kernel(self) -> bool:
        """Whether the experiment runs the particle dynamics."""
        if self.kind == "mehler":
            return self.data["mehler"]["evolve_to"] is not None
        return self.kind in ("simulate", "chaos", "contraction")


def _validate(cfg: ExperimentConfig) -> None:
    exp = cfg.experiment
    if exp["kind"] is None:
        raise ConfigError("experiment.kind", "missing")
    if exp["kind"] not in EXPERIMENT_KINDS:
        raise ConfigError("experiment.kind", f"must be one of {', '.join(EXPERIMENT_KINDS)}, got {exp['kind']!r}")
    if exp["seed"] is None:
        raise ConfigError("experiment.seed", "a master seed is mandatory")
    if exp["seed"] < 0:
        raise ConfigError("experiment.seed", "must be nonnegative")
    for dotted in REQUIRED_KEYS[exp["kind"]]:
        section, key = dotted.split(".")
        if cfg.data[section][key] is None:
            raise ConfigError(dotted, "required for this experiment kind")

    times = exp["times"]
    if any(t < 0 for t in times) or any(b <= a for a, b in zip(times, times[1:])):
        raise ConfigError("experiment.times", "must be nonnegative and strictly increasing")
    for key in ("replicas", "reps", "trials", "n"):
        if exp[key] < 1:
            raise ConfigError(f"experiment.{key}", "must be >= 1")
    if any(n < 1 for n in exp["n_grid"]):
        raise ConfigError("experiment.n_grid", "sizes must be >= 1")
    if any(ell < 1 for ell in exp["ell"]):
        raise ConfigError("experiment.ell", "must be >= 1")

    k = cfg.data["kernel"]
    if k["family"] not in KERNEL_FAMILIES:
        raise ConfigError("kernel.family", f"must be one of {', '.join(KERNEL_FAMILIES)}, got {k['family']!r}")
    if k["angular"] not in ("grad", "power", "tabulated"):
        raise ConfigError("kernel.angular", f"unknown angular law {k['angular']!r}")
    if k["angular"] == "power":
        for key in ("nu", "eps_cut"):
            if k[key] is None:
                raise ConfigError(f"kernel.{key}", "required for the power angular law")
    if cfg.uses_kernel:
        try:
            cfg.kernel_spec()
        except ValueError as e:
            raise ConfigError("kernel", str(e)) from e

    sections = ["initial"] + (["initial_g"] if exp["kind"] == "contraction" else [])
    for section in sections:
        try:
            cfg.initial_spec(section)
        except ValueError as e:
            raise ConfigError(section, str(e)) from e

    m = cfg.data["metric"]
    if exp["kind"] == "lln" and m["distance"] not in ("W1", "W2sq", "sobolev_sq"):
        raise ConfigError("metric.distance", f"unknown LLN distance {m['distance']!r}")
    try:
        cfg.frequency_grid()
    except ValueError as e:
        raise ConfigError("metric", str(e)) from e
    if exp["kind"] in ("chaos", "contraction") and cfg.data["reference"]["n_ref"] < MIN_REFERENCE_PARTICLES:
        raise ConfigError("reference.n_ref", f"must be >= {MIN_REFERENCE_PARTICLES}")
    if exp["kind"] == "mehler":
        if k["d"] * max(exp["ell"]) > 3:
            raise ConfigError("experiment.ell", "ell * d must be <= 3")
        if cfg.data["mehler"]["evolve_to"] is not None and cfg.data["mehler"]["evolve_to"] < 0:
            raise ConfigError("mehler.evolve_to", "must be nonnegative")


def config_from_dict(raw: Dict[str, Any], source: Optional[Path] = None) -> ExperimentConfig:
    cfg = ExperimentConfig(normalize(raw), source)
    _validate(cfg)
    return cfg


def load_config(path: Path) -> ExperimentConfig:
    """Parses and validates a TOML experiment file."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(str(path), "file not found") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(str(path), f"not valid TOML: {e}") from e
    cfg = config_from_dict(raw, path)
    logger.debug("Loaded %s config %s (hash %s)", cfg.kind, path, cfg.config_hash[:12])
    return cfg
