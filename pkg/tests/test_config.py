from pathlib import Path

import pytest

from config import ConfigError, ExperimentConfig, config_from_dict, load_config, normalize
from constants import NETWORK_SIMPLEX_BUDGET, REFERENCE_SAMPLE_RATIO

MINIMAL = """
[experiment]
kind = "simulate"
seed = 1
n = 4
times = [0.0, 1.0]
replicas = 2
"""


def _write(tmp_path, text: str, name: str = "exp.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_minimal_config_is_fully_defaulted(tmp_path):
    cfg = load_config(_write(tmp_path, MINIMAL))
    assert isinstance(cfg, ExperimentConfig)
    assert cfg.kind == "simulate"
    assert cfg.seed == 1
    assert cfg.section("kernel")["family"] == "maxwell"
    assert cfg.section("initial")["law"] == "gaussian"
    assert cfg.kernel_spec().dimension == 3
    assert cfg.uses_kernel


def test_missing_seed_is_named(tmp_path):
    with pytest.raises(ConfigError) as err:
        load_config(_write(tmp_path, MINIMAL.replace("seed = 1\n", "")))
    assert err.value.key == "experiment.seed"


@pytest.mark.parametrize("raw, key", [
    ({"experiment": {"kind": "simulate", "seed": 1, "colour": "red"}}, "experiment.colour"),
    ({"experiment": {"kind": "simulate", "seed": 1}, "plots": {}}, "plots"),
    ({"experiment": {"kind": "simulate", "seed": 1, "n": 2.5}}, "experiment.n"),
    ({"experiment": {"kind": "simulate", "seed": 1, "times": [1.0, 0.5]}}, "experiment.times"),
    ({"experiment": {"kind": "fly", "seed": 1}}, "experiment.kind"),
    ({"experiment": {"kind": "simulate", "seed": 1}, "kernel": {"angular": "power"}}, "kernel.nu"),
    ({"experiment": {"kind": "simulate", "seed": 1}, "kernel": {"d": 1}}, "kernel"),
    ({"experiment": {"kind": "chaos", "seed": 1}, "reference": {"n_ref": 500}}, "reference.n_ref"),
    ({"experiment": {"kind": "mehler", "seed": 1, "ell": [2]}, "kernel": {"d": 2}}, "experiment.ell"),
    ({"experiment": {"kind": "lln", "seed": 1}, "metric": {"distance": "KL"}}, "metric.distance"),
    ({"experiment": {"kind": "simulate", "seed": 1}, "initial": {"law": "cauchy"}}, "initial"),
])
def test_invalid_entries_are_reported_with_their_key(raw, key):
    with pytest.raises(ConfigError) as err:
        config_from_dict(raw)
    assert err.value.key == key


def test_one_dimensional_experiments_do_not_need_a_kernel():
    cfg = config_from_dict({"experiment": {"kind": "lln", "seed": 3}, "kernel": {"d": 1}})
    assert not cfg.uses_kernel
    mehler = config_from_dict({"experiment": {"kind": "mehler", "seed": 3}, "kernel": {"d": 1},
                               "mehler": {"evolve_to": 2.0}})
    assert mehler.uses_kernel


def test_power_law_kernel_from_config():
    cfg = config_from_dict({"experiment": {"kind": "simulate", "seed": 1},
                            "kernel": {"family": "hard_spheres", "angular": "power", "nu": 0.5, "eps_cut": 0.1}})
    spec = cfg.kernel_spec()
    assert spec.gamma_exponent == 1
    assert cfg.dictionary_norm() == "lipschitz"


def test_integers_and_floats_normalize_alike():
    a = normalize({"experiment": {"kind": "simulate", "seed": 1, "times": [0, 1]}})
    b = normalize({"experiment": {"kind": "simulate", "seed": 1, "times": [0.0, 1.0]}})
    assert a == b


def test_hash_is_stable_under_reordering_and_whitespace(tmp_path):
    shuffled = """
[initial]
law   =   "gaussian"

[experiment]
replicas = 2
times = [0, 1]
n = 4
seed = 1
kind = "simulate"
"""
    a = load_config(_write(tmp_path, MINIMAL, "a.toml"))
    b = load_config(_write(tmp_path, shuffled, "b.toml"))
    assert a.config_hash == b.config_hash


def test_hash_depends_on_content_not_output_dir(tmp_path):
    base = load_config(_write(tmp_path, MINIMAL, "a.toml"))
    reseeded = load_config(_write(tmp_path, MINIMAL.replace("seed = 1", "seed = 2"), "b.toml"))
    moved = load_config(_write(tmp_path, MINIMAL + '\n[output]\ndir = "elsewhere"\n', "c.toml"))
    assert base.config_hash != reseeded.config_hash
    assert base.config_hash == moved.config_hash
    assert str(moved.output_dir) == "elsewhere"


def test_unreadable_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, "[experiment\nkind = 1"))


@pytest.mark.parametrize("name, distance", [("lln_w1_d3.toml", "W1"), ("lln_w2sq_d3.toml", "W2sq")])
def test_three_dimensional_transport_scans_fit_the_exact_solver(name, distance):
    cfg = load_config(Path(__file__).parent.parent / "configs" / name)
    assert cfg.kind == "lln"
    assert cfg.section("metric")["distance"] == distance
    assert cfg.initial_spec().dimension == 3
    assert REFERENCE_SAMPLE_RATIO * max(cfg.experiment["n_grid"]) <= NETWORK_SIMPLEX_BUDGET
