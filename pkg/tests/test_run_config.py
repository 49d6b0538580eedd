# tests/test_run_config.py
import pytest
from pydantic import ValidationError

from models.run_config import RunConfig

INI = """
[scene]
d = 3
k1 = sites:0,0,0;1,0,0
xhat = 13,0,0
u = 0.5

[engine]
seed = 42
replicas = 25
ns_method = direct

[experiment]
name = covariance
distances = 8,16.5
f1 = 0,1,1,1
f2 = 0,0,0,1
"""


def test_ini_is_parsed():
    cfg = RunConfig.from_ini(INI)
    assert cfg.scene.xhat == [13, 0, 0]
    assert cfg.scene.u == 0.5
    assert cfg.engine.seed == 42 and cfg.engine.threads == 1
    assert cfg.engine.ns_method == "direct"
    assert cfg.experiment.distances == [8.0, 16.5]
    assert cfg.experiment.f1 == [0.0, 1.0, 1.0, 1.0]


def test_ini_round_trip_keeps_hash():
    cfg = RunConfig.from_ini(INI)
    again = RunConfig.from_ini(cfg.to_ini())
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()


def test_hash_changes_with_seed():
    cfg = RunConfig.from_ini(INI)
    assert cfg.with_overrides(seed=43).config_hash() != cfg.config_hash()


def test_overrides():
    cfg = RunConfig().with_overrides(seed=7, replicas=3, threads=2, experiment="tv")
    assert (cfg.engine.seed, cfg.engine.replicas, cfg.engine.threads) == (7, 3, 2)
    assert cfg.experiment.name == "tv"
    assert RunConfig().with_overrides().engine == RunConfig().engine


@pytest.mark.parametrize("section, line", [
    ("scene", "k1 = blob:3"),
    ("scene", "u = -1"),
    ("engine", "replicas = 0"),
    ("engine", "ns_method = magic"),
    ("experiment", "name = nothing"),
])
def test_invalid_values_are_rejected(section, line):
    with pytest.raises(ValidationError):
        RunConfig.from_ini(f"[{section}]\n{line}\n")


def test_missing_sections_use_defaults():
    cfg = RunConfig.from_ini("[engine]\nseed = 1\n")
    assert cfg.scene.k1 == "singleton"
    assert cfg.experiment.name == "lemmas"
