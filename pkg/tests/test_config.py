from pathlib import Path

import pytest

from cyclomass.config import RunConfig, config_from_dict, parse_config
from cyclomass.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_defaults_are_valid():
    config = parse_config()
    assert config == RunConfig()
    assert config.grids.P is None
    assert config.solver.nonlinearity == "F1"
    assert config.grids.grid1d().half_length == 8.0


@pytest.mark.parametrize("name", ["harmonic.toml", "quartic.toml"])
def test_shipped_configs_parse(name):
    config = parse_config(CONFIGS / name)
    assert config.grids.n_x == 64
    assert config.io.out_dir.startswith("runs/")


def test_toml_values_reach_the_model(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('[potential]\nkind = "power"\ns = 6.0\n\n[epsilon]\nvalues = [0.3, 0.1]\n')
    config = parse_config(path)
    assert config.potential.spec().s == 6.0
    assert config.epsilon.values == [0.3, 0.1]


@pytest.mark.parametrize("raw, key, fragment", [
    ({"grids": {"bogus": 1}}, "grids.bogus", "unknown key"),
    ({"grids": {"n_x": 48}}, "grids.n_x", "power of two"),
    ({"grids": {"n_z": 64, "P": 17}}, "grids", "n_z/4"),
    ({"time": {"T": 0.5, "dt": 0.3}}, "time", "whole number"),
    ({"epsilon": {"values": [0.1, 0.2]}}, "epsilon.values", "strictly decreasing"),
    ({"solver": {"point_cap": 1000}}, "<root>", "point_cap"),
    ({"solver": {"nonlinearity": "cubic"}}, "solver.nonlinearity", ""),
])
def test_rejections_name_the_key(raw, key, fragment):
    with pytest.raises(ConfigError) as info:
        config_from_dict(raw)
    assert info.value.key == key
    assert fragment in info.value.constraint


def test_missing_file():
    with pytest.raises(ConfigError) as info:
        parse_config("no/such/run.toml")
    assert info.value.key == "--config"


def test_malformed_toml(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[grids\nn_x = 64\n")
    with pytest.raises(ConfigError, match="not valid TOML"):
        parse_config(path)


def test_linear_runs_skip_the_point_cap():
    config = config_from_dict({"solver": {"nonlinearity": "F0", "point_cap": 1000}})
    assert config.solver.point_cap == 1000
