import json

import pytest

from aeborda.config import ExperimentConfig, config_from_dict, load_config, parse_override
from aeborda.errors import ConfigError


class TestDefaults:
    def test_valid(self):
        config = ExperimentConfig().validate()
        assert config.n0 == 25 and config.T == 500 and len(config.seeds) == 10
        assert config.regularization == 0.1 and config.noise_scale == 0.5

    def test_grid_resolution_by_dimension(self):
        assert ExperimentConfig().context_points == 101
        assert ExperimentConfig(context_dim=2).context_points == 33
        assert ExperimentConfig(action_dim=2, action_grid_points=9).action_points == 9


class TestFromDict:
    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown"):
            config_from_dict({"horizon": 10})

    @pytest.mark.parametrize("data", [
        {"T": "many"},
        {"T": 10, "n0": 20},
        {"seeds": []},
        {"seeds": [1, 1]},
        {"seeds": [-1]},
        {"kernel": "cosine"},
        {"strategies": ["greedy"]},
        {"lengthscale": 0.0},
        {"record_timing": 1},
        {"workers": 0},
        {"batch_size": 40, "pool_sample": 16},
        {"T": None},
        {"arms": ["ae-borda-dpo", "magic"]},
    ])
    def test_invalid(self, data):
        with pytest.raises(ConfigError):
            config_from_dict(data)

    def test_int_promoted_to_float(self):
        config = config_from_dict({"lengthscale": 1})
        assert isinstance(config.lengthscale, float)

    def test_nullable(self):
        assert config_from_dict({"context_grid_points": None}).context_grid_points is None


class TestLoad:
    def test_yaml(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("experiment: simulate\nT: 40\nseeds: [3, 4]\n")
        config = load_config(path)
        assert config.T == 40 and config.seeds == [3, 4]

    def test_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"T": 30}))
        assert load_config(path).T == 30

    def test_empty_file(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("")
        assert load_config(path) == ExperimentConfig()

    def test_metadata_file(self, tmp_path):
        path = tmp_path / "metadata.json"
        path.write_text(json.dumps({"library_version": "0", "config": {"T": 30, "n0": 5}}))
        config = load_config(path)
        assert (config.T, config.n0) == (30, 5)

    def test_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.yaml")
        bad = tmp_path / "bad.yaml"
        bad.write_text("T: [1,\n")
        with pytest.raises(ConfigError):
            load_config(bad)
        bad.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError):
            load_config(bad)

    def test_round_trip(self, tmp_path):
        config = ExperimentConfig(T=77, seeds=[5], strategies=["ae-borda"])
        path = tmp_path / "c.json"
        path.write_text(json.dumps(config.to_dict()))
        assert load_config(path) == config


class TestOverrides:
    @pytest.mark.parametrize("name,text,value", [
        ("T", "40", 40),
        ("lengthscale", "0.25", 0.25),
        ("record_timing", "true", True),
        ("seeds", "[1, 2]", [1, 2]),
        ("seeds", "1,2,3", [1, 2, 3]),
        ("strategies", "ae-borda,uniform-borda", ["ae-borda", "uniform-borda"]),
        ("context_grid_points", "none", None),
        ("link", "gaussian-cdf", "gaussian-cdf"),
    ])
    def test_parse(self, name, text, value):
        assert parse_override(name, text) == value

    @pytest.mark.parametrize("name,text", [("T", "x"), ("lengthscale", "wide"), ("record_timing", "maybe")])
    def test_bad(self, name, text):
        with pytest.raises(ConfigError):
            parse_override(name, text)
