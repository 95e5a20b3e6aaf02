"""
Tests for configuration loading
"""

import json
from pathlib import Path

import numpy as np
import pytest

from blf.config import ConfigError, ConfigManager, config_to_dict, hyper_from_config, load_config
from blf.models import Config, ModelConfig, SweepOrder

EXAMPLE_CONFIG = Path(__file__).resolve().parent.parent / "blf.yaml"


def _design(n=200, seed=0):
    rng = np.random.default_rng(seed)
    distance = rng.normal(scale=4.0, size=n)
    intensity = rng.uniform(size=n)
    return np.column_stack([np.ones(n), distance, intensity, distance * intensity])


class TestConfigManager:
    """Test reading configuration files"""

    def test_missing_file_gives_defaults(self, tmp_path):
        config = ConfigManager(str(tmp_path / "absent.yaml")).load_config()
        assert config == Config()

    def test_example_config(self):
        config = ConfigManager(str(EXAMPLE_CONFIG)).load_config()
        assert config.model.delta_prior == "cmp"
        assert config.sampler.n_iterations == 100_000
        assert config.sampler.burn_in == 50_000
        assert config.sampler.sweep_order == SweepOrder.COLLAPSED_TRUTH_FIRST
        assert config.simulation.n_raters == 4
        assert config.model.cmp.shapes[0] == (20.0, 1.0)
        assert config.logging.json is False

    def test_partial_sections(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("sampler:\n  iterations: 400\n  thin: 4\nmodel:\n  link: probit\n")
        config = ConfigManager(str(path)).load_config()
        assert config.sampler.n_iterations == 400
        assert config.sampler.burn_in == 200
        assert config.sampler.thin == 4
        assert config.model.link == "probit"
        assert config.covariates.epsilon == 1e-6

    def test_json_is_accepted(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"simulation": {"raters": 3, "poor_shift": [0.1, 0.1]}}))
        config = ConfigManager(str(path)).load_config()
        assert config.simulation.n_raters == 3
        assert config.simulation.poor_shift == (0.1, 0.1)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("")
        assert ConfigManager(str(path)).load_config() == Config()

    @pytest.mark.parametrize("content", [
        "- just\n- a list\n",
        "model: [unclosed\n",
        "model:\n  delta_prior: uniform\n",
        "simulation:\n  colour: red\n",
        "simulation:\n  raters: 1\n",
        "sampler:\n  iterations: 10\n  burn_in: 10\n",
        "sampler:\n  thin: lots\n",
        "covariates:\n  epsilon: -1\n",
        "model:\n  cmp:\n    shapes: [1, 2]\n",
    ])
    def test_invalid_content(self, tmp_path, content):
        path = tmp_path / "bad.yaml"
        path.write_text(content)
        with pytest.raises(ConfigError):
            ConfigManager(str(path)).load_config()

    def test_get_config_loads_once(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("sampler:\n  seed: 9\n")
        manager = ConfigManager(str(path))
        first = manager.get_config()
        path.write_text("sampler:\n  seed: 10\n")
        assert manager.get_config() is first
        assert first.sampler.rng_seed == 9

    def test_environment_fallback(self, tmp_path, monkeypatch):
        path = tmp_path / "env.yaml"
        path.write_text("sampler:\n  workers: 3\n")
        monkeypatch.setenv("BLF_CONFIG", str(path))
        assert load_config().sampler.n_workers == 3
        assert load_config(str(tmp_path / "absent.yaml")).sampler.n_workers == 1


class TestHyperFromConfig:
    """Test derived hyperparameters"""

    def test_elicited_defaults(self):
        hyper = hyper_from_config(ModelConfig(delta_prior="gaussian"), _design())
        assert (hyper.a_phi, hyper.b_phi) == (1.0, 2.0)
        assert (hyper.a_eta, hyper.b_eta) == (1.0, 2.0)
        assert hyper.cmp is None

    def test_explicit_shapes_win(self):
        hyper = hyper_from_config(ModelConfig(delta_prior="gaussian", a_phi=3, b_eta=0.5), _design())
        assert hyper.a_phi == 3.0
        assert hyper.b_phi == 2.0
        assert hyper.b_eta == 0.5

    def test_cmp_pseudo_points(self):
        design = _design()
        hyper = hyper_from_config(ModelConfig(), design)
        assert hyper.cmp is not None
        assert hyper.cmp.pseudo_design.shape == (4, 4)
        assert hyper.cmp.pseudo_design[0, 1] == pytest.approx(np.quantile(design[:, 1], 0.05))

    def test_config_to_dict_is_json_ready(self):
        rendered = config_to_dict(Config())
        text = json.dumps(rendered)
        assert rendered["sampler"]["sweep_order"] == SweepOrder.COLLAPSED_TRUTH_FIRST.value
        assert rendered["model"]["cmp"]["shapes"][0] == [20.0, 1.0]
        assert "simulation" in json.loads(text)
