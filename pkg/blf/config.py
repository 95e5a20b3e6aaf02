"""
Configuration loading and management for blf-py
"""

import logging
import os
from dataclasses import asdict
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import yaml

from .models import (
    CmpConfig,
    Config,
    CovariateConfig,
    HyperConfig,
    LoggingConfig,
    ModelConfig,
    SamplerConfig,
    SimulationConfig,
)
from .priors import CovariateSummary, default_cmp_scenarios, elicit_tau_hyper
from .utils import InvalidArgumentError

logger = logging.getLogger(__name__)

CONFIG_ENV = "BLF_CONFIG"
DEFAULT_CONFIG_FILE = "blf.yaml"
DELTA_PRIORS = ("cmp", "gaussian")


class ConfigError(Exception):
    """Configuration file could not be parsed or holds invalid values"""


def _pairs(values, name: str):
    try:
        return tuple(tuple(float(x) for x in pair) for pair in values)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a list of pairs") from None


class ConfigManager:
    """Reads a YAML (or JSON) run configuration into Config sections"""

    def __init__(self, config_path: str = DEFAULT_CONFIG_FILE):
        self.config_path = Path(config_path).resolve()
        self.config: Optional[Config] = None

    def load_config(self) -> Config:
        """
        Load configuration from file; a missing file yields the defaults

        Raises:
            ConfigError: If the file cannot be parsed or a value is invalid
        """
        if not self.config_path.exists():
            logger.warning(f"Configuration file not found: {self.config_path}")
            self.config = Config()
            return self.config

        try:
            with open(self.config_path, 'r', encoding='utf-8') as f:
                data = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"Failed to read configuration {self.config_path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{self.config_path}: top level must be a mapping")

        try:
            self.config = self._parse_config(data)
        except (InvalidArgumentError, TypeError, ValueError) as e:
            raise ConfigError(f"Invalid configuration {self.config_path}: {e}") from e
        logger.info(f"Configuration loaded from {self.config_path}")
        return self.config

    def _parse_config(self, data: Dict[str, Any]) -> Config:
        """Parse configuration data into Config object"""

        # Model
        model_data = data.get('model', {})
        cmp_data = model_data.get('cmp', {})
        defaults = CmpConfig()
        cmp = CmpConfig(
            distance_quantiles=tuple(float(q) for q in cmp_data.get('distance_quantiles', defaults.distance_quantiles)),
            intensity_quantiles=tuple(float(q) for q in cmp_data.get('intensity_quantiles', defaults.intensity_quantiles)),
            shapes=_pairs(cmp_data.get('shapes', defaults.shapes), 'model.cmp.shapes'),
        )
        delta_prior = model_data.get('delta_prior', 'cmp')
        if delta_prior not in DELTA_PRIORS:
            raise ConfigError(f"model.delta_prior must be one of {DELTA_PRIORS}, got '{delta_prior}'")
        model = ModelConfig(
            rho_phi=float(model_data.get('rho_phi', 0.95)),
            rho_eta=float(model_data.get('rho_eta', 0.95)),
            tau_target=float(model_data.get('tau_target', 0.5)),
            a_phi=model_data.get('a_phi'),
            b_phi=model_data.get('b_phi'),
            a_eta=model_data.get('a_eta'),
            b_eta=model_data.get('b_eta'),
            delta_prior=delta_prior,
            delta_variance=float(model_data.get('delta_variance', 10.0)),
            beta_variance=float(model_data.get('beta_variance', 1.0)),
            gamma_variance=float(model_data.get('gamma_variance', 1.0)),
            link=model_data.get('link', 'logistic'),
            cmp=cmp,
        )

        # Sampler
        sampler_data = data.get('sampler', {})
        sampler = SamplerConfig(
            n_iterations=int(sampler_data.get('iterations', 100_000)),
            burn_in=sampler_data.get('burn_in'),
            thin=int(sampler_data.get('thin', 25)),
            rng_seed=int(sampler_data.get('seed', 0)),
            n_workers=int(sampler_data.get('workers', 1)),
            update_beta_gamma=bool(sampler_data.get('update_beta_gamma', False)),
            keep_last=sampler_data.get('keep_last'),
            stream_dir=sampler_data.get('stream_dir'),
            progress=bool(sampler_data.get('progress', False)),
            check_invariants=bool(sampler_data.get('check_invariants', False)),
            fixed_blocks=tuple(sampler_data.get('fixed_blocks', ())),
        )

        # Covariates
        cov_data = data.get('covariates', {})
        covariates = CovariateConfig(
            epsilon=float(cov_data.get('epsilon', 1e-6)),
            rescale=bool(cov_data.get('rescale', False)),
            with_interaction=bool(cov_data.get('with_interaction', True)),
        )
        if covariates.epsilon < 0:
            raise ConfigError("covariates.epsilon must be non-negative")

        # Simulation: keys mirror SimulationConfig, 'raters' is accepted for n_raters
        sim_data = dict(data.get('simulation', {}))
        if 'raters' in sim_data:
            sim_data['n_raters'] = sim_data.pop('raters')
        unknown = set(sim_data) - set(SimulationConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown simulation keys: {sorted(unknown)}")
        for key in ('bump_centers',):
            if key in sim_data:
                sim_data[key] = _pairs(sim_data[key], f'simulation.{key}')
        for key in ('distractor_center', 'poor_shift'):
            if key in sim_data:
                sim_data[key] = tuple(float(x) for x in sim_data[key])
        simulation = SimulationConfig(**sim_data)

        # Logging
        logging_data = data.get('logging', {})
        logging_config = LoggingConfig(
            json=logging_data.get('json', True),
            file=logging_data.get('file', ''),
            level=logging_data.get('level', 'INFO'),
            max_size_mb=logging_data.get('max_size_mb', 100),
            backup_count=logging_data.get('backup_count', 5)
        )

        return Config(
            model=model,
            sampler=sampler,
            covariates=covariates,
            simulation=simulation,
            logging=logging_config,
        )

    def get_config(self) -> Config:
        """Get current configuration"""
        if self.config is None:
            self.config = self.load_config()
        return self.config


def hyper_from_config(model: ModelConfig, design: np.ndarray) -> HyperConfig:
    """
    Hyperparameters for a design matrix

    Unset Gamma shapes/rates come from the tau elicitation; with the "cmp"
    delta prior the pseudo points are placed on the design's distance and
    intensity columns.
    """
    a_default, b_default = elicit_tau_hyper(model.tau_target)
    cmp = None
    if model.delta_prior == "cmp":
        cmp = default_cmp_scenarios(
            CovariateSummary.from_design(design),
            model.cmp.distance_quantiles,
            model.cmp.intensity_quantiles,
            model.cmp.shapes,
        )
    return HyperConfig(
        rho_phi=model.rho_phi,
        rho_eta=model.rho_eta,
        a_phi=float(model.a_phi) if model.a_phi is not None else a_default,
        b_phi=float(model.b_phi) if model.b_phi is not None else b_default,
        a_eta=float(model.a_eta) if model.a_eta is not None else a_default,
        b_eta=float(model.b_eta) if model.b_eta is not None else b_default,
        delta_variance=model.delta_variance,
        beta_variance=model.beta_variance,
        gamma_variance=model.gamma_variance,
        cmp=cmp,
        link=model.link,
    )


def _plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def config_to_dict(config: Config) -> Dict[str, Any]:
    """JSON-ready rendering of the effective configuration"""
    return _plain(asdict(config))


# Global configuration manager instance
config_manager = ConfigManager(os.environ.get(CONFIG_ENV, DEFAULT_CONFIG_FILE))


def load_config(config_path: Optional[str] = None) -> Config:
    """Load configuration from file, falling back to $BLF_CONFIG"""
    global config_manager
    config_manager = ConfigManager(config_path or os.environ.get(CONFIG_ENV, DEFAULT_CONFIG_FILE))
    return config_manager.load_config()


def get_config() -> Config:
    """Get current configuration"""
    return config_manager.get_config()
