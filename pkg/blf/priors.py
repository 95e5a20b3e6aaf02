"""
Hyperparameter elicitation and the conditional mean prior on delta
"""

import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .models import CmpSpec
from .utils import InvalidArgumentError, require

logger = logging.getLogger(__name__)

# Scenarios: near/bright very likely, far/dark very unlikely,
# mid/average borderline, far/bright not very likely
DEFAULT_DISTANCE_QUANTILES = (0.05, 0.95, 0.5, 0.95)
DEFAULT_INTENSITY_QUANTILES = (0.95, 0.05, 0.5, 0.95)
DEFAULT_CMP_SHAPES = ((20.0, 1.0), (1.0, 20.0), (1.0, 1.0), (1.0, 4.0))

# Shrinkage of the marginal variance of a CAR site near rho = 1
_CAR_VARIANCE_FACTOR = 0.7 ** 2


def elicit_tau_hyper(tau_target: float) -> Tuple[float, float]:
    """Gamma(a, b) prior with shape 1 and mean ``tau_target``

    Raises:
        InvalidArgumentError: If the target is not positive
    """
    if not tau_target > 0:
        raise InvalidArgumentError(f"tau_target must be positive, got {tau_target}")
    return 1.0, 1.0 / float(tau_target)


def car_site_variance(tau: float, degree: int) -> float:
    """Approximate marginal variance (0.7^2 w tau)^-1 of a CAR site"""
    require(tau > 0 and degree > 0, "tau and degree must be positive")
    return 1.0 / (_CAR_VARIANCE_FACTOR * degree * tau)


def cmp_log_prior(delta: np.ndarray, spec: CmpSpec, link) -> float:
    """Unnormalized log density of the conditional mean prior

    sum_j (a_j - 1) log p_j + (b_j - 1) log(1 - p_j) + log g_inv'(u_j),
    with u_j = c_j'delta and p_j = g^-1(u_j).
    """
    u = spec.pseudo_design @ np.asarray(delta, dtype=float)
    a, b = spec.beta_shapes[:, 0], spec.beta_shapes[:, 1]
    terms = (a - 1.0) * link.log_g_inv(u) + (b - 1.0) * link.log1m_g_inv(u) + link.log_g_inv_deriv(u)
    return float(np.sum(terms))


def cmp_log_prior_grad(delta: np.ndarray, spec: CmpSpec, link) -> np.ndarray:
    """Gradient of cmp_log_prior with respect to delta"""
    u = spec.pseudo_design @ np.asarray(delta, dtype=float)
    a, b = spec.beta_shapes[:, 0], spec.beta_shapes[:, 1]
    log_density = link.log_g_inv_deriv(u)
    score = ((a - 1.0) * np.exp(log_density - link.log_g_inv(u))
             - (b - 1.0) * np.exp(log_density - link.log1m_g_inv(u))
             + link.d_log_g_inv_deriv(u))
    return spec.pseudo_design.T @ score


@dataclass
class CovariateSummary:
    """Distance and intensity covariates the pseudo points are placed on"""
    distance: np.ndarray
    intensity: np.ndarray
    with_interaction: bool = True

    @classmethod
    def from_design(cls, design: np.ndarray) -> "CovariateSummary":
        """Read distance and intensity from columns 1 and 2 of a design"""
        require(design.ndim == 2 and design.shape[1] >= 3, "design needs intercept, distance and intensity")
        return cls(design[:, 1].copy(), design[:, 2].copy(), design.shape[1] >= 4)


def default_cmp_scenarios(summary: CovariateSummary,
                          distance_quantiles: Sequence[float] = DEFAULT_DISTANCE_QUANTILES,
                          intensity_quantiles: Sequence[float] = DEFAULT_INTENSITY_QUANTILES,
                          shapes: Sequence[Sequence[float]] = DEFAULT_CMP_SHAPES) -> CmpSpec:
    """
    Place one pseudo observation per design column at covariate quantiles

    Rows are [1, d, i, d*i] (or [1, d, i] without interaction), one per
    scenario; a J=3 design uses the first three scenarios.

    Raises:
        InvalidArgumentError: If the resulting pseudo design is singular
    """
    n_delta = 4 if summary.with_interaction else 3
    require(len(distance_quantiles) >= n_delta and len(intensity_quantiles) >= n_delta,
            f"need {n_delta} distance and intensity quantiles")
    require(len(shapes) >= n_delta, f"need {n_delta} Beta shape pairs")

    distance = np.quantile(summary.distance, list(distance_quantiles[:n_delta]))
    intensity = np.quantile(summary.intensity, list(intensity_quantiles[:n_delta]))
    columns = [np.ones(n_delta), distance, intensity]
    if summary.with_interaction:
        columns.append(distance * intensity)
    pseudo_design = np.column_stack(columns)
    beta_shapes = np.asarray([list(s) for s in shapes[:n_delta]], dtype=float)

    try:
        spec = CmpSpec(pseudo_design, beta_shapes)
    except InvalidArgumentError as e:
        raise InvalidArgumentError(
            f"{e}; pseudo points at distance {distance.tolist()} and intensity {intensity.tolist()}"
        ) from e
    logger.debug(f"CMP pseudo design condition number {np.linalg.cond(pseudo_design):.3e}")
    return spec
