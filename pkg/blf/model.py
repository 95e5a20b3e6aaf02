"""
Probability components of the fusion model

Rater labels are Bernoulli with success probability xi (sensitivity) on
voxels inside the structure and 1 - psi (one minus specificity) outside;
xi = Phi(x'beta + phi) and psi = Phi(z'gamma + eta) with mean-zero CAR fields
phi and eta. The true labels follow a regression P(T=1) = g^-1(c'delta).
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from scipy import special

from .lattice import quadratic_form
from .models import Field, FusionDataset, HyperConfig, LatticeGraph, ModelState, Reliability
from .priors import cmp_log_prior
from .utils import InvalidArgumentError, require

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-300
PROB_CEIL = 1.0 - 1e-16
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(eq=False)
class NumericalOverflowError(ArithmeticError):
    """Raised when a log density component is not finite"""
    component: str
    value: float

    def __post_init__(self):
        super().__init__(f"log density component '{self.component}' is not finite ({self.value})")


class LinkFunction:
    """Link g between P(T=1) and the linear predictor c'delta

    Subclasses provide the inverse link and its log forms; everything the
    Gamerman proposal needs (theta, b and its derivatives, g-dot) derives
    from them.
    """

    name = "link"

    def g(self, p):
        raise NotImplementedError

    def g_inv(self, u):
        raise NotImplementedError

    def log_g_inv(self, u):
        raise NotImplementedError

    def log1m_g_inv(self, u):
        raise NotImplementedError

    def log_g_inv_deriv(self, u):
        raise NotImplementedError

    def d_log_g_inv_deriv(self, u):
        """Derivative of log g_inv_deriv"""
        raise NotImplementedError

    def g_inv_deriv(self, u):
        return np.exp(self.log_g_inv_deriv(u))

    def g_deriv(self, p):
        """g-dot(p) = 1 / g_inv_deriv(g(p))"""
        return 1.0 / self.g_inv_deriv(self.g(p))

    def theta(self, u):
        """Natural parameter log(p / (1 - p)) of the Bernoulli response"""
        return self.log_g_inv(u) - self.log1m_g_inv(u)

    @staticmethod
    def b(theta):
        return np.logaddexp(0.0, theta)

    @staticmethod
    def b_dot(theta):
        return special.expit(theta)

    @staticmethod
    def b_ddot(theta):
        return special.expit(theta) * special.expit(-theta)

    def log_variance(self, u):
        """log b-ddot(theta(u)) = log p + log(1 - p)"""
        return self.log_g_inv(u) + self.log1m_g_inv(u)


class LogisticLink(LinkFunction):
    name = "logistic"

    def g(self, p):
        return special.logit(p)

    def g_inv(self, u):
        return special.expit(u)

    def log_g_inv(self, u):
        return special.log_expit(u)

    def log1m_g_inv(self, u):
        return special.log_expit(-np.asarray(u, dtype=float))

    def log_g_inv_deriv(self, u):
        u = np.asarray(u, dtype=float)
        return special.log_expit(u) + special.log_expit(-u)

    def d_log_g_inv_deriv(self, u):
        return 1.0 - 2.0 * special.expit(u)


class ProbitLink(LinkFunction):
    name = "probit"

    def g(self, p):
        return special.ndtri(p)

    def g_inv(self, u):
        return special.ndtr(u)

    def log_g_inv(self, u):
        return special.log_ndtr(u)

    def log1m_g_inv(self, u):
        return special.log_ndtr(-np.asarray(u, dtype=float))

    def log_g_inv_deriv(self, u):
        u = np.asarray(u, dtype=float)
        return -0.5 * u * u - _LOG_SQRT_2PI

    def d_log_g_inv_deriv(self, u):
        return -np.asarray(u, dtype=float)


LINKS = {
    "logistic": LogisticLink(),
    "probit": ProbitLink(),
}


def get_link(name: str) -> LinkFunction:
    """Look up a link function by name"""
    try:
        return LINKS[name]
    except KeyError:
        raise InvalidArgumentError(f"unknown link '{name}'") from None


def normal_cdf(x):
    """Standard normal CDF clamped into [PROB_FLOOR, PROB_CEIL]"""
    return np.clip(special.ndtr(x), PROB_FLOOR, PROB_CEIL)


def sensitivity_predictor(state: ModelState, data: FusionDataset) -> np.ndarray:
    """x'beta + phi for every voxel and rater (V x R)"""
    if data.n_beta == 0:
        return state.phi
    return state.phi + np.einsum("rvl,lr->vr", data.x_design, state.beta)


def specificity_predictor(state: ModelState, data: FusionDataset) -> np.ndarray:
    """z'gamma + eta for every voxel and rater (V x R)"""
    if data.n_gamma == 0:
        return state.eta
    return state.eta + np.einsum("rvk,kr->vr", data.z_design, state.gamma)


def reliability_field(state: ModelState, data: FusionDataset, which: Reliability) -> np.ndarray:
    """Sensitivity xi or specificity psi for all voxels and raters"""
    if Reliability(which) is Reliability.SENSITIVITY:
        return normal_cdf(sensitivity_predictor(state, data))
    return normal_cdf(specificity_predictor(state, data))


def reliability(v: int, r: int, state: ModelState, data: FusionDataset, which: Reliability) -> float:
    """Sensitivity or specificity of rater ``r`` at voxel ``v``"""
    require(0 <= v < data.n_voxels and 0 <= r < data.n_raters, "voxel or rater index out of range")
    if Reliability(which) is Reliability.SENSITIVITY:
        linear = state.phi[v, r] + (data.x_design[r, v] @ state.beta[:, r] if data.n_beta else 0.0)
    else:
        linear = state.eta[v, r] + (data.z_design[r, v] @ state.gamma[:, r] if data.n_gamma else 0.0)
    return float(normal_cdf(linear))


def bernoulli_prob(v: int, r: int, state: ModelState, data: FusionDataset) -> float:
    """Probability that rater ``r`` labels voxel ``v`` as structure"""
    if state.T[v] == 1:
        return reliability(v, r, state, data, Reliability.SENSITIVITY)
    return 1.0 - reliability(v, r, state, data, Reliability.SPECIFICITY)


def truth_prior_prob(state: ModelState, data: FusionDataset, link: LinkFunction) -> np.ndarray:
    """p_v = g^-1(c_v'delta)"""
    return link.g_inv(data.design @ state.delta)


def truth_conditional_prob(state: ModelState, data: FusionDataset, hyper: HyperConfig,
                           prior_prob: Optional[np.ndarray] = None) -> np.ndarray:
    """P(T_v = 1 | phi, eta, delta, beta, gamma, Y) with zeta integrated out

    Evaluated in log space; ``prior_prob`` overrides g^-1(c'delta).
    """
    observed = data.labels.astype(bool)
    lin_s = sensitivity_predictor(state, data)
    lin_p = specificity_predictor(state, data)
    # log Phi(-x) = log(1 - Phi(x)) without cancellation
    log_in = np.where(observed, special.log_ndtr(lin_s), special.log_ndtr(-lin_s)).sum(axis=1)
    log_out = np.where(observed, special.log_ndtr(-lin_p), special.log_ndtr(lin_p)).sum(axis=1)

    if prior_prob is None:
        u = data.design @ state.delta
        link = get_link(hyper.link)
        log_p, log_q = link.log_g_inv(u), link.log1m_g_inv(u)
    else:
        prior_prob = np.broadcast_to(np.asarray(prior_prob, dtype=float), (data.n_voxels,))
        with np.errstate(divide="ignore"):
            log_p, log_q = np.log(prior_prob), np.log1p(-prior_prob)

    log_one = log_p + log_in
    log_zero = log_q + log_out
    with np.errstate(invalid="ignore"):
        prob = np.exp(log_one - np.logaddexp(log_one, log_zero))
    # both branches impossible only when the prior puts all mass on one of them
    prob = np.where(np.isfinite(log_one) | np.isfinite(log_zero), prob, 0.0)
    return np.clip(np.nan_to_num(prob, nan=0.0), 0.0, 1.0)


def simulate_labels(state: ModelState, data: FusionDataset, rng: np.random.Generator) -> np.ndarray:
    """Draw rater labels Y from the data model given the state (V x R)"""
    xi = reliability_field(state, data, Reliability.SENSITIVITY)
    psi = reliability_field(state, data, Reliability.SPECIFICITY)
    success = np.where(state.T.astype(bool)[:, None], xi, 1.0 - psi)
    return (rng.random(success.shape) < success).astype(np.int8)


def _gaussian_log_prior(coefficients: np.ndarray, covariance: np.ndarray) -> float:
    if coefficients.size == 0:
        return 0.0
    solved = np.linalg.solve(covariance, coefficients)
    return -0.5 * float(np.sum(coefficients * solved))


def _car_log_density(fields: np.ndarray, tau: np.ndarray, graph: LatticeGraph, rho: float) -> float:
    n_voxels = fields.shape[0]
    total = 0.0
    for r in range(fields.shape[1]):
        q = quadratic_form(fields[:, r], graph, rho)
        total += 0.5 * n_voxels * np.log(tau[r]) - 0.5 * tau[r] * q
    return total


def log_joint_components(state: ModelState, data: FusionDataset, hyper: HyperConfig,
                         graph: LatticeGraph) -> Dict[str, float]:
    """
    Log posterior density split into its factors (up to constants)

    Returns:
        Mapping with keys likelihood, truth, car_phi, car_eta, delta_prior,
        beta_prior, gamma_prior, tau_prior

    Raises:
        NumericalOverflowError: If a component is not finite
    """
    link = get_link(hyper.link)
    observed = data.labels.astype(bool)
    inside = state.T.astype(bool)[:, None]
    lin_s = sensitivity_predictor(state, data)
    lin_p = specificity_predictor(state, data)
    log_lik = np.where(
        inside,
        np.where(observed, special.log_ndtr(lin_s), special.log_ndtr(-lin_s)),
        np.where(observed, special.log_ndtr(-lin_p), special.log_ndtr(lin_p)),
    )

    u = data.design @ state.delta
    truth = np.where(state.T.astype(bool), link.log_g_inv(u), link.log1m_g_inv(u))

    if hyper.cmp is not None:
        delta_prior = cmp_log_prior(state.delta, hyper.cmp, link)
    else:
        delta_prior = _gaussian_log_prior(state.delta, hyper.delta_covariance(data.n_delta))

    beta_prior = sum(_gaussian_log_prior(state.beta[:, r], hyper.beta_covariance(data.n_beta))
                     for r in range(data.n_raters)) if data.n_beta else 0.0
    gamma_prior = sum(_gaussian_log_prior(state.gamma[:, r], hyper.gamma_covariance(data.n_gamma))
                      for r in range(data.n_raters)) if data.n_gamma else 0.0

    tau_prior = 0.0
    for which, tau in ((Field.PHI, state.tau_phi), (Field.ETA, state.tau_eta)):
        a, b = hyper.gamma_shape_rate(which)
        tau_prior += float(np.sum((a - 1.0) * np.log(tau) - b * tau))

    components = {
        "likelihood": float(log_lik.sum()),
        "truth": float(truth.sum()),
        "car_phi": _car_log_density(state.phi, state.tau_phi, graph, hyper.rho_phi),
        "car_eta": _car_log_density(state.eta, state.tau_eta, graph, hyper.rho_eta),
        "delta_prior": float(delta_prior),
        "beta_prior": float(beta_prior),
        "gamma_prior": float(gamma_prior),
        "tau_prior": tau_prior,
    }
    for name, value in components.items():
        if not np.isfinite(value):
            raise NumericalOverflowError(name, value)
    return components


def log_joint(state: ModelState, data: FusionDataset, hyper: HyperConfig, graph: LatticeGraph) -> float:
    """Unnormalized log posterior density of the full state"""
    return float(sum(log_joint_components(state, data, hyper, graph).values()))
