"""
Gibbs sampler for Bayesian label fusion

One sweep runs, in order: the zeta-marginalized truth update, the probit
augmentation, chromatic updates of the spatial fields, the CAR precisions,
optionally the rater coefficients, and a Metropolis-Hastings step for delta.
"""

import json
import logging
import time
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy import linalg, special
from tqdm import tqdm

from .baselines import majority_vote
from .fileio import MatrixRowWriter
from .lattice import DegenerateVoxelError, car_precision, color_lattice, neighbor_sums, quadratic_form
from .metrics import MetricsManager
from .model import (
    LinkFunction,
    get_link,
    reliability_field,
    sensitivity_predictor,
    specificity_predictor,
    truth_conditional_prob,
)
from .models import (
    ChainOutput,
    Coloring,
    Field,
    FusionDataset,
    HyperConfig,
    Kernel,
    LatticeGraph,
    ModelState,
    Reliability,
    SamplerConfig,
)
from .priors import cmp_log_prior
from .rng import StreamFactory
from .utils import InvalidArgumentError, require

logger = logging.getLogger(__name__)

# Intervals further than this many sd into a tail use rejection sampling
TAIL_THRESHOLD = 5.0
MAX_REJECTION_ROUNDS = 10_000
# Smallest admissible probability argument of the normal quantile
_QUANTILE_FLOOR = 1e-300
_QUANTILE_CEIL = 1.0 - 2.0 ** -53
# Initial reliability 0.9 for every rater
INITIAL_FIELD = float(special.ndtri(0.9))


@dataclass(eq=False)
class NumericalError(ArithmeticError):
    """A linear system of the sampler is not positive definite"""
    what: str
    condition: float

    def __post_init__(self):
        super().__init__(f"{self.what} is not positive definite (condition estimate {self.condition:.3e})")


class SamplerStateError(RuntimeError):
    """A kernel ran on out-of-date augmented variables"""


def _cholesky(matrix: np.ndarray, what: str) -> np.ndarray:
    """Lower Cholesky factor, NumericalError with a condition estimate on failure"""
    try:
        return linalg.cholesky(matrix, lower=True)
    except linalg.LinAlgError:
        raise NumericalError(what, float(np.linalg.cond(matrix))) from None


def _gaussian_draw(precision: np.ndarray, rhs: np.ndarray, rng: np.random.Generator,
                   what: str) -> Tuple[np.ndarray, np.ndarray]:
    """Draw from N(P^-1 rhs, P^-1); returns (draw, mean)"""
    chol = _cholesky(precision, what)
    mean = linalg.cho_solve((chol, True), rhs)
    noise = rng.standard_normal(mean.shape[0])
    return mean + linalg.solve_triangular(chol, noise, lower=True, trans="T"), mean


# ---------------------------------------------------------------------------
# Truncated normal
# ---------------------------------------------------------------------------

def _sample_upper_tail(a: np.ndarray, b: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Standard normal restricted to (a, b) with a >= TAIL_THRESHOLD

    Exponential proposal truncated to (a, b) with rate (a + sqrt(a^2 + 4)) / 2,
    accepted with probability exp(-(z - rate)^2 / 2).
    """
    out = np.empty(a.shape[0])
    rate = 0.5 * (a + np.sqrt(a * a + 4.0))
    span = np.expm1(-rate * (b - a))
    pending = np.arange(a.shape[0])
    for _ in range(MAX_REJECTION_ROUNDS):
        u = rng.random(pending.shape[0])
        v = rng.random(pending.shape[0])
        z = a[pending] - np.log1p(u * span[pending]) / rate[pending]
        with np.errstate(divide="ignore"):
            ok = np.log(v) <= -0.5 * (z - rate[pending]) ** 2
        out[pending[ok]] = z[ok]
        pending = pending[~ok]
        if pending.shape[0] == 0:
            return out
    raise RuntimeError("tail rejection sampler did not converge")


def sample_truncated_normal(mu, sigma, lower, upper, rng: np.random.Generator):
    """
    Draw from N(mu, sigma^2) restricted to the open interval (lower, upper)

    Works elementwise on broadcast arrays. Moderate intervals use the inverse
    CDF on the lower tail; intervals beyond TAIL_THRESHOLD sd use rejection.

    Raises:
        InvalidArgumentError: If sigma <= 0 or lower >= upper anywhere
    """
    scalar = all(np.ndim(x) == 0 for x in (mu, sigma, lower, upper))
    mu, sigma, lower, upper = (np.asarray(x, dtype=float) for x in np.broadcast_arrays(mu, sigma, lower, upper))
    if np.any(~(sigma > 0)):
        raise InvalidArgumentError("sigma must be positive")
    if np.any(~(lower < upper)):
        raise InvalidArgumentError("lower bound must be below upper bound")

    alpha = ((lower - mu) / sigma).reshape(-1)
    beta = ((upper - mu) / sigma).reshape(-1)
    # mirror intervals lying right of zero onto the left
    flip = alpha > 0
    lo = np.where(flip, -beta, alpha)
    hi = np.where(flip, -alpha, beta)

    z = np.empty(lo.shape[0])
    tail = hi < -TAIL_THRESHOLD
    body = ~tail
    if np.any(body):
        p_lo = special.ndtr(lo[body])
        p_hi = special.ndtr(hi[body])
        p = p_lo + rng.random(int(body.sum())) * (p_hi - p_lo)
        z[body] = np.clip(special.ndtri(np.clip(p, _QUANTILE_FLOOR, _QUANTILE_CEIL)), lo[body], hi[body])
    if np.any(tail):
        z[tail] = -_sample_upper_tail(-hi[tail], -lo[tail], rng)
    z = np.where(flip, -z, z).reshape(mu.shape)

    draw = mu + sigma * z
    # keep the support open after rounding
    draw = np.where(np.isfinite(lower), np.maximum(draw, np.nextafter(lower, np.inf)), draw)
    draw = np.where(np.isfinite(upper), np.minimum(draw, np.nextafter(upper, -np.inf)), draw)
    return float(draw) if scalar else draw


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

def update_zeta(state: ModelState, data: FusionDataset, rng: np.random.Generator) -> ModelState:
    """Redraw the augmented variables given T, the fields and coefficients"""
    inside = state.T.astype(float)[:, None]
    observed = data.labels.astype(bool)
    mean1 = inside * sensitivity_predictor(state, data)
    mean0 = (1.0 - inside) * specificity_predictor(state, data)
    positive = np.where(observed, 0.0, -np.inf), np.where(observed, np.inf, 0.0)
    negative = np.where(observed, -np.inf, 0.0), np.where(observed, 0.0, np.inf)
    state.zeta1 = sample_truncated_normal(mean1, 1.0, positive[0], positive[1], rng)
    state.zeta0 = sample_truncated_normal(mean0, 1.0, negative[0], negative[1], rng)
    state.zeta_stale = False
    return state


def site_conditional(weight, residual, tau: float, rho: float, degree, neighbor_avg) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and variance of one CAR site given its neighbors and the data

    var = 1 / (t + tau w), mean = var (t resid + rho tau w nbar)
    """
    variance = 1.0 / (weight + tau * degree)
    mean = variance * (weight * residual + rho * tau * degree * neighbor_avg)
    return mean, variance


def _update_sites(column: np.ndarray, voxels: np.ndarray, weight: np.ndarray, residual: np.ndarray,
                  noise: np.ndarray, graph: LatticeGraph, tau: float, rho: float) -> None:
    degree = graph.degree[voxels].astype(float)
    neighbor_avg = neighbor_sums(column, graph, voxels) / degree
    mean, variance = site_conditional(weight[voxels], residual[voxels], tau, rho, degree, neighbor_avg)
    column[voxels] = mean + np.sqrt(variance) * noise[voxels]


class ChromaticExecutor:
    """Runs the voxels of one color class on a pool of threads"""

    def __init__(self, n_workers: int = 1):
        require(n_workers >= 1, "n_workers must be at least 1")
        self.n_workers = n_workers
        self._parallel: Optional[Parallel] = None

    def __enter__(self):
        if self.n_workers > 1:
            self._parallel = Parallel(n_jobs=self.n_workers, backend="threading")
            self._parallel.__enter__()
        return self

    def __exit__(self, *exc):
        if self._parallel is not None:
            self._parallel.__exit__(*exc)
            self._parallel = None
        return False

    def run(self, task: Callable[[np.ndarray], None], voxels: np.ndarray) -> None:
        """Apply ``task`` to disjoint chunks of ``voxels``"""
        if self.n_workers == 1 or voxels.shape[0] < 2 * self.n_workers:
            task(voxels)
            return
        chunks = np.array_split(voxels, self.n_workers)
        if self._parallel is None:
            Parallel(n_jobs=self.n_workers, backend="threading")(delayed(task)(c) for c in chunks)
        else:
            self._parallel(delayed(task)(c) for c in chunks)


def update_spatial_field(which: Field, r: int, state: ModelState, data: FusionDataset,
                         graph: LatticeGraph, coloring: Coloring, hyper: HyperConfig,
                         rng: np.random.Generator,
                         executor: Optional[ChromaticExecutor] = None) -> ModelState:
    """
    Update phi_r or eta_r one color class at a time

    A single standard normal per voxel is drawn up front, so the result does
    not depend on how a class is split between workers.

    Raises:
        SamplerStateError: If zeta is stale after a truth update
        DegenerateVoxelError: If the lattice has an isolated voxel
    """
    if state.zeta_stale:
        raise SamplerStateError("zeta must be redrawn after updating T")
    if np.any(graph.degree == 0):
        raise DegenerateVoxelError("the lattice has isolated voxels")
    which = Field(which)
    inside = state.T.astype(float)
    if which is Field.PHI:
        weight = inside
        residual = state.zeta1[:, r] - (sensitivity_predictor(state, data)[:, r] - state.phi[:, r])
    else:
        weight = 1.0 - inside
        residual = state.zeta0[:, r] - (specificity_predictor(state, data)[:, r] - state.eta[:, r])
    tau = float(state.tau(which)[r])
    rho = hyper.rho(which)
    field = state.field(which)
    column = field[:, r].copy()
    noise = rng.standard_normal(graph.n_voxels)

    def task(voxels: np.ndarray) -> None:
        _update_sites(column, voxels, weight, residual, noise, graph, tau, rho)

    executor = executor or ChromaticExecutor(1)
    for voxels in coloring.classes:
        executor.run(task, voxels)
    field[:, r] = column
    return state


def update_T(state: ModelState, data: FusionDataset, hyper: HyperConfig,
             rng: np.random.Generator) -> ModelState:
    """Draw every T_v from its zeta-marginalized conditional; zeta becomes stale"""
    prob = truth_conditional_prob(state, data, hyper)
    state.T = (rng.random(data.n_voxels) < prob).astype(np.int8)
    state.zeta_stale = True
    return state


def tau_conditional(values: np.ndarray, graph: LatticeGraph, a: float, b: float,
                    rho: float) -> Tuple[float, float]:
    """Shape and rate of the Gamma conditional of a CAR precision"""
    q = quadratic_form(values, graph, rho)
    if q < 0:
        raise NumericalError("CAR precision D - rho W", float(np.linalg.cond(car_precision(graph, rho).toarray())))
    return a + 0.5 * values.shape[0], b + 0.5 * q


def update_tau(which: Field, r: int, state: ModelState, graph: LatticeGraph, hyper: HyperConfig,
               rng: np.random.Generator) -> ModelState:
    """Draw tau_phi[r] or tau_eta[r] from its Gamma conditional"""
    which = Field(which)
    a, b = hyper.gamma_shape_rate(which)
    shape, rate = tau_conditional(state.field(which)[:, r], graph, a, b, hyper.rho(which))
    value = rng.gamma(shape, 1.0 / rate)
    state.tau(which)[r] = max(value, np.finfo(float).tiny)
    return state


# ---------------------------------------------------------------------------
# Metropolis-Hastings step for delta
# ---------------------------------------------------------------------------

@dataclass
class GamermanProposal:
    """Gaussian proposal N(mean, precision^-1) built at one delta"""
    mean: np.ndarray
    precision: np.ndarray
    chol: np.ndarray

    def log_density(self, x: np.ndarray) -> float:
        """Log density up to the 2 pi constant"""
        scaled = self.chol.T @ (x - self.mean)
        return float(np.sum(np.log(np.diag(self.chol))) - 0.5 * scaled @ scaled)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        noise = rng.standard_normal(self.mean.shape[0])
        return self.mean + linalg.solve_triangular(self.chol, noise, lower=True, trans="T")


def gamerman_weights(u: np.ndarray, link: LinkFunction) -> np.ndarray:
    """IRLS weights Q_v = 1 / (b''(theta_v) g'(p_v)^2) at linear predictor u"""
    log_deriv = link.log_g_inv_deriv(u)
    return np.exp(2.0 * log_deriv - link.log_variance(u))


def _working_system(design: np.ndarray, response: np.ndarray, multiplicity: np.ndarray,
                    delta: np.ndarray, link: LinkFunction) -> Tuple[np.ndarray, np.ndarray]:
    """Weighted least squares normal equations C'WC and C'W y~ at delta

    Each row contributes weight m g_inv'^2 / var and working response
    u + (y - p) / g_inv'(u).
    """
    u = design @ delta
    weight = multiplicity * gamerman_weights(u, link)
    log_deriv = link.log_g_inv_deriv(u)
    log_var = link.log_variance(u)
    # w * (u + (y - p) / g_inv') without dividing by a vanishing derivative
    weighted_response = weight * u + multiplicity * (response - link.g_inv(u)) * np.exp(log_deriv - log_var)
    return design.T @ (weight[:, None] * design), design.T @ weighted_response


def gamerman_proposal(delta: np.ndarray, T: np.ndarray, data: FusionDataset, hyper: HyperConfig,
                      link: LinkFunction) -> GamermanProposal:
    """
    One IRLS step from ``delta`` as a Gaussian proposal

    With a conditional mean prior the pseudo points enter as extra rows with
    response a/(a+b) and multiplicity a+b; otherwise the Gaussian prior
    precision is added.

    Raises:
        NumericalError: If the proposal precision is not positive definite
    """
    precision, rhs = _working_system(data.design, T.astype(float), np.ones(data.n_voxels), delta, link)
    if hyper.cmp is not None:
        a, b = hyper.cmp.beta_shapes[:, 0], hyper.cmp.beta_shapes[:, 1]
        prior_precision, prior_rhs = _working_system(hyper.cmp.pseudo_design, a / (a + b), a + b, delta, link)
        precision = precision + prior_precision
        rhs = rhs + prior_rhs
    else:
        precision = precision + np.linalg.inv(hyper.delta_covariance(data.n_delta))
    precision = 0.5 * (precision + precision.T)
    chol = _cholesky(precision, "Gamerman proposal precision")
    mean = linalg.cho_solve((chol, True), rhs)
    return GamermanProposal(mean, precision, chol)


def delta_log_posterior(delta: np.ndarray, T: np.ndarray, data: FusionDataset, hyper: HyperConfig,
                        link: LinkFunction) -> float:
    """log P(T | delta) + log prior(delta)"""
    u = data.design @ delta
    log_lik = np.where(T.astype(bool), link.log_g_inv(u), link.log1m_g_inv(u)).sum()
    if hyper.cmp is not None:
        return float(log_lik + cmp_log_prior(delta, hyper.cmp, link))
    covariance = hyper.delta_covariance(data.n_delta)
    return float(log_lik - 0.5 * delta @ np.linalg.solve(covariance, delta))


def gamerman_log_acceptance(current: np.ndarray, proposed: np.ndarray, T: np.ndarray, data: FusionDataset,
                            hyper: HyperConfig, link: LinkFunction,
                            forward: Optional[GamermanProposal] = None) -> float:
    """Log Metropolis-Hastings ratio with the proposal rebuilt at the proposed point"""
    forward = forward or gamerman_proposal(current, T, data, hyper, link)
    reverse = gamerman_proposal(proposed, T, data, hyper, link)
    log_ratio = (delta_log_posterior(proposed, T, data, hyper, link)
                 - delta_log_posterior(current, T, data, hyper, link)
                 + reverse.log_density(current) - forward.log_density(proposed))
    return min(0.0, float(log_ratio))


def update_delta_gamerman(state: ModelState, data: FusionDataset, hyper: HyperConfig,
                          rng: np.random.Generator) -> Tuple[ModelState, bool]:
    """One Metropolis-Hastings step for delta with the IRLS proposal"""
    link = get_link(hyper.link)
    forward = gamerman_proposal(state.delta, state.T, data, hyper, link)
    proposed = forward.sample(rng)
    log_alpha = gamerman_log_acceptance(state.delta, proposed, state.T, data, hyper, link, forward)
    accepted = bool(rng.random() < np.exp(log_alpha))
    if accepted:
        state.delta = proposed
    state.delta_accepted = accepted
    return state, accepted


# ---------------------------------------------------------------------------
# Rater coefficients
# ---------------------------------------------------------------------------

def coefficient_conditional(design: np.ndarray, weight: np.ndarray, residual: np.ndarray,
                            prior_covariance: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of (Sigma^-1 + X'WX)^-1 X'W resid"""
    precision = np.linalg.inv(prior_covariance) + design.T @ (weight[:, None] * design)
    chol = _cholesky(0.5 * (precision + precision.T), "coefficient precision")
    mean = linalg.cho_solve((chol, True), design.T @ (weight * residual))
    covariance = linalg.cho_solve((chol, True), np.eye(design.shape[1]))
    return mean, covariance


def update_beta(r: int, state: ModelState, data: FusionDataset, hyper: HyperConfig,
                rng: np.random.Generator) -> ModelState:
    """Conjugate draw of beta_r; no-op without sensitivity covariates"""
    if data.n_beta == 0:
        return state
    if state.zeta_stale:
        raise SamplerStateError("zeta must be redrawn after updating T")
    design = data.x_design[r]
    weight = state.T.astype(float)
    precision = np.linalg.inv(hyper.beta_covariance(data.n_beta)) + design.T @ (weight[:, None] * design)
    rhs = design.T @ (weight * (state.zeta1[:, r] - state.phi[:, r]))
    state.beta[:, r], _ = _gaussian_draw(0.5 * (precision + precision.T), rhs, rng, "beta precision")
    return state


def update_gamma(r: int, state: ModelState, data: FusionDataset, hyper: HyperConfig,
                 rng: np.random.Generator) -> ModelState:
    """Conjugate draw of gamma_r; no-op without specificity covariates"""
    if data.n_gamma == 0:
        return state
    if state.zeta_stale:
        raise SamplerStateError("zeta must be redrawn after updating T")
    design = data.z_design[r]
    weight = 1.0 - state.T.astype(float)
    precision = np.linalg.inv(hyper.gamma_covariance(data.n_gamma)) + design.T @ (weight[:, None] * design)
    rhs = design.T @ (weight * (state.zeta0[:, r] - state.eta[:, r]))
    state.gamma[:, r], _ = _gaussian_draw(0.5 * (precision + precision.T), rhs, rng, "gamma precision")
    return state


# ---------------------------------------------------------------------------
# Sweep and chain
# ---------------------------------------------------------------------------

def initialize_state(data: FusionDataset, hyper: HyperConfig, rng: np.random.Generator) -> ModelState:
    """Starting point: majority vote for T, reliability 0.9, tau at its prior mean"""
    n_voxels, n_raters = data.labels.shape
    state = ModelState(
        T=majority_vote(data.labels).astype(np.int8),
        phi=np.full((n_voxels, n_raters), INITIAL_FIELD),
        eta=np.full((n_voxels, n_raters), INITIAL_FIELD),
        zeta1=np.zeros((n_voxels, n_raters)),
        zeta0=np.zeros((n_voxels, n_raters)),
        delta=np.zeros(data.n_delta),
        beta=np.zeros((data.n_beta, n_raters)),
        gamma=np.zeros((data.n_gamma, n_raters)),
        tau_phi=np.full(n_raters, hyper.a_phi / hyper.b_phi),
        tau_eta=np.full(n_raters, hyper.a_eta / hyper.b_eta),
    )
    return update_zeta(state, data, rng)


def sample_prior_state(data: FusionDataset, graph: LatticeGraph, hyper: HyperConfig,
                       rng: np.random.Generator) -> ModelState:
    """
    Draw every parameter from its prior, then T and zeta given them

    Uses a dense Cholesky factor of each CAR precision, so it is meant for
    small lattices. The delta prior must be Gaussian. zeta is left stale:
    simulate labels first, then redraw it with update_zeta.
    """
    require(hyper.cmp is None, "prior draws need a Gaussian delta prior")
    n_voxels, n_raters = data.labels.shape
    link = get_link(hyper.link)

    delta = rng.multivariate_normal(np.zeros(data.n_delta), hyper.delta_covariance(data.n_delta)) \
        if data.n_delta else np.zeros(0)
    beta = np.zeros((data.n_beta, n_raters))
    gamma = np.zeros((data.n_gamma, n_raters))
    for r in range(n_raters):
        if data.n_beta:
            beta[:, r] = rng.multivariate_normal(np.zeros(data.n_beta), hyper.beta_covariance(data.n_beta))
        if data.n_gamma:
            gamma[:, r] = rng.multivariate_normal(np.zeros(data.n_gamma), hyper.gamma_covariance(data.n_gamma))

    tau_phi = rng.gamma(hyper.a_phi, 1.0 / hyper.b_phi, size=n_raters)
    tau_eta = rng.gamma(hyper.a_eta, 1.0 / hyper.b_eta, size=n_raters)
    phi = np.empty((n_voxels, n_raters))
    eta = np.empty((n_voxels, n_raters))
    for which, fields, taus in ((Field.PHI, phi, tau_phi), (Field.ETA, eta, tau_eta)):
        chol = _cholesky(car_precision(graph, hyper.rho(which)).toarray(), "CAR precision")
        for r in range(n_raters):
            noise = rng.standard_normal(n_voxels)
            fields[:, r] = linalg.solve_triangular(chol, noise, lower=True, trans="T") / np.sqrt(taus[r])

    T = (rng.random(n_voxels) < link.g_inv(data.design @ delta)).astype(np.int8)
    state = ModelState(T=T, phi=phi, eta=eta, zeta1=np.zeros((n_voxels, n_raters)),
                       zeta0=np.zeros((n_voxels, n_raters)), delta=delta, beta=beta, gamma=gamma,
                       tau_phi=tau_phi, tau_eta=tau_eta, zeta_stale=True)
    return state


def _sign_check(state: ModelState, data: FusionDataset) -> None:
    if not state.sign_consistent(data.labels):
        raise SamplerStateError("augmented variables disagree with the observed labels")


def gibbs_sweep(state: ModelState, data: FusionDataset, graph: LatticeGraph, coloring: Coloring,
                hyper: HyperConfig, streams: StreamFactory, sweep: int,
                config: Optional[SamplerConfig] = None,
                executor: Optional[ChromaticExecutor] = None,
                metrics: Optional[MetricsManager] = None) -> ModelState:
    """
    Run every kernel once in the fixed order

    T -> zeta -> (phi_r, eta_r for each r) -> (tau_phi_r, tau_eta_r for each r)
    -> optional (beta_r, gamma_r) -> delta. Random numbers for kernel k of
    sweep s come from the stream (seed, k, rater) at counter s.
    """
    config = config or SamplerConfig(n_iterations=1, burn_in=0, thin=1)
    metrics = metrics or MetricsManager()
    fixed = set(config.fixed_blocks)

    if "truth" not in fixed:
        with metrics.kernel_context(Kernel.TRUTH):
            update_T(state, data, hyper, streams.kernel(Kernel.TRUTH, sweep))
    with metrics.kernel_context(Kernel.ZETA):
        update_zeta(state, data, streams.kernel(Kernel.ZETA, sweep))
    if config.check_invariants:
        _sign_check(state, data)

    for r in range(data.n_raters):
        if "phi" not in fixed:
            with metrics.kernel_context(Kernel.PHI):
                update_spatial_field(Field.PHI, r, state, data, graph, coloring, hyper,
                                     streams.kernel(Kernel.PHI, sweep, r), executor)
        if "eta" not in fixed:
            with metrics.kernel_context(Kernel.ETA):
                update_spatial_field(Field.ETA, r, state, data, graph, coloring, hyper,
                                     streams.kernel(Kernel.ETA, sweep, r), executor)

    if "tau" not in fixed:
        for r in range(data.n_raters):
            with metrics.kernel_context(Kernel.TAU_PHI):
                update_tau(Field.PHI, r, state, graph, hyper, streams.kernel(Kernel.TAU_PHI, sweep, r))
            with metrics.kernel_context(Kernel.TAU_ETA):
                update_tau(Field.ETA, r, state, graph, hyper, streams.kernel(Kernel.TAU_ETA, sweep, r))

    if config.update_beta_gamma:
        for r in range(data.n_raters):
            with metrics.kernel_context(Kernel.BETA):
                update_beta(r, state, data, hyper, streams.kernel(Kernel.BETA, sweep, r))
            with metrics.kernel_context(Kernel.GAMMA):
                update_gamma(r, state, data, hyper, streams.kernel(Kernel.GAMMA, sweep, r))

    state.delta_accepted = False
    if "delta" not in fixed and data.n_delta:
        with metrics.kernel_context(Kernel.DELTA):
            _, accepted = update_delta_gamerman(state, data, hyper, streams.kernel(Kernel.DELTA, sweep))
        metrics.record_delta(accepted)

    metrics.increment_sweeps()
    return state


class GibbsSampler:
    """Binds data, lattice and settings for repeated sweeps"""

    def __init__(self, data: FusionDataset, graph: LatticeGraph, hyper: HyperConfig,
                 config: SamplerConfig, coloring: Optional[Coloring] = None,
                 metrics: Optional[MetricsManager] = None):
        require(graph.n_voxels == data.n_voxels, "lattice size does not match the data")
        if hyper.cmp is not None:
            require(hyper.cmp.n_delta == data.n_delta, "CMP pseudo design does not match the design width")
        if np.any(graph.degree == 0):
            raise DegenerateVoxelError("the lattice has isolated voxels")
        self.data = data
        self.graph = graph
        self.hyper = hyper
        self.config = config
        self.coloring = coloring or color_lattice(graph)
        self.streams = StreamFactory(config.rng_seed)
        self.metrics = metrics or MetricsManager()
        self.executor = ChromaticExecutor(config.n_workers)

    def __enter__(self):
        self.executor.__enter__()
        return self

    def __exit__(self, *exc):
        return self.executor.__exit__(*exc)

    def initial_state(self) -> ModelState:
        return initialize_state(self.data, self.hyper, self.streams.kernel(Kernel.INIT, 0))

    def sweep(self, state: ModelState, sweep: int) -> ModelState:
        return gibbs_sweep(state, self.data, self.graph, self.coloring, self.hyper, self.streams, sweep,
                           self.config, self.executor, self.metrics)


class _RetainedSamples:
    """Collects retained iterates in memory or on disk"""

    def __init__(self, data: FusionDataset, config: SamplerConfig):
        n = config.n_retained
        n_voxels, n_raters = data.labels.shape
        self.count = 0
        self.iterations = np.zeros(n, dtype=np.int64)
        self.volume = np.zeros(n)
        self.delta = np.zeros((n, data.n_delta))
        self.tau_phi = np.zeros((n, n_raters))
        self.tau_eta = np.zeros((n, n_raters))
        self.accepted = np.zeros(n, dtype=bool)
        self.rb_mean = np.zeros(n_voxels)
        self.rb_m2 = np.zeros(n_voxels)
        self.sensitivity = np.zeros((n_voxels, n_raters))
        self.specificity = np.zeros((n_voxels, n_raters))
        self.stream_dir = config.stream_dir
        self.rb_samples = None if self.stream_dir else np.zeros((n, n_voxels))
        self._rows: Optional[MatrixRowWriter] = None
        self._records = None
        if self.stream_dir:
            self.stream_dir.mkdir(parents=True, exist_ok=True)
            self._rows = MatrixRowWriter(self.stream_dir / "rb_prob_samples.csv", n, n_voxels)
            self._records = open(self.stream_dir / "samples.jsonl", "w", encoding="utf-8")

    def add(self, sweep: int, state: ModelState, prob: np.ndarray,
            sensitivity: np.ndarray, specificity: np.ndarray) -> None:
        k = self.count
        self.iterations[k] = sweep
        self.volume[k] = float(prob.sum())
        self.delta[k] = state.delta
        self.tau_phi[k] = state.tau_phi
        self.tau_eta[k] = state.tau_eta
        self.accepted[k] = state.delta_accepted
        self.count += 1
        # Welford running moments of the probability map
        step = prob - self.rb_mean
        self.rb_mean += step / self.count
        self.rb_m2 += step * (prob - self.rb_mean)
        self.sensitivity += (sensitivity - self.sensitivity) / self.count
        self.specificity += (specificity - self.specificity) / self.count
        if self.rb_samples is not None:
            self.rb_samples[k] = prob
        else:
            self._rows.write_row(prob)
            record = {
                "iter": int(sweep),
                "volume": self.volume[k],
                "delta": state.delta.tolist(),
                "tau_phi": state.tau_phi.tolist(),
                "tau_eta": state.tau_eta.tolist(),
            }
            self._records.write(json.dumps(record) + "\n")

    def close(self) -> None:
        if self._rows is not None:
            self._rows.close()
            self._rows = None
        if self._records is not None:
            self._records.close()
            self._records = None


def run_chain(data: FusionDataset, graph: LatticeGraph, hyper: HyperConfig, sampler_config: SamplerConfig,
              initial_state: Optional[ModelState] = None,
              metrics: Optional[MetricsManager] = None) -> ChainOutput:
    """
    Run one chain and collect its retained iterates

    Iterate k (1-based) is kept when k > burn_in and (k - burn_in) is a
    multiple of thin; with keep_last only the final K of those are kept.
    Each retained iterate stores P(T_v = 1 | parameters, Y) for all voxels,
    its sum (the volume), delta, the precisions and the delta acceptance.
    """
    config = sampler_config
    metrics = metrics or MetricsManager()
    retained = _RetainedSamples(data, config)
    started = time.perf_counter()
    logger.info(f"Starting chain: {config.n_iterations} sweeps, burn-in {config.burn_in}, "
                f"thin {config.thin}, {config.n_retained} retained, {config.n_workers} worker(s)")

    try:
        with GibbsSampler(data, graph, hyper, config, metrics=metrics) as sampler:
            state = initial_state.copy() if initial_state is not None else sampler.initial_state()
            progress = tqdm(range(1, config.n_iterations + 1), disable=not config.progress,
                            desc="sweeps", unit="sweep")
            for sweep in progress:
                state = sampler.sweep(state, sweep)
                if config.is_retained(sweep):
                    prob = truth_conditional_prob(state, data, hyper)
                    retained.add(sweep, state, prob,
                                 reliability_field(state, data, Reliability.SENSITIVITY),
                                 reliability_field(state, data, Reliability.SPECIFICITY))
                    metrics.increment_retained()
    finally:
        retained.close()

    acceptance = metrics.acceptance_rate()
    logger.info(f"Chain finished in {time.perf_counter() - started:.1f}s: "
                f"{retained.count} samples retained, delta acceptance {acceptance:.3f}")
    snapshot = metrics.get_metrics()
    for name, entry in snapshot["kernels"].items():
        logger.debug(f"Kernel {name}: {entry['calls']} calls, {entry['seconds']:.3f}s")

    return ChainOutput(
        iterations=retained.iterations,
        volume_samples=retained.volume,
        delta_samples=retained.delta,
        tau_phi_samples=retained.tau_phi,
        tau_eta_samples=retained.tau_eta,
        accepted_delta=retained.accepted,
        acceptance_rate_delta=acceptance,
        rb_mean=retained.rb_mean,
        rb_m2=retained.rb_m2,
        sensitivity_mean=retained.sensitivity,
        specificity_mean=retained.specificity,
        rb_prob_samples=retained.rb_samples,
        metrics=snapshot,
    )
