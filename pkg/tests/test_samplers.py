"""
Tests for the Gibbs kernels, the delta Metropolis-Hastings step and the chain driver
"""

import json

import numpy as np
import pytest
from scipy import integrate, special

from blf.fileio import read_matrix_csv
from blf.lattice import DegenerateVoxelError, build_lattice, car_precision, color_lattice, neighbor_sums
from blf.metrics import MetricsManager
from blf.model import get_link, simulate_labels, truth_conditional_prob
from blf.models import (
    CmpSpec,
    Field,
    FusionDataset,
    HyperConfig,
    ModelState,
    SamplerConfig,
)
from blf.rng import Stream, StreamFactory, stream_generator
from blf.samplers import (
    INITIAL_FIELD,
    ChromaticExecutor,
    GibbsSampler,
    SamplerStateError,
    coefficient_conditional,
    gamerman_log_acceptance,
    gamerman_proposal,
    gamerman_weights,
    gibbs_sweep,
    initialize_state,
    run_chain,
    sample_prior_state,
    sample_truncated_normal,
    site_conditional,
    tau_conditional,
    update_beta,
    update_delta_gamerman,
    update_spatial_field,
    update_T,
    update_tau,
    update_zeta,
)
from blf.utils import InvalidArgumentError

HALF_NORMAL_MEAN = np.sqrt(2.0 / np.pi)


def _dataset(labels, design=None, x_design=None):
    labels = np.atleast_2d(np.asarray(labels))
    n_voxels, n_raters = labels.shape
    design = np.ones((n_voxels, 1)) if design is None else design
    return FusionDataset(labels=labels, target_intensity=np.zeros(n_voxels),
                         rater_intensity=np.zeros((n_voxels, n_raters)), design=design, x_design=x_design)


def _random_dataset(height, width, n_raters, seed):
    rng = np.random.default_rng(seed)
    n_voxels = height * width
    design = np.column_stack([np.ones(n_voxels), rng.normal(size=n_voxels)])
    return _dataset(rng.integers(0, 2, size=(n_voxels, n_raters)), design)


def _state(T, n_raters=1, n_delta=1):
    T = np.asarray(T, dtype=np.int8)
    shape = (T.shape[0], n_raters)
    return ModelState(
        T=T, phi=np.full(shape, INITIAL_FIELD), eta=np.full(shape, INITIAL_FIELD),
        zeta1=np.zeros(shape), zeta0=np.zeros(shape), delta=np.zeros(n_delta),
        beta=np.zeros((0, n_raters)), gamma=np.zeros((0, n_raters)),
        tau_phi=np.full(n_raters, 0.5), tau_eta=np.full(n_raters, 0.5),
    )


def _batch_standard_error(trace, n_batches=50):
    size = trace.shape[0] // n_batches
    means = trace[: n_batches * size].reshape(n_batches, size).mean(axis=1)
    return means.std(ddof=1) / np.sqrt(n_batches)


class TestTruncatedNormal:
    """Test draws from truncated normal distributions"""

    def setup_method(self):
        self.rng = stream_generator(1, Stream.TEST)

    def test_half_normal_moments(self):
        """TN(0, 1, (0, inf)) has mean sqrt(2/pi) and variance 1 - 2/pi"""
        draws = sample_truncated_normal(np.zeros(100_000), 1.0, 0.0, np.inf, self.rng)
        assert np.all(draws > 0)
        assert abs(draws.mean() - 0.797885) < 0.01
        assert abs(draws.var() - (1.0 - 2.0 / np.pi)) < 0.01

    def test_untruncated_moments(self):
        """Infinite bounds reproduce N(mu, sigma^2)"""
        draws = sample_truncated_normal(np.full(100_000, 2.0), 3.0, -np.inf, np.inf, self.rng)
        assert draws.mean() == pytest.approx(2.0, abs=0.05)
        assert draws.std() == pytest.approx(3.0, abs=0.05)

    def test_far_upper_tail(self):
        """Intervals far in the tail stay inside their bounds"""
        draws = sample_truncated_normal(np.zeros(20_000), 1.0, 8.0, np.inf, self.rng)
        assert np.all(draws > 8.0)
        # E[Z | Z > 8] = pdf(8) / sf(8)
        expected = np.exp(-32.0) / np.sqrt(2 * np.pi) / special.ndtr(-8.0)
        assert draws.mean() == pytest.approx(expected, abs=0.01)

    def test_far_lower_tail_two_sided(self):
        """A bounded interval deep in the lower tail"""
        draws = sample_truncated_normal(np.zeros(5_000), 1.0, -12.0, -10.0, self.rng)
        assert np.all((draws > -12.0) & (draws < -10.0))

    def test_scalar_arguments(self):
        """Scalar inputs return a float"""
        value = sample_truncated_normal(0.0, 1.0, -np.inf, 0.0, self.rng)
        assert isinstance(value, float)
        assert value < 0.0

    def test_narrow_interval_is_open(self):
        """Draws never touch the bounds"""
        draws = sample_truncated_normal(np.zeros(1_000), 1.0, 1.0, 1.0 + 1e-12, self.rng)
        assert np.all((draws > 1.0) & (draws < 1.0 + 1e-12))

    def test_invalid_bounds(self):
        """lower >= upper and sigma <= 0 are rejected"""
        with pytest.raises(InvalidArgumentError):
            sample_truncated_normal(0.0, 1.0, 1.0, 1.0, self.rng)
        with pytest.raises(InvalidArgumentError):
            sample_truncated_normal(0.0, 0.0, 0.0, 1.0, self.rng)


class TestZeta:
    """Test the probit augmentation"""

    def test_signs_follow_labels(self):
        """zeta1 >= 0 exactly when Y = 1, zeta0 < 0 when Y = 1"""
        data = _dataset(np.random.default_rng(2).integers(0, 2, size=(50, 3)))
        state = update_zeta(_state(np.ones(50), 3), data, stream_generator(2, Stream.TEST))
        observed = data.labels.astype(bool)
        assert np.all(np.where(observed, state.zeta1 > 0, state.zeta1 < 0))
        assert np.all(np.where(observed, state.zeta0 < 0, state.zeta0 > 0))
        assert state.sign_consistent(data.labels)
        assert not state.zeta_stale

    def test_half_normal_mean_outside_structure(self):
        """With T = 0 zeta1 has mean zero before truncation"""
        n = 100_000
        data = _dataset(np.ones((n, 1)))
        state = update_zeta(_state(np.zeros(n)), data, stream_generator(3, Stream.TEST))
        assert state.zeta1.mean() == pytest.approx(HALF_NORMAL_MEAN, abs=0.01)


class TestSiteConditional:
    """Test the single-site CAR conditional"""

    def test_closed_form_example(self):
        """tau 0.5, w 8, rho 0.9, zero neighbors, zeta 1: mean 0.2, variance 0.2"""
        mean, variance = site_conditional(1.0, 1.0, 0.5, 0.9, 8, 0.0)
        assert variance == pytest.approx(0.2)
        assert mean == pytest.approx(0.2)

    def test_prior_conditional_outside_structure(self):
        """No data weight leaves N(rho nbar, 1 / (tau w))"""
        mean, variance = site_conditional(0.0, 5.0, 2.0, 0.9, 5, 1.5)
        assert mean == pytest.approx(0.9 * 1.5)
        assert variance == pytest.approx(1.0 / 10.0)

    def test_dense_precision_oracle(self):
        """Every site of a 3x3 lattice matches the conditional of the joint precision"""
        graph = build_lattice(3, 3)
        rng = np.random.default_rng(4)
        field = rng.normal(size=9)
        weight = rng.integers(0, 2, size=9).astype(float)
        residual = rng.normal(size=9)
        tau, rho = 1.7, 0.9
        precision = tau * car_precision(graph, rho).toarray() + np.diag(weight)
        b = weight * residual

        degree = graph.degree.astype(float)
        mean, variance = site_conditional(weight, residual, tau, rho, degree, neighbor_sums(field, graph) / degree)
        for v in range(9):
            others = np.arange(9) != v
            expected_mean = (b[v] - precision[v, others] @ field[others]) / precision[v, v]
            assert mean[v] == pytest.approx(expected_mean, abs=1e-10)
            assert variance[v] == pytest.approx(1.0 / precision[v, v], abs=1e-10)


class TestSpatialField:
    """Test the chromatic field update"""

    def setup_method(self):
        self.graph = build_lattice(6, 7)
        self.coloring = color_lattice(self.graph)
        self.data = _random_dataset(6, 7, 2, seed=5)
        self.hyper = HyperConfig(cmp=None)

    def _updated(self, n_workers):
        state = initialize_state(self.data, self.hyper, stream_generator(6, Stream.TEST))
        state.T[::2] = 1
        update_zeta(state, self.data, stream_generator(7, Stream.TEST))
        with ChromaticExecutor(n_workers) as executor:
            update_spatial_field(Field.PHI, 1, state, self.data, self.graph, self.coloring, self.hyper,
                                 stream_generator(8, Stream.TEST), executor)
        return state

    def test_worker_count_does_not_matter(self):
        """One, two and four threads give bitwise-identical fields"""
        reference = self._updated(1)
        for n_workers in (2, 4):
            assert np.array_equal(self._updated(n_workers).phi, reference.phi)

    def test_only_target_column_changes(self):
        """Updating phi_1 leaves phi_0 and eta untouched"""
        state = self._updated(1)
        assert np.all(state.phi[:, 0] == INITIAL_FIELD)
        assert np.all(state.eta == INITIAL_FIELD)
        assert not np.all(state.phi[:, 1] == INITIAL_FIELD)

    def test_stale_zeta_is_rejected(self):
        """Updating a field right after T without redrawing zeta fails"""
        state = initialize_state(self.data, self.hyper, stream_generator(9, Stream.TEST))
        update_T(state, self.data, self.hyper, stream_generator(10, Stream.TEST))
        with pytest.raises(SamplerStateError):
            update_spatial_field(Field.ETA, 0, state, self.data, self.graph, self.coloring, self.hyper,
                                 stream_generator(11, Stream.TEST))

    def test_isolated_voxel(self):
        """A 1x1 lattice cannot carry a CAR field"""
        graph = build_lattice(1, 1)
        data = _dataset([[1]])
        state = update_zeta(_state([1]), data, stream_generator(12, Stream.TEST))
        with pytest.raises(DegenerateVoxelError):
            update_spatial_field(Field.PHI, 0, state, data, graph, color_lattice(graph), self.hyper,
                                 stream_generator(13, Stream.TEST))


class TestTruthUpdate:
    """Test the zeta-marginalized truth update"""

    def test_empirical_frequencies(self):
        """Draw frequencies match the exact conditional"""
        data = _dataset([[1, 0], [0, 0], [1, 1]])
        state = _state([0, 0, 0], n_raters=2)
        state.phi[:] = [[0.3, -0.4], [1.0, 0.2], [0.0, 0.8]]
        hyper = HyperConfig(cmp=None)
        exact = truth_conditional_prob(state, data, hyper)
        counts = np.zeros(3)
        n = 20_000
        for k in range(n):
            update_T(state, data, hyper, stream_generator(14, Stream.TEST, sweep=k))
            counts += state.T
        assert np.allclose(counts / n, exact, atol=0.015)
        assert state.zeta_stale


class TestTau:
    """Test the CAR precision update"""

    def test_zero_field(self):
        """q = 0 gives Gamma(a + V/2, b)"""
        graph = build_lattice(3, 3)
        assert tau_conditional(np.zeros(9), graph, 1.0, 2.0, 0.95) == (5.5, 2.0)

    def test_two_voxel_example(self):
        """phi = (1, -1), rho = 0.5 gives Gamma(a + 1, b + 1.5)"""
        graph = build_lattice(1, 2)
        shape, rate = tau_conditional(np.array([1.0, -1.0]), graph, 1.0, 2.0, 0.5)
        assert shape == pytest.approx(2.0)
        assert rate == pytest.approx(3.5)

    def test_long_run_mean(self):
        """Repeated draws average to shape / rate and stay positive"""
        graph = build_lattice(1, 2)
        hyper = HyperConfig(cmp=None, rho_phi=0.5)
        state = _state([1, 1])
        state.phi[:, 0] = [1.0, -1.0]
        draws = np.empty(20_000)
        for k in range(draws.shape[0]):
            update_tau(Field.PHI, 0, state, graph, hyper, stream_generator(15, Stream.TEST, sweep=k))
            draws[k] = state.tau_phi[0]
        shape, rate = 2.0, 3.5
        standard_error = np.sqrt(shape) / rate / np.sqrt(draws.shape[0])
        assert np.all(draws > 0)
        assert abs(draws.mean() - shape / rate) < 3 * standard_error


class TestGamerman:
    """Test the IRLS proposal and the delta Metropolis-Hastings step"""

    def setup_method(self):
        self.data = _dataset(np.zeros((4, 1)))
        self.T = np.array([1, 1, 1, 0], dtype=np.int8)
        self.hyper = HyperConfig(cmp=None, delta_variance=10.0)
        self.link = get_link("logistic")

    def test_weight_at_one_half(self):
        """Logistic weight at p = 1/2 is 1 / (0.25 * 16) = 0.25"""
        assert gamerman_weights(np.array([0.0]), self.link)[0] == pytest.approx(0.25)

    def test_self_proposal_is_accepted(self):
        """Proposing the current point has log acceptance 0"""
        delta = np.array([0.4])
        assert gamerman_log_acceptance(delta, delta.copy(), self.T, self.data, self.hyper, self.link) == 0.0

    def test_proposal_with_cmp_rows(self):
        """Pseudo rows enter the proposal as binomial observations"""
        hyper = HyperConfig(cmp=CmpSpec(np.array([[1.0]]), np.array([[3.0, 1.0]])))
        proposal = gamerman_proposal(np.zeros(1), self.T, self.data, hyper, self.link)
        plain = gamerman_proposal(np.zeros(1), self.T, self.data, HyperConfig(cmp=None, delta_variance=1e12),
                                  self.link)
        # four pseudo trials at weight 1/4 add one unit of precision
        assert proposal.precision[0, 0] == pytest.approx(plain.precision[0, 0] + 1.0, rel=1e-6)

    def _posterior_mean(self):
        def log_post(d):
            return 3 * np.log(special.expit(d)) + np.log(special.expit(-d)) - d * d / 20.0

        norm, _ = integrate.quad(lambda d: np.exp(log_post(d)), -30, 30)
        first, _ = integrate.quad(lambda d: d * np.exp(log_post(d)), -30, 30)
        return first / norm

    def _chain(self, n_steps, T=None, data=None):
        state = _state(self.T if T is None else T)
        data = self.data if data is None else data
        draws = np.empty(n_steps)
        accepted = 0
        for k in range(n_steps):
            state, ok = update_delta_gamerman(state, data, self.hyper, stream_generator(16, Stream.TEST, sweep=k))
            draws[k] = state.delta[0]
            accepted += ok
        return draws, accepted / n_steps

    def test_posterior_mean_matches_quadrature(self):
        """Intercept-only chain mean agrees with numerical integration"""
        draws, rate = self._chain(20_000)
        assert draws.mean() == pytest.approx(self._posterior_mean(), abs=0.05)
        assert 0.05 < rate <= 1.0

    @pytest.mark.slow
    def test_posterior_mean_long_run(self):
        """A million steps pin the posterior mean to 0.02"""
        draws, rate = self._chain(1_000_000)
        assert draws.mean() == pytest.approx(self._posterior_mean(), abs=0.02)
        assert 0.05 < rate <= 1.0

    @pytest.mark.slow
    def test_stationary_histogram_matches_posterior(self):
        """Three voxels, one coefficient: bin masses of a million steps match quadrature"""
        T = np.array([1, 1, 0], dtype=np.int8)
        draws, _ = self._chain(1_000_000, T=T, data=_dataset(np.zeros((3, 1))))

        def density(d):
            return special.expit(d) ** 2 * special.expit(-d) * np.exp(-d * d / 20.0)

        norm, _ = integrate.quad(density, -40, 40)
        edges = np.linspace(-4.0, 6.0, 21)
        exact = np.array([integrate.quad(density, lo, hi)[0] for lo, hi in zip(edges[:-1], edges[1:])]) / norm
        empirical = np.histogram(draws, bins=edges)[0] / draws.shape[0]
        assert np.max(np.abs(empirical - exact)) < 0.02


class TestCoefficients:
    """Test the conjugate rater-coefficient updates"""

    def test_scalar_update(self):
        """One voxel, X = 1, Sigma = 1, residual 2: mean 1, variance 1/2"""
        mean, covariance = coefficient_conditional(np.ones((1, 1)), np.ones(1), np.array([2.0]), np.eye(1))
        assert mean[0] == pytest.approx(1.0)
        assert covariance[0, 0] == pytest.approx(0.5)

    def test_no_data_gives_prior(self):
        """Zero weights leave the prior"""
        prior = np.array([[2.0, 0.3], [0.3, 1.0]])
        mean, covariance = coefficient_conditional(np.ones((4, 2)), np.zeros(4), np.ones(4), prior)
        assert np.allclose(mean, 0.0)
        assert np.allclose(covariance, prior)

    def test_dense_oracle(self):
        """Matches generalized least squares on a 2x2 lattice"""
        rng = np.random.default_rng(17)
        design = rng.normal(size=(4, 2))
        weight = np.array([1.0, 0.0, 1.0, 1.0])
        residual = rng.normal(size=4)
        prior = np.eye(2) * 1.5
        expected_cov = np.linalg.inv(np.linalg.inv(prior) + design.T @ np.diag(weight) @ design)
        expected_mean = expected_cov @ design.T @ (weight * residual)
        mean, covariance = coefficient_conditional(design, weight, residual, prior)
        assert np.allclose(mean, expected_mean, atol=1e-10)
        assert np.allclose(covariance, expected_cov, atol=1e-10)

    def test_beta_noop_without_covariates(self):
        """No sensitivity covariates means nothing to update"""
        data = _dataset([[1], [0]])
        state = _state([1, 0])
        update_beta(0, state, data, HyperConfig(cmp=None), stream_generator(18, Stream.TEST))
        assert state.beta.shape == (0, 1)

    def test_beta_update_runs_with_covariates(self):
        """With one covariate the draw is finite"""
        data = _dataset([[1], [0], [1]], x_design=np.ones((1, 3, 1)))
        state = _state([1, 1, 0])
        state.beta = np.zeros((1, 1))
        update_zeta(state, data, stream_generator(19, Stream.TEST))
        update_beta(0, state, data, HyperConfig(cmp=None), stream_generator(20, Stream.TEST))
        assert np.isfinite(state.beta).all()


class TestGibbsSweep:
    """Test full sweeps"""

    def setup_method(self):
        self.graph = build_lattice(5, 5)
        self.coloring = color_lattice(self.graph)
        self.data = _random_dataset(5, 5, 2, seed=21)
        self.hyper = HyperConfig(cmp=None)

    def _run(self, n_workers, n_sweeps=3, seed=22):
        config = SamplerConfig(n_iterations=n_sweeps, burn_in=0, thin=1, rng_seed=seed, n_workers=n_workers,
                               check_invariants=True)
        with GibbsSampler(self.data, self.graph, self.hyper, config) as sampler:
            state = sampler.initial_state()
            for k in range(1, n_sweeps + 1):
                state = sampler.sweep(state, k)
        return state

    def test_same_seed_same_state(self):
        """Two runs with one seed agree bitwise"""
        assert self._run(1).same_as(self._run(1))

    def test_different_seed_differs(self):
        """Another seed gives another state"""
        assert not self._run(1).same_as(self._run(1, seed=23))

    def test_workers_do_not_change_the_chain(self):
        """1, 2 and 4 workers give bitwise-identical states"""
        reference = self._run(1)
        assert self._run(2).same_as(reference)
        assert self._run(4).same_as(reference)

    def test_kernel_metrics(self):
        """Every kernel is timed once per call"""
        metrics = MetricsManager()
        state = initialize_state(self.data, self.hyper, stream_generator(24, Stream.TEST))
        gibbs_sweep(state, self.data, self.graph, self.coloring, self.hyper, StreamFactory(24), 1, metrics=metrics)
        snapshot = metrics.get_metrics()
        assert snapshot["sweeps"] == 1
        assert snapshot["kernels"]["phi"]["calls"] == 2
        assert snapshot["kernels"]["tau_eta"]["calls"] == 2
        assert snapshot["delta"]["proposals"] == 1

    @pytest.mark.parametrize("n_sweeps", [20_000, pytest.param(100_000, marks=pytest.mark.slow)])
    def test_single_voxel_posterior(self, n_sweeps):
        """With fields and delta frozen, T draws match xi = psi = 0.9, p = 0.5, Y = 1"""
        graph = build_lattice(1, 2)
        data = _dataset([[1], [1]])
        config = SamplerConfig(n_iterations=1, burn_in=0, thin=1, rng_seed=25,
                               fixed_blocks=("phi", "eta", "tau", "delta"))
        hyper = HyperConfig(cmp=None)
        with GibbsSampler(data, graph, hyper, config) as sampler:
            state = sampler.initial_state()
            total = 0.0
            for k in range(1, n_sweeps + 1):
                state = sampler.sweep(state, k)
                total += state.T.mean()
        assert total / n_sweeps == pytest.approx(0.9, abs=0.01)
        assert np.all(state.phi == INITIAL_FIELD)


class TestRunChain:
    """Test chain bookkeeping"""

    def setup_method(self):
        self.graph = build_lattice(4, 4)
        self.data = _random_dataset(4, 4, 2, seed=26)
        self.hyper = HyperConfig(cmp=None)

    def test_retained_count(self):
        """100 sweeps, burn-in 50, thin 5 keep 10 iterates"""
        config = SamplerConfig(n_iterations=100, burn_in=50, thin=5, rng_seed=27)
        chain = run_chain(self.data, self.graph, self.hyper, config)
        assert chain.n_samples == 10
        assert chain.iterations.tolist() == list(range(55, 101, 5))
        assert chain.rb_prob_samples.shape == (10, 16)
        assert np.all((chain.rb_prob_samples >= 0) & (chain.rb_prob_samples <= 1))
        assert np.all((chain.volume_samples >= 0) & (chain.volume_samples <= 16))
        assert np.allclose(chain.volume_samples, chain.rb_prob_samples.sum(axis=1))
        assert 0.0 <= chain.acceptance_rate_delta <= 1.0
        assert chain.metrics["sweeps"] == 100

    def test_keep_last(self):
        """keep_last retains only the final thinned iterates"""
        config = SamplerConfig(n_iterations=100, burn_in=50, thin=5, rng_seed=27, keep_last=3)
        chain = run_chain(self.data, self.graph, self.hyper, config)
        assert chain.iterations.tolist() == [90, 95, 100]

    def test_running_moments_match_samples(self):
        """Welford moments equal the direct mean and variance"""
        config = SamplerConfig(n_iterations=60, burn_in=20, thin=4, rng_seed=28)
        chain = run_chain(self.data, self.graph, self.hyper, config)
        assert np.allclose(chain.rb_mean, chain.rb_prob_samples.mean(axis=0), atol=1e-12)
        assert np.allclose(chain.rb_m2 / (chain.n_samples - 1), chain.rb_prob_samples.var(axis=0, ddof=1),
                           atol=1e-12)

    def test_streamed_chain(self, tmp_path):
        """Streaming writes the retained rows and keeps the same moments"""
        config = SamplerConfig(n_iterations=40, burn_in=20, thin=5, rng_seed=29, stream_dir=tmp_path / "stream")
        chain = run_chain(self.data, self.graph, self.hyper, config)
        reference = run_chain(self.data, self.graph, self.hyper,
                              SamplerConfig(n_iterations=40, burn_in=20, thin=5, rng_seed=29))
        assert chain.rb_prob_samples is None
        rows = read_matrix_csv(tmp_path / "stream" / "rb_prob_samples.csv")
        assert rows.shape == (4, 16)
        assert np.array_equal(rows, reference.rb_prob_samples)
        records = (tmp_path / "stream" / "samples.jsonl").read_text().splitlines()
        assert [json.loads(r)["iter"] for r in records] == [25, 30, 35, 40]

    def test_cmp_prior_chain(self):
        """A chain with the conditional mean prior runs and stays in bounds"""
        design = self.data.design
        spec = CmpSpec(np.array([[1.0, -1.0], [1.0, 1.0]]), np.array([[2.0, 2.0], [2.0, 2.0]]))
        hyper = HyperConfig(cmp=spec)
        chain = run_chain(self.data, self.graph, hyper, SamplerConfig(n_iterations=20, burn_in=10, thin=2))
        assert design.shape[1] == 2
        assert chain.delta_samples.shape == (5, 2)
        assert np.isfinite(chain.delta_samples).all()

    def test_mismatched_lattice(self):
        """The lattice must match the data"""
        with pytest.raises(InvalidArgumentError):
            run_chain(self.data, build_lattice(3, 3), self.hyper, SamplerConfig(n_iterations=2, burn_in=0, thin=1))


class TestPriorReproduction:
    """Alternating sweeps with label regeneration keep the prior"""

    def test_prior_draw_requires_gaussian_delta(self):
        """The conditional mean prior has no direct sampler"""
        data = _random_dataset(2, 2, 1, seed=30)
        hyper = HyperConfig(cmp=CmpSpec(np.array([[1.0, -1.0], [1.0, 1.0]]), np.ones((2, 2))))
        with pytest.raises(InvalidArgumentError):
            sample_prior_state(data, build_lattice(2, 2), hyper, stream_generator(30, Stream.TEST))

    @pytest.mark.slow
    def test_getting_it_right(self):
        """4x4 lattice, two raters: tau_phi and delta keep their prior means"""
        graph = build_lattice(4, 4)
        coloring = color_lattice(graph)
        data = _random_dataset(4, 4, 2, seed=31)
        hyper = HyperConfig(cmp=None, delta_variance=1.0)
        streams = StreamFactory(31)
        config = SamplerConfig(n_iterations=1, burn_in=0, thin=1)

        state = sample_prior_state(data, graph, hyper, streams.generator(Stream.PRIOR))
        n_steps = 50_000
        tau_trace = np.empty(n_steps)
        delta_trace = np.empty((n_steps, data.n_delta))
        with ChromaticExecutor(1) as executor:
            for k in range(1, n_steps + 1):
                data = data.with_labels(simulate_labels(state, data, streams.generator(Stream.LABELS, sweep=k)))
                state = gibbs_sweep(state, data, graph, coloring, hyper, streams, k, config, executor)
                tau_trace[k - 1] = state.tau_phi[0]
                delta_trace[k - 1] = state.delta

        assert abs(tau_trace.mean() - 0.5) < 3 * _batch_standard_error(tau_trace)
        for j in range(data.n_delta):
            trace = delta_trace[:, j]
            assert abs(trace.mean()) < 3 * _batch_standard_error(trace)
