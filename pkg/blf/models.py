"""
Data models and constants for blf-py
"""

from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .utils import InvalidArgumentError, as_binary, as_finite, is_spd, require


class Kernel(IntEnum):
    """Transition kernels of one Gibbs sweep; values tag the random streams"""
    TRUTH = 1
    ZETA = 2
    PHI = 3
    ETA = 4
    TAU_PHI = 5
    TAU_ETA = 6
    BETA = 7
    GAMMA = 8
    DELTA = 9
    INIT = 10


class Field(str, Enum):
    """Spatial reliability fields"""
    PHI = "phi"
    ETA = "eta"


class Reliability(str, Enum):
    """Rater reliability kinds"""
    SENSITIVITY = "sensitivity"
    SPECIFICITY = "specificity"


class SweepOrder(str, Enum):
    """Kernel order inside a Gibbs sweep"""
    COLLAPSED_TRUTH_FIRST = "truth-zeta-fields-precisions-coefficients-delta"


# Blocks that can be frozen in a chain (held at their initial values)
FIXABLE_BLOCKS = ("truth", "phi", "eta", "tau", "delta")


@dataclass(eq=False)
class LatticeGraph:
    """8-adjacency structure of a height x width grid, row-major voxel order

    ``neighbor_index`` is padded to eight columns; padded slots point at the
    voxel itself and carry a zero in ``neighbor_mask``.
    """
    height: int
    width: int
    neighbor_index: np.ndarray
    neighbor_mask: np.ndarray
    degree: np.ndarray

    @property
    def n_voxels(self) -> int:
        return self.height * self.width

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    def neighbors(self, v: int) -> np.ndarray:
        """Indices adjacent to voxel ``v``"""
        return self.neighbor_index[v, self.neighbor_mask[v] > 0]

    def n_edges(self) -> int:
        return int(self.degree.sum()) // 2


@dataclass(eq=False)
class Coloring:
    """Proper vertex coloring; ``classes[k]`` lists the voxels of color k"""
    color: np.ndarray
    classes: List[np.ndarray]

    @property
    def n_colors(self) -> int:
        return len(self.classes)


@dataclass(eq=False)
class CmpSpec:
    """Conditional mean prior on delta: pseudo covariate rows and Beta shapes"""
    pseudo_design: np.ndarray
    beta_shapes: np.ndarray
    max_condition: float = 1e12

    def __post_init__(self):
        self.pseudo_design = as_finite(self.pseudo_design, "pseudo_design")
        self.beta_shapes = as_finite(self.beta_shapes, "beta_shapes")
        j = self.pseudo_design.shape[0]
        require(self.pseudo_design.shape == (j, j), "pseudo_design must be square")
        require(self.beta_shapes.shape == (j, 2), "beta_shapes must be J x 2")
        require(bool(np.all(self.beta_shapes > 0)), "Beta shapes must be positive")
        cond = np.linalg.cond(self.pseudo_design)
        if not np.isfinite(cond) or cond > self.max_condition:
            raise InvalidArgumentError(
                f"pseudo design is singular (condition {cond:.3e}); "
                "adjust the distance/intensity quantiles so the pseudo points differ"
            )

    @property
    def n_delta(self) -> int:
        return self.pseudo_design.shape[0]

    def prior_means(self) -> np.ndarray:
        """Beta means a/(a+b) of the pseudo success probabilities"""
        a, b = self.beta_shapes[:, 0], self.beta_shapes[:, 1]
        return a / (a + b)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "pseudo_design": self.pseudo_design.tolist(),
            "beta_shapes": self.beta_shapes.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CmpSpec":
        return cls(np.asarray(data["pseudo_design"]), np.asarray(data["beta_shapes"]))


@dataclass(eq=False)
class HyperConfig:
    """Prior hyperparameters of the fusion model"""
    rho_phi: float = 0.95
    rho_eta: float = 0.95
    a_phi: float = 1.0
    b_phi: float = 2.0
    a_eta: float = 1.0
    b_eta: float = 2.0
    sigma_delta: Optional[np.ndarray] = None
    sigma_beta: Optional[np.ndarray] = None
    sigma_gamma: Optional[np.ndarray] = None
    delta_variance: float = 10.0
    beta_variance: float = 1.0
    gamma_variance: float = 1.0
    cmp: Optional[CmpSpec] = None
    link: str = "logistic"

    def __post_init__(self):
        for name in ("rho_phi", "rho_eta"):
            value = getattr(self, name)
            require(-1.0 < value < 1.0, f"{name} must lie in (-1, 1), got {value}")
        for name in ("a_phi", "b_phi", "a_eta", "b_eta",
                     "delta_variance", "beta_variance", "gamma_variance"):
            require(getattr(self, name) > 0, f"{name} must be positive")
        for name in ("sigma_delta", "sigma_beta", "sigma_gamma"):
            matrix = getattr(self, name)
            if matrix is not None:
                matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
                require(is_spd(matrix), f"{name} must be symmetric positive definite")
                setattr(self, name, matrix)
        require(self.link in ("logistic", "probit"), f"unknown link '{self.link}'")

    def _covariance(self, matrix: Optional[np.ndarray], variance: float, size: int, name: str) -> np.ndarray:
        if matrix is None:
            return variance * np.eye(size)
        require(matrix.shape == (size, size), f"{name} must be {size} x {size}")
        return matrix

    def delta_covariance(self, n_delta: int) -> np.ndarray:
        return self._covariance(self.sigma_delta, self.delta_variance, n_delta, "sigma_delta")

    def beta_covariance(self, n_beta: int) -> np.ndarray:
        return self._covariance(self.sigma_beta, self.beta_variance, n_beta, "sigma_beta")

    def gamma_covariance(self, n_gamma: int) -> np.ndarray:
        return self._covariance(self.sigma_gamma, self.gamma_variance, n_gamma, "sigma_gamma")

    def rho(self, which: "Field") -> float:
        return self.rho_phi if Field(which) is Field.PHI else self.rho_eta

    def gamma_shape_rate(self, which: "Field") -> Tuple[float, float]:
        if Field(which) is Field.PHI:
            return self.a_phi, self.b_phi
        return self.a_eta, self.b_eta


@dataclass(eq=False)
class FusionDataset:
    """Observed rater labels, intensities and covariate designs

    labels: V x R; design (C): V x J; x_design: R x V x l; z_design: R x V x k
    """
    labels: np.ndarray
    target_intensity: np.ndarray
    rater_intensity: np.ndarray
    design: np.ndarray
    x_design: Optional[np.ndarray] = None
    z_design: Optional[np.ndarray] = None

    def __post_init__(self):
        self.labels = as_binary(np.atleast_2d(self.labels), "labels")
        n_voxels, n_raters = self.labels.shape
        require(n_raters >= 1, "at least one rater is required")
        self.target_intensity = as_finite(self.target_intensity, "target_intensity").reshape(-1)
        self.rater_intensity = as_finite(self.rater_intensity, "rater_intensity")
        require(self.target_intensity.shape == (n_voxels,), "target_intensity must have length V")
        require(self.rater_intensity.shape == (n_voxels, n_raters), "rater_intensity must be V x R")
        self.design = as_finite(self.design, "design")
        if self.design.ndim == 1:
            self.design = self.design[:, None]
        require(self.design.shape[0] == n_voxels, "design must have V rows")
        if self.design.shape[1] >= 1:
            require(bool(np.all(self.design[:, 0] == 1.0)), "design must start with an intercept column")
        self.x_design = self._rater_design(self.x_design, "x_design")
        self.z_design = self._rater_design(self.z_design, "z_design")

    def _rater_design(self, design: Optional[np.ndarray], name: str) -> np.ndarray:
        n_voxels, n_raters = self.labels.shape
        if design is None:
            return np.zeros((n_raters, n_voxels, 0))
        design = as_finite(design, name)
        require(design.ndim == 3 and design.shape[:2] == (n_raters, n_voxels),
                f"{name} must be R x V x p")
        return design

    @property
    def n_voxels(self) -> int:
        return self.labels.shape[0]

    @property
    def n_raters(self) -> int:
        return self.labels.shape[1]

    @property
    def n_delta(self) -> int:
        return self.design.shape[1]

    @property
    def n_beta(self) -> int:
        return self.x_design.shape[2]

    @property
    def n_gamma(self) -> int:
        return self.z_design.shape[2]

    def with_labels(self, labels: np.ndarray) -> "FusionDataset":
        """Copy of the dataset carrying new rater labels"""
        return replace(self, labels=labels)


@dataclass(eq=False)
class ModelState:
    """All latent quantities at one iteration of the chain"""
    T: np.ndarray
    phi: np.ndarray
    eta: np.ndarray
    zeta1: np.ndarray
    zeta0: np.ndarray
    delta: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    tau_phi: np.ndarray
    tau_eta: np.ndarray
    zeta_stale: bool = False
    delta_accepted: bool = False

    def copy(self) -> "ModelState":
        return ModelState(
            T=self.T.copy(), phi=self.phi.copy(), eta=self.eta.copy(),
            zeta1=self.zeta1.copy(), zeta0=self.zeta0.copy(),
            delta=self.delta.copy(), beta=self.beta.copy(), gamma=self.gamma.copy(),
            tau_phi=self.tau_phi.copy(), tau_eta=self.tau_eta.copy(),
            zeta_stale=self.zeta_stale, delta_accepted=self.delta_accepted,
        )

    def field(self, which: Field) -> np.ndarray:
        return self.phi if Field(which) is Field.PHI else self.eta

    def tau(self, which: Field) -> np.ndarray:
        return self.tau_phi if Field(which) is Field.PHI else self.tau_eta

    def sign_consistent(self, labels: np.ndarray) -> bool:
        """Check that the augmented variables carry the signs of the labels"""
        observed = labels.astype(bool)
        ok1 = np.where(observed, self.zeta1 >= 0, self.zeta1 < 0)
        ok0 = np.where(observed, self.zeta0 < 0, self.zeta0 >= 0)
        truth = self.T.astype(bool)[:, None]
        return bool(np.all(np.where(truth, ok1, ok0)))

    def same_as(self, other: "ModelState") -> bool:
        """Bitwise equality of every array"""
        names = ("T", "phi", "eta", "zeta1", "zeta0", "delta", "beta", "gamma", "tau_phi", "tau_eta")
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in names)


@dataclass
class SamplerConfig:
    """Chain length, thinning and execution settings"""
    n_iterations: int = 100_000
    burn_in: Optional[int] = None
    thin: int = 25
    rng_seed: int = 0
    n_workers: int = 1
    update_beta_gamma: bool = False
    sweep_order: SweepOrder = SweepOrder.COLLAPSED_TRUTH_FIRST
    keep_last: Optional[int] = None
    stream_dir: Optional[Path] = None
    progress: bool = False
    check_invariants: bool = False
    fixed_blocks: Tuple[str, ...] = ()

    def __post_init__(self):
        require(self.n_iterations >= 1, "n_iterations must be at least 1")
        if self.burn_in is None:
            self.burn_in = self.n_iterations // 2
        require(0 <= self.burn_in < self.n_iterations, "burn_in must satisfy 0 <= burn_in < n_iterations")
        require(self.thin >= 1, "thin must be at least 1")
        require(self.n_workers >= 1, "n_workers must be at least 1")
        require(0 <= self.rng_seed < 2 ** 64, "rng_seed must be a 64-bit unsigned integer")
        if self.keep_last is not None:
            require(self.keep_last >= 1, "keep_last must be at least 1")
        if self.stream_dir is not None:
            self.stream_dir = Path(self.stream_dir)
        self.sweep_order = SweepOrder(self.sweep_order)
        self.fixed_blocks = tuple(self.fixed_blocks)
        unknown = set(self.fixed_blocks) - set(FIXABLE_BLOCKS)
        require(not unknown, f"unknown fixed blocks: {sorted(unknown)}")

    @property
    def n_thinned(self) -> int:
        """Number of thinned post-burn-in iterates"""
        return (self.n_iterations - self.burn_in) // self.thin

    @property
    def n_retained(self) -> int:
        if self.keep_last is None:
            return self.n_thinned
        return min(self.keep_last, self.n_thinned)

    def is_retained(self, sweep: int) -> bool:
        """Whether iterate ``sweep`` (1-based) is kept"""
        offset = sweep - self.burn_in
        if offset <= 0 or offset % self.thin:
            return False
        return offset // self.thin > self.n_thinned - self.n_retained


@dataclass(eq=False)
class ChainOutput:
    """Retained draws of one chain"""
    iterations: np.ndarray
    volume_samples: np.ndarray
    delta_samples: np.ndarray
    tau_phi_samples: np.ndarray
    tau_eta_samples: np.ndarray
    accepted_delta: np.ndarray
    acceptance_rate_delta: float
    rb_mean: np.ndarray
    rb_m2: np.ndarray
    sensitivity_mean: np.ndarray
    specificity_mean: np.ndarray
    rb_prob_samples: Optional[np.ndarray] = None
    metrics: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return int(self.iterations.shape[0])

    @property
    def n_voxels(self) -> int:
        return int(self.rb_mean.shape[0])

    @property
    def tau_samples(self) -> np.ndarray:
        """tau_phi and tau_eta traces side by side (N x 2R)"""
        return np.hstack([self.tau_phi_samples, self.tau_eta_samples])


@dataclass(eq=False)
class ProbabilityMap:
    """Posterior probability of membership per voxel"""
    mean: np.ndarray
    sd: np.ndarray
    n_samples: int


@dataclass(eq=False)
class SdlMap:
    """Signed distance label transform of one segmentation"""
    values: np.ndarray
    source: Optional[int] = None
    degenerate: bool = False


@dataclass(eq=False)
class CovariateSet:
    """Covariate maps feeding the true-status regression"""
    sdl: List[SdlMap]
    distance: np.ndarray
    intensity: np.ndarray
    design: np.ndarray


@dataclass(eq=False)
class FusionInputs:
    """Maps read from a data directory"""
    height: int
    width: int
    labels: np.ndarray
    rater_intensity: np.ndarray
    target_intensity: np.ndarray
    truth: Optional[np.ndarray] = None
    channel: Optional[np.ndarray] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_raters(self) -> int:
        return self.labels.shape[1]


@dataclass(eq=False)
class SimInstance:
    """One synthetic fusion problem with its ground truth"""
    truth: np.ndarray
    dataset: FusionDataset
    metadata: Dict[str, Any]
    height: int
    width: int


@dataclass
class LoggingConfig:
    """Logging configuration"""
    json: bool = True
    file: str = ""
    level: str = "INFO"
    max_size_mb: int = 100
    backup_count: int = 5


@dataclass
class CmpConfig:
    """Placement and shapes of the conditional mean prior pseudo points"""
    distance_quantiles: Tuple[float, ...] = (0.05, 0.95, 0.5, 0.95)
    intensity_quantiles: Tuple[float, ...] = (0.95, 0.05, 0.5, 0.95)
    shapes: Tuple[Tuple[float, float], ...] = ((20.0, 1.0), (1.0, 20.0), (1.0, 1.0), (1.0, 4.0))


@dataclass
class ModelConfig:
    """Model section of the run configuration"""
    rho_phi: float = 0.95
    rho_eta: float = 0.95
    tau_target: float = 0.5
    a_phi: Optional[float] = None
    b_phi: Optional[float] = None
    a_eta: Optional[float] = None
    b_eta: Optional[float] = None
    delta_prior: str = "cmp"
    delta_variance: float = 10.0
    beta_variance: float = 1.0
    gamma_variance: float = 1.0
    link: str = "logistic"
    cmp: CmpConfig = field(default_factory=CmpConfig)


@dataclass
class CovariateConfig:
    """Covariate construction settings"""
    epsilon: float = 1e-6
    rescale: bool = False
    with_interaction: bool = True


@dataclass
class SimulationConfig:
    """Synthetic experiment generator; positions and sizes are grid fractions"""
    height: int = 40
    width: int = 40
    n_raters: int = 4
    bump_centers: Tuple[Tuple[float, float], ...] = ((0.425, 0.4), (0.575, 0.575))
    bump_sigma: float = 0.125
    bump_threshold: float = 0.5
    center_jitter: float = 0.025
    base_intensity: float = 0.3
    structure_intensity: float = 0.4
    intensity_noise: float = 0.05
    distractor_center: Tuple[float, float] = (0.2, 0.775)
    distractor_radius: float = 0.1
    distractor_intensity: float = 0.45
    good_arc_prob: float = 0.5
    poor_shift: Tuple[float, float] = (0.15, -0.125)
    poor_arc_prob: float = 0.25
    n_sectors: int = 8
    rater_noise: float = 0.02
    discrepancy_magnitude: float = 0.5
    discrepancy_smoothing: float = 1.0
    intensity_offset: int = 3
    max_retries: int = 20

    def __post_init__(self):
        require(self.height >= 1 and self.width >= 1, "grid dimensions must be positive")
        require(self.n_raters >= 2, "the experiment needs one good and at least one poor rater")
        require(self.max_retries >= 1, "max_retries must be at least 1")


@dataclass
class Config:
    """Main configuration container"""
    model: ModelConfig = field(default_factory=ModelConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    covariates: CovariateConfig = field(default_factory=CovariateConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)


# File names of a fusion data directory
TRUTH_FILE = "truth.csv"
TARGET_INTENSITY_FILE = "target_intensity.csv"
RATER_LABELS_FILE = "rater_{r}_labels.csv"
RATER_INTENSITY_FILE = "rater_{r}_intensity.csv"
CHANNEL_FILE = "channel.csv"
META_FILE = "meta.json"
