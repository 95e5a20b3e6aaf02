"""
Synthetic fusion experiment: a smooth structure, one reliable and several
correlated poor atlases, and intensity fields whose discrepancies sit next
to (not on) the poor atlases' errors
"""

import logging
from dataclasses import asdict
from itertools import combinations
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from .baselines import dice
from .covariates import dataset_from_inputs
from .fileio import read_data_dir, write_json, write_matrix_csv
from .lattice import build_lattice
from .models import (
    META_FILE,
    RATER_INTENSITY_FILE,
    RATER_LABELS_FILE,
    TARGET_INTENSITY_FILE,
    TRUTH_FILE,
    CovariateConfig,
    SimInstance,
    SimulationConfig,
)
from .rng import Stream, stream_generator

logger = logging.getLogger(__name__)

_EIGHT_NEIGHBORHOOD = np.ones((3, 3), dtype=bool)

MIN_POOR_AGREEMENT = 0.8
MAX_DISTRACTOR_OVERLAP = 0.05


class SimulationError(RuntimeError):
    """Generated instance kept failing its checks"""


def _grid(config: SimulationConfig) -> Tuple[np.ndarray, np.ndarray]:
    rows, cols = np.mgrid[0:config.height, 0:config.width]
    return (rows + 0.5) / config.height, (cols + 0.5) / config.width


def _truth_mask(config: SimulationConfig, rng: np.random.Generator) -> np.ndarray:
    """Thresholded sum of Gaussian bumps at jittered centers"""
    y, x = _grid(config)
    surface = np.zeros((config.height, config.width))
    for cy, cx in config.bump_centers:
        cy, cx = np.asarray([cy, cx]) + config.center_jitter * rng.standard_normal(2)
        surface += np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2.0 * config.bump_sigma ** 2))
    return surface >= config.bump_threshold * surface.max()


def _disk(config: SimulationConfig, center: Tuple[float, float], radius: float) -> np.ndarray:
    y, x = _grid(config)
    return (y - center[0]) ** 2 + (x - center[1]) ** 2 <= radius ** 2


def _perturb_arcs(mask: np.ndarray, arc_prob: float, n_sectors: int, rng: np.random.Generator) -> np.ndarray:
    """Grow or shrink the boundary by one pixel on randomly chosen angular sectors"""
    if not mask.any():
        return mask.copy()
    cy, cx = ndimage.center_of_mass(mask)
    rows, cols = np.indices(mask.shape)
    angle = np.arctan2(rows - cy, cols - cx)
    sector = np.floor((angle + np.pi) / (2.0 * np.pi) * n_sectors).astype(int) % n_sectors

    grown = ndimage.binary_dilation(mask, structure=_EIGHT_NEIGHBORHOOD)
    shrunk = ndimage.binary_erosion(mask, structure=_EIGHT_NEIGHBORHOOD)
    result = mask.copy()
    for s, u in enumerate(rng.random(n_sectors)):
        arc = sector == s
        if u < 0.5 * arc_prob:
            result[arc] = grown[arc]
        elif u < arc_prob:
            result[arc] = shrunk[arc]
    return result


def _shift_mask(mask: np.ndarray, shift: Tuple[float, float]) -> np.ndarray:
    return ndimage.shift(mask.astype(float), shift, order=0, mode="constant", cval=0.0) > 0.5


def _discrepancy(error: np.ndarray, config: SimulationConfig) -> np.ndarray:
    """Smooth intensity difference centred off the error region by the configured offset"""
    offset = float(config.intensity_offset)
    moved = _shift_mask(error, (offset, offset)).astype(float)
    smooth = ndimage.gaussian_filter(moved, config.discrepancy_smoothing)
    peak = smooth.max()
    return config.discrepancy_magnitude * smooth / peak if peak > 0 else smooth


def _draw(config: SimulationConfig, rng: np.random.Generator) -> Dict[str, Any]:
    shape = (config.height, config.width)
    truth = _truth_mask(config, rng)

    distractor = _disk(config, config.distractor_center, config.distractor_radius)
    target = (config.base_intensity
              + config.structure_intensity * truth
              + config.distractor_intensity * distractor
              + config.intensity_noise * rng.standard_normal(shape))

    good = _perturb_arcs(truth, config.good_arc_prob, config.n_sectors, rng)
    displaced = _shift_mask(truth, (config.poor_shift[0] * config.height, config.poor_shift[1] * config.width))
    poor = [_perturb_arcs(displaced, config.poor_arc_prob, config.n_sectors, rng)
            for _ in range(config.n_raters - 1)]

    atlases = [good] + poor
    intensities = [target + config.rater_noise * rng.standard_normal(shape)]
    for atlas in poor:
        intensities.append(target + _discrepancy(atlas ^ truth, config)
                           + config.rater_noise * rng.standard_normal(shape))
    return {"truth": truth, "target": target, "distractor": distractor,
            "atlases": atlases, "intensities": intensities}


def _check(draw: Dict[str, Any]) -> Tuple[Optional[str], Dict[str, Any]]:
    """First violated property (or None) and the agreement statistics"""
    truth = draw["truth"]
    atlases = draw["atlases"]
    if not truth.any() or not all(a.any() for a in atlases):
        return "empty structure or atlas", {}

    _, n_components = ndimage.label(truth, structure=_EIGHT_NEIGHBORHOOD)
    scores = [dice(a, truth) for a in atlases]
    pairwise = [dice(a, b) for a, b in combinations(atlases[1:], 2)]
    distractor = draw["distractor"]
    overlap = float((distractor & truth).sum()) / max(int(distractor.sum()), 1)
    stats = {
        "dice_vs_truth": scores,
        "poor_pairwise_dice_min": min(pairwise) if pairwise else None,
        "distractor_overlap": overlap,
        "truth_components": int(n_components),
    }

    if n_components != 1:
        return f"structure has {n_components} components", stats
    if scores[0] <= max(scores[1:]):
        return "good atlas does not beat the poor atlases", stats
    if pairwise and min(pairwise) < MIN_POOR_AGREEMENT:
        return "poor atlases disagree", stats
    if overlap > MAX_DISTRACTOR_OVERLAP:
        return "distractor overlaps the structure", stats
    return None, stats


def generate_simulation(config: Optional[SimulationConfig] = None, rng: Union[int, np.random.Generator] = 0,
                        covariates: Optional[CovariateConfig] = None) -> SimInstance:
    """
    Generate one instance, regenerating until its properties hold

    Rater 1 is the reliable atlas, raters 2..R the poor ones. With an
    integer seed, attempt k draws from its own substream so a seed always
    yields the same instance.

    Raises:
        SimulationError: If no attempt within max_retries passes the checks
    """
    config = config or SimulationConfig()
    seed = rng if isinstance(rng, (int, np.integer)) else None

    for attempt in range(config.max_retries):
        generator = stream_generator(int(seed), Stream.SIMULATION, sub=attempt) if seed is not None else rng
        draw = _draw(config, generator)
        problem, stats = _check(draw)
        if problem is None:
            break
        logger.warning(f"Simulation attempt {attempt + 1} rejected: {problem}")
    else:
        raise SimulationError(f"no valid instance after {config.max_retries} attempts (last: {problem})")

    graph = build_lattice(config.height, config.width)
    labels = np.column_stack([a.reshape(-1) for a in draw["atlases"]]).astype(np.int8)
    rater_intensity = np.column_stack([i.reshape(-1) for i in draw["intensities"]])
    dataset, _ = dataset_from_inputs(labels, rater_intensity, draw["target"].reshape(-1), graph, covariates)

    metadata = {
        "seed": None if seed is None else int(seed),
        "attempt": attempt,
        "generator": asdict(config),
        "rater_roles": ["good"] + ["poor"] * (config.n_raters - 1),
        **stats,
    }
    logger.info(f"Simulated {config.height}x{config.width} instance with {config.n_raters} raters "
                f"(attempt {attempt + 1}, truth volume {int(draw['truth'].sum())})")
    return SimInstance(truth=draw["truth"].reshape(-1).astype(np.int8), dataset=dataset,
                       metadata=metadata, height=config.height, width=config.width)


def export_instance(instance: SimInstance, out_dir: Union[str, Path]) -> Path:
    """Write truth, target and per-rater maps plus meta.json"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    shape = (instance.height, instance.width)
    data = instance.dataset
    write_matrix_csv(instance.truth.reshape(shape), out_dir / TRUTH_FILE)
    write_matrix_csv(data.target_intensity.reshape(shape), out_dir / TARGET_INTENSITY_FILE)
    for r in range(data.n_raters):
        write_matrix_csv(data.labels[:, r].reshape(shape), out_dir / RATER_LABELS_FILE.format(r=r + 1))
        write_matrix_csv(data.rater_intensity[:, r].reshape(shape), out_dir / RATER_INTENSITY_FILE.format(r=r + 1))
    write_json(instance.metadata, out_dir / META_FILE)
    logger.info(f"Wrote simulated instance to {out_dir}")
    return out_dir


def load_instance(data_dir: Union[str, Path], covariates: Optional[CovariateConfig] = None) -> SimInstance:
    """Read an exported instance back; truth.csv is required"""
    inputs = read_data_dir(data_dir)
    if inputs.truth is None:
        raise FileNotFoundError(f"missing input file: {Path(data_dir) / TRUTH_FILE}")
    graph = build_lattice(inputs.height, inputs.width)
    dataset, _ = dataset_from_inputs(inputs.labels, inputs.rater_intensity, inputs.target_intensity,
                                     graph, covariates, inputs.channel)
    return SimInstance(truth=inputs.truth.astype(np.int8), dataset=dataset, metadata=inputs.metadata,
                       height=inputs.height, width=inputs.width)
