"""
Covariates of the true-status regression: signed distance labels,
intensity-weighted fusion of them, and the design matrix
"""

import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from .baselines import local_weights
from .models import CovariateConfig, CovariateSet, FusionDataset, LatticeGraph, SdlMap
from .utils import as_binary, require

logger = logging.getLogger(__name__)

_EIGHT_NEIGHBORHOOD = np.ones((3, 3), dtype=bool)


def signed_distance_transform(binary: np.ndarray, graph: LatticeGraph, source: Optional[int] = None) -> SdlMap:
    """
    Signed Euclidean distance to the boundary of a segmentation

    The boundary is the set of foreground pixels with an 8-adjacent
    background pixel; it maps to 0, the remaining foreground is negative and
    the background positive. Without a boundary (empty or full mask) every
    value is the image diagonal and the map is flagged degenerate.
    """
    mask = as_binary(binary).reshape(graph.height, graph.width).astype(bool)
    if mask.all() or not mask.any():
        diagonal = float(np.hypot(graph.height, graph.width))
        logger.warning(f"Segmentation {source if source is not None else ''} has no boundary; "
                       f"using the diagonal {diagonal:.3f} everywhere")
        return SdlMap(np.full(graph.n_voxels, diagonal), source, degenerate=True)

    interior = ndimage.binary_erosion(mask, structure=_EIGHT_NEIGHBORHOOD, border_value=1)
    boundary = mask & ~interior
    distance = ndimage.distance_transform_edt(~boundary)
    values = np.where(interior, -distance, distance)
    return SdlMap(values.reshape(-1).astype(float), source)


def weighted_sdl(sdl: Sequence[Union[SdlMap, np.ndarray]], rater_intensity: np.ndarray,
                 target_intensity: np.ndarray, epsilon: float = 1e-6, rescale: bool = False) -> np.ndarray:
    """
    Voxelwise convex combination of rater SDLs

    Weights are (|i_r - i_t|^2 + epsilon)^-1 normalized per voxel. With
    ``rescale`` the result is min-max scaled to [0, 1] over the image.
    """
    maps = np.column_stack([m.values if isinstance(m, SdlMap) else np.asarray(m, dtype=float) for m in sdl])
    rater_intensity = np.asarray(rater_intensity, dtype=float)
    require(maps.shape == rater_intensity.shape, "one SDL map per rater intensity column is required")
    weights = local_weights(rater_intensity, target_intensity, epsilon)
    combined = np.sum(weights * maps, axis=1)
    if rescale:
        low, high = combined.min(), combined.max()
        combined = (combined - low) / (high - low) if high > low else np.zeros_like(combined)
    return combined


def build_design(c1: np.ndarray, c2: np.ndarray, with_interaction: bool = True) -> np.ndarray:
    """Design [1, c1, c2, c1*c2] or [1, c1, c2]"""
    c1 = np.asarray(c1, dtype=float).reshape(-1)
    c2 = np.asarray(c2, dtype=float).reshape(-1)
    require(c1.shape == c2.shape, "covariate vectors must have equal length")
    columns = [np.ones_like(c1), c1, c2]
    if with_interaction:
        columns.append(c1 * c2)
    return np.column_stack(columns)


def build_fusion_covariates(labels: np.ndarray, rater_intensity: np.ndarray, target_intensity: np.ndarray,
                            graph: LatticeGraph, config: Optional[CovariateConfig] = None,
                            channel: Optional[np.ndarray] = None) -> CovariateSet:
    """Distance covariate from the weighted SDLs, intensity (or ``channel``) as the second"""
    config = config or CovariateConfig()
    labels = as_binary(np.atleast_2d(labels))
    maps: List[SdlMap] = [signed_distance_transform(labels[:, r], graph, source=r) for r in range(labels.shape[1])]
    distance = weighted_sdl(maps, rater_intensity, target_intensity, config.epsilon, config.rescale)
    intensity = np.asarray(target_intensity if channel is None else channel, dtype=float).reshape(-1)
    require(intensity.shape == distance.shape, "second covariate must have length V")
    design = build_design(distance, intensity, config.with_interaction)
    return CovariateSet(sdl=maps, distance=distance, intensity=intensity, design=design)


def dataset_from_inputs(labels: np.ndarray, rater_intensity: np.ndarray, target_intensity: np.ndarray,
                        graph: LatticeGraph, config: Optional[CovariateConfig] = None,
                        channel: Optional[np.ndarray] = None) -> Tuple[FusionDataset, CovariateSet]:
    """Fusion dataset with the distance/intensity design built from the rater maps"""
    covariates = build_fusion_covariates(labels, rater_intensity, target_intensity, graph, config, channel)
    dataset = FusionDataset(labels=labels, target_intensity=target_intensity,
                            rater_intensity=rater_intensity, design=covariates.design)
    return dataset, covariates
