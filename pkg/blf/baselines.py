"""
Voting baselines and segmentation metrics
"""

import logging
from typing import Dict, List, Optional

import numpy as np

from .utils import InvalidArgumentError, as_binary, require

logger = logging.getLogger(__name__)

# Half-width of the tie band around 1/2 for weighted votes
TIE_TOLERANCE = 1e-12
NORMALIZATION_TOLERANCE = 1e-9

VOTING_METHODS = ("mv", "gwmv", "lwmv")


class UndefinedMetricError(ValueError):
    """Metric undefined for the given inputs"""


def majority_vote(labels: np.ndarray) -> np.ndarray:
    """Strict majority per voxel; ties (even R) are excluded"""
    labels = as_binary(np.atleast_2d(labels))
    require(labels.shape[1] >= 1, "at least one rater is required")
    return (2 * labels.sum(axis=1, dtype=np.int64) > labels.shape[1]).astype(np.int8)


def _inverse_weights(squared_diff: np.ndarray, epsilon: float) -> np.ndarray:
    """Row-normalized (d + eps)^-1; exact matches share the weight when eps = 0"""
    require(epsilon >= 0, "epsilon must be non-negative")
    squared_diff = np.atleast_2d(squared_diff)
    if epsilon > 0:
        raw = 1.0 / (squared_diff + epsilon)
    else:
        exact = squared_diff == 0
        with np.errstate(divide="ignore"):
            raw = np.where(exact.any(axis=1, keepdims=True), exact.astype(float), 1.0 / squared_diff)
    return raw / raw.sum(axis=1, keepdims=True)


def global_weights(rater_intensity: np.ndarray, target_intensity: np.ndarray, epsilon: float = 1e-6) -> np.ndarray:
    """One weight per rater from the inverse mean squared intensity difference"""
    rater_intensity = np.asarray(rater_intensity, dtype=float)
    target_intensity = np.asarray(target_intensity, dtype=float).reshape(-1)
    require(rater_intensity.shape[0] == target_intensity.shape[0], "intensity dimensions disagree")
    mean_sq = np.mean((rater_intensity - target_intensity[:, None]) ** 2, axis=0)
    return _inverse_weights(mean_sq[None, :], epsilon)[0]


def local_weights(rater_intensity: np.ndarray, target_intensity: np.ndarray, epsilon: float = 1e-6) -> np.ndarray:
    """Per-voxel weights from the inverse squared intensity difference (V x R)"""
    rater_intensity = np.asarray(rater_intensity, dtype=float)
    target_intensity = np.asarray(target_intensity, dtype=float).reshape(-1)
    require(rater_intensity.shape[0] == target_intensity.shape[0], "intensity dimensions disagree")
    return _inverse_weights((rater_intensity - target_intensity[:, None]) ** 2, epsilon)


def weighted_vote(labels: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """
    Include a voxel when its weighted vote exceeds 1/2

    Args:
        labels: V x R binary votes
        weights: R vector or V x R matrix whose rows sum to 1

    Raises:
        InvalidArgumentError: If the weights are not normalized
    """
    labels = as_binary(np.atleast_2d(labels))
    weights = np.asarray(weights, dtype=float)
    sums = weights.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > NORMALIZATION_TOLERANCE):
        raise InvalidArgumentError("weights must sum to 1")
    if weights.ndim == 1:
        require(weights.shape[0] == labels.shape[1], "one weight per rater is required")
        score = labels @ weights
    else:
        require(weights.shape == labels.shape, "weights must match the label matrix")
        score = np.sum(weights * labels, axis=1)
    return (score > 0.5 + TIE_TOLERANCE).astype(np.int8)


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """Dice overlap 2|a & b| / (|a| + |b|)

    Raises:
        UndefinedMetricError: If both masks are empty
    """
    a = as_binary(a, "a").reshape(-1).astype(bool)
    b = as_binary(b, "b").reshape(-1).astype(bool)
    require(a.shape == b.shape, "masks must have equal length")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        raise UndefinedMetricError("Dice of two empty masks is undefined")
    return 2.0 * int(np.sum(a & b)) / total


def avd(vol_auto: float, vol_manual: float) -> float:
    """Absolute volume difference relative to the manual volume"""
    if not vol_manual > 0:
        raise InvalidArgumentError("manual volume must be positive")
    require(vol_auto >= 0, "automatic volume must be non-negative")
    return abs(float(vol_auto) - float(vol_manual)) / float(vol_manual)


def voting_segmentations(labels: np.ndarray, rater_intensity: np.ndarray, target_intensity: np.ndarray,
                         epsilon: float = 1e-6) -> Dict[str, np.ndarray]:
    """Run the three voting baselines"""
    return {
        "mv": majority_vote(labels),
        "gwmv": weighted_vote(labels, global_weights(rater_intensity, target_intensity, epsilon)),
        "lwmv": weighted_vote(labels, local_weights(rater_intensity, target_intensity, epsilon)),
    }


def evaluate_segmentation(method: str, segmentation: np.ndarray, truth: Optional[np.ndarray] = None,
                          volume: Optional[float] = None) -> Dict[str, object]:
    """Report row {method, dice, volume, avd}; dice/avd are None without truth"""
    volume = float(np.sum(segmentation)) if volume is None else float(volume)
    row: Dict[str, object] = {"method": method, "dice": None, "volume": volume, "avd": None}
    if truth is not None:
        truth_volume = float(np.sum(truth))
        try:
            row["dice"] = dice(segmentation, truth)
        except UndefinedMetricError:
            logger.warning(f"Dice undefined for {method}: both masks empty")
        if truth_volume > 0:
            row["avd"] = avd(volume, truth_volume)
    return row


def evaluate_segmentations(segmentations: Dict[str, np.ndarray],
                           truth: Optional[np.ndarray] = None) -> List[Dict[str, object]]:
    """Report rows for several segmentations in insertion order"""
    return [evaluate_segmentation(name, seg, truth) for name, seg in segmentations.items()]
