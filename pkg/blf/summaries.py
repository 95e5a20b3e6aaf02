"""
Posterior summaries: probability maps, segmentations, volumes and intervals
"""

import logging
from typing import Any, Dict, Iterable, List, Tuple

import numpy as np

from .models import ChainOutput, ProbabilityMap
from .utils import InvalidArgumentError, require

logger = logging.getLogger(__name__)


def rb_probability_map(chain: ChainOutput) -> ProbabilityMap:
    """Mean and sd (n - 1 denominator) of the retained conditional probabilities

    Raises:
        InvalidArgumentError: If the chain retained nothing
    """
    n = chain.n_samples
    if n < 1:
        raise InvalidArgumentError("chain has no retained samples")
    if chain.rb_prob_samples is not None:
        mean = chain.rb_prob_samples.mean(axis=0)
        sd = chain.rb_prob_samples.std(axis=0, ddof=1) if n > 1 else np.zeros(chain.n_voxels)
    else:
        mean = chain.rb_mean.copy()
        sd = np.sqrt(np.maximum(chain.rb_m2, 0.0) / (n - 1)) if n > 1 else np.zeros(chain.n_voxels)
    return ProbabilityMap(mean=np.clip(mean, 0.0, 1.0), sd=sd, n_samples=n)


def threshold_map(prob_map: ProbabilityMap, t: float = 0.5) -> np.ndarray:
    """Voxels whose mean probability is at least ``t``"""
    if not 0.0 < t < 1.0:
        raise InvalidArgumentError(f"threshold must lie in (0, 1), got {t}")
    return (prob_map.mean >= t).astype(np.int8)


def volume_distribution(chain: ChainOutput) -> np.ndarray:
    """Volume draws M^(k), one per retained iterate"""
    require(chain.n_samples >= 1, "chain has no retained samples")
    return chain.volume_samples.copy()


def credible_interval(samples: np.ndarray, level: float = 0.95) -> Tuple[float, float]:
    """Equal-tailed interval from linearly interpolated empirical quantiles"""
    samples = np.asarray(samples, dtype=float).reshape(-1)
    if not 0.0 < level < 1.0:
        raise InvalidArgumentError(f"level must lie in (0, 1), got {level}")
    if samples.shape[0] < 2:
        raise InvalidArgumentError("at least two samples are required")
    tail = 0.5 * (1.0 - level)
    lo, hi = np.quantile(samples, [tail, 1.0 - tail], method="linear")
    return float(lo), float(hi)


def reliability_maps(chain: ChainOutput) -> Dict[str, np.ndarray]:
    """Posterior mean sensitivity and specificity fields (V x R each)"""
    return {"sensitivity": chain.sensitivity_mean, "specificity": chain.specificity_mean}


def posterior_volumes(chain: ChainOutput, prob_map: ProbabilityMap, threshold: float = 0.5,
                      level: float = 0.99) -> Dict[str, Any]:
    """Posterior-mean and thresholded volume with a credible interval"""
    volumes = volume_distribution(chain)
    summary: Dict[str, Any] = {
        "posterior_mean": float(prob_map.mean.sum()),
        "thresholded": float(threshold_map(prob_map, threshold).sum()),
        "level": level,
        "interval": None,
    }
    if volumes.shape[0] >= 2:
        summary["interval"] = list(credible_interval(volumes, level))
    return summary


def aggregate_reports(reports: Iterable[Dict[str, Any]]) -> List[Dict[str, Any]]:
    """Pool Dice and AVD per method across several report.json payloads

    Each report carries a ``methods`` list of {method, dice, volume, avd}
    rows; missing metrics are skipped.
    """
    pooled: Dict[str, Dict[str, List[float]]] = {}
    for report in reports:
        for row in report.get("methods", []):
            entry = pooled.setdefault(row["method"], {"dice": [], "avd": []})
            for metric in ("dice", "avd"):
                if row.get(metric) is not None:
                    entry[metric].append(float(row[metric]))

    rows = []
    for method, metrics in pooled.items():
        row: Dict[str, Any] = {"method": method}
        for metric, values in metrics.items():
            if values:
                array = np.asarray(values)
                row[metric] = {
                    "n": int(array.shape[0]),
                    "mean": float(array.mean()),
                    "sd": float(array.std(ddof=1)) if array.shape[0] > 1 else 0.0,
                    "min": float(array.min()),
                    "max": float(array.max()),
                }
            else:
                row[metric] = None
        rows.append(row)
    return rows
