"""
Convergence diagnostics for scalar chain traces
"""

import csv
import logging
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np

from .models import ChainOutput
from .utils import InvalidArgumentError, require

logger = logging.getLogger(__name__)

MIN_GEWEKE_LENGTH = 100


class DegenerateTraceError(ValueError):
    """Trace without variability"""


def _batch_means_variance(segment: np.ndarray, n_batches: int) -> float:
    """Spectral density at zero via non-overlapping batch means"""
    n_batches = max(2, min(n_batches, segment.shape[0]))
    size = segment.shape[0] // n_batches
    means = segment[: n_batches * size].reshape(n_batches, size).mean(axis=1)
    return float(size * means.var(ddof=1))


def geweke_z(trace: np.ndarray, frac_first: float = 0.1, frac_last: float = 0.5) -> float:
    """
    Geweke z-score comparing the start and end of a trace

    Both window variances use floor(sqrt(n)) batches, n the full length.

    Raises:
        InvalidArgumentError: If the trace is too short or the fractions invalid
        DegenerateTraceError: If both windows have zero variance
    """
    trace = np.asarray(trace, dtype=float).reshape(-1)
    n = trace.shape[0]
    if n < MIN_GEWEKE_LENGTH:
        raise InvalidArgumentError(f"Geweke needs at least {MIN_GEWEKE_LENGTH} draws, got {n}")
    if not (0 < frac_first < 1 and 0 < frac_last < 1 and frac_first + frac_last <= 1):
        raise InvalidArgumentError("window fractions must lie in (0, 1) and sum to at most 1")

    first = trace[: int(frac_first * n)]
    last = trace[n - int(frac_last * n):]
    n_batches = int(np.floor(np.sqrt(n)))
    var_first = _batch_means_variance(first, n_batches)
    var_last = _batch_means_variance(last, n_batches)
    if var_first <= 0 and var_last <= 0:
        raise DegenerateTraceError("trace has no variability in either window")
    spread = np.sqrt(var_first / first.shape[0] + var_last / last.shape[0])
    return float((first.mean() - last.mean()) / spread)


def lag1_autocorr(trace: np.ndarray) -> float:
    """Lag-1 sample autocorrelation with the biased (1/n) normalization"""
    trace = np.asarray(trace, dtype=float).reshape(-1)
    require(trace.shape[0] >= 3, "at least three draws are required")
    centered = trace - trace.mean()
    denominator = float(np.dot(centered, centered))
    if denominator <= 0:
        raise DegenerateTraceError("trace has zero variance")
    return float(np.dot(centered[:-1], centered[1:]) / denominator)


def ergodic_average(trace: np.ndarray) -> np.ndarray:
    """Running mean of a trace"""
    trace = np.asarray(trace, dtype=float).reshape(-1)
    return np.cumsum(trace) / np.arange(1, trace.shape[0] + 1)


def trace_columns(chain: ChainOutput) -> Tuple[List[str], np.ndarray]:
    """Header and matrix of the scalar traces (iter, delta, tau_phi, tau_eta, volume)"""
    n_delta = chain.delta_samples.shape[1]
    n_raters = chain.tau_phi_samples.shape[1]
    header = (["iter"]
              + [f"delta_{j}" for j in range(1, n_delta + 1)]
              + [f"tau_phi_{r}" for r in range(1, n_raters + 1)]
              + [f"tau_eta_{r}" for r in range(1, n_raters + 1)]
              + ["volume"])
    matrix = np.column_stack([chain.iterations.astype(float), chain.delta_samples,
                              chain.tau_samples, chain.volume_samples])
    return header, matrix


def trace_export(chain: ChainOutput, path: Union[str, Path]) -> Path:
    """Write the scalar traces as CSV with 17 significant digits"""
    header, matrix = trace_columns(chain)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for iteration, row in zip(chain.iterations, matrix):
            writer.writerow([str(int(iteration))] + [format(float(x), ".17g") for x in row[1:]])
    return path


def read_traces(path: Union[str, Path]) -> Tuple[List[str], np.ndarray]:
    """Read a trace CSV written by trace_export"""
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidArgumentError(f"{path}: empty trace file")
    header, body = rows[0], rows[1:]
    matrix = np.array([[float(x) for x in row] for row in body], dtype=float).reshape(len(body), len(header))
    return header, matrix


def diagnostics_report(chain: ChainOutput, frac_first: float = 0.1, frac_last: float = 0.5) -> List[Dict[str, Any]]:
    """Geweke z, lag-1 autocorrelation and final ergodic mean per traced parameter

    Statistics that cannot be computed (short or constant traces) are None.
    """
    header, matrix = trace_columns(chain)
    report = []
    for name, trace in zip(header[1:], matrix[:, 1:].T):
        entry: Dict[str, Any] = {"param": name, "geweke_z": None, "lag1": None,
                                 "ergodic_mean": float(ergodic_average(trace)[-1]) if trace.size else None}
        try:
            entry["geweke_z"] = geweke_z(trace, frac_first, frac_last)
        except (InvalidArgumentError, DegenerateTraceError) as e:
            logger.warning(f"Geweke statistic unavailable for {name}: {e}")
        try:
            entry["lag1"] = lag1_autocorr(trace)
        except (InvalidArgumentError, DegenerateTraceError) as e:
            logger.warning(f"Lag-1 autocorrelation unavailable for {name}: {e}")
        report.append(entry)
    return report
