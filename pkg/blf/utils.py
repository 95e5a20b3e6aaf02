"""Utility functions for blf-py."""

import hashlib
import json
from typing import Any

import numpy as np


class InvalidArgumentError(ValueError):
    """Raised when an operation receives arguments outside its domain"""


def require(condition: bool, message: str) -> None:
    """Raise InvalidArgumentError with ``message`` unless ``condition`` holds"""
    if not condition:
        raise InvalidArgumentError(message)


def as_binary(array: Any, name: str = "labels") -> np.ndarray:
    """Validate a 0/1 array and return it as int8"""
    values = np.asarray(array)
    if values.size and not np.all((values == 0) | (values == 1)):
        raise InvalidArgumentError(f"{name} must be binary (0/1)")
    return values.astype(np.int8)


def as_finite(array: Any, name: str) -> np.ndarray:
    """Validate that an array is finite and return it as float64"""
    values = np.asarray(array, dtype=float)
    if not np.all(np.isfinite(values)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return values


def is_spd(matrix: np.ndarray) -> bool:
    """Check that a matrix is symmetric positive definite"""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        return False
    if not np.allclose(matrix, matrix.T, rtol=1e-10, atol=1e-12):
        return False
    try:
        np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        return False
    return True


def stable_hash(payload: Any) -> str:
    """SHA-256 of a JSON rendering with sorted keys"""
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def format_duration(seconds: float) -> str:
    """Format duration in seconds to human readable string"""
    if seconds < 1:
        return f"{seconds*1000:.1f}ms"
    elif seconds < 60:
        return f"{seconds:.1f}s"
    elif seconds < 3600:
        minutes = int(seconds // 60)
        secs = int(seconds % 60)
        return f"{minutes}m{secs}s"
    else:
        hours = int(seconds // 3600)
        minutes = int((seconds % 3600) // 60)
        return f"{hours}h{minutes}m"
