"""
Run metrics collection and reporting for blf-py
"""

import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Dict

from .models import Kernel


@dataclass
class Metrics:
    """Chain metrics container"""

    sweeps: int = 0
    retained_samples: int = 0

    # Per-kernel call counts and wall seconds
    kernel_calls: Dict[str, int] = field(default_factory=dict)
    kernel_seconds: Dict[str, float] = field(default_factory=dict)

    # Metropolis-Hastings step for delta
    delta_proposals: int = 0
    delta_acceptances: int = 0

    startup_time: float = field(default_factory=time.perf_counter)

    @property
    def acceptance_rate(self) -> float:
        if self.delta_proposals == 0:
            return 0.0
        return self.delta_acceptances / self.delta_proposals

    def to_dict(self) -> Dict[str, Any]:
        """Convert metrics to dictionary"""
        return {
            "wall_seconds": time.perf_counter() - self.startup_time,
            "sweeps": self.sweeps,
            "retained_samples": self.retained_samples,
            "kernels": {
                name: {"calls": self.kernel_calls[name], "seconds": self.kernel_seconds.get(name, 0.0)}
                for name in sorted(self.kernel_calls)
            },
            "delta": {
                "proposals": self.delta_proposals,
                "acceptances": self.delta_acceptances,
                "acceptance_rate": self.acceptance_rate,
            },
        }


class MetricsManager:
    """Thread-safe metrics manager"""

    def __init__(self):
        self.metrics = Metrics()
        self._lock = threading.Lock()

    def increment_sweeps(self):
        with self._lock:
            self.metrics.sweeps += 1

    def increment_retained(self):
        with self._lock:
            self.metrics.retained_samples += 1

    def record_kernel(self, kernel: Kernel, seconds: float):
        """Record one kernel invocation"""
        name = Kernel(kernel).name.lower()
        with self._lock:
            self.metrics.kernel_calls[name] = self.metrics.kernel_calls.get(name, 0) + 1
            self.metrics.kernel_seconds[name] = self.metrics.kernel_seconds.get(name, 0.0) + seconds

    def record_delta(self, accepted: bool):
        """Record one delta proposal and its outcome"""
        with self._lock:
            self.metrics.delta_proposals += 1
            if accepted:
                self.metrics.delta_acceptances += 1

    @contextmanager
    def kernel_context(self, kernel: Kernel):
        """Context manager timing one kernel call"""
        start_time = time.perf_counter()
        try:
            yield
        finally:
            self.record_kernel(kernel, time.perf_counter() - start_time)

    def acceptance_rate(self) -> float:
        with self._lock:
            return self.metrics.acceptance_rate

    def get_metrics(self) -> Dict[str, Any]:
        """Get current metrics snapshot"""
        with self._lock:
            return self.metrics.to_dict()

    def reset_metrics(self):
        """Reset all metrics (for testing)"""
        with self._lock:
            self.metrics = Metrics()
