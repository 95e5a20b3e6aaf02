"""
Tests for run metrics collection
"""

import threading

from blf.metrics import MetricsManager
from blf.models import Kernel


class TestMetricsManager:
    """Test the thread-safe metrics manager"""

    def setup_method(self):
        self.manager = MetricsManager()

    def test_initial_snapshot(self):
        snapshot = self.manager.get_metrics()
        assert snapshot["sweeps"] == 0
        assert snapshot["kernels"] == {}
        assert snapshot["delta"] == {"proposals": 0, "acceptances": 0, "acceptance_rate": 0.0}
        assert snapshot["wall_seconds"] >= 0.0

    def test_kernel_context(self):
        with self.manager.kernel_context(Kernel.TAU_PHI):
            pass
        with self.manager.kernel_context(Kernel.TAU_PHI):
            pass
        kernels = self.manager.get_metrics()["kernels"]
        assert kernels["tau_phi"]["calls"] == 2
        assert kernels["tau_phi"]["seconds"] >= 0.0

    def test_kernel_context_records_on_error(self):
        try:
            with self.manager.kernel_context(Kernel.DELTA):
                raise RuntimeError("boom")
        except RuntimeError:
            pass
        assert self.manager.get_metrics()["kernels"]["delta"]["calls"] == 1

    def test_acceptance_rate(self):
        for accepted in (True, False, True, True):
            self.manager.record_delta(accepted)
        assert self.manager.acceptance_rate() == 0.75
        assert self.manager.get_metrics()["delta"]["acceptances"] == 3

    def test_concurrent_updates(self):
        def work():
            for _ in range(1000):
                self.manager.increment_sweeps()
                self.manager.record_kernel(Kernel.PHI, 0.0)

        threads = [threading.Thread(target=work) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        snapshot = self.manager.get_metrics()
        assert snapshot["sweeps"] == 4000
        assert snapshot["kernels"]["phi"]["calls"] == 4000

    def test_reset(self):
        self.manager.increment_retained()
        self.manager.reset_metrics()
        assert self.manager.get_metrics()["retained_samples"] == 0
