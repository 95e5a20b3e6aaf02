"""
Tests for the synthetic fusion experiment
"""

import json

import numpy as np
import pytest

from blf.baselines import global_weights
from blf.models import SimulationConfig
from blf.simgen import (
    MAX_DISTRACTOR_OVERLAP,
    MIN_POOR_AGREEMENT,
    SimulationError,
    export_instance,
    generate_simulation,
    load_instance,
)


class TestGenerateSimulation:
    """Test instance generation"""

    def setup_method(self):
        self.instance = generate_simulation(SimulationConfig(), 0)

    def test_dimensions(self):
        data = self.instance.dataset
        assert (self.instance.height, self.instance.width) == (40, 40)
        assert self.instance.truth.shape == (1600,)
        assert data.labels.shape == (1600, 4)
        assert data.rater_intensity.shape == (1600, 4)
        assert data.design.shape == (1600, 4)

    def test_properties_hold(self):
        meta = self.instance.metadata
        scores = meta["dice_vs_truth"]
        assert scores[0] > max(scores[1:])
        assert meta["poor_pairwise_dice_min"] >= MIN_POOR_AGREEMENT
        assert meta["distractor_overlap"] <= MAX_DISTRACTOR_OVERLAP
        assert meta["truth_components"] == 1
        assert meta["rater_roles"] == ["good", "poor", "poor", "poor"]
        assert meta["seed"] == 0

    def test_poor_raters_have_intensity_discrepancies(self):
        data = self.instance.dataset
        weights = global_weights(data.rater_intensity, data.target_intensity)
        assert np.argmax(weights) == 0

    def test_same_seed_same_instance(self):
        again = generate_simulation(SimulationConfig(), 0)
        np.testing.assert_array_equal(again.truth, self.instance.truth)
        np.testing.assert_array_equal(again.dataset.labels, self.instance.dataset.labels)
        np.testing.assert_array_equal(again.dataset.target_intensity, self.instance.dataset.target_intensity)

    def test_different_seed(self):
        other = generate_simulation(SimulationConfig(), 1)
        assert not np.array_equal(other.dataset.target_intensity, self.instance.dataset.target_intensity)

    def test_generator_argument(self):
        instance = generate_simulation(SimulationConfig(), np.random.default_rng(3))
        assert instance.metadata["seed"] is None
        assert instance.dataset.n_raters == 4

    def test_unperturbed_good_atlas(self):
        instance = generate_simulation(SimulationConfig(good_arc_prob=0.0), 2)
        assert instance.metadata["dice_vs_truth"][0] == 1.0
        np.testing.assert_array_equal(instance.dataset.labels[:, 0], instance.truth)

    def test_rater_count(self):
        instance = generate_simulation(SimulationConfig(n_raters=3), 4)
        assert instance.dataset.labels.shape == (1600, 3)

    def test_impossible_layout(self):
        """A distractor on top of the structure is never accepted"""
        config = SimulationConfig(distractor_center=(0.5, 0.5), distractor_radius=0.2, max_retries=2)
        with pytest.raises(SimulationError):
            generate_simulation(config, 0)


class TestExport:
    """Test writing and reading simulated instances"""

    def setup_method(self):
        self.instance = generate_simulation(SimulationConfig(), 5)

    def test_layout(self, tmp_path):
        out_dir = export_instance(self.instance, tmp_path / "sim")
        names = {p.name for p in out_dir.iterdir()}
        expected = {"truth.csv", "target_intensity.csv", "meta.json"}
        for r in range(1, 5):
            expected |= {f"rater_{r}_labels.csv", f"rater_{r}_intensity.csv"}
        assert names == expected
        assert (out_dir / "truth.csv").read_text().startswith("40,40\n")

    def test_roundtrip(self, tmp_path):
        export_instance(self.instance, tmp_path)
        loaded = load_instance(tmp_path)
        np.testing.assert_array_equal(loaded.truth, self.instance.truth)
        np.testing.assert_array_equal(loaded.dataset.labels, self.instance.dataset.labels)
        np.testing.assert_array_equal(loaded.dataset.rater_intensity, self.instance.dataset.rater_intensity)
        np.testing.assert_array_equal(loaded.dataset.design, self.instance.dataset.design)
        assert loaded.metadata == json.loads(json.dumps(self.instance.metadata))

    def test_load_requires_truth(self, tmp_path):
        export_instance(self.instance, tmp_path)
        (tmp_path / "truth.csv").unlink()
        with pytest.raises(FileNotFoundError, match="truth.csv"):
            load_instance(tmp_path)
