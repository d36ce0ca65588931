"""Label pipeline: QRS detection, index mapping, triangular targets."""

import numpy as np
import pytest

from rmen import labels, phantom
from rmen.errors import InsufficientDataError


def peak_metrics(detected, truth, tol=2):
    """Per-peak greedy matching at +/-tol samples."""
    truth = list(truth)
    hits = 0
    for d in detected:
        for i, t in enumerate(truth):
            if abs(int(d) - int(t)) <= tol:
                hits += 1
                truth.pop(i)
                break
    sensitivity = hits / (hits + len(truth)) if hits + len(truth) else 1.0
    ppv = hits / len(detected) if len(detected) else 1.0
    return sensitivity, ppv


class TestDetectQrs:
    def test_clean_phantom_ecg_exact(self):
        config = phantom.PhantomConfig(frames=450, noise_sd=0.0, seed=3)
        phases = phantom.generate_phases(config)
        ecg = phantom.synthesize_ecg(phases.beat_times_s, config)
        found = labels.detect_qrs(ecg.samples, ecg.rate)
        assert len(found) == len(ecg.true_peaks)
        assert np.all(np.abs(found.indices - ecg.true_peaks) <= 2)

    def test_flat_trace_yields_no_peaks(self):
        found = labels.detect_qrs(np.zeros(3000), 300.0)
        assert len(found) == 0

    def test_noisy_phantom_high_sensitivity(self):
        config = phantom.PhantomConfig(frames=1800, seed=11)  # 120 s at 15 fps
        phases = phantom.generate_phases(config)
        ecg = phantom.synthesize_ecg(phases.beat_times_s, config)
        found = labels.detect_qrs(ecg.samples, ecg.rate)
        sens, ppv = peak_metrics(found.indices, ecg.true_peaks)
        assert sens >= 0.99
        assert ppv >= 0.99

    def test_short_trace_rejected(self):
        with pytest.raises(InsufficientDataError):
            labels.detect_qrs(np.zeros(100), 300.0)

    def test_low_rate_rejected(self):
        with pytest.raises(InsufficientDataError):
            labels.detect_qrs(np.zeros(500), 50.0)


class TestMapPeaks:
    def test_zero_maps_to_zero(self):
        out = labels.map_peaks(labels.PeakList(np.array([0]), 1000.0), 15.0)
        assert out.tolist() == [0]

    def test_exact_arithmetic(self):
        out = labels.map_peaks(labels.PeakList(np.array([999, 2000]), 1000.0), 15.0)
        assert out.tolist() == [14, 30]  # floor(14.985), floor(30.0)

    def test_collisions_collapse_with_warning(self):
        peaks = labels.PeakList(np.array([10, 11, 500]), 1000.0)
        with pytest.warns(UserWarning):
            out = labels.map_peaks(peaks, 15.0)
        assert out.tolist() == [0, 7]

    def test_matches_floor_formula_on_random_draws(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            rate = float(rng.integers(200, 1000))
            fps = float(rng.integers(10, 30))
            idx = np.sort(rng.choice(100_000, size=20, replace=False))
            got = labels.map_peaks(labels.PeakList(idx, rate), fps)
            want = np.unique(np.floor(idx * fps / rate).astype(np.int64))
            np.testing.assert_array_equal(got, want)


class TestBuildTargets:
    def test_closed_form_values(self):
        series = labels.build_targets([0, 10], 11)
        assert series.raw[0] == 1.0
        assert series.raw[5] == -1.0
        assert series.raw[10] == 1.0
        assert np.isclose(series.raw[2], 0.2)
        assert np.isclose(series.targets[2], np.sin(0.2))
        assert np.isclose(series.targets[0], np.sin(1.0))
        assert np.isclose(series.targets[5], -np.sin(1.0))

    def test_translation_invariance(self):
        a = labels.build_targets([0, 10], 11)
        b = labels.build_targets([7, 17], 18)
        np.testing.assert_allclose(a.raw, b.raw[7:])

    def test_peaks_hit_one_exactly(self):
        series = labels.build_targets([3, 9, 20, 26], 30)
        for p in [3, 9, 20, 26]:
            assert series.raw[p] == 1.0

    def test_monotone_segments(self):
        series = labels.build_targets([0, 12], 13)
        down = series.raw[0:7]
        up = series.raw[6:13]
        assert np.all(np.diff(down) < 0)
        assert np.all(np.diff(up) > 0)

    def test_odd_span_midpoint_not_reached(self):
        series = labels.build_targets([0, 9], 10)
        assert series.raw.min() > -1.0
        assert np.isclose(series.raw.min(), -1.0 + 2.0 / 9.0)

    def test_sine_applied_pointwise(self):
        series = labels.build_targets([2, 9, 17], 25)
        np.testing.assert_array_equal(series.targets, np.sin(series.raw))
        assert np.max(np.abs(series.targets)) <= np.sin(1.0)

    def test_edges_extrapolate_then_unlabel(self):
        series = labels.build_targets([10, 20], 40)
        # frames 5..9 climb toward the peak with the adjacent slope
        assert np.isclose(series.raw[9], 1.0 - 4.0 / 10.0)
        assert series.labeled[6]  # raw exactly -1 at 10 - 5 frames... still in range
        # past one half period the extension clamps and is unlabeled
        assert np.all(series.raw[:2] == -1.0)
        assert not series.labeled[0]
        # trailing side mirrors
        assert np.isclose(series.raw[21], 1.0 - 4.0 / 10.0)
        assert np.all(series.raw[28:] == -1.0)
        assert not series.labeled[35]

    def test_requires_two_peaks(self):
        with pytest.raises(InsufficientDataError):
            labels.build_targets([5], 10)

    def test_write_csv_round_trip(self, tmp_path):
        series = labels.build_targets([0, 8, 15], 20)
        path = tmp_path / "labels.csv"
        series.write_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "frame,raw,target,labeled"
        assert len(lines) == 21
        frame5 = lines[6].split(",")
        assert float(frame5[1]) == series.raw[5]
        assert float(frame5[2]) == series.targets[5]


class TestCompositionOracle:
    def test_phantom_truth_equals_label_pipeline(self):
        config = phantom.PhantomConfig(frames=300, seed=21)
        video, ecg, truth = phantom.generate_sequence(config, "x")
        peaks = labels.PeakList(ecg.true_peaks, ecg.rate)
        series = labels.build_targets(
            labels.map_peaks(peaks, config.fps), config.frames, config.fps
        )
        np.testing.assert_array_equal(series.targets, truth.cardiac_phase)
