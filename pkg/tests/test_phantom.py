"""Phantom generator: phases, rendering, ECG, events, determinism."""

import numpy as np
import pytest

from rmen import phantom
from rmen.errors import ConfigError
from rmen.phantom import IrregularEvent, PhantomConfig


class TestGeneratePhases:
    def test_zero_jitter_beats_are_exact(self):
        config = PhantomConfig(frames=150, fps=15.0, cardiac_rate_hz=1.5,
                               beat_jitter_sd=0.0, seed=1)
        phases = phantom.generate_phases(config)
        assert phases.beat_times_s.size == 15
        np.testing.assert_allclose(phases.beat_times_s, np.arange(15) / 1.5)

    def test_skipped_beat_doubles_one_interval(self):
        config = PhantomConfig(frames=300, beat_jitter_sd=0.0,
                               cardiac_rate_hz=1.0, seed=2,
                               events=[IrregularEvent(phantom.SKIPPED_BEAT, 140, 20)])
        phases = phantom.generate_phases(config)
        intervals = np.diff(phases.beat_times_s)
        doubled = np.isclose(intervals, 2.0)
        assert doubled.sum() == 1
        assert np.all(np.isclose(intervals[~doubled], 1.0))

    def test_jitter_statistics(self):
        config = PhantomConfig(frames=2600, cardiac_rate_hz=1.2,
                               beat_jitter_sd=0.05, seed=3)
        phases = phantom.generate_phases(config)
        intervals = np.diff(phases.beat_times_s)
        assert intervals.size > 190
        rel_sd = intervals.std() / (1.0 / config.cardiac_rate_hz)
        assert 0.02 <= rel_sd <= 0.08

    def test_breath_hold_freezes_resp_phase(self):
        hold = IrregularEvent(phantom.BREATH_HOLD, 100, 60)
        config = PhantomConfig(frames=300, seed=4, events=[hold])
        phases = phantom.generate_phases(config)
        span = phases.resp_cycles[100:161]
        np.testing.assert_allclose(span, span[0])
        # phase keeps advancing outside the hold
        assert phases.resp_cycles[99] < phases.resp_cycles[100]  # reaches the hold
        assert phases.resp_cycles[161] > phases.resp_cycles[160]

    def test_event_validation(self):
        with pytest.raises(ConfigError):
            PhantomConfig(frames=100,
                          events=[IrregularEvent("teleport", 10, 5)]).validate()
        with pytest.raises(ConfigError):
            PhantomConfig(frames=100,
                          events=[IrregularEvent(phantom.BREATH_HOLD, 95, 10)]).validate()

    def test_out_of_band_rates_warn(self):
        with pytest.warns(UserWarning):
            PhantomConfig(frames=50, cardiac_rate_hz=3.0).validate()


class TestRenderVideo:
    def test_static_scene_when_amplitudes_zero(self):
        config = PhantomConfig(frames=12, cardiac_amp_px=0.0, resp_amp_px=0.0,
                               noise_sd=0.0, drift_amp=0.0, seed=5)
        video = phantom.render_video(config, phantom.generate_phases(config))
        for t in range(1, 12):
            np.testing.assert_array_equal(video.frames[t], video.frames[0])

    def test_video_shift_translates_content(self):
        shift = IrregularEvent(phantom.VIDEO_SHIFT, 6, 1, magnitude=3.0)
        config = PhantomConfig(frames=12, cardiac_amp_px=0.0, resp_amp_px=0.0,
                               noise_sd=0.0, drift_amp=0.0, seed=6, events=[shift])
        video = phantom.render_video(config, phantom.generate_phases(config))
        before = video.frames[5, 0]
        after = video.frames[6, 0]
        np.testing.assert_allclose(after[:, 3:], before[:, :-3], atol=1e-6)
        np.testing.assert_allclose(after[:, :3], 0.0, atol=1e-6)

    def test_frames_bounded_and_finite(self):
        config = PhantomConfig(frames=30, seed=7)
        video = phantom.render_video(config, phantom.generate_phases(config))
        assert np.all(video.frames >= 0.0)
        assert np.all(video.frames <= 1.0)
        assert np.all(np.isfinite(video.frames))

    def test_mean_intensity_confounds_density_baseline(self):
        config = PhantomConfig(seed=8)  # default 40 s sequence
        video, ecg, truth = phantom.generate_sequence(config, "c")
        means = video.frames.mean(axis=(1, 2, 3))
        r = np.corrcoef(means, truth.cardiac_phase)[0, 1]
        assert abs(r) < 0.3

    def test_cardiac_motion_present(self):
        config = PhantomConfig(frames=60, noise_sd=0.0, seed=9)
        video = phantom.render_video(config, phantom.generate_phases(config))
        diffs = np.abs(np.diff(video.frames[:, 0], axis=0)).mean()
        assert diffs > 1e-4  # frames actually change


class TestSynthesizeEcg:
    def test_no_beats_stays_near_baseline(self):
        config = PhantomConfig(frames=60, seed=10)
        ecg = phantom.synthesize_ecg(np.array([]), config)
        assert np.max(ecg.samples) <= phantom.ECG_WANDER_AMP + 4 * config.noise_sd

    def test_single_beat_peak_position(self):
        config = PhantomConfig(frames=60, noise_sd=0.0, seed=11)
        ecg = phantom.synthesize_ecg(np.array([1.0]), config)
        assert abs(int(np.argmax(ecg.samples)) - 300) <= 2
        assert ecg.true_peaks.tolist() == [300]

    def test_true_peaks_rounding(self):
        config = PhantomConfig(frames=60, seed=12)
        ecg = phantom.synthesize_ecg(np.array([0.5, 1.2345]), config)
        np.testing.assert_array_equal(ecg.true_peaks,
                                      np.round(np.array([0.5, 1.2345]) * 300))


class TestGroundTruth:
    def test_beat_intervals_in_band(self):
        config = PhantomConfig(frames=600, seed=13)
        _, _, truth = phantom.generate_sequence(config, "g")
        intervals = np.diff(truth.beat_times_s)
        assert np.all(intervals >= 0.5)
        assert np.all(intervals <= 2.0)

    def test_skipped_beat_escapes_band_once(self):
        config = PhantomConfig(
            frames=600, seed=14,
            events=[IrregularEvent(phantom.SKIPPED_BEAT, 300, 30)])
        _, _, truth = phantom.generate_sequence(config, "g")
        intervals = np.diff(truth.beat_times_s)
        outside = intervals > (1.0 / config.cardiac_rate_hz) * 1.5
        assert outside.sum() == 1

    def test_resp_phase_constant_during_hold(self):
        config = PhantomConfig(
            frames=400, seed=15,
            events=[IrregularEvent(phantom.BREATH_HOLD, 150, 75)])
        _, _, truth = phantom.generate_sequence(config, "g")
        span = truth.resp_phase[150:226]
        np.testing.assert_allclose(span, span[0])

    def test_determinism(self):
        config = PhantomConfig(frames=90, seed=16)
        v1, e1, t1 = phantom.generate_sequence(config, "a")
        v2, e2, t2 = phantom.generate_sequence(config, "a")
        np.testing.assert_array_equal(v1.frames, v2.frames)
        np.testing.assert_array_equal(e1.samples, e2.samples)
        np.testing.assert_array_equal(t1.cardiac_phase, t2.cardiac_phase)

    def test_different_seeds_differ(self):
        base = PhantomConfig(frames=90)
        v1, _, _ = phantom.generate_sequence(base.with_seed(1), "a")
        v2, _, _ = phantom.generate_sequence(base.with_seed(2), "a")
        assert not np.array_equal(v1.frames, v2.frames)
