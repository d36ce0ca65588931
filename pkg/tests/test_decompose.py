"""Filter mask semantics: passband identity, stopband kill, projections."""

import numpy as np
import pytest

from rmen import decompose
from rmen.errors import ConfigError

FS = 15.0


def tone(freq_hz, n, fs=FS, phase=0.0):
    t = np.arange(n) / fs
    return np.sin(2 * np.pi * freq_hz * t + phase)


def test_passband_identity_on_exact_bin():
    x = tone(1.0, 150)  # 1 Hz is bin 10 of a 150-sample window at 15 Hz
    y = decompose.filter_signal(x, decompose.band_pass(FS))
    np.testing.assert_allclose(y, x, atol=1e-9)


def test_stopband_annihilation_on_exact_bin():
    x = tone(0.25, 240)  # bin 4 of 240 samples at 15 Hz, below the 0.5 Hz edge
    y = decompose.filter_signal(x, decompose.band_pass(FS))
    assert np.max(np.abs(y)) < 1e-9


def test_superposition_splits_components():
    n = 240
    cardiac = tone(1.0, n)
    resp = tone(0.25, n)
    x = cardiac + resp + 0.7
    got_c = decompose.filter_signal(x, decompose.band_pass(FS))
    got_r = decompose.filter_signal(x, decompose.low_pass(FS))
    np.testing.assert_allclose(got_c, cardiac, atol=1e-9)
    np.testing.assert_allclose(got_r, resp + 0.7, atol=1e-9)


def test_boundary_bins_are_inclusive():
    n = 150
    edge_low = tone(0.5, n)   # exactly the low band edge
    edge_high = tone(2.0, n)  # exactly the high band edge
    for x in (edge_low, edge_high):
        y = decompose.filter_signal(x, decompose.band_pass(FS))
        np.testing.assert_allclose(y, x, atol=1e-9)


def test_zero_phase_preserves_symmetry():
    rng = np.random.default_rng(0)
    n = 128
    half = rng.standard_normal(n // 2)
    x = np.concatenate([half, half[::-1]])  # symmetric about the midpoint
    y = decompose.filter_signal(x, decompose.band_pass(FS))
    np.testing.assert_allclose(y, y[::-1], atol=1e-9)


@pytest.mark.parametrize("n", [64, 150, 255])
def test_idempotence(n):
    x = np.random.default_rng(n).standard_normal(n)
    spec = decompose.band_pass(FS)
    once = decompose.filter_signal(x, spec)
    twice = decompose.filter_signal(once, spec)
    np.testing.assert_allclose(twice, once, atol=1e-9)


@pytest.mark.parametrize("n", [64, 150, 255])
def test_energy_never_grows(n):
    x = np.random.default_rng(n + 1).standard_normal(n)
    y = decompose.filter_signal(x, decompose.band_pass(FS))
    assert np.sum(y**2) <= np.sum(x**2) + 1e-9


def test_band_plus_complement_reconstructs():
    n = 150
    x = np.random.default_rng(5).standard_normal(n)
    band = decompose.filter_signal(x, decompose.band_pass(FS, 0.5, 2.0))
    # complement: everything strictly below 0.5 plus everything strictly above 2.0
    coef = np.fft.rfft(x)
    freqs = np.arange(coef.size) * (FS / n)
    comp = np.fft.irfft(coef * ((freqs < 0.5) | (freqs > 2.0)), n)
    np.testing.assert_allclose(band + comp, x, atol=1e-9)


def test_decompose_constant_curve_is_all_zero():
    cardiac, resp = decompose.decompose_curve(np.full(64, 3.0), FS)
    np.testing.assert_allclose(cardiac, 0.0, atol=1e-9)
    np.testing.assert_allclose(resp, 0.0, atol=1e-9)


def test_decompose_linearity():
    rng = np.random.default_rng(8)
    a = rng.standard_normal(120)
    b = rng.standard_normal(120)
    ca, ra = decompose.decompose_curve(a, FS)
    cb, rb = decompose.decompose_curve(b, FS)
    cab, rab = decompose.decompose_curve(a + b, FS)
    np.testing.assert_allclose(cab, ca + cb, atol=1e-9)
    np.testing.assert_allclose(rab, ra + rb, atol=1e-9)


def test_invalid_specs_rejected():
    with pytest.raises(ConfigError):
        decompose.filter_signal(np.zeros(16), decompose.band_pass(FS, 2.0, 0.5))
    with pytest.raises(ConfigError):
        decompose.filter_signal(np.zeros(16), decompose.band_pass(3.0))  # Nyquist too low
    with pytest.raises(ConfigError):
        decompose.filter_signal(np.zeros(16), decompose.FilterSpec("notch", FS))
