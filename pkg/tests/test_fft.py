"""Real FFT contract: round trips, Parseval, and a direct DFT oracle."""

import numpy as np
import pytest

from rmen import numerics as nm
from rmen.errors import InsufficientDataError, ShapeError


def direct_dft(x):
    """O(N^2) reference DFT, kept independent of any FFT library."""
    n = len(x)
    k = np.arange(n // 2 + 1)[:, None]
    t = np.arange(n)[None, :]
    ker = np.exp(-2j * np.pi * k * t / n)
    return ker @ x


def test_constant_vector_is_dc_only():
    c = 3.25
    coef = nm.rfft(np.full(8, c))
    assert np.isclose(coef[0], 8 * c)
    np.testing.assert_allclose(np.abs(coef[1:]), 0.0, atol=1e-12)


def test_cosine_hits_single_bin():
    n, k = 16, 3
    x = np.cos(2 * np.pi * k * np.arange(n) / n)
    coef = nm.rfft(x)
    mags = np.abs(coef)
    assert np.argmax(mags) == k
    others = np.delete(mags, k)
    np.testing.assert_allclose(others, 0.0, atol=1e-9)


@pytest.mark.parametrize("n", list(range(2, 65)))
def test_round_trip_and_parseval_all_lengths(n):
    rng = np.random.default_rng(n)
    x = rng.standard_normal(n)
    coef = nm.rfft(x)
    back = nm.irfft(coef, n)
    np.testing.assert_allclose(back, x, rtol=1e-9, atol=1e-12)
    # Parseval with the conjugate-pair bins counted twice
    weights = np.full(n // 2 + 1, 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    energy_freq = np.sum(weights * np.abs(coef) ** 2) / n
    energy_time = np.sum(x**2)
    np.testing.assert_allclose(energy_freq, energy_time, rtol=1e-9)


def test_odd_length_matches_direct_dft():
    rng = np.random.default_rng(99)
    x = rng.standard_normal(7)
    np.testing.assert_allclose(nm.rfft(x), direct_dft(x), rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(nm.irfft(nm.rfft(x), 7), x, rtol=1e-9)


@pytest.mark.parametrize("n", [4, 11, 32, 33])
def test_even_and_odd_match_direct_dft(n):
    x = np.random.default_rng(n).standard_normal(n)
    np.testing.assert_allclose(nm.rfft(x), direct_dft(x), rtol=1e-9, atol=1e-10)


def test_empty_input_raises():
    with pytest.raises(InsufficientDataError):
        nm.rfft(np.array([]))


def test_single_sample_raises():
    with pytest.raises(InsufficientDataError):
        nm.rfft(np.array([1.0]))


def test_coefficient_count_mismatch_raises():
    with pytest.raises(ShapeError):
        nm.irfft(np.zeros(4, dtype=complex), 8)
