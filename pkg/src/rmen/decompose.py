"""Zero-phase frequency-domain filtering of 1-D curves.

Filtering multiplies the real-FFT coefficients by a real 0/1 mask and
inverts the transform. A real mask cannot rotate any coefficient, so the
filter is exactly zero phase. The masks are ideal (brick-wall) selectors
with boundary bins included, which makes each filter a projection:
applying it twice changes nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import ConfigError, InsufficientDataError

BAND_PASS = "band_pass"
LOW_PASS = "low_pass"

# prior knowledge: cardiac activity sits in 0.5-2 Hz, respiration below 0.33 Hz
CARDIAC_LOW_HZ = 0.5
CARDIAC_HIGH_HZ = 2.0
RESPIRATION_CUTOFF_HZ = 0.33


@dataclass(frozen=True)
class FilterSpec:
    """Ideal filter description: pass band edges in Hz plus the sample rate."""

    kind: str
    sample_rate: float
    low_hz: float = CARDIAC_LOW_HZ
    high_hz: float = CARDIAC_HIGH_HZ
    cutoff_hz: float = RESPIRATION_CUTOFF_HZ

    def validate(self) -> None:
        nyquist = self.sample_rate / 2.0
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if self.kind == BAND_PASS:
            if not (0.0 < self.low_hz < self.high_hz < nyquist):
                raise ConfigError(
                    f"band edges must satisfy 0 < {self.low_hz} < {self.high_hz} "
                    f"< {nyquist} (Nyquist)"
                )
        elif self.kind == LOW_PASS:
            if not (0.0 < self.cutoff_hz < nyquist):
                raise ConfigError(
                    f"cutoff {self.cutoff_hz} must lie in (0, {nyquist})"
                )
        else:
            raise ConfigError(f"unknown filter kind {self.kind!r}")


def band_pass(sample_rate: float, low_hz: float = CARDIAC_LOW_HZ,
              high_hz: float = CARDIAC_HIGH_HZ) -> FilterSpec:
    return FilterSpec(BAND_PASS, sample_rate, low_hz=low_hz, high_hz=high_hz)


def low_pass(sample_rate: float, cutoff_hz: float = RESPIRATION_CUTOFF_HZ) -> FilterSpec:
    return FilterSpec(LOW_PASS, sample_rate, cutoff_hz=cutoff_hz)


def filter_signal(signal, spec: FilterSpec) -> np.ndarray:
    """Apply the ideal zero-phase mask described by `spec`."""
    spec.validate()
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ConfigError("filter_signal expects a 1-D signal")
    n = x.size
    if n < 4:
        raise InsufficientDataError("filter needs at least 4 samples")
    coef = nm.rfft(x)
    freqs = np.arange(coef.size) * (spec.sample_rate / n)
    if spec.kind == BAND_PASS:
        mask = (freqs >= spec.low_hz) & (freqs <= spec.high_hz)
    else:
        mask = freqs <= spec.cutoff_hz
    return nm.irfft(coef * mask, n)


def decompose_curve(curve, sample_rate: float,
                    cardiac_low_hz: float = CARDIAC_LOW_HZ,
                    cardiac_high_hz: float = CARDIAC_HIGH_HZ,
                    resp_cutoff_hz: float = RESPIRATION_CUTOFF_HZ):
    """Split a predicted phase curve into cardiac and respiratory components.

    Cardiac keeps the 0.5-2 Hz band; respiratory keeps everything below
    0.33 Hz with the DC bin removed so the trace is mean-free.
    """
    x = np.asarray(curve, dtype=np.float64)
    cardiac = filter_signal(x, band_pass(sample_rate, cardiac_low_hz, cardiac_high_hz))
    respiratory = filter_signal(x, low_pass(sample_rate, resp_cutoff_hz))
    respiratory = respiratory - np.mean(respiratory)
    return cardiac, respiratory
