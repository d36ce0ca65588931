"""ECG peak detection and per-frame pseudo-target construction.

The pseudo targets encode cardiac phase as a triangular wave over frame
indices: 1 at every mapped R-peak frame, -1 at the midpoint between
consecutive peaks, linear in between, then softened pointwise with
sin(x). Peak intervals are allowed to differ, so the resulting signal is
not periodic.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import decompose
from .errors import InsufficientDataError

# detector constants (seconds)
QRS_BAND_LOW_HZ = 5.0
QRS_BAND_HIGH_HZ = 15.0
INTEGRATION_WINDOW_S = 0.150
REFRACTORY_S = 0.200
REFINE_RADIUS_S = 0.050


@dataclass
class PeakList:
    """Strictly increasing ECG sample indices plus their sampling rate."""

    indices: np.ndarray
    rate: float

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.size > 1 and np.any(np.diff(self.indices) <= 0):
            raise ValueError("peak indices must be strictly increasing")

    def __len__(self) -> int:
        return int(self.indices.size)


@dataclass
class PhaseLabelSeries:
    """Per-frame triangular labels and their sine-softened targets."""

    frame_peaks: np.ndarray
    raw: np.ndarray
    targets: np.ndarray
    labeled: np.ndarray
    fps: float

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "raw", "target", "labeled"])
            for i in range(self.raw.size):
                w.writerow([i, repr(float(self.raw[i])), repr(float(self.targets[i])),
                            int(self.labeled[i])])


# ---------------------------------------------------------------------------
# QRS detection


def _local_maxima(x: np.ndarray) -> np.ndarray:
    """Indices strictly above the left neighbour and >= the right one."""
    if x.size < 3:
        return np.empty(0, dtype=np.int64)
    left = x[1:-1] > x[:-2]
    right = x[1:-1] >= x[2:]
    return np.flatnonzero(left & right) + 1


def _spaced_maxima(x: np.ndarray, min_distance: int) -> np.ndarray:
    """Local maxima thinned so only the tallest survives within min_distance."""
    maxima = _local_maxima(x)
    if maxima.size == 0:
        return maxima
    order = maxima[np.lexsort((maxima, -x[maxima]))]
    kept: list[int] = []
    for idx in order:
        if all(abs(idx - k) > min_distance for k in kept):
            kept.append(int(idx))
    return np.asarray(sorted(kept), dtype=np.int64)


def detect_qrs(samples, rate: float) -> PeakList:
    """Locate R peaks with a derivative/energy chain and adaptive threshold.

    band-pass 5-15 Hz (zero phase) -> differentiate -> square -> 150 ms
    moving-window integration -> running signal/noise peak estimates with a
    200 ms refractory -> refine each detection to the local band-passed
    maximum within +/-50 ms.
    """
    x = np.asarray(samples, dtype=np.float64)
    if rate < 100.0:
        raise InsufficientDataError(f"sampling rate {rate} Hz below 100 Hz minimum")
    if x.size < rate:
        raise InsufficientDataError("need at least one second of ECG samples")

    # run the whole chain reflect-padded: the FFT mask is circular and the
    # integrator shrinks at edges, both of which would displace boundary beats
    pad = int(2 * rate)
    padded = np.concatenate([x[1 : pad + 1][::-1], x, x[-pad - 1 : -1][::-1]])
    band = decompose.filter_signal(
        padded, decompose.band_pass(rate, QRS_BAND_LOW_HZ, QRS_BAND_HIGH_HZ)
    )
    deriv = np.gradient(band)
    energy = deriv * deriv
    win = max(1, int(round(INTEGRATION_WINDOW_S * rate)))
    integrated = np.convolve(energy, np.ones(win) / win, mode="same")

    refractory = int(round(REFRACTORY_S * rate))
    candidates = _spaced_maxima(integrated, refractory)
    candidates = candidates[(candidates >= pad) & (candidates < pad + x.size)]
    if candidates.size == 0:
        return PeakList(np.empty(0, dtype=np.int64), rate)

    # adaptive signal/noise running estimates, classic 0.125 update weights
    head = integrated[pad : pad + int(2 * rate)]
    spki = float(head.max()) * 0.5
    npki = float(head.mean()) * 0.5
    threshold = npki + 0.25 * (spki - npki)
    accepted: list[int] = []
    last = -refractory - 1
    for idx in candidates:
        value = integrated[idx]
        if value > threshold and idx - last > refractory:
            accepted.append(int(idx))
            last = int(idx)
            spki = 0.125 * value + 0.875 * spki
        else:
            npki = 0.125 * value + 0.875 * npki
        threshold = npki + 0.25 * (spki - npki)

    radius = int(round(REFINE_RADIUS_S * rate))
    refined: list[int] = []
    for idx in accepted:
        lo = idx - radius
        peak = lo + int(np.argmax(band[lo : idx + radius + 1])) - pad
        peak = min(max(peak, 0), x.size - 1)
        if not refined or peak - refined[-1] > refractory:
            refined.append(peak)
    return PeakList(np.asarray(refined, dtype=np.int64), rate)


# ---------------------------------------------------------------------------
# Peak mapping and target construction


def map_peaks(peaks: PeakList, fps: float) -> np.ndarray:
    """Map ECG sample indices to frame indices: floor(p * fps / rate)."""
    if fps <= 0:
        raise ValueError("frame rate must be positive")
    frames = np.floor(peaks.indices * (fps / peaks.rate)).astype(np.int64)
    unique = np.unique(frames)
    if unique.size < frames.size:
        warnings.warn(
            f"{frames.size - unique.size} ECG peak(s) collapsed onto shared "
            "frames during index mapping",
            stacklevel=2,
        )
    return unique


def build_targets(frame_peaks, total_frames: int, fps: float = 15.0) -> PhaseLabelSeries:
    """Triangular labels over frames: 1 at peaks, -1 at interval midpoints.

    Between consecutive peaks the label falls linearly to -1 at the
    midpoint and rises back to 1. Before the first and after the last
    peak the adjacent slope is extended; once the extension would leave
    [-1, 1] it is clamped and those frames are flagged unlabeled so they
    can be excluded from training.
    """
    peaks = np.asarray(frame_peaks, dtype=np.int64)
    if peaks.size < 2:
        raise InsufficientDataError("need at least two frame peaks to build targets")
    if np.any(np.diff(peaks) <= 0):
        raise ValueError("frame peaks must be strictly increasing")
    if peaks[0] < 0 or peaks[-1] >= total_frames:
        raise ValueError("frame peaks must lie inside [0, total_frames)")

    raw = np.empty(total_frames, dtype=np.float64)
    labeled = np.zeros(total_frames, dtype=bool)
    frames = np.arange(total_frames, dtype=np.float64)

    for a, b in zip(peaks[:-1], peaks[1:]):
        span = float(b - a)
        mid = (a + b) / 2.0
        sel = slice(a, b + 1)
        t = frames[sel]
        raw[sel] = np.where(
            t <= mid,
            1.0 - 4.0 * (t - a) / span,
            -1.0 + 4.0 * (t - mid) / span,
        )
        labeled[sel] = True

    # leading extension: climb toward the first peak at the first segment's slope
    first_span = float(peaks[1] - peaks[0])
    head = frames[: peaks[0]]
    if head.size:
        val = 1.0 - 4.0 * (peaks[0] - head) / first_span
        raw[: peaks[0]] = np.maximum(val, -1.0)
        labeled[: peaks[0]] = val >= -1.0
    # trailing extension: fall away from the last peak at the last segment's slope
    last_span = float(peaks[-1] - peaks[-2])
    tail = frames[peaks[-1] + 1 :]
    if tail.size:
        val = 1.0 - 4.0 * (tail - peaks[-1]) / last_span
        raw[peaks[-1] + 1 :] = np.maximum(val, -1.0)
        labeled[peaks[-1] + 1 :] = val >= -1.0

    return PhaseLabelSeries(
        frame_peaks=peaks,
        raw=raw,
        targets=np.sin(raw),
        labeled=labeled,
        fps=fps,
    )
