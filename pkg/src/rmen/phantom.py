"""Synthetic fluoroscopy-like sequences with known cardiac/respiratory phase.

Each sequence is a smooth background plus two moving structures: a dark
curved polyline ("coronary") that translates horizontally with cardiac
phase, and a soft horizontal edge ("diaphragm") that translates
vertically with respiratory phase. A global low-frequency intensity
drift plus i.i.d. Gaussian noise is layered on top; the drift
deliberately dominates the per-frame mean intensity so that mean-based
baselines see a confounded signal. A matching ECG trace and exact beat
times make the generator double as the evaluation oracle.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import labels
from .errors import ConfigError
from .numerics import Rng

BREATH_HOLD = "breath_hold"
SKIPPED_BEAT = "skipped_beat"
VIDEO_SHIFT = "video_shift"
EVENT_KINDS = (BREATH_HOLD, SKIPPED_BEAT, VIDEO_SHIFT)

DRIFT_HZ = 0.05          # global intensity drift frequency
ECG_WANDER_HZ = 0.3      # ECG baseline wander
ECG_WANDER_AMP = 0.12
R_WAVE_SIGMA_S = 0.010   # ~20 ms wide R bump
T_WAVE_SIGMA_S = 0.050
T_WAVE_DELAY_S = 0.25
T_WAVE_AMP = 0.15


@dataclass(frozen=True)
class IrregularEvent:
    kind: str
    start_frame: int
    duration_frames: int
    magnitude: float = 0.0


@dataclass
class PhantomConfig:
    height: int = 64
    width: int = 64
    frames: int = 600
    fps: float = 15.0
    ecg_rate: float = 300.0
    cardiac_rate_hz: float = 1.2
    resp_rate_hz: float = 0.25
    beat_jitter_sd: float = 0.05
    cardiac_amp_px: float = 2.5
    resp_amp_px: float = 4.0
    noise_sd: float = 0.02
    drift_amp: float = 0.05
    events: list[IrregularEvent] = field(default_factory=list)
    seed: int = 0

    def validate(self) -> None:
        if self.frames < 2:
            raise ConfigError("need at least 2 frames")
        if self.ecg_rate <= self.fps:
            raise ConfigError("ECG rate must exceed the video frame rate")
        if not 0.5 <= self.cardiac_rate_hz <= 2.0:
            warnings.warn(
                f"cardiac rate {self.cardiac_rate_hz} Hz outside the 0.5-2 Hz band",
                stacklevel=2,
            )
        if not 0.2 <= self.resp_rate_hz <= 0.33:
            warnings.warn(
                f"respiratory rate {self.resp_rate_hz} Hz outside the 0.2-0.33 Hz band",
                stacklevel=2,
            )
        for ev in self.events:
            if ev.kind not in EVENT_KINDS:
                raise ConfigError(f"unknown event kind {ev.kind!r}")
            if not (0 <= ev.start_frame < self.frames):
                raise ConfigError(f"event start {ev.start_frame} outside [0, frames)")
            if ev.start_frame + ev.duration_frames > self.frames:
                raise ConfigError("event span extends past the last frame")

    @property
    def duration_s(self) -> float:
        return self.frames / self.fps

    def with_seed(self, seed: int) -> "PhantomConfig":
        return replace(self, seed=seed)


@dataclass
class VideoSequence:
    frames: np.ndarray  # (T, 1, H, W) in [0, 1]
    fps: float
    id: str = ""


@dataclass
class EcgTrace:
    samples: np.ndarray
    rate: float
    true_peaks: np.ndarray | None = None


@dataclass
class GroundTruth:
    beat_times_s: np.ndarray
    resp_extrema_s: np.ndarray
    cardiac_phase: np.ndarray  # per-frame sine-softened triangular reference
    resp_phase: np.ndarray


@dataclass
class PhantomPhases:
    beat_times_s: np.ndarray
    resp_extrema_s: np.ndarray
    cardiac_cycles: np.ndarray  # per-frame continuous cycle count
    resp_cycles: np.ndarray


# ---------------------------------------------------------------------------
# Phase generation


def _truncated_normal(rng: Rng, sd: float) -> float:
    """Normal(0, sd) rejected outside +/-3 sd."""
    if sd == 0.0:
        return 0.0
    while True:
        eps = float(rng.normal(0.0, sd))
        if abs(eps) <= 3.0 * sd:
            return eps


def generate_phases(config: PhantomConfig) -> PhantomPhases:
    """Draw beat times and respiratory phase honoring irregular events."""
    config.validate()
    rng = Rng(config.seed).child("phases")
    duration = config.duration_s
    nominal = 1.0 / config.cardiac_rate_hz

    beats = [0.0]
    while beats[-1] < duration:
        beats.append(beats[-1] + nominal * (1.0 + _truncated_normal(rng, config.beat_jitter_sd)))
    # half-open [0, duration) with a float-accumulation guard
    beat_times = np.asarray([b for b in beats if b < duration - 1e-9])

    # a skipped beat removes one detected beat, doubling that interval
    for ev in config.events:
        if ev.kind != SKIPPED_BEAT:
            continue
        start_s = ev.start_frame / config.fps
        end_s = (ev.start_frame + ev.duration_frames) / config.fps
        inside = np.flatnonzero((beat_times > start_s) & (beat_times < end_s))
        inside = inside[inside > 0]
        if inside.size == 0:
            warnings.warn("skipped_beat event span contains no beat", stacklevel=2)
            continue
        beat_times = np.delete(beat_times, inside[0])

    frame_t = np.arange(config.frames) / config.fps
    cardiac_cycles = _piecewise_cycles(frame_t, beat_times, config.cardiac_rate_hz)

    resp_cycles, resp_extrema = _respiratory_cycles(config, frame_t)
    return PhantomPhases(beat_times, resp_extrema, cardiac_cycles, resp_cycles)


def _piecewise_cycles(t: np.ndarray, anchors: np.ndarray, rate_hz: float) -> np.ndarray:
    """Continuous cycle count hitting integer k exactly at anchors[k]."""
    if anchors.size < 2:
        return t * rate_hz
    cycles = np.interp(t, anchors, np.arange(anchors.size, dtype=np.float64))
    before = t < anchors[0]
    after = t > anchors[-1]
    first_rate = 1.0 / (anchors[1] - anchors[0])
    last_rate = 1.0 / (anchors[-1] - anchors[-2])
    cycles[before] = (t[before] - anchors[0]) * first_rate
    cycles[after] = (anchors.size - 1) + (t[after] - anchors[-1]) * last_rate
    return cycles


def _respiratory_cycles(config: PhantomConfig, frame_t: np.ndarray):
    """Phase advances at the respiratory rate but freezes during breath holds."""
    dt = 1.0 / config.fps
    advance = np.full(config.frames, dt)
    for ev in config.events:
        if ev.kind == BREATH_HOLD:
            advance[ev.start_frame : ev.start_frame + ev.duration_frames] = 0.0
    effective_t = np.concatenate([[0.0], np.cumsum(advance[:-1])])
    cycles = config.resp_rate_hz * effective_t

    # end-inspiration instants: crossings of integer cycle counts
    extrema = []
    for k in range(1, int(np.floor(cycles[-1])) + 1):
        i = int(np.searchsorted(cycles, k))
        if i == 0 or i >= config.frames:
            continue
        frac = (k - cycles[i - 1]) / (cycles[i] - cycles[i - 1])
        extrema.append(frame_t[i - 1] + frac * dt)
    return cycles, np.asarray(extrema)


# ---------------------------------------------------------------------------
# Rendering


def _cardiac_wave(phase_cycles: np.ndarray) -> np.ndarray:
    """Smooth asymmetric displacement waveform (fast upstroke, slow return)."""
    u = 2.0 * np.pi * phase_cycles
    return 0.8 * np.sin(u) + 0.2 * np.sin(2.0 * u)


def _triangular(phase_cycles: np.ndarray) -> np.ndarray:
    """1 at integer phase, -1 at half phase, linear in between."""
    u = np.mod(phase_cycles, 1.0)
    return np.where(u <= 0.5, 1.0 - 4.0 * u, 4.0 * u - 3.0)


def _coronary_template(config: PhantomConfig, rng: Rng, pad: int) -> np.ndarray:
    """Dark curved polyline rendered once on a padded canvas."""
    H, W = config.height, config.width
    hp, wp = H + 2 * pad, W + 2 * pad
    s = np.linspace(0.0, 1.0, 4 * W)
    ph1, ph2 = rng.uniform(0.0, 2.0 * np.pi, 2)
    margin = 0.18 * W
    px = pad + margin + s * (W - 2 * margin)
    py = pad + H * (0.32 + 0.10 * np.sin(2.2 * np.pi * s + ph1)
                    + 0.06 * np.sin(4.4 * np.pi * s + ph2))
    yy, xx = np.mgrid[0:hp, 0:wp]
    d2 = np.full((hp, wp), np.inf)
    for cx, cy in zip(px, py):
        d2 = np.minimum(d2, (xx - cx) ** 2 + (yy - cy) ** 2)
    width = 1.3
    return 0.35 * np.exp(-d2 / (2.0 * width**2))


def _shift_bilinear(img: np.ndarray, pad: int, dy: float, dx: float,
                    out_h: int, out_w: int) -> np.ndarray:
    """Sample a padded image at a fractional offset (positive = move content +y/+x)."""
    y0 = pad - dy
    x0 = pad - dx
    iy, ix = int(np.floor(y0)), int(np.floor(x0))
    fy, fx = y0 - iy, x0 - ix
    a = img[iy : iy + out_h, ix : ix + out_w]
    b = img[iy : iy + out_h, ix + 1 : ix + 1 + out_w]
    c = img[iy + 1 : iy + 1 + out_h, ix : ix + out_w]
    d = img[iy + 1 : iy + 1 + out_h, ix + 1 : ix + 1 + out_w]
    return (a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx
            + c * fy * (1 - fx) + d * fy * fx)


def render_video(config: PhantomConfig, phases: PhantomPhases) -> VideoSequence:
    """Compose background, moving structures, drift, events and noise."""
    config.validate()
    rng = Rng(config.seed).child("video")
    H, W, T = config.height, config.width, config.frames
    pad = int(np.ceil(abs(config.cardiac_amp_px))) + 2

    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    cx = W * float(rng.uniform(0.4, 0.6))
    cy = H * float(rng.uniform(0.4, 0.6))
    background = (0.62
                  - 0.10 * np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2) / (0.5 * W**2)))
                  + 0.04 * (xx / W))

    coronary = _coronary_template(config, rng, pad)
    diaphragm_y = H * float(rng.uniform(0.70, 0.78))

    dx_card = config.cardiac_amp_px * _cardiac_wave(phases.cardiac_cycles)
    dy_resp = config.resp_amp_px * np.sin(2.0 * np.pi * phases.resp_cycles)

    shift_at = np.zeros(T)
    for ev in config.events:
        if ev.kind == VIDEO_SHIFT:
            shift_at[ev.start_frame :] += ev.magnitude
    shift_at = np.round(shift_at).astype(int)

    drift = config.drift_amp * np.sin(2.0 * np.pi * DRIFT_HZ * np.arange(T) / config.fps)
    noise_rng = rng.child("noise")

    frames = np.empty((T, 1, H, W), dtype=np.float64)
    for t in range(T):
        img = background - _shift_bilinear(coronary, pad, 0.0, dx_card[t], H, W)
        edge = 1.0 / (1.0 + np.exp(-(yy - diaphragm_y - dy_resp[t]) / 2.0))
        img = img - 0.22 * edge
        if shift_at[t]:
            img = _integer_shift(img, shift_at[t])
        img = img + drift[t]
        if config.noise_sd > 0:
            img = img + noise_rng.normal(0.0, config.noise_sd, (H, W))
        frames[t, 0] = img
    np.clip(frames, 0.0, 1.0, out=frames)
    # quantize to float32 so the on-disk round trip is bit exact
    frames = frames.astype(np.float32).astype(np.float64)
    return VideoSequence(frames=frames, fps=config.fps)


def _integer_shift(img: np.ndarray, dx: int) -> np.ndarray:
    """Translate columns by dx pixels with zero fill."""
    out = np.zeros_like(img)
    if dx > 0:
        out[:, dx:] = img[:, :-dx]
    elif dx < 0:
        out[:, :dx] = img[:, -dx:]
    else:
        out[:] = img
    return out


# ---------------------------------------------------------------------------
# ECG synthesis and ground truth


def synthesize_ecg(beat_times_s: np.ndarray, config: PhantomConfig) -> EcgTrace:
    """Baseline wander + one narrow R bump per beat + a softer T wave + noise."""
    rng = Rng(config.seed).child("ecg")
    n = int(round(config.duration_s * config.ecg_rate))
    t = np.arange(n) / config.ecg_rate
    wander_phase = float(rng.uniform(0.0, 2.0 * np.pi))
    samples = ECG_WANDER_AMP * np.sin(2.0 * np.pi * ECG_WANDER_HZ * t + wander_phase)
    for b in np.asarray(beat_times_s, dtype=np.float64):
        samples += np.exp(-((t - b) ** 2) / (2.0 * R_WAVE_SIGMA_S**2))
        samples += T_WAVE_AMP * np.exp(
            -((t - b - T_WAVE_DELAY_S) ** 2) / (2.0 * T_WAVE_SIGMA_S**2)
        )
    if config.noise_sd > 0:
        samples += rng.normal(0.0, config.noise_sd, n)
    peaks = np.round(np.asarray(beat_times_s) * config.ecg_rate).astype(np.int64)
    peaks = peaks[(peaks >= 0) & (peaks < n)]
    return EcgTrace(samples=samples, rate=config.ecg_rate, true_peaks=peaks)


def ground_truth(config: PhantomConfig, phases: PhantomPhases,
                 ecg: EcgTrace) -> GroundTruth:
    """Reference phases; cardiac comes from the shared label pipeline."""
    peaks = labels.PeakList(ecg.true_peaks, ecg.rate)
    frame_peaks = labels.map_peaks(peaks, config.fps)
    cardiac = labels.build_targets(frame_peaks, config.frames, config.fps).targets
    resp = np.sin(_triangular(phases.resp_cycles))
    return GroundTruth(
        beat_times_s=phases.beat_times_s,
        resp_extrema_s=phases.resp_extrema_s,
        cardiac_phase=cardiac,
        resp_phase=resp,
    )


def generate_sequence(config: PhantomConfig, seq_id: str = ""):
    """One phantom draw: video, ECG and oracle phases for a single config."""
    phases = generate_phases(config)
    video = render_video(config, phases)
    video.id = seq_id
    ecg = synthesize_ecg(phases.beat_times_s, config)
    truth = ground_truth(config, phases, ecg)
    return video, ecg, truth
