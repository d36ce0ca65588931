"""The repetitive-motion estimation network and its training loop.

Architecture, applied to a window of consecutive frames:

1. weight-shared 5-block Conv2D encoder (ReLU), 2x2 max pool after
   blocks 1, 3 and 5, so spatial extent shrinks by 8;
2. two stacked ConvLSTM layers over the encoded frame sequence, states
   starting at zero;
3. one same-padded Conv3D fusing channels across time, ReLU;
4. per-frame flatten and a 3-layer dense head (ReLU + dropout 0.5 after
   the first two layers, linear output) regressing one phase value per
   frame.

Training minimizes mean squared error with Adam; sequence-level
inference slides windows over the video and keeps the per-frame median
of all window predictions.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import numerics as nm
from .errors import ConfigError, InsufficientDataError, NumericError
from .numerics import Rng, Tensor
from .phantom import VideoSequence


@dataclass(frozen=True)
class RmenConfig:
    window_len: int = 16
    stride: int = 1
    encoder_channels: tuple[int, ...] = (8, 16, 16, 32, 32)
    encoder_kernel: int = 3
    convlstm_hidden: tuple[int, ...] = (32, 32)
    convlstm_kernel: int = 3
    conv3d_out_channels: int = 8
    conv3d_kernel: int = 3
    dense_widths: tuple[int, ...] = (64, 32, 1)
    dropout_rate: float = 0.5
    learning_rate: float = 1e-3
    batch_size: int = 4
    max_epochs: int = 15
    patience: int = 10
    seed: int = 0
    input_height: int = 64
    input_width: int = 64
    train_stride: int = 8

    def validate(self) -> None:
        if len(self.encoder_channels) != 5:
            raise ConfigError("encoder needs exactly 5 conv blocks")
        if self.dense_widths[-1] != 1:
            raise ConfigError("dense head must end in a single output")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout rate must be in [0, 1)")
        if self.window_len < 2:
            raise ConfigError("window length must be at least 2")
        if self.input_height % 8 or self.input_width % 8:
            raise ConfigError("input extent must be divisible by 8 (three 2x pools)")
        if self.stride < 1 or self.train_stride < 1:
            raise ConfigError("strides must be positive")

    @property
    def pooled_hw(self) -> tuple[int, int]:
        return self.input_height // 8, self.input_width // 8

    @property
    def flat_width(self) -> int:
        h, w = self.pooled_hw
        return h * w * self.conv3d_out_channels


GATES = ("i", "f", "o", "g")


def _glorot(rng: Rng, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


def init_parameters(config: RmenConfig, rng: Rng | None = None) -> dict[str, Tensor]:
    """Glorot-uniform kernels, zero biases except the forget gate at 1."""
    config.validate()
    rng = rng or Rng(config.seed).child("init")
    k = config.encoder_kernel
    params: dict[str, np.ndarray] = {}

    c_in = 1
    for i, c_out in enumerate(config.encoder_channels, start=1):
        params[f"enc{i}.kernel"] = _glorot(
            rng, (k, k, c_in, c_out), k * k * c_in, k * k * c_out
        )
        params[f"enc{i}.bias"] = np.zeros(c_out)
        c_in = c_out

    lk = config.convlstm_kernel
    for i, hidden in enumerate(config.convlstm_hidden, start=1):
        for gate in GATES:
            params[f"lstm{i}.w_x{gate}"] = _glorot(
                rng, (lk, lk, c_in, hidden), lk * lk * c_in, lk * lk * hidden
            )
            params[f"lstm{i}.w_h{gate}"] = _glorot(
                rng, (lk, lk, hidden, hidden), lk * lk * hidden, lk * lk * hidden
            )
            params[f"lstm{i}.b_{gate}"] = (
                np.ones(hidden) if gate == "f" else np.zeros(hidden)
            )
        c_in = hidden

    fk = config.conv3d_kernel
    f_out = config.conv3d_out_channels
    params["fusion.kernel"] = _glorot(
        rng, (fk, fk, fk, c_in, f_out), fk**3 * c_in, fk**3 * f_out
    )
    params["fusion.bias"] = np.zeros(f_out)

    width = config.flat_width
    for i, out in enumerate(config.dense_widths, start=1):
        params[f"head{i}.weight"] = _glorot(rng, (width, out), width, out)
        params[f"head{i}.bias"] = np.zeros(out)
        width = out

    return {name: Tensor(arr, requires_grad=True) for name, arr in params.items()}


def parameter_shapes(config: RmenConfig) -> dict[str, tuple[int, ...]]:
    """Expected tensor shapes; used to vet loaded checkpoints."""
    ref = init_parameters(config, Rng(0).child("shapes"))
    return {name: tuple(t.data.shape) for name, t in ref.items()}


# ---------------------------------------------------------------------------
# Forward pass


def _encode_frames(params, frames: Tensor, config: RmenConfig) -> Tensor:
    """Shared encoder on a stack of frames: (N, H, W, 1) -> (N, h, w, C)."""
    x = frames
    for i in range(1, 6):
        x = nm.relu(
            nm.conv2d_nhwc(x, params[f"enc{i}.kernel"], params[f"enc{i}.bias"])
        )
        if i in (1, 3, 5):
            x = nm.maxpool2_nhwc(x)
    return x


def _convlstm_layer(params, prefix: str, xs: Tensor, hidden: int) -> Tensor:
    """Run one ConvLSTM layer over (B, T, h, w, C); states start at zero.

    Gate pre-activations fuse the four per-gate kernels into one conv on
    the input and one on the previous hidden state:
      i = sigmoid(wxi*x + whi*h + bi)   f = sigmoid(wxf*x + whf*h + bf)
      o = sigmoid(wxo*x + who*h + bo)   g = tanh(wxg*x + whg*h + bg)
      c = f.c_prev + i.g                h = o.tanh(c)
    """
    b, t, h, w, _ = xs.shape
    w_x = nm.concat_last([params[f"{prefix}.w_x{g}"] for g in GATES])
    w_h = nm.concat_last([params[f"{prefix}.w_h{g}"] for g in GATES])
    bias = nm.concat_last([params[f"{prefix}.b_{g}"] for g in GATES])
    no_bias = Tensor(np.zeros(4 * hidden))

    h_t = Tensor(np.zeros((b, h, w, hidden)))
    c_t = Tensor(np.zeros((b, h, w, hidden)))
    outputs = []
    for step in range(t):
        x_t = nm.take_step(xs, step)
        gates = nm.add(
            nm.conv2d_nhwc(x_t, w_x, bias),
            nm.conv2d_nhwc(h_t, w_h, no_bias),
        )
        i_g = nm.sigmoid(nm.slice_last(gates, 0, hidden))
        f_g = nm.sigmoid(nm.slice_last(gates, hidden, 2 * hidden))
        o_g = nm.sigmoid(nm.slice_last(gates, 2 * hidden, 3 * hidden))
        g_g = nm.tanh(nm.slice_last(gates, 3 * hidden, 4 * hidden))
        c_t = nm.add(nm.mul(f_g, c_t), nm.mul(i_g, g_g))
        h_t = nm.mul(o_g, nm.tanh(c_t))
        outputs.append(h_t)
    return nm.stack_steps(outputs, axis=1)


def _tail_forward(params, feats: Tensor, config: RmenConfig, training: bool,
                  rng: Rng | None, collect_fusion: bool = False):
    """ConvLSTM stack + Conv3D fusion + dense head on encoded features.

    feats: (B, T, h, w, C). Returns (B, T) predictions and, optionally,
    the post-ReLU fusion activations as a plain array (B, T, h, w, F).
    """
    x = feats
    for i, hidden in enumerate(config.convlstm_hidden, start=1):
        x = _convlstm_layer(params, f"lstm{i}", x, hidden)
    nm.ensure_finite("convlstm", x.data)

    fused = nm.relu(
        nm.conv3d_nthwc(x, params["fusion.kernel"], params["fusion.bias"])
    )
    nm.ensure_finite("conv3d fusion", fused.data)
    fusion_maps = fused.data if collect_fusion else None

    b, t = feats.shape[0], feats.shape[1]
    x = nm.reshape(fused, (b, t, config.flat_width))
    drop_rng = rng if rng is not None else Rng(config.seed).child("dropout")
    n_dense = len(config.dense_widths)
    for i in range(1, n_dense + 1):
        x = nm.dense(x, params[f"head{i}.weight"], params[f"head{i}.bias"])
        if i < n_dense:
            x = nm.relu(x)
            x = nm.dropout(x, config.dropout_rate, drop_rng, training)
    nm.ensure_finite("dense head", x.data)
    preds = nm.reshape(x, (b, t))
    return preds, fusion_maps


def forward(params, windows, config: RmenConfig, training: bool = False,
            rng: Rng | None = None) -> Tensor:
    """Predict one phase value per frame for (B, W_len, 1, H, W) windows."""
    arr = windows if isinstance(windows, Tensor) else Tensor(np.asarray(windows, dtype=np.float64))
    if arr.ndim == 4:
        arr = nm.reshape(arr, (1,) + arr.shape)
    b, t, c, hgt, wid = arr.shape
    if c != 1:
        raise ConfigError("windows must be single-channel")
    if hgt % 8 or wid % 8:
        raise ConfigError("window extent must be divisible by 8")
    frames = nm.reshape(arr, (b * t, 1, hgt, wid))
    frames = nm.transpose(frames, (0, 2, 3, 1))
    enc = _encode_frames(params, frames, config)
    nm.ensure_finite("encoder", enc.data)
    _, eh, ew, ec = enc.shape
    feats = nm.reshape(enc, (b, t, eh, ew, ec))
    preds, _ = _tail_forward(params, feats, config, training, rng)
    return preds


def mse_loss(preds: Tensor, targets: np.ndarray) -> Tensor:
    diff = nm.sub(preds, np.asarray(targets, dtype=np.float64))
    return nm.mean_all(nm.mul(diff, diff))


# ---------------------------------------------------------------------------
# Windowing


@dataclass
class WindowSet:
    """Sliding windows over one or more sequences, materialized lazily."""

    sequences: list[tuple[np.ndarray, np.ndarray]]  # (frames f32 (T,1,H,W), targets (T,))
    windows: list[tuple[int, int]]  # (sequence index, start frame)
    window_len: int

    def __len__(self) -> int:
        return len(self.windows)

    def batch(self, picks) -> tuple[np.ndarray, np.ndarray]:
        xs, ys = [], []
        for w in picks:
            seq_idx, start = self.windows[w]
            frames, targets = self.sequences[seq_idx]
            xs.append(frames[start : start + self.window_len])
            ys.append(targets[start : start + self.window_len])
        return np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)


def build_window_set(sequences, window_len: int, stride: int,
                     labeled_masks=None) -> WindowSet:
    """Index fully-labeled sliding windows across sequences.

    sequences: list of (frames (T,1,H,W), per-frame targets (T,)).
    Windows touching any unlabeled frame are dropped.
    """
    stored = []
    windows = []
    for s, (frames, targets) in enumerate(sequences):
        t_total = frames.shape[0]
        stored.append((np.asarray(frames, dtype=np.float32), np.asarray(targets)))
        mask = None if labeled_masks is None else labeled_masks[s]
        for start in range(0, t_total - window_len + 1, stride):
            if mask is not None and not mask[start : start + window_len].all():
                continue
            windows.append((s, start))
    return WindowSet(stored, windows, window_len)


# ---------------------------------------------------------------------------
# Training


class Adam:
    """Adam with bias correction; beta1=0.9, beta2=0.999, eps=1e-8."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


@dataclass
class EpochStats:
    epoch: int
    train_mse: float
    val_mse: float


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    history: list[EpochStats]
    best_epoch: int
    best_val_mse: float


def evaluate_mse(params, window_set: WindowSet, config: RmenConfig) -> float:
    """Mean squared error over every frame of every window, no dropout."""
    if len(window_set) == 0:
        raise InsufficientDataError("no windows to evaluate")
    frozen = {k: p.detach() for k, p in params.items()}
    total, count = 0.0, 0
    for lo in range(0, len(window_set), max(1, config.batch_size)):
        picks = range(lo, min(lo + config.batch_size, len(window_set)))
        xs, ys = window_set.batch(picks)
        preds = forward(frozen, xs, config, training=False)
        total += float(np.sum((preds.data - ys) ** 2))
        count += ys.size
    return total / count


def train(params: dict[str, Tensor], train_set: WindowSet, val_set: WindowSet,
          config: RmenConfig, log=None) -> TrainResult:
    """Adam + MSE with early stopping on validation error."""
    config.validate()
    if len(train_set) == 0:
        raise InsufficientDataError("training set has no usable windows")
    shuffle_rng = Rng(config.seed).child("shuffle")
    dropout_rng = Rng(config.seed).child("dropout")
    optimizer = Adam(params, config.learning_rate)

    history: list[EpochStats] = []
    best_val = np.inf
    best_epoch = -1
    best_data = {k: p.data.copy() for k, p in params.items()}
    stale = 0

    for epoch in range(config.max_epochs):
        order = shuffle_rng.permutation(len(train_set))
        epoch_loss, n_batches = 0.0, 0
        for lo in range(0, len(order), config.batch_size):
            picks = order[lo : lo + config.batch_size]
            xs, ys = train_set.batch(picks)
            optimizer.zero_grad()
            try:
                preds = forward(params, xs, config, training=True, rng=dropout_rng)
            except NumericError as exc:
                raise NumericError(
                    f"training diverged at epoch {epoch}, batch {n_batches}: {exc}"
                ) from exc
            loss = mse_loss(preds, ys)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(
                    f"training diverged at epoch {epoch}, batch {n_batches}"
                )
            loss.backward()
            optimizer.step()
            epoch_loss += value
            n_batches += 1
        try:
            val_mse = evaluate_mse(params, val_set, config) if len(val_set) else np.nan
        except NumericError as exc:
            raise NumericError(f"validation diverged after epoch {epoch}: {exc}") from exc
        stats = EpochStats(epoch, epoch_loss / max(1, n_batches), val_mse)
        history.append(stats)
        if log:
            log(stats)
        score = val_mse if np.isfinite(val_mse) else stats.train_mse
        if score < best_val:
            best_val = score
            best_epoch = epoch
            best_data = {k: p.data.copy() for k, p in params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    best_params = {
        k: Tensor(best_data[k], requires_grad=True) for k in params
    }
    return TrainResult(best_params, history, best_epoch, best_val)


# ---------------------------------------------------------------------------
# Sliding-window inference


@dataclass
class PredictionCurve:
    """Per-frame prediction distributions and their medians."""

    median: np.ndarray
    q_counts: np.ndarray
    values: list[np.ndarray]
    fps: float


def _encode_video_array(params, frames: np.ndarray, config: RmenConfig,
                        chunk: int = 64) -> np.ndarray:
    """Encode every frame once, in chunks; returns (T, h, w, C)."""
    frozen = {k: p.detach() for k, p in params.items()}
    out = []
    for lo in range(0, frames.shape[0], chunk):
        part = np.asarray(frames[lo : lo + chunk], dtype=np.float64)
        x = Tensor(np.ascontiguousarray(part.transpose(0, 2, 3, 1)))
        out.append(_encode_frames(frozen, x, config).data)
    return np.concatenate(out, axis=0)


def predict_sequence(params, video: VideoSequence, config: RmenConfig,
                     collect_fusion: bool = False):
    """Slide windows over a sequence and keep the per-frame median.

    The frame encoder is applied once per frame (weights are shared, so
    every window sees identical frame encodings) and only the recurrent
    tail runs per window. Returns a PredictionCurve, plus the per-frame
    median fusion-channel activations (T, F) when `collect_fusion`.
    """
    config.validate()
    t_total = video.frames.shape[0]
    if t_total < config.window_len:
        raise InsufficientDataError(
            f"sequence of {t_total} frames shorter than window {config.window_len}"
        )
    frozen = {k: p.detach() for k, p in params.items()}
    enc = _encode_video_array(params, video.frames, config)
    starts = list(range(0, t_total - config.window_len + 1, config.stride))
    per_frame: list[list[float]] = [[] for _ in range(t_total)]
    fusion_hits: list[list[np.ndarray]] | None = (
        [[] for _ in range(t_total)] if collect_fusion else None
    )

    group = max(1, 256 // config.window_len)
    for lo in range(0, len(starts), group):
        chunk = starts[lo : lo + group]
        feats = Tensor(np.stack([enc[s : s + config.window_len] for s in chunk]))
        preds, fusion = _tail_forward(
            frozen, feats, config, training=False, rng=None,
            collect_fusion=collect_fusion,
        )
        for row, start in enumerate(chunk):
            for offset in range(config.window_len):
                per_frame[start + offset].append(preds.data[row, offset])
                if fusion_hits is not None:
                    fusion_hits[start + offset].append(
                        fusion[row, offset].mean(axis=(0, 1))
                    )

    median = np.asarray([float(np.median(v)) for v in per_frame])
    counts = np.asarray([len(v) for v in per_frame], dtype=np.int64)
    curve = PredictionCurve(
        median=median,
        q_counts=counts,
        values=[np.asarray(v) for v in per_frame],
        fps=video.fps,
    )
    if not collect_fusion:
        return curve
    series = np.stack(
        [np.median(np.stack(h), axis=0) for h in fusion_hits]
    )
    return curve, series


# ---------------------------------------------------------------------------
# Gradient verification and feature export


MINI_CONFIG = RmenConfig(
    window_len=3,
    encoder_channels=(2, 2, 2, 2, 2),
    convlstm_hidden=(2, 2),
    conv3d_out_channels=2,
    dense_widths=(4, 3, 1),
    input_height=8,
    input_width=8,
    seed=1,
)


@dataclass
class GradcheckReport:
    group_errors: dict[str, float]
    max_error: float
    tolerance: float
    elapsed_s: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = self.max_error < self.tolerance

    def lines(self):
        for name in sorted(self.group_errors):
            yield f"{name}: {self.group_errors[name]:.3e}"
        verdict = "PASS" if self.passed else "FAIL"
        yield f"max {self.max_error:.3e} vs tolerance {self.tolerance:.0e}: {verdict}"


def gradcheck(config: RmenConfig = MINI_CONFIG, rng: Rng | None = None,
              tolerance: float = 1e-4) -> GradcheckReport:
    """Full-model analytic gradients against central finite differences.

    Dropout stays active during the check; the mask is replayed by
    reseeding the dropout stream on every loss evaluation.
    """
    started = time.time()
    rng = rng or Rng(config.seed)
    params = init_parameters(config, rng.child("init"))
    # jitter biases off zero: a unit whose inputs are all dropped or dead
    # would otherwise sit exactly on the relu kink, where central
    # differences straddle the non-differentiable point
    jitter = rng.child("bias-jitter")
    for name, p in params.items():
        if ".b" in name:
            p.data += jitter.uniform(0.05, 0.3, p.data.shape) * np.where(
                jitter.random(p.data.shape) < 0.5, -1.0, 1.0
            )
    window = Tensor(
        rng.child("window").random(
            (1, config.window_len, 1, config.input_height, config.input_width)
        ),
        requires_grad=True,
    )
    targets = rng.child("targets").uniform(-0.8, 0.8, (1, config.window_len))

    def build_loss() -> Tensor:
        return mse_loss(
            forward(params, window, config, training=True,
                    rng=Rng(config.seed).child("gradcheck-dropout")),
            targets,
        )

    checked = dict(params)
    checked["input.window"] = window
    errors = nm.check_gradients(build_loss, checked)
    return GradcheckReport(
        group_errors=errors,
        max_error=max(errors.values()),
        tolerance=tolerance,
        elapsed_s=time.time() - started,
    )


def export_feature_maps(params, window: np.ndarray, config: RmenConfig,
                        out_dir) -> list[str]:
    """Write fusion-layer activations as 8-bit PGM files plus an index CSV.

    One image per (channel, frame); each channel is min-max normalized
    over its full time extent, constant channels map to mid gray.
    """
    import csv
    import os

    os.makedirs(out_dir, exist_ok=True)
    arr = np.asarray(window, dtype=np.float64)
    if arr.ndim == 4:
        arr = arr[None]
    frozen = {k: p.detach() for k, p in params.items()}
    frames = Tensor(
        np.ascontiguousarray(
            arr.reshape(-1, 1, arr.shape[-2], arr.shape[-1]).transpose(0, 2, 3, 1)
        )
    )
    enc = _encode_frames(frozen, frames, config)
    feats = nm.reshape(enc, (arr.shape[0], arr.shape[1]) + enc.shape[1:])
    _, fusion = _tail_forward(frozen, feats, config, training=False, rng=None,
                              collect_fusion=True)
    maps = fusion[0]  # (T, h, w, F)
    t_len, _, _, channels = maps.shape

    written = []
    index_rows = []
    for c in range(channels):
        chan = maps[:, :, :, c]
        lo, hi = chan.min(), chan.max()
        for t in range(t_len):
            if hi > lo:
                img = (chan[t] - lo) / (hi - lo)
            else:
                img = np.full_like(chan[t], 0.5)
            name = f"feat_c{c}_t{t}.pgm"
            _write_pgm(os.path.join(out_dir, name), img)
            written.append(name)
            index_rows.append((name, c, t))
    with open(os.path.join(out_dir, "index.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "channel", "frame"])
        writer.writerows(index_rows)
    return written


def _write_pgm(path, img: np.ndarray) -> None:
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
