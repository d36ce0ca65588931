"""On-disk dataset formats and the phantom dataset writer.

Video files are little-endian binary: magic ``RMVD``, u32 version=1,
u32 T, u32 H, u32 W, then T*H*W float32 values row-major. ECG, peak and
ground-truth files are plain CSV. A ``manifest.json`` ties the pieces of
one dataset split together with paths relative to the manifest. All
writers go through a temp-file/rename so partially written files never
appear under their final name.
"""

from __future__ import annotations

import csv
import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass

import numpy as np

from .errors import FormatError
from .phantom import (
    EcgTrace,
    GroundTruth,
    IrregularEvent,
    PhantomConfig,
    VideoSequence,
    generate_sequence,
)

VIDEO_MAGIC = b"RMVD"
VIDEO_VERSION = 1


def atomic_write(path, payload: bytes) -> None:
    """Write bytes to `path` via a temp file in the same directory."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# Video format


def write_video(video: VideoSequence, path) -> None:
    t, c, h, w = video.frames.shape
    if c != 1:
        raise FormatError("video files store single-channel frames")
    header = VIDEO_MAGIC + struct.pack("<IIII", VIDEO_VERSION, t, h, w)
    body = video.frames[:, 0].astype("<f4").tobytes()
    atomic_write(path, header + body)


def read_video(path, fps: float = 15.0, seq_id: str = "") -> VideoSequence:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 20:
        raise FormatError(f"{path}: truncated header")
    if blob[:4] != VIDEO_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    version, t, h, w = struct.unpack("<IIII", blob[4:20])
    if version != VIDEO_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = 20 + 4 * t * h * w
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=20).astype(np.float64)
    frames = data.reshape(t, 1, h, w)
    return VideoSequence(frames=frames, fps=fps, id=seq_id)


# ---------------------------------------------------------------------------
# CSV formats


def _csv_bytes(header: list[str], rows) -> bytes:
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode("utf-8")


def write_ecg(ecg: EcgTrace, path) -> None:
    rows = ((i, repr(float(v))) for i, v in enumerate(ecg.samples))
    atomic_write(path, _csv_bytes(["sample_index", "value"], rows))


def read_ecg(path, rate: float) -> EcgTrace:
    samples = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["sample_index", "value"]:
            raise FormatError(f"{path}: unexpected ECG header {header}")
        for row in reader:
            samples.append(float(row[1]))
    return EcgTrace(samples=np.asarray(samples), rate=rate)


def write_peaks(peaks: np.ndarray, path) -> None:
    atomic_write(path, _csv_bytes(["peak_sample_index"], ((int(p),) for p in peaks)))


def read_peaks(path) -> np.ndarray:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["peak_sample_index"]:
            raise FormatError(f"{path}: unexpected peaks header {header}")
        for row in reader:
            out.append(int(row[0]))
    return np.asarray(out, dtype=np.int64)


def write_truth(truth: GroundTruth, path) -> None:
    rows = (
        (i, repr(float(c)), repr(float(r)))
        for i, (c, r) in enumerate(zip(truth.cardiac_phase, truth.resp_phase))
    )
    atomic_write(path, _csv_bytes(["frame", "cardiac_phase", "resp_phase"], rows))


def read_truth(path):
    cardiac, resp = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["frame", "cardiac_phase", "resp_phase"]:
            raise FormatError(f"{path}: unexpected truth header {header}")
        for row in reader:
            cardiac.append(float(row[1]))
            resp.append(float(row[2]))
    return np.asarray(cardiac), np.asarray(resp)


def write_curve_csv(path, columns: dict[str, np.ndarray]) -> None:
    """Generic frame-indexed CSV with repr-formatted float columns."""
    names = list(columns)
    length = len(next(iter(columns.values())))
    rows = (
        [i] + [repr(float(columns[n][i])) for n in names] for i in range(length)
    )
    atomic_write(path, _csv_bytes(["frame"] + names, rows))


def read_curve_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "frame":
            raise FormatError(f"{path}: unexpected curve header {header}")
        cols: dict[str, list[float]] = {name: [] for name in header[1:]}
        for row in reader:
            for name, value in zip(header[1:], row[1:]):
                cols[name].append(float(value))
    return {name: np.asarray(values) for name, values in cols.items()}


# ---------------------------------------------------------------------------
# Dataset manifest


@dataclass
class SequenceRecord:
    """Manifest entry; paths are relative to the manifest file."""

    id: str
    video: str
    ecg: str
    peaks: str
    truth: str
    fps: float
    ecg_rate: float
    events: list[dict]


def write_dataset(configs: list[tuple[str, PhantomConfig]], out_dir) -> str:
    """Render every (id, config) pair into `out_dir`; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    records = []
    for seq_id, config in configs:
        video, ecg, truth = generate_sequence(config, seq_id)
        write_video(video, os.path.join(out_dir, f"{seq_id}.rmvd"))
        write_ecg(ecg, os.path.join(out_dir, f"{seq_id}_ecg.csv"))
        write_peaks(ecg.true_peaks, os.path.join(out_dir, f"{seq_id}_peaks.csv"))
        write_truth(truth, os.path.join(out_dir, f"{seq_id}_truth.csv"))
        records.append(
            SequenceRecord(
                id=seq_id,
                video=f"{seq_id}.rmvd",
                ecg=f"{seq_id}_ecg.csv",
                peaks=f"{seq_id}_peaks.csv",
                truth=f"{seq_id}_truth.csv",
                fps=config.fps,
                ecg_rate=config.ecg_rate,
                events=[asdict(ev) for ev in config.events],
            )
        )
    manifest_path = os.path.join(out_dir, "manifest.json")
    atomic_write_text(
        manifest_path, json.dumps([asdict(r) for r in records], indent=2) + "\n"
    )
    return manifest_path


def read_manifest(manifest_path) -> list[SequenceRecord]:
    with open(manifest_path) as fh:
        try:
            entries = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{manifest_path}: invalid JSON ({exc})") from exc
    if not isinstance(entries, list):
        raise FormatError(f"{manifest_path}: manifest must be a JSON array")
    records = []
    for e in entries:
        try:
            records.append(SequenceRecord(**e))
        except TypeError as exc:
            raise FormatError(f"{manifest_path}: bad manifest entry ({exc})") from exc
    return records


def load_record(manifest_path, record: SequenceRecord):
    """Read one sequence's files back into memory."""
    base = os.path.dirname(os.fspath(manifest_path))
    video = read_video(os.path.join(base, record.video), record.fps, record.id)
    ecg = read_ecg(os.path.join(base, record.ecg), record.ecg_rate)
    ecg.true_peaks = read_peaks(os.path.join(base, record.peaks))
    cardiac, resp = read_truth(os.path.join(base, record.truth))
    events = [IrregularEvent(**ev) for ev in record.events]
    return video, ecg, cardiac, resp, events
