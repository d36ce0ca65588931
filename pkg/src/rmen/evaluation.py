"""Peak detection on decomposed curves and the matching-window metrics.

A detected peak set is compared against reference beat frames by an
optimal one-to-one assignment: maximize the number of pairs within the
matching window, then minimize the summed |offset|. Because both lists
are sorted and the cost is an absolute difference, an optimal
non-crossing assignment exists, so a quadratic dynamic program over the
two lists is exact. Unmatched reference peaks count as missed (the
report keeps the confusion-table naming used alongside false positives);
unmatched detections are false positives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError

DEFAULT_MATCH_WINDOW = 20.0  # total width in frames; offsets up to window/2
PROMINENCE_SCALE = 0.5       # of the MAD-estimated sigma


@dataclass
class PeakMatchReport:
    pairs: list[tuple[int, int, float]]  # (ref_frame, pred_frame, offset)
    missed: int
    false_positives: int
    total_ref: int
    window: float

    @property
    def matched(self) -> int:
        return len(self.pairs)

    @property
    def total_abs_offset(self) -> float:
        return float(sum(abs(p[2]) for p in self.pairs))

    @property
    def mean_abs_offset(self) -> float:
        if not self.pairs:
            return float("nan")
        return self.total_abs_offset / len(self.pairs)


# ---------------------------------------------------------------------------
# Peak detection


def median_abs_deviation_scale(x: np.ndarray) -> float:
    """MAD rescaled to estimate a normal sigma (factor 1.4826)."""
    med = np.median(x)
    return float(np.median(np.abs(x - med)) * 1.4826)


def _prominence(x: np.ndarray, peak: int) -> float:
    """Height above the lowest contour separating the peak from higher ground."""
    h = x[peak]
    left_min = h
    i = peak - 1
    while i >= 0 and x[i] <= h:
        left_min = min(left_min, x[i])
        i -= 1
    if i < 0:
        left_min = min(left_min, np.min(x[: peak + 1]))
    right_min = h
    i = peak + 1
    while i < x.size and x[i] <= h:
        right_min = min(right_min, x[i])
        i += 1
    if i >= x.size:
        right_min = min(right_min, np.min(x[peak:]))
    return float(h - max(left_min, right_min))


def detect_peaks(curve, fps: float, min_distance: int | None = None,
                 min_prominence: float | None = None,
                 high_cutoff_hz: float = 2.0) -> np.ndarray:
    """Local maxima thinned by spacing and topographic prominence.

    A sample is a candidate when strictly above its left neighbour and at
    least its right one. Candidates closer than `min_distance` are thinned
    greedily keeping the tallest (earlier index wins ties). Peaks whose
    prominence falls below `min_prominence` are dropped; the default
    threshold scales with the curve's median absolute deviation so it
    tracks whatever amplitude the regressor produced.
    """
    x = np.asarray(curve, dtype=np.float64)
    if min_distance is None:
        min_distance = max(1, int(np.floor(fps / high_cutoff_hz)))
    if min_distance < 1:
        raise ValueError("min_distance must be at least 1")
    if min_prominence is None:
        min_prominence = PROMINENCE_MAD_SCALE / 1.4826 * 1.4826 * median_abs_deviation_scale(x)
    if x.size < 3:
        return np.empty(0, dtype=np.int64)

    candidates = np.flatnonzero((x[1:-1] > x[:-2]) & (x[1:-1] >= x[2:])) + 1
    if candidates.size == 0:
        return np.empty(0, dtype=np.int64)

    # greedy keep-highest within min_distance; ties resolved to lower index
    order = candidates[np.lexsort((candidates, -x[candidates]))]
    kept: list[int] = []
    for idx in order:
        if all(abs(int(idx) - k) >= min_distance for k in kept):
            kept.append(int(idx))
    kept.sort()

    return np.asarray(
        [p for p in kept if _prominence(x, p) >= min_prominence], dtype=np.int64
    )


# ---------------------------------------------------------------------------
# Matching


def match_peaks(ref, pred, window: float = DEFAULT_MATCH_WINDOW) -> PeakMatchReport:
    """Optimal one-to-one matching with |offset| <= window/2.

    Maximizes matched pairs, then minimizes total |offset|; exact via a
    dynamic program over the two sorted lists.
    """
    a = np.asarray(ref, dtype=np.float64)
    b = np.asarray(pred, dtype=np.float64)
    if np.any(np.diff(a) < 0) or np.any(np.diff(b) < 0):
        raise ValueError("peak lists must be sorted")
    tol = window / 2.0
    m, n = a.size, b.size

    # value[i][j]: best (-matches, offset_sum) for suffixes a[i:], b[j:]
    value = [[(0, 0.0)] * (n + 1) for _ in range(m + 1)]
    for i in range(m - 1, -1, -1):
        for j in range(n - 1, -1, -1):
            best = value[i + 1][j]  # a[i] missed
            cand = value[i][j + 1]  # b[j] spurious
            if cand < best:
                best = cand
            off = abs(a[i] - b[j])
            if off <= tol:
                down = value[i + 1][j + 1]
                cand = (down[0] - 1, down[1] + off)
                if cand < best:
                    best = cand
            value[i][j] = best

    pairs: list[tuple[int, int, float]] = []
    i = j = 0
    while i < m and j < n:
        here = value[i][j]
        off = abs(a[i] - b[j])
        if off <= tol:
            down = value[i + 1][j + 1]
            if (down[0] - 1, down[1] + off) == here:
                pairs.append((int(a[i]), int(b[j]), float(b[j] - a[i])))
                i += 1
                j += 1
                continue
        if value[i + 1][j] == here:
            i += 1
        else:
            j += 1

    matched = len(pairs)
    return PeakMatchReport(
        pairs=pairs,
        missed=m - matched,
        false_positives=n - matched,
        total_ref=m,
        window=window,
    )


# ---------------------------------------------------------------------------
# Run-level aggregation


@dataclass
class SequenceEval:
    id: str
    report: PeakMatchReport
    detected: np.ndarray


@dataclass
class RunEval:
    sequences: list[SequenceEval]
    window: float

    @property
    def matched(self) -> int:
        return sum(s.report.matched for s in self.sequences)

    @property
    def missed(self) -> int:
        return sum(s.report.missed for s in self.sequences)

    @property
    def false_positives(self) -> int:
        return sum(s.report.false_positives for s in self.sequences)

    @property
    def total_ref(self) -> int:
        return sum(s.report.total_ref for s in self.sequences)

    @property
    def mean_abs_offset(self) -> float:
        """Match-count-weighted mean offset across sequences."""
        if self.matched == 0:
            return float("nan")
        return sum(s.report.total_abs_offset for s in self.sequences) / self.matched

    def csv_rows(self):
        def fmt(report: PeakMatchReport, seq_id: str):
            off = report.mean_abs_offset
            return [
                seq_id,
                report.matched,
                report.missed,
                report.false_positives,
                report.total_ref,
                "" if np.isnan(off) else repr(off),
            ]

        for s in self.sequences:
            yield fmt(s.report, s.id)
        total = [
            "TOTAL",
            self.matched,
            self.missed,
            self.false_positives,
            self.total_ref,
            "" if np.isnan(self.mean_abs_offset) else repr(self.mean_abs_offset),
        ]
        yield total


EVAL_CSV_HEADER = ["id", "matched", "missed", "false_positives", "total_ref",
                   "mean_abs_offset"]


def evaluate_run(entries, fps: float, window: float = DEFAULT_MATCH_WINDOW,
                 min_distance: int | None = None,
                 min_prominence: float | None = None) -> RunEval:
    """Detect peaks per cardiac curve and match against reference frames.

    entries: iterable of (sequence id, reference beat frames, cardiac curve).
    """
    sequences = []
    for seq_id, ref_frames, cardiac in entries:
        detected = detect_peaks(cardiac, fps, min_distance, min_prominence)
        report = match_peaks(np.asarray(ref_frames), detected, window)
        sequences.append(SequenceEval(seq_id, report, detected))
    if not sequences:
        raise InsufficientDataError("no sequences to evaluate")
    return RunEval(sequences, window)
