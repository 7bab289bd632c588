"""One-pass evaluation: initialise on the first ground-truth box, never re-initialise."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..imaging import iou

log = logging.getLogger(__name__)

THRESHOLDS = np.round(np.arange(21) * 0.05, 2)


def success_curve(ious, thresholds=THRESHOLDS):
    """Fraction of frames whose overlap is strictly above each threshold."""
    ious = np.asarray(ious, dtype=np.float64)
    return np.array([float(np.mean(ious > t)) for t in thresholds])


def auc(ious, thresholds=THRESHOLDS):
    return float(np.mean(success_curve(ious, thresholds)))


@dataclass
class SequenceResult:
    name: str
    boxes: np.ndarray
    ious: np.ndarray
    success: np.ndarray
    auc: float
    mean_iou: float
    fps: float
    feat_ms: float
    failed: bool = False
    error: str = ""


@dataclass
class EvalReport:
    sequences: list = field(default_factory=list)
    thresholds: np.ndarray = field(default_factory=lambda: THRESHOLDS.copy())

    @property
    def mean_auc(self):
        return float(np.mean([s.auc for s in self.sequences])) if self.sequences else 0.0

    def subset(self, names):
        names = set(names)
        return EvalReport([s for s in self.sequences if s.name in names], self.thresholds)

    def rows(self, timing=True):
        out = []
        for s in self.sequences:
            row = [s.name, len(s.boxes), f"{s.auc:.6f}", f"{s.mean_iou:.6f}"]
            row += [f"{s.fps:.2f}", f"{s.feat_ms:.3f}"] if timing else ["", ""]
            out.append(row)
        return out

    def to_csv(self, timing=True):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sequence", "frames", "auc", "mean_iou", "fps", "feat_ms"])
        w.writerows(self.rows(timing))
        w.writerow(["mean", sum(len(s.boxes) for s in self.sequences), f"{self.mean_auc:.6f}",
                    f"{np.mean([s.mean_iou for s in self.sequences]) if self.sequences else 0.0:.6f}", "", ""])
        return buf.getvalue()

    def write_csv(self, path, timing=True):
        with open(path, "w", newline="") as f:
            f.write(self.to_csv(timing))


def run_ope(sequences, tracker_factory, seed=0):
    """Evaluate ``tracker_factory(seq, seed)`` on each sequence.

    The factory returns an object with ``init(frame, box)`` and
    ``update(frame) -> box``; an optional ``feat_seconds`` attribute feeds the
    feature-time column. If the tracker raises, the remaining frames score 0
    and the sequence is flagged. Results are merged in sequence-name order.

    Only tracked frames are scored: frame 1 is the given box and would add a
    free IoU of 1 to every sequence.
    """
    if not sequences:
        raise ValueError("no sequences to evaluate")
    short = [s.name for s in sequences if len(s) < 2]
    if short:
        raise ValueError(f"sequences need at least 2 frames: {short}")
    results = []
    for seq in sorted(sequences, key=lambda s: s.name):
        n = len(seq)
        boxes = np.zeros((n, 4))
        boxes[0] = seq.boxes[0]
        tracker = tracker_factory(seq, seed)
        failed, err, done = False, "", 1
        elapsed = 0.0
        try:
            frame = seq.frame(0)
            t0 = time.perf_counter()
            tracker.init(frame, seq.boxes[0])
            elapsed += time.perf_counter() - t0
            for i in range(1, n):
                frame = seq.frame(i)
                t0 = time.perf_counter()
                boxes[i] = tracker.update(frame)
                elapsed += time.perf_counter() - t0
                done = i + 1
        except Exception as e:  # noqa: BLE001 - any tracker failure is scored, not raised
            failed, err = True, f"{type(e).__name__}: {e}"
            log.warning("%s: tracker failed at frame %d (%s); remaining frames scored 0", seq.name, done + 1, err)
        ious = np.array([iou(boxes[i], seq.boxes[i]) if i < done else 0.0 for i in range(1, n)])
        feat = getattr(tracker, "feat_seconds", 0.0)
        results.append(SequenceResult(seq.name, boxes, ious, success_curve(ious), auc(ious), float(ious.mean()),
                                      done / elapsed if elapsed > 0 else 0.0, 1000.0 * feat / done,
                                      failed, err))
    return EvalReport(results)
