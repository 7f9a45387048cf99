"""One-pass and reset-based tracking metrics.

Conventions (OTB/VOT style, fixed here):

* success(tau) counts frames with IoU strictly greater than tau, on the 21
  thresholds 0, 0.05, ..., 1.0; the success AUC is the mean of the curve.
* precision: fraction of frames with centre error <= 20 px.
* normalised precision: centre error divided by the ground-truth box
  diagonal, thresholded at 0.2.
* reset protocol: a frame with IoU <= ``fail_iou`` is a failure; the tracker
  restarts from ground truth exactly 5 frames later and the frames in
  between are not scored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np

from .mix import BoundingBox

THRESHOLDS = np.linspace(0.0, 1.0, 21)
RESTART_GAP = 5


@dataclass(frozen=True)
class FrameResult:
    seq_id: str
    frame: int
    pred: BoundingBox
    truth: BoundingBox
    seconds: float = 0.0


@dataclass(frozen=True)
class OpeSummary:
    auc: float
    precision: float
    norm_precision: float
    mean_fps: float | None


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def center_error(a: BoundingBox, b: BoundingBox) -> float:
    (ax, ay), (bx, by) = a.center, b.center
    return math.hypot(ax - bx, ay - by)


def _ious(results) -> np.ndarray:
    if not results:
        raise ValueError("no frame results")
    return np.array([iou(r.pred, r.truth) for r in results])


def success_curve(results: list[FrameResult]) -> np.ndarray:
    ious = _ious(results)
    return (ious[None, :] > THRESHOLDS[:, None]).mean(axis=1)


def success_auc(results: list[FrameResult]) -> float:
    return float(success_curve(results).mean())


def precision(results: list[FrameResult], threshold_px: float = 20.0) -> float:
    if not results:
        raise ValueError("no frame results")
    return float(np.mean([center_error(r.pred, r.truth) <= threshold_px for r in results]))


def norm_precision(results: list[FrameResult], threshold: float = 0.2) -> float:
    if not results:
        raise ValueError("no frame results")
    return float(np.mean([
        center_error(r.pred, r.truth) / math.hypot(r.truth.w, r.truth.h) <= threshold for r in results
    ]))


def mean_fps(results: list[FrameResult]) -> float:
    total = sum(r.seconds for r in results)
    return len(results) / total if total > 0 else float("inf")


def ope_summary(results: list[FrameResult], timed: bool = True) -> OpeSummary:
    return OpeSummary(
        auc=success_auc(results),
        precision=precision(results),
        norm_precision=norm_precision(results),
        mean_fps=mean_fps(results) if timed else None,
    )


@dataclass
class ResetResult:
    accuracy: float
    robustness: int
    failures: list[int]
    restarts: list[int]
    scored_frames: int


Runner = Callable[[int], Iterable[tuple[int, BoundingBox]]]


def reset_eval(runner: Runner, truth: list[BoundingBox], fail_iou: float = 0.0) -> ResetResult:
    """Reset-based accuracy/robustness.

    ``runner(start)`` must initialise on ground truth at frame ``start`` and
    yield ``(frame, box)`` for ``start, start + 1, ...``. Initialisation
    frames are not scored. A failure within the last 5 frames still counts
    but triggers no restart.
    """
    n = len(truth)
    if n <= RESTART_GAP + 1:
        raise ValueError(f"sequence must be longer than {RESTART_GAP + 1} frames, got {n}")
    failures, restarts, overlaps = [], [], []
    start = 0
    while start is not None:
        frames: Iterator = iter(runner(start))
        nxt = None
        for frame, box in frames:
            if frame == start:
                continue
            o = iou(box, truth[frame])
            if o <= fail_iou:
                failures.append(frame)
                if frame + RESTART_GAP < n:
                    nxt = frame + RESTART_GAP
                    restarts.append(nxt)
                break
            overlaps.append(o)
        start = nxt
    accuracy = float(np.mean(overlaps)) if overlaps else 0.0
    return ResetResult(accuracy, len(failures), failures, restarts, len(overlaps))
