"""Latency of the augmentation step alone, on synthetic inputs of a given shape."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .episode import Episode
from .mix import BlendConfig, BoundingBox, mask_from_boxes
from .mixnet import mixnet_init
from .models import TrackerState, UpdateConfig, box_targets, target_map
from .opt import OptConfig
from .tensor import make_rng
from .tracker import AUGMENTORS, Augmentor


@dataclass(frozen=True)
class BenchStats:
    augmentor: str
    shape: tuple[int, int, int, int]
    median: float
    p90: float
    samples: list[float]

    @property
    def repetitions(self) -> int:
        return len(self.samples)


def parse_shape(text: str) -> tuple[int, int, int, int]:
    """``"50x32x22x22"`` -> (N, C, h, w)."""
    try:
        dims = tuple(int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ValueError(f"bad shape {text!r}; expected NxCxHxW") from None
    if len(dims) != 4 or min(dims) < 1:
        raise ValueError(f"bad shape {text!r}; expected four positive sizes NxCxHxW")
    return dims


def bench_episode(shape, seed: int = 0, stride: int = 4) -> Episode:
    """A classifier-mode episode of random embeddings with boxes near the centre."""
    n, c, h, w = shape
    rng = make_rng(seed)
    cfg = UpdateConfig()
    samples = rng.standard_normal((n, c, h, w)).astype(np.float32)
    boxes = []
    for _ in range(n):
        cx = stride * (w / 2 + rng.uniform(-1, 1))
        cy = stride * (h / 2 + rng.uniform(-1, 1))
        boxes.append(BoundingBox.from_center(cx, cy, 2.0 * stride, 2.0 * stride))
    mask = mask_from_boxes(boxes, (c, h, w), stride, np.float32).mask
    k = cfg.kernel_size
    state = TrackerState("classifier", 0.01 * rng.standard_normal((1, c, k, k)).astype(np.float32), 0.0, cfg)
    query = rng.standard_normal((1, c, h, w)).astype(np.float32)
    qt = target_map((h // 2, w // 2), h, w, cfg.target_sigma, np.float32)
    bt = box_targets(boxes, stride, h, w, cfg.target_sigma, np.float32)
    return Episode(state, samples, mask, query, qt, bank_targets=bt)


def bench_augmentor(shape, augmentor: str, repetitions: int = 10, warmup: int = 1, seed: int = 0,
                    opt: OptConfig = OptConfig(), blend: BlendConfig = BlendConfig()) -> BenchStats:
    """Median and 90th-percentile wall time of one kernel prediction.

    MixNet variants use freshly initialised weights: latency does not depend
    on the weight values.
    """
    if augmentor not in AUGMENTORS:
        raise ValueError(f"unknown augmentor {augmentor!r}; choose from {AUGMENTORS}")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    n = shape[0]
    ep = bench_episode(shape, seed)
    weights = None
    if augmentor in ("mixnet", "single"):
        branches = "dual" if augmentor == "mixnet" else "single"
        weights = mixnet_init(n, n, branches, make_rng(seed))
    aug = Augmentor(augmentor, weights, opt)
    for _ in range(warmup):
        aug.kernels(ep, blend)
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        aug.kernels(ep, blend)
        times.append(time.perf_counter() - t0)
    arr = np.array(times)
    return BenchStats(augmentor, tuple(shape), float(np.median(arr)), float(np.percentile(arr, 90)), times)
