"""Per-frame tracking loop with optional embedding-level augmentation."""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from .episode import Episode, updated_model
from .extractor import EmbeddingExtractor, extract_embedding
from .mix import BlendConfig, BoundingBox, MixKernelPair, mask_from_boxes
from .mixnet import MixNetWeights, mixnet_forward
from .models import (
    TrackerState,
    UpdateConfig,
    box_targets,
    cell_of_box,
    init_state,
    localize,
    target_map,
)
from .opt import OptConfig, deepmix_opt
from .sequence import SyntheticSequence
from .tensor import make_rng

AUGMENTORS = ("none", "mixnet", "single", "opt")


class MemoryEntry(NamedTuple):
    embedding: np.ndarray
    box: BoundingBox
    frame: int


class SampleMemory:
    """FIFO bank of the last ``capacity`` (embedding, box, frame) triples."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: deque[MemoryEntry] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def push(self, embedding, box, frame) -> "SampleMemory":
        self._items.append(MemoryEntry(embedding, box, frame))
        return self

    @property
    def newest(self) -> MemoryEntry:
        return self._items[-1]

    def bank(self) -> np.ndarray:
        return np.concatenate([e.embedding for e in self._items], axis=0)

    def boxes(self) -> list[BoundingBox]:
        return [e.box for e in self._items]


def memory_push(memory: SampleMemory, embedding, box, frame_idx) -> SampleMemory:
    return memory.push(embedding, box, frame_idx)


# -- initial training set ---------------------------------------------------

def flip_box(box: BoundingBox, map_width: int, stride: int) -> BoundingBox:
    """Mirror a box the way a horizontal flip of the feature map moves it."""
    cx, cy = box.center
    return BoundingBox.from_center(stride * (map_width - 1) + 1.0 - cx, cy, box.w, box.h)


def flip_embedding(emb: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(emb[..., ::-1])


def build_training_set(template: np.ndarray, box: BoundingBox, n: int = 15,
                       rng: np.random.Generator | None = None,
                       stride: int = 4, max_shift: int = 2, noise: float = 0.01):
    """``n`` variants of one embedding: circular shifts of up to ``max_shift``
    cells, random horizontal flips and Gaussian noise. Variant 0 is the
    original; boxes move with their samples."""
    rng = make_rng(0) if rng is None else rng
    if n < 1:
        raise ValueError("n must be >= 1")
    w_cells = template.shape[3]
    samples = [template]
    boxes = [box]
    for _ in range(1, n):
        x, b = template, box
        if rng.random() < 0.5:
            x, b = flip_embedding(x), flip_box(b, w_cells, stride)
        dr, dc = (int(v) for v in rng.integers(-max_shift, max_shift + 1, size=2))
        x = np.roll(x, (dr, dc), axis=(2, 3))
        b = BoundingBox(b.x + dc * stride, b.y + dr * stride, b.w, b.h)
        x = x + rng.normal(0.0, noise, size=x.shape).astype(x.dtype)
        samples.append(x)
        boxes.append(b)
    return np.concatenate(samples, axis=0), boxes


# -- augmentors -------------------------------------------------------------

@dataclass
class Augmentor:
    """Source of mixing kernels at update time."""

    name: str = "none"
    weights: MixNetWeights | None = None
    opt: OptConfig = field(default_factory=OptConfig)

    def __post_init__(self):
        if self.name not in AUGMENTORS:
            raise ValueError(f"unknown augmentor {self.name!r}; choose from {AUGMENTORS}")
        if self.name in ("mixnet", "single") and self.weights is None:
            raise ValueError(f"augmentor {self.name!r} needs MixNet weights")
        if self.weights is not None and self.name in ("mixnet", "single"):
            want = 2 if self.name == "mixnet" else 1
            if len(self.weights.branch_names) != want:
                raise ValueError(f"augmentor {self.name!r} needs {want}-branch weights, "
                                 f"got {len(self.weights.branch_names)}")

    def kernels(self, ep: Episode, blend: BlendConfig) -> MixKernelPair | None:
        if self.name == "none":
            return None
        if self.name == "opt":
            pair, _ = deepmix_opt(ep, self.opt, blend)
            return pair
        return mixnet_forward(self.weights, ep.samples)


# -- the tracker ------------------------------------------------------------

@dataclass(frozen=True)
class TrackerConfig:
    mode: str = "classifier"
    memory: int = 50
    update: UpdateConfig = field(default_factory=UpdateConfig)
    blend: BlendConfig = field(default_factory=BlendConfig)
    seed: int = 0

    @classmethod
    def for_mode(cls, mode: str, **kw) -> "TrackerConfig":
        memory = kw.pop("memory", 50 if mode == "classifier" else 15)
        update = kw.pop("update", UpdateConfig.for_mode(mode))
        return cls(mode=mode, memory=memory, update=update, **kw)


def make_episode(state: TrackerState, memory: SampleMemory, stride: int,
                 queries: np.ndarray | None = None, query_cells=None) -> Episode:
    """Episode for an update on the current memory.

    Without explicit queries the newest memory entry is the query, with the
    target peaked at its detected position.
    """
    cfg = state.config
    bank = memory.bank()
    _, c, h, w = bank.shape
    newest = memory.newest
    if queries is None:
        queries = newest.embedding
        query_cells = [cell_of_box(newest.box, stride, h, w)]
    qt = np.concatenate([target_map(cell, h, w, cfg.target_sigma, bank.dtype) for cell in query_cells])
    if state.mode == "classifier":
        boxes = memory.boxes()
        mask = mask_from_boxes(boxes, (c, h, w), stride, bank.dtype).mask
        return Episode(state, bank, mask, queries, qt,
                       bank_targets=box_targets(boxes, stride, h, w, cfg.target_sigma, bank.dtype))
    mask = mask_from_boxes([newest.box], (c, h, w), stride, bank.dtype).mask
    return Episode(state, bank, mask, queries, qt, current=newest.embedding,
                   current_cell=cell_of_box(newest.box, stride, h, w))


def update_model(state: TrackerState, memory: SampleMemory, augmentor: Augmentor,
                 blend: BlendConfig, stride: int) -> TrackerState:
    """One scheduled model update from the memory; empty memory is a no-op."""
    if len(memory) == 0:
        return state
    ep = make_episode(state, memory, stride)
    kernels = augmentor.kernels(ep, blend)
    filt, bias, _ = updated_model(ep, kernels, blend)
    return TrackerState(state.mode, filt, bias, state.config)


class FrameOutput(NamedTuple):
    frame: int
    box: BoundingBox
    peak: float
    seconds: float


class Tracker:
    def __init__(self, cfg: TrackerConfig, augmentor: Augmentor, stride: int = 4):
        self.cfg = cfg
        self.augmentor = augmentor
        self.stride = stride
        self.state: TrackerState | None = None
        self.memory = SampleMemory(cfg.memory)
        self.box_size = (0.0, 0.0)

    def initialize(self, emb: np.ndarray, box: BoundingBox, frame: int = 0) -> None:
        cfg = self.cfg
        _, _, h, w = emb.shape
        rng = make_rng(cfg.seed * 1_000_003 + frame)
        bank, boxes = build_training_set(emb, box, cfg.memory, rng, self.stride)
        self.memory = SampleMemory(cfg.memory)
        for i in range(cfg.memory):
            self.memory.push(bank[i:i + 1], boxes[i], frame)
        self.box_size = (box.w, box.h)
        cell = cell_of_box(box, self.stride, h, w)
        targets = box_targets(boxes, self.stride, h, w, cfg.update.target_sigma, emb.dtype)
        self.state = init_state(cfg.mode, emb, cell, cfg.update, bank, targets)

    def observe(self, emb: np.ndarray, frame: int):
        heat, _, box = localize(self.state, emb, self.stride, self.box_size)
        self.memory.push(emb, box, frame)
        return box, float(heat.max())

    def due(self, frames_since_init: int) -> bool:
        return frames_since_init > 0 and frames_since_init % self.cfg.update.period == 0

    def update(self) -> None:
        self.state = update_model(self.state, self.memory, self.augmentor, self.cfg.blend, self.stride)


def track_frames(seq: SyntheticSequence, tracker: Tracker, extractor: EmbeddingExtractor,
                 embeddings: list[np.ndarray] | None = None, start: int = 0) -> Iterator[FrameOutput]:
    """Initialise on ``start``'s ground truth and yield one output per frame.

    When ``embeddings`` are supplied (precomputed for the whole sequence)
    the timings cover tracking only, not feature extraction.
    """
    def emb_at(t):
        return embeddings[t] if embeddings is not None else extract_embedding(extractor, seq.frames[t])

    t0 = time.perf_counter()
    tracker.initialize(emb_at(start), seq.truth[start], start)
    yield FrameOutput(start, seq.truth[start], 1.0, time.perf_counter() - t0)
    for t in range(start + 1, len(seq)):
        t0 = time.perf_counter()
        try:
            box, peak = tracker.observe(emb_at(t), t)
            if tracker.due(t - start):
                tracker.update()
        except Exception as exc:
            raise RuntimeError(f"tracking failed at frame {t}: {exc}") from exc
        yield FrameOutput(t, box, peak, time.perf_counter() - t0)


@dataclass
class TrackResult:
    boxes: list[BoundingBox]
    peaks: list[float]
    seconds: list[float]


def run_tracker(seq: SyntheticSequence, mode: str = "classifier", augmentor: Augmentor | None = None,
                cfg: TrackerConfig | None = None, extractor: EmbeddingExtractor | None = None,
                embeddings=None) -> TrackResult:
    """One-pass tracking of ``seq``; frame 0 is copied from ground truth."""
    if len(seq) < 2:
        raise ValueError("sequence must have at least 2 frames")
    cfg = cfg if cfg is not None else TrackerConfig.for_mode(mode)
    if cfg.mode != mode:
        raise ValueError(f"config mode {cfg.mode!r} differs from requested mode {mode!r}")
    augmentor = augmentor if augmentor is not None else Augmentor()
    extractor = extractor if extractor is not None else EmbeddingExtractor()
    tracker = Tracker(cfg, augmentor, extractor.stride)
    out = list(track_frames(seq, tracker, extractor, embeddings))
    return TrackResult([o.box for o in out], [o.peak for o in out], [o.seconds for o in out])
