"""Training episodes drawn from synthetic videos.

An episode is a snapshot of a no-augmentation tracking run at one randomly
chosen scheduled update: the sample memory and model just before the
update, plus the following ``period`` frames (with ground-truth cells) as
queries. Both tracker modes use the same construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .episode import Episode
from .extractor import EmbeddingExtractor
from .models import MODES, cell_of_box
from .sequence import Difficulty, gen_sequence
from .tensor import make_rng
from .tracker import Augmentor, Tracker, TrackerConfig, make_episode


@dataclass(frozen=True)
class CorpusConfig:
    """``videos`` sequences of ``frames`` frames, seeded from ``seed``."""

    videos: int = 100
    frames: int = 60
    seed: int = 42
    difficulty: Difficulty = Difficulty()

    def __post_init__(self):
        if self.videos < 1 or self.frames < 2:
            raise ValueError("need at least one video of at least two frames")


def _episode_from_video(seq, embeddings, cfg: TrackerConfig, rng, stride) -> Episode:
    tracker = Tracker(cfg, Augmentor(), stride)
    period = cfg.update.period
    _, _, h, w = embeddings[0].shape
    n_frames = len(seq)
    # Update instants that leave a full window of query frames after them.
    slots = [t for t in range(period, n_frames - period) if t % period == 0]
    stop = int(rng.choice(slots)) if slots else 0
    tracker.initialize(embeddings[0], seq.truth[0], 0)
    for t in range(1, stop + 1):
        tracker.observe(embeddings[t], t)
        if t < stop and tracker.due(t):
            tracker.update()
    last = min(stop + period, n_frames - 1)
    frames = range(stop + 1, last + 1)
    queries = np.concatenate([embeddings[t] for t in frames], axis=0)
    cells = [cell_of_box(seq.truth[t], stride, h, w) for t in frames]
    return make_episode(tracker.state, tracker.memory, stride, queries, cells)


def build_corpus(mode: str, cfg: CorpusConfig = CorpusConfig(), tracker_cfg: TrackerConfig | None = None,
                 extractor: EmbeddingExtractor | None = None) -> list[Episode]:
    """One episode per video, deterministic in ``cfg.seed``."""
    if mode not in MODES:
        raise ValueError(f"unknown tracker mode {mode!r}")
    tracker_cfg = tracker_cfg if tracker_cfg is not None else TrackerConfig.for_mode(mode)
    if tracker_cfg.update.period + 1 >= cfg.frames:
        raise ValueError(f"videos of {cfg.frames} frames are too short for update period "
                         f"{tracker_cfg.update.period}")
    extractor = extractor if extractor is not None else EmbeddingExtractor()
    rng = make_rng(cfg.seed)
    seeds = rng.integers(0, 2**31, size=cfg.videos)
    corpus = []
    for s in seeds:
        seq = gen_sequence(int(s), cfg.frames, cfg.difficulty)
        embeddings = [extractor(f) for f in seq.frames]
        corpus.append(_episode_from_video(seq, embeddings, tracker_cfg, rng, extractor.stride))
    return corpus
