"""Synthetic single-object tracking sequences with exact ground truth."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .container import FormatError, read_container, write_container
from .mix import BoundingBox
from .tensor import make_rng


@dataclass(frozen=True)
class Difficulty:
    """Knobs of the generator.

    drift: per-frame blend rate of the object texture towards fresh noise
        (also drives a brightness random walk).
    noise: std of additive per-frame pixel noise.
    distractors: number of look-alike patches wandering around.
    motion: std (pixels/frame) of the velocity innovations.
    similarity: how much each distractor texture borrows from the (mirrored)
        object texture, in [0, 1].
    contrast: intensity range of distractors relative to the object.
    """

    drift: float = 0.03
    noise: float = 0.04
    distractors: int = 2
    motion: float = 1.5
    similarity: float = 0.5
    contrast: float = 0.7
    image_size: int = 72
    object_size: tuple[int, int] = (14, 20)


@dataclass
class SyntheticSequence:
    frames: np.ndarray  # (T, H, W) float32 in [0, 1]
    truth: list[BoundingBox]
    seed: int
    difficulty: Difficulty

    def __len__(self) -> int:
        return len(self.truth)


def _texture(rng, h, w, smooth=1.2):
    t = gaussian_filter(rng.standard_normal((h, w)), smooth, mode="wrap")
    t -= t.min()
    span = t.max()
    return t / span if span > 0 else t


class _Walker:
    def __init__(self, rng, size, bound, motion):
        self.w, self.h = size
        self.bx, self.by = bound[0] - self.w, bound[1] - self.h
        self.pos = np.array([rng.uniform(0, self.bx), rng.uniform(0, self.by)])
        self.vel = np.zeros(2)
        self.motion = motion

    def step(self, rng):
        if self.motion > 0:
            self.vel = 0.85 * self.vel + rng.normal(0.0, self.motion, size=2)
        self.pos = self.pos + self.vel
        for i, hi in enumerate((self.bx, self.by)):
            if self.pos[i] < 0:
                self.pos[i] = -self.pos[i]
                self.vel[i] = abs(self.vel[i])
            if self.pos[i] > hi:
                self.pos[i] = 2 * hi - self.pos[i]
                self.vel[i] = -abs(self.vel[i])
            self.pos[i] = min(max(self.pos[i], 0.0), hi)

    @property
    def corner(self):
        return int(round(self.pos[0])), int(round(self.pos[1]))


def gen_sequence(seed: int, length: int, difficulty: Difficulty = Difficulty()) -> SyntheticSequence:
    """Smoothed-noise background, a textured object on a bounded random walk,
    optional distractors and per-frame appearance drift."""
    if length < 2:
        raise ValueError(f"length must be >= 2, got {length}")
    d = difficulty
    rng = make_rng(seed)
    size = d.image_size
    bg = _texture(rng, size, size, smooth=3.0) * 0.4 + 0.2
    lo, hi = d.object_size
    ow, oh = (int(v) for v in rng.integers(lo, hi + 1, size=2))
    tex = _texture(rng, oh, ow)
    gain = 1.0
    obj = _Walker(rng, (ow, oh), (size, size), d.motion)
    distractors = []
    for _ in range(d.distractors):
        dtex = np.clip(d.similarity * tex[::-1] + (1 - d.similarity) * _texture(rng, oh, ow), 0, 1)
        distractors.append((_Walker(rng, (ow, oh), (size, size), d.motion), dtex))

    frames = np.empty((length, size, size), dtype=np.float32)
    truth = []
    for t in range(length):
        if t > 0:
            obj.step(rng)
            for walker, _ in distractors:
                walker.step(rng)
            if d.drift > 0:
                tex = (1 - d.drift) * tex + d.drift * _texture(rng, oh, ow)
                gain = float(np.clip(gain * np.exp(rng.normal(0, d.drift)), 0.6, 1.2))
        img = bg.copy()
        for walker, dtex in distractors:
            x, y = walker.corner
            img[y:y + oh, x:x + ow] = 0.25 + 0.7 * d.contrast * dtex
        x, y = obj.corner
        img[y:y + oh, x:x + ow] = np.clip(0.25 + 0.7 * gain * tex, 0, 1)
        if d.noise > 0:
            img = img + rng.normal(0, d.noise, size=img.shape)
        frames[t] = np.clip(img, 0, 1)
        truth.append(BoundingBox(float(x), float(y), float(ow), float(oh)))
    return SyntheticSequence(frames, truth, seed, d)


def save_sequence(seq: SyntheticSequence, path) -> None:
    """Store a fixture: frames (T, H, W) float32, truth (T, 4) float32 quadruples,
    plus seed and difficulty scalars."""
    tensors = {
        "frames": seq.frames.astype(np.float32),
        "truth": np.array([b.as_tuple() for b in seq.truth], dtype=np.float32),
        "meta.seed": np.array(seq.seed, dtype=np.float64),
    }
    for key, value in asdict(seq.difficulty).items():
        tensors[f"meta.{key}"] = np.array(value, dtype=np.float64)
    write_container(path, tensors)


def load_sequence(path) -> SyntheticSequence:
    t = read_container(path)
    try:
        frames = t["frames"]
        table = t["truth"]
        seed = int(t["meta.seed"])
        diff = Difficulty(
            drift=float(t["meta.drift"]), noise=float(t["meta.noise"]),
            distractors=int(t["meta.distractors"]), motion=float(t["meta.motion"]),
            similarity=float(t["meta.similarity"]), contrast=float(t["meta.contrast"]),
            image_size=int(t["meta.image_size"]),
            object_size=tuple(int(v) for v in t["meta.object_size"]),
        )
    except KeyError as exc:
        raise FormatError(f"{path}: missing sequence field {exc}") from exc
    if frames.ndim != 3 or table.shape != (frames.shape[0], 4):
        raise FormatError(f"{path}: frames {frames.shape} and truth {table.shape} disagree")
    truth = [BoundingBox(*(float(v) for v in row)) for row in table]
    return SyntheticSequence(frames, truth, seed, diff)
