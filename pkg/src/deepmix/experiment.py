"""Experiment orchestration: config files, tracking runs and result files.

A run writes, per augmentor ``A``, ``frames_A.csv`` (one row per frame),
``reset_A.csv`` (one row per sequence, when the reset protocol is on),
then ``summary.json`` and ``success_plot.csv`` computed from those CSV
files alone by :func:`write_summary`, which is also what ``eval`` runs.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .corpus import CorpusConfig, build_corpus
from .extractor import EmbeddingExtractor
from .mix import BlendConfig, BoundingBox
from .mixnet import MixNetWeights, TrainConfig, load_weights, train_mixnet
from .metrics import (
    THRESHOLDS,
    FrameResult,
    center_error,
    iou,
    norm_precision,
    precision,
    reset_eval,
    success_auc,
    success_curve,
)
from .models import MODES
from .opt import OptConfig
from .sequence import Difficulty, gen_sequence
from .tensor import make_rng
from .tracker import AUGMENTORS, Augmentor, Tracker, TrackerConfig, track_frames

log = logging.getLogger(__name__)

FRAME_COLUMNS = ("seq_id", "frame", "pred_x", "pred_y", "pred_w", "pred_h",
                 "gt_x", "gt_y", "gt_w", "gt_h", "iou", "center_err", "frame_seconds")
RESET_COLUMNS = ("seq_id", "failures", "scored_frames", "overlap_sum")
PLOT_COLUMNS = ("augmentor", "threshold", "success_rate")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Every key of the ``key = value`` config file, with its default."""

    mode: str = "classifier"
    sequences: int = 20
    frames: int = 200
    seed: int = 0
    augmentors: tuple[str, ...] = ("none", "mixnet", "single")
    weights: str = ""
    single_weights: str = ""
    train: bool = True
    branches: str = "dual"
    train_videos: int = 100
    train_frames: int = 60
    train_seed: int = 42
    epochs: int = 10
    samples_per_epoch: int = 100
    learning_rate: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 0.0005
    alpha_aug: float = 0.05
    alpha_raw: float = 0.8
    opt_iterations: int = 10
    opt_step_size: float = 0.1
    drift: float = 0.03
    noise: float = 0.04
    distractors: int = 2
    motion: float = 1.5
    similarity: float = 0.5
    contrast: float = 0.7
    image_size: int = 72
    reset: bool = True
    fail_iou: float = 0.0
    timing: bool = True
    out: str = "results"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in self.augmentors:
            if name not in AUGMENTORS:
                raise ConfigError(f"unknown augmentor {name!r}; choose from {AUGMENTORS}")
        if not self.augmentors:
            raise ConfigError("augmentors must not be empty")
        if len(set(self.augmentors)) != len(self.augmentors):
            raise ConfigError("augmentors must not repeat")
        if self.branches not in ("dual", "single"):
            raise ConfigError(f"branches must be 'dual' or 'single', got {self.branches!r}")
        if self.sequences < 1 or self.frames < 2:
            raise ConfigError("need at least one sequence of at least two frames")

    @property
    def difficulty(self) -> Difficulty:
        return Difficulty(drift=self.drift, noise=self.noise, distractors=self.distractors,
                          motion=self.motion, similarity=self.similarity, contrast=self.contrast,
                          image_size=self.image_size)

    @property
    def blend(self) -> BlendConfig:
        return BlendConfig(self.alpha_aug, self.alpha_raw)

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.momentum, self.weight_decay,
                           self.epochs, self.samples_per_epoch, self.train_seed)

    @property
    def corpus_config(self) -> CorpusConfig:
        return CorpusConfig(self.train_videos, self.train_frames, self.train_seed, self.difficulty)


def _convert(name: str, kind, text: str):
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "tuple[str, ...]":
            return tuple(v.strip() for v in text.split(",") if v.strip())
        return text
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r} (expected {kind})") from None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    kinds = {f.name: f.type for f in fields(ExperimentConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _convert(key, kinds[key], value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    return parse_config(text, str(path))


# -- running ----------------------------------------------------------------

def sequence_seeds(seed: int, count: int) -> list[int]:
    return [int(s) for s in make_rng(seed).integers(0, 2**31, size=count)]


def train_weights(cfg: ExperimentConfig, branches: str, corpus=None) -> MixNetWeights:
    if corpus is None:
        corpus = build_corpus(cfg.mode, cfg.corpus_config)
    result = train_mixnet(corpus, cfg.train_config, branches=branches, blend=cfg.blend)
    log.info("trained %s MixNet: loss %s", branches, ", ".join(f"{v:.6f}" for v in result.loss_history))
    return result.weights


def resolve_augmentors(cfg: ExperimentConfig) -> dict[str, Augmentor]:
    """Load or train the weights each requested augmentor needs."""
    opt = OptConfig(iterations=cfg.opt_iterations, step_size=cfg.opt_step_size)
    sources = {"mixnet": ("dual", cfg.weights), "single": ("single", cfg.single_weights)}
    corpus = None
    out = {}
    for name in cfg.augmentors:
        weights = None
        if name in sources:
            branches, path = sources[name]
            if path:
                weights = load_weights(path)
            elif cfg.train:
                if corpus is None:
                    corpus = build_corpus(cfg.mode, cfg.corpus_config)
                weights = train_weights(cfg, branches, corpus)
            else:
                key = "weights" if name == "mixnet" else "single_weights"
                raise ConfigError(f"augmentor {name!r} needs {key} (or train = true)")
        out[name] = Augmentor(name, weights, opt)
    return out


def _frame_row(seq_id, frame, pred: BoundingBox, truth: BoundingBox, seconds):
    return [seq_id, frame, pred.x, pred.y, pred.w, pred.h, truth.x, truth.y, truth.w, truth.h,
            iou(pred, truth), center_error(pred, truth), seconds]


def run_experiment_config(cfg: ExperimentConfig) -> dict:
    """Run every augmentor on the same sequences and write all result files.

    Returns the summary dictionary (also written to ``summary.json``).
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    augmentors = resolve_augmentors(cfg)
    extractor = EmbeddingExtractor()
    tracker_cfg = TrackerConfig.for_mode(cfg.mode, blend=cfg.blend)
    seeds = sequence_seeds(cfg.seed, cfg.sequences)
    rows = {name: [] for name in augmentors}
    resets = {name: [] for name in augmentors}
    for i, s in enumerate(seeds):
        seq = gen_sequence(s, cfg.frames, cfg.difficulty)
        embeddings = [extractor(f) for f in seq.frames]
        seq_id = f"seq{i:03d}"
        for name, aug in augmentors.items():
            def runner(start, aug=aug):
                tracker = Tracker(tracker_cfg, aug, extractor.stride)
                for o in track_frames(seq, tracker, extractor, embeddings, start):
                    yield o.frame, o.box
            tracker = Tracker(tracker_cfg, aug, extractor.stride)
            for o in track_frames(seq, tracker, extractor, embeddings):
                seconds = o.seconds if cfg.timing else 0.0
                rows[name].append(_frame_row(seq_id, o.frame, o.box, seq.truth[o.frame], seconds))
            if cfg.reset:
                res = reset_eval(runner, seq.truth, cfg.fail_iou)
                resets[name].append([seq_id, res.robustness, res.scored_frames,
                                     res.accuracy * res.scored_frames])
        log.info("sequence %d/%d done", i + 1, cfg.sequences)

    for name in augmentors:
        _write_csv(out / f"frames_{name}.csv", FRAME_COLUMNS, rows[name])
        if cfg.reset:
            _write_csv(out / f"reset_{name}.csv", RESET_COLUMNS, resets[name])
    return write_summary(out, list(augmentors))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


# -- summaries --------------------------------------------------------------

def read_frame_csv(path) -> dict[str, list[FrameResult]]:
    """Per-sequence frame results, in file order."""
    seqs: dict[str, list[FrameResult]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != FRAME_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        for row in reader:
            pred = BoundingBox(*(float(row[k]) for k in ("pred_x", "pred_y", "pred_w", "pred_h")))
            truth = BoundingBox(*(float(row[k]) for k in ("gt_x", "gt_y", "gt_w", "gt_h")))
            seqs.setdefault(row["seq_id"], []).append(
                FrameResult(row["seq_id"], int(row["frame"]), pred, truth, float(row["frame_seconds"]))
            )
    if not seqs:
        raise ValueError(f"{path}: no frames")
    return seqs


def summarize_augmentor(seqs: dict[str, list[FrameResult]], reset_rows=None) -> dict:
    """Sequence-averaged one-pass metrics plus pooled reset metrics.

    ``mean_fps`` is total frames over total time and is ``None`` when the
    run was untimed; ``robustness``/``accuracy`` are ``None`` without reset rows.
    """
    per_seq = list(seqs.values())
    frames = sum(len(r) for r in per_seq)
    seconds = sum(f.seconds for r in per_seq for f in r)
    summary = {
        "auc": float(np.mean([success_auc(r) for r in per_seq])),
        "precision": float(np.mean([precision(r) for r in per_seq])),
        "norm_precision": float(np.mean([norm_precision(r) for r in per_seq])),
        "mean_fps": frames / seconds if seconds > 0 else None,
        "robustness": None,
        "accuracy": None,
    }
    if reset_rows:
        scored = sum(int(r["scored_frames"]) for r in reset_rows)
        overlap = sum(float(r["overlap_sum"]) for r in reset_rows)
        summary["robustness"] = sum(int(r["failures"]) for r in reset_rows)
        summary["accuracy"] = overlap / scored if scored else 0.0
    return summary


def _augmentors_in(results: Path) -> list[str]:
    found = {p.stem[len("frames_"):] for p in results.glob("frames_*.csv")}
    ordered = [a for a in AUGMENTORS if a in found]
    return ordered + sorted(found - set(ordered))


def write_summary(results, augmentors: list[str] | None = None) -> dict:
    """Recompute ``summary.json`` and ``success_plot.csv`` from the CSV files in ``results``."""
    results = Path(results)
    if not results.is_dir():
        raise FileNotFoundError(f"results directory {results} does not exist")
    augmentors = augmentors if augmentors is not None else _augmentors_in(results)
    if not augmentors:
        raise FileNotFoundError(f"no frames_*.csv files in {results}")
    summary = {"augmentors": {}}
    plot_rows = []
    for name in augmentors:
        seqs = read_frame_csv(results / f"frames_{name}.csv")
        reset_path = results / f"reset_{name}.csv"
        reset_rows = None
        if reset_path.exists():
            with open(reset_path, newline="", encoding="utf-8") as fh:
                reset_rows = list(csv.DictReader(fh))
        summary["augmentors"][name] = summarize_augmentor(seqs, reset_rows)
        curve = np.mean([success_curve(r) for r in seqs.values()], axis=0)
        plot_rows += [[name, float(t), float(v)] for t, v in zip(THRESHOLDS, curve)]
    with open(results / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    _write_csv(results / "success_plot.csv", PLOT_COLUMNS, plot_rows)
    return summary


def run_experiment(config_path, **overrides) -> int:
    """Run the experiment described by a config file; 0 on success.

    On failure a one-line diagnostic goes to stderr and the exit code is 1.
    """
    try:
        cfg = load_config(config_path)
        if overrides:
            cfg = replace(cfg, **overrides)
        run_experiment_config(cfg)
    except Exception as exc:  # noqa: BLE001 - the diagnostic is the product here
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0
