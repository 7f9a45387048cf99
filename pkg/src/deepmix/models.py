"""Object models of the two reference trackers and their update rules.

Both trackers localise with a single convolution over the search embedding:

* ``siamese``: the filter is a template cropped from past embeddings and
  refreshed by a running average;
* ``classifier``: the filter (plus a bias) is fitted online by a few steps
  of gradient descent on a ridge-regularised L2 heat-map regression over
  the sample bank.

Every update here is written together with its reverse-mode pass so that
losses measured after an update can be differentiated with respect to the
samples that went into it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .mix import BoundingBox
from .tensor import (
    PreparedInput,
    ShapeError,
    argmax2d,
    conv2d,
    conv2d_grad_input,
    conv2d_grad_kernel,
    gaussian_map,
)

MODES = ("siamese", "classifier")


@dataclass(frozen=True)
class UpdateConfig:
    """Update hyperparameters shared by both tracker styles.

    ``period`` is the number of frames between updates. ``steps`` and
    ``step_size`` drive the classifier's gradient descent; ``template_rate``
    is the Siamese running-average weight.
    """

    kernel_size: int = 5
    period: int = 5
    steps: int = 3
    init_steps: int = 20
    step_size: float = 0.015
    reg: float = 1e-3
    template_rate: float = 0.1
    target_sigma: float = 1.0

    @classmethod
    def for_mode(cls, mode: str, **overrides) -> "UpdateConfig":
        if mode not in MODES:
            raise ValueError(f"unknown tracker mode {mode!r}")
        base = cls() if mode == "classifier" else cls(period=10)
        return replace(base, **overrides)


@dataclass
class TrackerState:
    mode: str
    filt: np.ndarray  # (1, C, k, k)
    bias: float = 0.0
    config: UpdateConfig = field(default_factory=UpdateConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown tracker mode {self.mode!r}")
        if self.filt.ndim != 4 or self.filt.shape[0] != 1:
            raise ShapeError(f"filter must be (1, C, k, k), got {self.filt.shape}")

    @property
    def channels(self) -> int:
        return self.filt.shape[1]

    def copy(self) -> "TrackerState":
        return replace(self, filt=self.filt.copy())


# -- geometry ---------------------------------------------------------------

def cell_of_point(cx: float, cy: float, stride: int, h: int, w: int) -> tuple[int, int]:
    """Feature cell nearest to an image point; cell ``i`` is centred at ``stride*i + 0.5``."""
    r = int(np.clip(np.floor((cy - 0.5) / stride + 0.5), 0, h - 1))
    c = int(np.clip(np.floor((cx - 0.5) / stride + 0.5), 0, w - 1))
    return r, c


def cell_of_box(box: BoundingBox, stride: int, h: int, w: int) -> tuple[int, int]:
    cx, cy = box.center
    return cell_of_point(cx, cy, stride, h, w)


def box_at_cell(cell: tuple[int, int], stride: int, size: tuple[float, float]) -> BoundingBox:
    r, c = cell
    return BoundingBox.from_center(stride * c + 0.5, stride * r + 0.5, size[0], size[1])


def target_map(cell: tuple[int, int], h: int, w: int, sigma: float, dtype=np.float32) -> np.ndarray:
    return gaussian_map(h, w, cell, sigma, dtype=dtype)


def box_targets(boxes, stride: int, h: int, w: int, sigma: float, dtype=np.float32) -> np.ndarray:
    """Stack of (N, 1, h, w) Gaussian targets at each box's cell."""
    return np.concatenate(
        [target_map(cell_of_box(b, stride, h, w), h, w, sigma, dtype) for b in boxes], axis=0
    )


# -- localisation -----------------------------------------------------------

def heat_map(filt: np.ndarray, bias, emb: np.ndarray) -> np.ndarray:
    """Response of a (1, C, k, k) filter over (Q, C, h, w) embeddings: (Q, 1, h, w)."""
    return conv2d(emb, filt, padding=filt.shape[2] // 2) + bias


def heat_map_vjp(filt: np.ndarray, emb: np.ndarray, grad: np.ndarray):
    """Gradients of :func:`heat_map` output w.r.t. ``(filt, bias)``."""
    return conv2d_grad_kernel(emb, grad, filt.shape, filt.shape[2] // 2), float(grad.sum())


def localize(state: TrackerState, emb: np.ndarray, stride: int, box_size: tuple[float, float]):
    """Return ``(heat, cell, box)``; the box keeps ``box_size`` and is centred on the peak cell."""
    heat = heat_map(state.filt, state.bias, emb)
    cell = argmax2d(heat)
    return heat, cell, box_at_cell(cell, stride, box_size)


# -- classifier regression --------------------------------------------------

def regression_objective(filt, bias, bank, targets, reg) -> float:
    r = heat_map(filt, bias, bank) - targets
    return float(np.mean(np.square(r, dtype=np.float64)) + reg * np.sum(np.square(filt, dtype=np.float64)))


@dataclass
class _StepRecord:
    filt: np.ndarray
    residual: np.ndarray
    g_filt: np.ndarray


def classifier_steps(filt, bias, bank, targets, cfg: UpdateConfig, steps: int | None = None, record=False):
    """Plain gradient descent on the regression objective.

    Returns ``(filt, bias, records)``; ``records`` is only filled when
    ``record`` is set and feeds :func:`classifier_steps_vjp`.
    """
    steps = cfg.steps if steps is None else steps
    if bank.shape[0] != targets.shape[0]:
        raise ShapeError(f"bank {bank.shape} and targets {targets.shape} disagree on N")
    dtype = bank.dtype
    norm = dtype.type(2.0 / (targets.size))
    eta = dtype.type(cfg.step_size)
    reg2 = dtype.type(2.0 * cfg.reg)
    pad = filt.shape[2] // 2
    filt = filt.astype(dtype, copy=True)
    bias = dtype.type(bias)
    prep = PreparedInput(bank, pad)
    records = []
    for _ in range(steps):
        r = conv2d(prep, filt, pad) + bias - targets
        g_filt = norm * conv2d_grad_kernel(prep, r, filt.shape, pad) + reg2 * filt
        g_bias = norm * r.sum(dtype=dtype)
        if record:
            records.append(_StepRecord(filt, r, g_filt))
        filt = filt - eta * g_filt
        bias = bias - eta * g_bias
    return filt, float(bias), records


def classifier_steps_vjp(bank, records, cfg: UpdateConfig, g_filt_out, g_bias_out):
    """Reverse pass of :func:`classifier_steps` w.r.t. the bank (and the initial model).

    Returns ``(g_bank, g_filt_init, g_bias_init)``.
    """
    dtype = bank.dtype
    norm = dtype.type(2.0 / (records[0].residual.size)) if records else dtype.type(0)
    eta = dtype.type(cfg.step_size)
    reg2 = dtype.type(2.0 * cfg.reg)
    g_bank = np.zeros_like(bank)
    gf = np.asarray(g_filt_out, dtype=dtype).copy()
    gb = dtype.type(g_bias_out)
    prep = PreparedInput(bank, records[0].filt.shape[2] // 2) if records else None
    for rec in reversed(records):
        pad = rec.filt.shape[2] // 2
        # filt_next = filt - eta * g_filt, bias_next = bias - eta * g_bias
        gg_filt = -eta * gf
        gg_bias = -eta * gb
        # g_filt = norm * K(bank, r) + reg2 * filt, K bilinear in (bank, r)
        g_r = norm * conv2d(prep, gg_filt, pad) + norm * gg_bias
        g_bank += norm * conv2d_grad_input(bank.shape, gg_filt, rec.residual, pad)
        gf = gf + reg2 * gg_filt
        # r = conv(bank, filt) + bias - targets
        g_bank += conv2d_grad_input(bank.shape, rec.filt, g_r, pad)
        gf = gf + conv2d_grad_kernel(prep, g_r, rec.filt.shape, pad)
        gb = gb + g_r.sum(dtype=dtype)
    return g_bank, gf, float(gb)


# -- siamese template -------------------------------------------------------

def _crop_slices(cell, k, h, w):
    r, c = cell
    half = k // 2
    r0, c0 = r - half, c - half
    src_r = slice(max(r0, 0), min(r0 + k, h))
    src_c = slice(max(c0, 0), min(c0 + k, w))
    dst_r = slice(src_r.start - r0, src_r.stop - r0)
    dst_c = slice(src_c.start - c0, src_c.stop - c0)
    return src_r, src_c, dst_r, dst_c


def crop_template(feat: np.ndarray, cell: tuple[int, int], k: int) -> np.ndarray:
    """(1, C, k, k) window of ``feat`` centred at ``cell``; zeros past the border."""
    _, c, h, w = feat.shape
    out = np.zeros((1, c, k, k), dtype=feat.dtype)
    sr, sc, dr, dc = _crop_slices(cell, k, h, w)
    out[:, :, dr, dc] = feat[:, :, sr, sc]
    return out


def crop_template_vjp(feat_shape, cell, k, grad) -> np.ndarray:
    _, c, h, w = feat_shape
    g = np.zeros(feat_shape, dtype=grad.dtype)
    sr, sc, dr, dc = _crop_slices(cell, k, h, w)
    g[:, :, sr, sc] = grad[:, :, dr, dc]
    return g


def siamese_template_update(template, feat, cell, rate) -> np.ndarray:
    crop = crop_template(feat, cell, template.shape[2])
    dtype = template.dtype
    return (dtype.type(1.0 - rate) * template + dtype.type(rate) * crop).astype(dtype, copy=False)


def init_state(mode: str, first_emb: np.ndarray, first_cell, cfg: UpdateConfig,
               bank: np.ndarray | None = None, bank_targets: np.ndarray | None = None) -> TrackerState:
    """Object model at the first frame.

    Siamese: the template is the first-frame crop. Classifier: ``init_steps``
    descent steps from zero on the initial bank.
    """
    k = cfg.kernel_size
    if mode == "siamese":
        return TrackerState("siamese", crop_template(first_emb, first_cell, k), 0.0, cfg)
    c = first_emb.shape[1]
    filt = np.zeros((1, c, k, k), dtype=first_emb.dtype)
    if bank is None:
        bank = first_emb
        h, w = first_emb.shape[2:]
        bank_targets = target_map(first_cell, h, w, cfg.target_sigma, first_emb.dtype)
    filt, bias, _ = classifier_steps(filt, 0.0, bank, bank_targets, cfg, steps=cfg.init_steps)
    return TrackerState("classifier", filt, bias, cfg)
