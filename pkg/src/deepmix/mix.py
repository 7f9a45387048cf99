"""Object-aware mixing of historical sample embeddings.

A sample bank ``X`` of shape (N, C, h, w) is mixed into K new samples with
two K x N x 3 x 3 kernels, one applied inside each sample's object mask and
one outside it::

    X_hat = (W_obj (*) X) * M + (W_bkg (*) X) * (1 - M)

where ``(*)`` filters every channel independently: channel ``c`` of the bank
is treated as an N-channel image and convolved (zero padding 1) into K
planes. Masks live in feature-map coordinates, obtained by dividing pixel
boxes by the backbone stride.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, check4, conv2d_cf, conv2d_grad_input_cf, conv2d_grad_kernel


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in image pixels; ``(x, y)`` is the top-left corner."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box extent must be positive, got w={self.w}, h={self.h}")

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.w / 2.0, self.y + self.h / 2.0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BoundingBox":
        return cls(cx - w / 2.0, cy - h / 2.0, w, h)


@dataclass(frozen=True)
class ObjectMask:
    """Binary (N, C, h, w) mask plus the stride it was built with.

    ``empty[i]`` is True when box ``i`` missed the feature map entirely.
    """

    mask: np.ndarray
    stride: int
    empty: tuple[bool, ...] = ()

    @property
    def any_empty(self) -> bool:
        return any(self.empty)


@dataclass(frozen=True)
class MixKernelPair:
    w_obj: np.ndarray
    w_bkg: np.ndarray

    def __post_init__(self):
        check4(self.w_obj, "w_obj")
        if self.w_obj.shape != self.w_bkg.shape:
            raise ShapeError(f"kernel pair dims differ: {self.w_obj.shape} vs {self.w_bkg.shape}")


@dataclass(frozen=True)
class BlendConfig:
    alpha_aug: float = 0.05
    alpha_raw: float = 0.8

    def __post_init__(self):
        if self.alpha_aug < 0 or self.alpha_raw < 0:
            raise ValueError("blend weights must be non-negative")


def box_cell_range(lo: float, extent: float, stride: int, size: int) -> tuple[int, int] | None:
    """Inclusive cell range touched by ``[lo, lo + extent)``, or None if off-map."""
    first = math.floor(lo / stride)
    last = math.ceil((lo + extent) / stride) - 1
    if last < 0 or first > size - 1 or last < first:
        return None
    return max(first, 0), min(last, size - 1)


def mask_from_boxes(
    boxes: list[BoundingBox], feature_dims: tuple[int, int, int], stride: int, dtype=np.float32
) -> ObjectMask:
    """Mark every feature cell whose pixel footprint meets the sample's box.

    Rounding is outward (floor at the start, ceil at the end) so thin boxes
    never vanish; the range is clamped to the map.
    """
    if len(boxes) < 1:
        raise ValueError("need at least one box")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    c, h, w = feature_dims
    plane = np.zeros((len(boxes), h, w), dtype=dtype)
    empty = []
    for i, b in enumerate(boxes):
        rows = box_cell_range(b.y, b.h, stride, h)
        cols = box_cell_range(b.x, b.w, stride, w)
        if rows is None or cols is None:
            empty.append(True)
            continue
        empty.append(False)
        plane[i, rows[0]:rows[1] + 1, cols[0]:cols[1] + 1] = 1
    mask = np.ascontiguousarray(np.broadcast_to(plane[:, None], (len(boxes), c, h, w)))
    return ObjectMask(mask=mask, stride=stride, empty=tuple(empty))


def _mask_array(mask) -> np.ndarray:
    return mask.mask if isinstance(mask, ObjectMask) else np.asarray(mask)


def sample_mix_conv(samples: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Filter (N, C, h, w) samples with a (K, N, 3, 3) kernel into (K, C, h, w)."""
    samples = check4(samples, "samples")
    kernel = check4(kernel, "kernel")
    if kernel.shape[1] != samples.shape[0]:
        raise ShapeError(
            f"kernel {kernel.shape} expects N={kernel.shape[1]} samples, got samples {samples.shape}"
        )
    pad = kernel.shape[2] // 2
    # channel axis becomes the batch axis
    return conv2d_cf(samples.transpose(1, 0, 2, 3), kernel, padding=pad)


def sample_mix_conv_grad_kernel(samples: np.ndarray, kernel_shape: tuple, grad_output: np.ndarray) -> np.ndarray:
    pad = kernel_shape[2] // 2
    return conv2d_grad_kernel(
        samples.transpose(1, 0, 2, 3), grad_output.transpose(1, 0, 2, 3), kernel_shape, pad
    )


def sample_mix_conv_grad_samples(samples_shape: tuple, kernel: np.ndarray, grad_output: np.ndarray) -> np.ndarray:
    n, c, h, w = samples_shape
    pad = kernel.shape[2] // 2
    return conv2d_grad_input_cf((c, n, h, w), kernel, grad_output.transpose(1, 0, 2, 3), pad)


def _check_combine(samples, kernels, m):
    k, n = kernels.w_obj.shape[:2]
    expected = (k,) + tuple(samples.shape[1:])
    if m.shape != expected:
        raise ShapeError(f"mask shape {m.shape} does not match output dims {expected}")


def deepmix_combine(samples: np.ndarray, kernels: MixKernelPair, mask) -> np.ndarray:
    """Object-branch filtering inside ``mask``, background-branch outside it."""
    samples = check4(samples, "samples")
    m = _mask_array(mask)
    _check_combine(samples, kernels, m)
    if kernels.w_obj is kernels.w_bkg:
        # shared kernel: the mask selects between identical values
        return sample_mix_conv(samples, kernels.w_obj)
    # Both branches in one convolution over the stacked (2K, N, 3, 3) kernel.
    k = kernels.w_obj.shape[0]
    both = sample_mix_conv(samples, np.concatenate([kernels.w_obj, kernels.w_bkg], axis=0))
    obj, bkg = both[:k], both[k:]
    return obj * m + bkg * (1 - m)


def deepmix_combine_grad(
    samples: np.ndarray, kernels: MixKernelPair, mask, grad_output: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of :func:`deepmix_combine` with respect to ``(w_obj, w_bkg)``."""
    m = _mask_array(mask)
    g_obj = grad_output * m
    g_bkg = grad_output - g_obj
    k, n, kh, kw = kernels.w_obj.shape
    g = sample_mix_conv_grad_kernel(samples, (2 * k, n, kh, kw), np.concatenate([g_obj, g_bkg], axis=0))
    return g[:k], g[k:]


def alpha_blend(aug: np.ndarray, raw: np.ndarray, cfg: BlendConfig = BlendConfig()) -> np.ndarray:
    aug = np.asarray(aug)
    raw = np.asarray(raw)
    if aug.shape != raw.shape:
        raise ShapeError(f"cannot blend augmented {aug.shape} with raw {raw.shape}")
    dtype = np.result_type(aug, raw)
    return (dtype.type(cfg.alpha_aug) * aug + dtype.type(cfg.alpha_raw) * raw).astype(dtype, copy=False)


def reduce_kernels(kernels: MixKernelPair) -> MixKernelPair:
    """Average a (K, N, 3, 3) pair down to (1, 1, 3, 3) over samples and outputs."""
    return MixKernelPair(
        w_obj=kernels.w_obj.mean(axis=(0, 1), keepdims=True),
        w_bkg=kernels.w_bkg.mean(axis=(0, 1), keepdims=True),
    )


def template_refresh(current_feature: np.ndarray, kernels: MixKernelPair | None, mask) -> np.ndarray:
    """Refresh the current (1, C, h, w) feature with history-predicted kernels.

    The pair is reduced over its output and history axes to one 3x3 filter
    per branch and applied with the object/background split of ``mask``.
    ``kernels=None`` (no history) returns the feature unchanged.
    """
    current_feature = check4(current_feature, "current_feature")
    if current_feature.shape[0] != 1:
        raise ShapeError(f"current_feature must have n=1, got {current_feature.shape}")
    if kernels is None:
        return current_feature.copy()
    return deepmix_combine(current_feature, reduce_kernels(kernels), mask)


def template_refresh_grad(
    current_feature: np.ndarray, kernels: MixKernelPair, mask, grad_output: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of :func:`template_refresh` with respect to the unreduced pair."""
    red = reduce_kernels(kernels)
    g_obj, g_bkg = deepmix_combine_grad(current_feature, red, mask, grad_output)
    k, n = kernels.w_obj.shape[:2]
    scale = 1.0 / (k * n)
    shape = kernels.w_obj.shape
    return (
        np.broadcast_to(g_obj * scale, shape).copy(),
        np.broadcast_to(g_bkg * scale, shape).copy(),
    )
