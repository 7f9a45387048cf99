"""Frozen random-filter backbone turning frames into (1, C, h, w) embeddings."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import make_rng


class EmbeddingExtractor:
    """Strided 5x5 convolution with a seeded filter bank, then ReLU.

    With padding 2 and stride ``s`` the map is ``ceil(H / s)`` cells high;
    cell ``i`` is centred on pixel coordinate ``s * i + 0.5``. Half of the
    filters are made zero-mean (edge-like), the rest keep their mean
    (intensity-like); all have unit norm. After the ReLU each channel is
    standardised over the frame (zero mean, unit variance; constant channels
    map to zero) so that the downstream regressions stay well conditioned.
    """

    kernel_size = 5
    padding = 2

    def __init__(self, channels: int = 32, stride: int = 4, seed: int = 7, normalize: bool = True):
        self.channels = channels
        self.stride = stride
        self.seed = seed
        self.normalize = normalize
        rng = make_rng(seed)
        k = self.kernel_size
        w = rng.standard_normal((channels, k * k))
        w[::2] -= w[::2].mean(axis=1, keepdims=True)
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        self.weight = w.astype(np.float32)  # (C, k*k)

    def output_size(self, h_img: int, w_img: int) -> tuple[int, int]:
        k, p, s = self.kernel_size, self.padding, self.stride
        return (h_img + 2 * p - k) // s + 1, (w_img + 2 * p - k) // s + 1

    def __call__(self, frame: np.ndarray) -> np.ndarray:
        return extract_embedding(self, frame)


def extract_embedding(extractor: EmbeddingExtractor, frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float32)
    k, p, s = extractor.kernel_size, extractor.padding, extractor.stride
    if frame.ndim != 2 or min(frame.shape) < k:
        raise ValueError(f"frame must be 2-D and at least {k}x{k}, got {frame.shape}")
    fp = np.pad(frame, p)
    win = sliding_window_view(fp, (k, k))[::s, ::s]  # ho, wo, k, k
    ho, wo = win.shape[:2]
    feat = win.reshape(ho * wo, k * k) @ extractor.weight.T  # (ho*wo, C)
    feat = np.maximum(feat, 0)
    if extractor.normalize:
        mu = feat.mean(axis=0, keepdims=True)
        sd = feat.std(axis=0, keepdims=True)
        feat = np.where(sd > 1e-6, (feat - mu) / np.maximum(sd, 1e-6), 0)
    return np.ascontiguousarray(feat.T.reshape(1, extractor.channels, ho, wo), dtype=np.float32)
