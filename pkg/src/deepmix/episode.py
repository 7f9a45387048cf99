"""The differentiable augment -> update -> localise chain.

An :class:`Episode` freezes everything one model update needs: the history
bank, the masks, the tracker state before the update and one or more query
frames with Gaussian targets. Given a mixing-kernel pair, :func:`episode_loss`
runs the chain and returns the summed squared heat-map error on the queries;
:func:`episode_grad` returns the same loss plus its gradient with respect to
both kernels. MixNet training and the gradient-descent kernel oracle both
sit on top of these two functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mix import (
    BlendConfig,
    MixKernelPair,
    alpha_blend,
    deepmix_combine,
    deepmix_combine_grad,
    template_refresh,
    template_refresh_grad,
)
from .models import (
    TrackerState,
    classifier_steps,
    classifier_steps_vjp,
    crop_template_vjp,
    heat_map,
    heat_map_vjp,
    siamese_template_update,
)
from .tensor import ShapeError


@dataclass
class Episode:
    """One model update plus the frames it is judged on.

    ``mask`` is (K, C, h, w) for the classifier (the masks of the bank) and
    (1, C, h, w) for the Siamese tracker (the current detection). The
    classifier needs ``bank_targets``; the Siamese tracker needs ``current``
    and ``current_cell``.
    """

    state: TrackerState
    samples: np.ndarray
    mask: np.ndarray
    queries: np.ndarray
    query_targets: np.ndarray
    bank_targets: np.ndarray | None = None
    current: np.ndarray | None = None
    current_cell: tuple[int, int] | None = None

    def __post_init__(self):
        if self.queries.shape[0] != self.query_targets.shape[0]:
            raise ShapeError("queries and query_targets disagree on count")
        if self.query_targets.shape[2:] != self.queries.shape[2:]:
            raise ShapeError(
                f"target dims {self.query_targets.shape} do not match heat-map dims {self.queries.shape}"
            )
        if self.state.mode == "classifier" and self.bank_targets is None:
            raise ValueError("classifier episodes need bank_targets")
        if self.state.mode == "siamese" and (self.current is None or self.current_cell is None):
            raise ValueError("siamese episodes need current and current_cell")

    @property
    def mode(self) -> str:
        return self.state.mode

    def astype(self, dtype) -> "Episode":
        conv = lambda a: None if a is None else a.astype(dtype)
        st = self.state.copy()
        st.filt = st.filt.astype(dtype)
        return Episode(st, conv(self.samples), conv(self.mask), conv(self.queries),
                       conv(self.query_targets), conv(self.bank_targets), conv(self.current),
                       self.current_cell)


def updated_model(ep: Episode, kernels: MixKernelPair | None, blend: BlendConfig, record=False):
    """Run the update. ``kernels=None`` feeds the raw samples (no augmentation)."""
    st = ep.state
    cfg = st.config
    if ep.mode == "classifier":
        if kernels is None:
            bank = ep.samples
        else:
            bank = alpha_blend(deepmix_combine(ep.samples, kernels, ep.mask), ep.samples, blend)
        filt, bias, recs = classifier_steps(st.filt, st.bias, bank, ep.bank_targets, cfg, record=record)
        return filt, bias, (bank, recs)
    if kernels is None:
        feat = ep.current
    else:
        feat = alpha_blend(template_refresh(ep.current, kernels, ep.mask), ep.current, blend)
    filt = siamese_template_update(st.filt, feat, ep.current_cell, cfg.template_rate)
    return filt, 0.0, (feat, None)


def episode_loss(kernels: MixKernelPair | None, ep: Episode, blend: BlendConfig = BlendConfig()) -> float:
    filt, bias, _ = updated_model(ep, kernels, blend)
    r = heat_map(filt, bias, ep.queries) - ep.query_targets
    return float(np.sum(np.square(r, dtype=np.float64)))


def episode_grad(kernels: MixKernelPair, ep: Episode, blend: BlendConfig = BlendConfig()):
    """Return ``(loss, grad_w_obj, grad_w_bkg)``."""
    filt, bias, (bank, recs) = updated_model(ep, kernels, blend, record=True)
    r = heat_map(filt, bias, ep.queries) - ep.query_targets
    loss = float(np.sum(np.square(r, dtype=np.float64)))
    g_heat = 2 * r
    g_filt, g_bias = heat_map_vjp(filt, ep.queries, g_heat)
    a1 = bank.dtype.type(blend.alpha_aug)
    cfg = ep.state.config
    if ep.mode == "classifier":
        g_bank, _, _ = classifier_steps_vjp(bank, recs, cfg, g_filt, g_bias)
        g_obj, g_bkg = deepmix_combine_grad(ep.samples, kernels, ep.mask, a1 * g_bank)
    else:
        k = filt.shape[2]
        g_feat = crop_template_vjp(bank.shape, ep.current_cell, k, bank.dtype.type(cfg.template_rate) * g_filt)
        g_obj, g_bkg = template_refresh_grad(ep.current, kernels, ep.mask, a1 * g_feat)
    return loss, g_obj, g_bkg
