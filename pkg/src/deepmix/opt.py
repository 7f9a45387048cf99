"""Mixing kernels by online gradient descent (the slow reference to MixNet).

The objective is the L2 distance between the heat map the updated tracker
produces on the query and a Gaussian peaked at the detected position. The
kernel pair starts from the uniform averaging kernel (or zeros) and takes
``iterations`` fixed-size gradient steps. In guarded mode a step that would
raise the objective is retried with the step size halved, up to
``max_halvings`` times; if none of those helps the kernels stay put, so the
objective trace never increases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .episode import Episode, episode_grad, episode_loss
from .mix import BlendConfig, MixKernelPair


@dataclass(frozen=True)
class OptConfig:
    iterations: int = 10
    step_size: float = 0.1
    init: str = "uniform"
    guarded: bool = True
    max_halvings: int = 20

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.init not in ("uniform", "zeros"):
            raise ValueError(f"init must be 'uniform' or 'zeros', got {self.init!r}")


class OptimizationError(RuntimeError):
    pass


def initial_kernels(k: int, n: int, init: str = "uniform", dtype=np.float32) -> MixKernelPair:
    value = 1.0 / (9 * n) if init == "uniform" else 0.0
    w = np.full((k, n, 3, 3), value, dtype=dtype)
    return MixKernelPair(w, w.copy())


def opt_objective(kernels: MixKernelPair, ep: Episode, blend: BlendConfig = BlendConfig()) -> float:
    """Sum of squared differences between the post-update heat map and the target."""
    return episode_loss(kernels, ep, blend)


def opt_gradient(kernels: MixKernelPair, ep: Episode, blend: BlendConfig = BlendConfig()):
    """``(grad_w_obj, grad_w_bkg)`` of :func:`opt_objective`."""
    _, g_obj, g_bkg = episode_grad(kernels, ep, blend)
    return g_obj, g_bkg


def deepmix_opt(ep: Episode, cfg: OptConfig = OptConfig(), blend: BlendConfig = BlendConfig(),
                k: int | None = None, start: MixKernelPair | None = None):
    """Return the tuned pair and the ``iterations + 1`` objective values along the way."""
    n = ep.samples.shape[0]
    if k is None:
        k = n if ep.mode == "classifier" else 1
    dtype = ep.samples.dtype
    kernels = start if start is not None else initial_kernels(k, n, cfg.init, dtype)
    value, g_obj, g_bkg = episode_grad(kernels, ep, blend)
    trace = [value]
    for it in range(cfg.iterations):
        if not math.isfinite(value):
            raise OptimizationError(f"non-finite objective at iteration {it}")
        step = cfg.step_size
        accepted = False
        for _ in range(cfg.max_halvings + 1 if cfg.guarded else 1):
            s = dtype.type(step)
            cand = MixKernelPair(kernels.w_obj - s * g_obj, kernels.w_bkg - s * g_bkg)
            cand_value = episode_loss(cand, ep, blend)
            if not cfg.guarded or cand_value <= value:
                accepted = True
                break
            step *= 0.5
        if accepted:
            kernels = cand
            value, g_obj, g_bkg = episode_grad(kernels, ep, blend)
            if not math.isfinite(value):
                raise OptimizationError(f"non-finite objective at iteration {it + 1}")
        trace.append(value)
    return kernels, trace
