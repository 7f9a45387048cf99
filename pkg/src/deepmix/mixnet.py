"""MixNet: a small conv net that predicts the mixing kernels in one pass.

Each branch sees the channel mean of the sample bank, a (1, N, h, w) image,
and runs::

    conv3x3(N -> 2N) -> ReLU -> conv3x3(2N -> 2N) -> ReLU
    -> conv3x3(2N -> K*N) -> adaptive average pool to 3x3

then reshapes the K*N pooled channels into a (K, N, 3, 3) kernel. The dual
model has independent object and background branches; the single-branch
ablation returns one kernel for both roles.

Initialisation: conv1/conv2 weights are uniform in ``+-1/sqrt(fan_in)``
(fan_in = in_channels * 9) with zero bias; conv3 has zero weights and a
bias of ``1/(9N)``, so an untrained net predicts the uniform averaging
kernel.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .container import FormatError, read_container, write_container
from .episode import Episode, episode_grad
from .mix import BlendConfig, MixKernelPair
from .tensor import (
    SgdState,
    ShapeError,
    check4,
    conv2d,
    conv2d_avg_pool,
    conv2d_avg_pool_grad,
    conv2d_grad_input,
    conv2d_grad_kernel,
    make_rng,
    sgd_step,
)

log = logging.getLogger(__name__)

BRANCHES = {"dual": ("obj", "bkg"), "single": ("obj",)}


@dataclass
class MixNetWeights:
    n: int
    k: int
    branches: str
    params: dict[str, np.ndarray]

    @property
    def branch_names(self) -> tuple[str, ...]:
        return BRANCHES[self.branches]

    def astype(self, dtype) -> "MixNetWeights":
        return MixNetWeights(self.n, self.k, self.branches, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "MixNetWeights":
        return MixNetWeights(self.n, self.k, self.branches, {k: v.copy() for k, v in self.params.items()})


def layer_shapes(n: int, k: int) -> dict[str, tuple[int, ...]]:
    return {
        "conv1.weight": (2 * n, n, 3, 3),
        "conv1.bias": (2 * n,),
        "conv2.weight": (2 * n, 2 * n, 3, 3),
        "conv2.bias": (2 * n,),
        "conv3.weight": (k * n, 2 * n, 3, 3),
        "conv3.bias": (k * n,),
    }


def mixnet_init(n: int, k: int, branches: str = "dual", rng: np.random.Generator | None = None,
                dtype=np.float32) -> MixNetWeights:
    if n < 1 or k < 1:
        raise ValueError(f"n and k must be >= 1, got n={n}, k={k}")
    if branches not in BRANCHES:
        raise ValueError(f"branches must be 'dual' or 'single', got {branches!r}")
    rng = make_rng(0) if rng is None else rng
    params = {}
    for b in BRANCHES[branches]:
        for name, shape in layer_shapes(n, k).items():
            key = f"{b}.{name}"
            if name in ("conv1.weight", "conv2.weight"):
                bound = 1.0 / math.sqrt(shape[1] * 9)
                params[key] = rng.uniform(-bound, bound, size=shape).astype(dtype)
            elif name == "conv3.bias":
                params[key] = np.full(shape, 1.0 / (9 * n), dtype=dtype)
            else:
                params[key] = np.zeros(shape, dtype=dtype)
    return MixNetWeights(n, k, branches, params)


def _reduce_input(weights: MixNetWeights, samples: np.ndarray) -> np.ndarray:
    samples = check4(samples, "samples")
    if samples.shape[0] != weights.n:
        raise ShapeError(f"MixNet built for N={weights.n} samples, got bank {samples.shape}")
    if samples.shape[2] < 3 or samples.shape[3] < 3:
        raise ShapeError(f"spatial dims must be at least 3x3, got {samples.shape[2:]}")
    return samples.mean(axis=1)[None]  # (1, N, h, w)


def _branch_forward(p: dict, prefix: str, z0: np.ndarray, n: int, k: int):
    a1 = conv2d(z0, p[f"{prefix}.conv1.weight"], 1) + p[f"{prefix}.conv1.bias"][None, :, None, None]
    h1 = np.maximum(a1, 0)
    a2 = conv2d(h1, p[f"{prefix}.conv2.weight"], 1) + p[f"{prefix}.conv2.bias"][None, :, None, None]
    h2 = np.maximum(a2, 0)
    pooled = conv2d_avg_pool(h2, p[f"{prefix}.conv3.weight"], p[f"{prefix}.conv3.bias"], 1, 3, 3)
    kernel = pooled.reshape(k, n, 3, 3)
    return kernel, (a1, h1, a2, h2)


def _branch_backward(p: dict, prefix: str, z0, cache, g_kernel):
    a1, h1, a2, h2 = cache
    g_pooled = g_kernel.reshape(1, -1, 3, 3)
    w3 = p[f"{prefix}.conv3.weight"]
    g_h2, g_w3, g_b3 = conv2d_avg_pool_grad(h2, w3, g_pooled, 1)
    g_a2 = g_h2 * (a2 > 0)
    w2 = p[f"{prefix}.conv2.weight"]
    g_w2 = conv2d_grad_kernel(h1, g_a2, w2.shape, 1)
    g_h1 = conv2d_grad_input(h1.shape, w2, g_a2, 1)
    g_a1 = g_h1 * (a1 > 0)
    g_w1 = conv2d_grad_kernel(z0, g_a1, p[f"{prefix}.conv1.weight"].shape, 1)
    return {
        f"{prefix}.conv1.weight": g_w1,
        f"{prefix}.conv1.bias": g_a1.sum(axis=(0, 2, 3)),
        f"{prefix}.conv2.weight": g_w2,
        f"{prefix}.conv2.bias": g_a2.sum(axis=(0, 2, 3)),
        f"{prefix}.conv3.weight": g_w3,
        f"{prefix}.conv3.bias": g_b3,
    }


def mixnet_forward(weights: MixNetWeights, samples: np.ndarray) -> MixKernelPair:
    """Predict ``(w_obj, w_bkg)``, each (K, N, 3, 3), from a (N, C, h, w) bank."""
    pair, _ = _forward(weights, samples)
    return pair


def _forward(weights: MixNetWeights, samples: np.ndarray):
    z0 = _reduce_input(weights, samples)
    caches = {}
    kernels = {}
    for b in weights.branch_names:
        kernels[b], caches[b] = _branch_forward(weights.params, b, z0, weights.n, weights.k)
    if weights.branches == "single":
        pair = MixKernelPair(kernels["obj"], kernels["obj"])
    else:
        pair = MixKernelPair(kernels["obj"], kernels["bkg"])
    return pair, (z0, caches)


def mixnet_backward(weights: MixNetWeights, cache, g_obj: np.ndarray, g_bkg: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given the gradients of both predicted kernels."""
    z0, caches = cache
    if weights.branches == "single":
        return _branch_backward(weights.params, "obj", z0, caches["obj"], g_obj + g_bkg)
    grads = _branch_backward(weights.params, "obj", z0, caches["obj"], g_obj)
    grads.update(_branch_backward(weights.params, "bkg", z0, caches["bkg"], g_bkg))
    return grads


def mixnet_value_and_grad(weights: MixNetWeights, ep: Episode, blend: BlendConfig = BlendConfig()):
    """Episode loss for the predicted kernels and its gradient w.r.t. every parameter."""
    pair, cache = _forward(weights, ep.samples)
    loss, g_obj, g_bkg = episode_grad(pair, ep, blend)
    return loss, mixnet_backward(weights, cache, g_obj, g_bkg)


# -- training ---------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 0.0005
    epochs: int = 10
    samples_per_epoch: int = 100
    seed: int = 42

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.momentum > 0 and self.weight_decay > 0):
            raise ValueError("learning_rate, momentum and weight_decay must be positive")

    @classmethod
    def preset(cls, mode: str, scale: str = "desk", **overrides) -> "TrainConfig":
        """Schedules: ``desk`` (10 x 500 siamese, 10 x 100 classifier) or ``full``
        (40 x 6000 siamese, 50 x 1000 classifier)."""
        table = {
            ("siamese", "desk"): (10, 500),
            ("classifier", "desk"): (10, 100),
            ("siamese", "full"): (40, 6000),
            ("classifier", "full"): (50, 1000),
        }
        epochs, per_epoch = table[(mode, scale)]
        kw = dict(epochs=epochs, samples_per_epoch=per_epoch)
        kw.update(overrides)
        return cls(**kw)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    weights: MixNetWeights
    loss_history: list[float] = field(default_factory=list)


def train_mixnet(corpus: list[Episode], cfg: TrainConfig, k: int | None = None, branches: str = "dual",
                 blend: BlendConfig = BlendConfig(), init: MixNetWeights | None = None) -> TrainResult:
    """Meta-train MixNet through the tracker update it feeds.

    Each step predicts kernels for one episode, mixes and blends the bank,
    runs the tracker update, scores the queries against their Gaussian
    targets and backpropagates the L2 loss to the MixNet parameters. Every
    epoch visits ``samples_per_epoch`` episodes drawn (cycling) from a
    seeded permutation of ``corpus``. The tracker mode comes from the
    episodes themselves.
    """
    if not corpus:
        raise ValueError("empty training corpus")
    n = corpus[0].samples.shape[0]
    if k is None:
        k = n if corpus[0].mode == "classifier" else 1
    rng = make_rng(cfg.seed)
    weights = init.copy() if init is not None else mixnet_init(n, k, branches, rng)
    state = SgdState(cfg.learning_rate, cfg.momentum, cfg.weight_decay)
    history = []
    order = np.arange(len(corpus))
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(corpus))
        total = 0.0
        for i in range(cfg.samples_per_epoch):
            ep = corpus[order[i % len(order)]]
            loss, grads = mixnet_value_and_grad(weights, ep, blend)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingError(f"non-finite loss or gradient at epoch {epoch}, sample {i}")
            weights.params = sgd_step(weights.params, grads, state)
            total += loss
        history.append(total / cfg.samples_per_epoch)
        log.info("epoch %d mean loss %.6f", epoch, history[-1])
    return TrainResult(weights, history)


# -- persistence ------------------------------------------------------------

def save_weights(weights: MixNetWeights, path) -> None:
    tensors = {
        "meta.n": np.array(weights.n, dtype=np.float64),
        "meta.k": np.array(weights.k, dtype=np.float64),
        "meta.branches": np.array(len(weights.branch_names), dtype=np.float64),
    }
    tensors.update(weights.params)
    write_container(path, tensors)


def load_weights(path) -> MixNetWeights:
    t = read_container(path)
    try:
        n = int(t.pop("meta.n"))
        k = int(t.pop("meta.k"))
        branches = {1: "single", 2: "dual"}[int(t.pop("meta.branches"))]
    except KeyError as exc:
        raise FormatError(f"{path}: missing MixNet metadata {exc}") from exc
    expected = {f"{b}.{name}": shape for b in BRANCHES[branches] for name, shape in layer_shapes(n, k).items()}
    if set(t) != set(expected):
        raise FormatError(f"{path}: tensor names do not match a {branches} MixNet (n={n}, k={k})")
    for name, shape in expected.items():
        if t[name].shape != shape:
            raise FormatError(f"{path}: {name} has shape {t[name].shape}, expected {shape}")
    return MixNetWeights(n, k, branches, {name: t[name] for name in expected})
