"""Dense NCHW tensor primitives.

Every tensor here is a plain 4-D ``numpy.ndarray`` laid out as
``(n, c, h, w)`` in C (row-major) order. Convolutions follow the deep
learning convention: they compute a cross-correlation, i.e. the kernel is
*not* flipped::

    out[n, o, y, x] = sum_{c, u, v} in_pad[n, c, y + u, x + v] * k[o, c, u, v]

Out-of-bounds taps read zero (zero padding). The default compute precision
is float32; everything is dtype-preserving, so float64 inputs give float64
results (used by the gradient checks).

Random numbers come from :func:`make_rng`, a PCG64 bit generator wrapped in
``numpy.random.Generator``. PCG64's output stream is specified bit-for-bit
by numpy and does not depend on the platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when tensor dimensions are incompatible."""


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator (PCG64) for a 64-bit unsigned seed."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def check4(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (n, c, h, w), got shape {x.shape}")
    if min(x.shape) < 1:
        raise ShapeError(f"{name} has an empty dimension: {x.shape}")
    return x


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    """Zero-pad the spatial dims; the result is a (n, c, ...) view of a
    channel-major (c, n, ...) buffer."""
    n, c, h, w = x.shape
    out = np.zeros((c, n, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
    out[:, :, padding:padding + h, padding:padding + w] = x.transpose(1, 0, 2, 3)
    return out.transpose(1, 0, 2, 3)


class PreparedInput:
    """A conv input padded and laid out once, for repeated use with one padding.

    Pass it instead of the raw array to :func:`conv2d` or
    :func:`conv2d_grad_kernel` when the same input meets many kernels.
    """

    def __init__(self, x: np.ndarray, padding: int):
        self.x = check4(x, "input")
        self.padding = padding
        self.shape = self.x.shape
        self.dtype = self.x.dtype
        self.xp = _pad(self.x, padding)
        self._cols = {}

    @property
    def xt(self) -> np.ndarray:
        """Padded input as (cin, n * hp * wp)."""
        n, cin, hp, wp = self.xp.shape
        return self.xp.transpose(1, 0, 2, 3).reshape(cin, n * hp * wp)

    def cols(self, kh: int, kw: int) -> np.ndarray:
        """Patch matrix (cin * kh * kw, n * ho * wo), cached per kernel size."""
        if (kh, kw) not in self._cols:
            n, cin, hp, wp = self.xp.shape
            ho, wo = hp - kh + 1, wp - kw + 1
            xc = self.xp.transpose(1, 0, 2, 3)
            cols = np.empty((cin, kh, kw, n, ho, wo), dtype=self.dtype)
            for u in range(kh):
                for v in range(kw):
                    cols[:, u, v] = xc[:, :, u:u + ho, v:v + wo]
            self._cols[(kh, kw)] = cols.reshape(cin * kh * kw, n * ho * wo)
        return self._cols[(kh, kw)]


def _prepared(x, padding) -> PreparedInput:
    if isinstance(x, PreparedInput):
        if x.padding != padding:
            raise ValueError(f"input prepared with padding {x.padding}, used with {padding}")
        return x
    return PreparedInput(x, padding)


def _conv_dims(x_shape, k_shape, padding):
    n, cin, h, w = x_shape
    cout, kcin, kh, kw = k_shape
    if kcin != cin:
        raise ShapeError(
            f"input channels do not match kernel: input {tuple(x_shape)}, kernel {tuple(k_shape)}"
        )
    if padding < 0:
        raise ValueError(f"padding must be >= 0, got {padding}")
    ho = h + 2 * padding - kh + 1
    wo = w + 2 * padding - kw + 1
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"kernel {tuple(k_shape)} larger than padded input {tuple(x_shape)} (padding={padding})"
        )
    return n, cin, h, w, cout, kh, kw, ho, wo


# The two evaluation strategies below give the same values up to rounding.
# "im2col" materialises an (n*ho*wo, cin*kh*kw) patch matrix; "shift" runs
# one GEMM over all taps and shift-adds the per-tap planes. The cheaper one
# (by buffer size) is picked from the shapes alone, so a given shape always
# takes the same path and results stay bit-reproducible.


def _use_im2col(n, cin, cout, kh, kw, ho, wo, hp, wp) -> bool:
    return n * ho * wo * cin * kh * kw <= kh * kw * cout * n * hp * wp


def conv2d(x: np.ndarray, kernel: np.ndarray, padding: int = 0) -> np.ndarray:
    """Cross-correlate ``x`` (n, cin, h, w) with ``kernel`` (cout, cin, kh, kw).

    Output is (n, cout, h + 2p - kh + 1, w + 2p - kw + 1).
    """
    return np.ascontiguousarray(conv2d_cf(x, kernel, padding).transpose(1, 0, 2, 3))


def conv2d_cf(x: np.ndarray, kernel: np.ndarray, padding: int = 0) -> np.ndarray:
    """:func:`conv2d` with the output laid out channel-first, (cout, n, ho, wo)."""
    kernel = check4(kernel, "kernel")
    px = _prepared(x, padding)
    n, cin, h, w, cout, kh, kw, ho, wo = _conv_dims(px.shape, kernel.shape, padding)
    dtype = np.result_type(px.dtype, kernel.dtype)
    hp, wp = h + 2 * padding, w + 2 * padding
    kernel = kernel.astype(dtype, copy=False)

    if _use_im2col(n, cin, cout, kh, kw, ho, wo, hp, wp):
        cols = px.cols(kh, kw).astype(dtype, copy=False)
        return (kernel.reshape(cout, cin * kh * kw) @ cols).reshape(cout, n, ho, wo)

    xt = px.xt.astype(dtype, copy=False)
    wall = kernel.transpose(2, 3, 0, 1).reshape(kh * kw * cout, cin)
    planes = (wall @ xt).reshape(kh, kw, cout, n, hp, wp)
    out = np.zeros((cout, n, ho, wo), dtype=dtype)
    for u in range(kh):
        for v in range(kw):
            out += planes[u, v, :, :, u:u + ho, v:v + wo]
    return out


def conv2d_grad_input(
    input_shape: tuple, kernel: np.ndarray, grad_output: np.ndarray, padding: int = 0
) -> np.ndarray:
    """Adjoint of :func:`conv2d` with respect to its input."""
    return np.ascontiguousarray(conv2d_grad_input_cf(input_shape, kernel, grad_output, padding).transpose(1, 0, 2, 3))


def conv2d_grad_input_cf(
    input_shape: tuple, kernel: np.ndarray, grad_output: np.ndarray, padding: int = 0
) -> np.ndarray:
    """:func:`conv2d_grad_input` laid out channel-first, (cin, n, h, w)."""
    kernel = check4(kernel, "kernel")
    grad_output = check4(grad_output, "grad_output")
    n, cin, h, w, cout, kh, kw, ho, wo = _conv_dims(input_shape, kernel.shape, padding)
    if grad_output.shape != (n, cout, ho, wo):
        raise ShapeError(
            f"grad_output shape {grad_output.shape} does not match conv output {(n, cout, ho, wo)}"
        )
    dtype = np.result_type(kernel, grad_output)
    if kh == kw and padding <= kh - 1:
        # Full correlation with the flipped, channel-swapped kernel.
        flipped = kernel.astype(dtype, copy=False)[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        return conv2d_cf(grad_output.astype(dtype, copy=False), np.ascontiguousarray(flipped), kh - 1 - padding)
    hp, wp = h + 2 * padding, w + 2 * padding
    gt = grad_output.astype(dtype, copy=False).transpose(1, 0, 2, 3).reshape(cout, n * ho * wo)
    wt = kernel.astype(dtype, copy=False).transpose(2, 3, 1, 0).reshape(kh * kw * cin, cout)
    planes = (wt @ gt).reshape(kh, kw, cin, n, ho, wo)
    gxp = np.zeros((cin, n, hp, wp), dtype=dtype)
    for u in range(kh):
        for v in range(kw):
            gxp[:, :, u:u + ho, v:v + wo] += planes[u, v]
    return np.ascontiguousarray(gxp[:, :, padding:padding + h, padding:padding + w])


def conv2d_grad_kernel(
    x: np.ndarray, grad_output: np.ndarray, kernel_shape: tuple, padding: int = 0
) -> np.ndarray:
    """Adjoint of :func:`conv2d` with respect to its kernel."""
    grad_output = check4(grad_output, "grad_output")
    px = _prepared(x, padding)
    n, cin, h, w, cout, kh, kw, ho, wo = _conv_dims(px.shape, kernel_shape, padding)
    if grad_output.shape != (n, cout, ho, wo):
        raise ShapeError(
            f"grad_output shape {grad_output.shape} does not match conv output {(n, cout, ho, wo)}"
        )
    dtype = np.result_type(px.dtype, grad_output.dtype)
    hp, wp = h + 2 * padding, w + 2 * padding
    grad_output = grad_output.astype(dtype, copy=False)

    if _use_im2col(n, cin, cout, kh, kw, ho, wo, hp, wp):
        cols = px.cols(kh, kw).astype(dtype, copy=False)
        g2 = grad_output.transpose(1, 0, 2, 3).reshape(cout, n * ho * wo)
        return (g2 @ cols.T).reshape(cout, cin, kh, kw)

    gsh = np.zeros((kh, kw, cout, n, hp, wp), dtype=dtype)
    gT = grad_output.transpose(1, 0, 2, 3)
    for u in range(kh):
        for v in range(kw):
            gsh[u, v, :, :, u:u + ho, v:v + wo] = gT
    xt = px.xt.astype(dtype, copy=False)
    gk = gsh.reshape(kh * kw * cout, n * hp * wp) @ xt.T  # (kh*kw*cout, cin)
    return np.ascontiguousarray(gk.reshape(kh, kw, cout, cin).transpose(2, 3, 0, 1))


def conv2d_grad(
    x: np.ndarray, kernel: np.ndarray, grad_output: np.ndarray, padding: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(grad_input, grad_kernel)`` for :func:`conv2d`."""
    x = check4(x, "input")
    gi = conv2d_grad_input(x.shape, kernel, grad_output, padding)
    gk = conv2d_grad_kernel(x, grad_output, kernel.shape, padding)
    return gi, gk


def pool_bins(size: int, out: int) -> list[tuple[int, int]]:
    """Bin ``i`` spans ``[floor(i*size/out), ceil((i+1)*size/out))``."""
    return [((i * size) // out, -((-(i + 1) * size) // out)) for i in range(out)]


def _check_pool(x, out_h, out_w):
    x = check4(x, "input")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"pool output dims must be positive, got ({out_h}, {out_w})")
    if out_h > x.shape[2] or out_w > x.shape[3]:
        raise ShapeError(f"pool output ({out_h}, {out_w}) exceeds input spatial dims {x.shape[2:]}")
    return x


def adaptive_avg_pool(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    x = _check_pool(x, out_h, out_w)
    n, c, h, w = x.shape
    out = np.empty((n, c, out_h, out_w), dtype=x.dtype)
    for i, (r0, r1) in enumerate(pool_bins(h, out_h)):
        for j, (c0, c1) in enumerate(pool_bins(w, out_w)):
            out[:, :, i, j] = x[:, :, r0:r1, c0:c1].mean(axis=(2, 3))
    return out


def adaptive_avg_pool_grad(input_shape: tuple, grad_output: np.ndarray) -> np.ndarray:
    n, c, h, w = input_shape
    _, _, out_h, out_w = grad_output.shape
    gx = np.zeros(input_shape, dtype=grad_output.dtype)
    for i, (r0, r1) in enumerate(pool_bins(h, out_h)):
        for j, (c0, c1) in enumerate(pool_bins(w, out_w)):
            area = (r1 - r0) * (c1 - c0)
            gx[:, :, r0:r1, c0:c1] += (grad_output[:, :, i, j] / area)[:, :, None, None]
    return gx


def _pooled_patches(xp, kh, kw, h_out, w_out, out_h, out_w):
    """Bin means of every kernel tap: (n, cin, kh, kw, out_h, out_w).

    Read off a float64 summed-area table, four slices per bin.
    """
    n, cin, hp, wp = xp.shape
    sat = np.zeros((n, cin, hp + 1, wp + 1))
    np.cumsum(np.cumsum(xp, axis=2, dtype=np.float64), axis=3, out=sat[:, :, 1:, 1:])
    P = np.empty((n, cin, kh, kw, out_h, out_w), dtype=xp.dtype)
    for i, (r0, r1) in enumerate(pool_bins(h_out, out_h)):
        for j, (c0, c1) in enumerate(pool_bins(w_out, out_w)):
            box = (sat[:, :, r1:r1 + kh, c1:c1 + kw] - sat[:, :, r0:r0 + kh, c1:c1 + kw]
                   - sat[:, :, r1:r1 + kh, c0:c0 + kw] + sat[:, :, r0:r0 + kh, c0:c0 + kw])
            P[..., i, j] = box / ((r1 - r0) * (c1 - c0))
    return P


def conv2d_avg_pool(
    x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, padding: int, out_h: int, out_w: int
) -> np.ndarray:
    """``adaptive_avg_pool(conv2d(x, kernel, padding) + bias, out_h, out_w)`` in one pass.

    Pooling is linear, so each pooled cell is the kernel contracted with the
    bin means of the shifted input. This never materialises the full-size
    convolution output, which matters when ``cout`` is large.
    """
    x = check4(x, "input")
    kernel = check4(kernel, "kernel")
    n, cin, h, w, cout, kh, kw, ho, wo = _conv_dims(x.shape, kernel.shape, padding)
    if out_h < 1 or out_w < 1 or out_h > ho or out_w > wo:
        raise ShapeError(f"pool output ({out_h}, {out_w}) invalid for conv output ({ho}, {wo})")
    dtype = np.result_type(x, kernel, bias)
    xp = _pad(x.astype(dtype, copy=False), padding)
    P = _pooled_patches(xp, kh, kw, ho, wo, out_h, out_w)
    out = np.tensordot(P, kernel.astype(dtype, copy=False), axes=([1, 2, 3], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2) + np.asarray(bias, dtype=dtype)[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_avg_pool_grad(
    x: np.ndarray, kernel: np.ndarray, grad_output: np.ndarray, padding: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of :func:`conv2d_avg_pool`: ``(grad_input, grad_kernel, grad_bias)``."""
    x = check4(x, "input")
    n, cin, h, w, cout, kh, kw, ho, wo = _conv_dims(x.shape, kernel.shape, padding)
    out_h, out_w = grad_output.shape[2:]
    dtype = np.result_type(x, kernel, grad_output)
    xp = _pad(x.astype(dtype, copy=False), padding)
    P = _pooled_patches(xp, kh, kw, ho, wo, out_h, out_w)
    g = grad_output.astype(dtype, copy=False)
    gk = np.tensordot(g, P, axes=([0, 2, 3], [0, 4, 5]))  # cout, cin, kh, kw
    gb = g.sum(axis=(0, 2, 3))
    k2 = kernel.astype(dtype, copy=False).reshape(cout, cin * kh * kw)
    gP = (k2.T @ g.transpose(1, 0, 2, 3).reshape(cout, -1)).reshape(cin, kh, kw, n, out_h, out_w)
    gxp = np.zeros_like(xp)
    for i, (r0, r1) in enumerate(pool_bins(ho, out_h)):
        for j, (c0, c1) in enumerate(pool_bins(wo, out_w)):
            area = (r1 - r0) * (c1 - c0)
            for u in range(kh):
                for v in range(kw):
                    share = (gP[:, u, v, :, i, j].T / area)[:, :, None, None]
                    gxp[:, :, r0 + u:r1 + u, c0 + v:c1 + v] += share
    gx = gxp[:, :, padding:padding + h, padding:padding + w]
    return np.ascontiguousarray(gx), gk, gb


def elementwise(a: np.ndarray, b, op: str) -> np.ndarray:
    """Pointwise ``add``/``sub``/``mul`` with an equal-shape tensor, or ``scale`` by a scalar.

    No broadcasting beyond scalars.
    """
    a = np.asarray(a)
    if op == "scale" or np.ndim(b) == 0:
        if op in ("scale", "mul"):
            return a * b
        if op == "add":
            return a + b
        if op == "sub":
            return a - b
        raise ValueError(f"unknown op {op!r}")
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"elementwise {op}: shapes differ {a.shape} vs {b.shape}")
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    raise ValueError(f"unknown op {op!r}")


def argmax2d(heat: np.ndarray) -> tuple[int, int]:
    """Row-major first occurrence of the maximum of a (1, 1, h, w) or (h, w) map."""
    m = np.asarray(heat)
    if m.ndim == 4:
        if m.shape[:2] != (1, 1):
            raise ShapeError(f"argmax2d expects a (1, 1, h, w) map, got {m.shape}")
        m = m[0, 0]
    if m.ndim != 2 or m.size == 0:
        raise ShapeError(f"argmax2d expects a non-empty 2-D map, got {m.shape}")
    r, c = divmod(int(np.argmax(m)), m.shape[1])
    return r, c


def gaussian_map(h: int, w: int, peak: tuple[float, float], sigma: float, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """(1, 1, h, w) map ``exp(-|p - peak|^2 / (2 sigma^2))``."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    pr, pc = peak
    if not (0 <= pr <= h - 1 and 0 <= pc <= w - 1):
        raise ValueError(f"peak {peak} outside a {h}x{w} map")
    rows = (np.arange(h, dtype=np.float64) - pr) ** 2
    cols = (np.arange(w, dtype=np.float64) - pc) ** 2
    g = np.exp(-(rows[:, None] + cols[None, :]) / (2.0 * sigma * sigma))
    return g.astype(dtype)[None, None]


@dataclass
class SgdState:
    """Classical momentum SGD with weight decay coupled into the gradient.

    ``v <- momentum * v + grad + weight_decay * param``; ``param <- param - lr * v``.
    """

    learning_rate: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


def sgd_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: SgdState
) -> dict[str, np.ndarray]:
    """Return updated parameters; ``state.velocity`` is updated in place."""
    new = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
            state.velocity[name] = v
        # in place, same evaluation order as momentum * v + g + weight_decay * p
        v *= state.momentum
        v += g
        v += state.weight_decay * p
        new[name] = p - state.learning_rate * v
    return new


def frobenius(x: np.ndarray) -> float:
    return math.sqrt(float(np.sum(np.square(x, dtype=np.float64))))
