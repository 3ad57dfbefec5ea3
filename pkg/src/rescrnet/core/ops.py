"""Layer primitives on ``[batch, rows, cols, channels]`` tensors.

Every op here preserves the spatial dimensions of its input (SAME padding,
zero fill) so blocks can be stacked on images of any size.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from ..errors import ConfigError, ShapeError
from .tensor import Tensor, as_tensor, concat


def _check4d(x: Tensor, what: str = "input") -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what} must be [batch, rows, cols, channels], got shape {x.shape}", dim="rank")


@dataclass
class ConvKernel:
    """Weights of a depthwise (per-channel spatial) or pointwise (1x1) convolution.

    Depthwise weights have layout ``[kh, kw, channels]``; pointwise weights
    ``[in_channels, out_channels]``.  ``bias`` may be ``None``.
    """

    kind: str
    weights: Tensor
    bias: Tensor | None = None
    dilation: tuple[int, int] = (1, 1)

    def __post_init__(self):
        w = self.weights.shape
        if self.kind == "depthwise":
            if len(w) != 3:
                raise ConfigError(f"depthwise weights must be [kh, kw, C], got {w}", field="weights")
            if w[0] % 2 == 0 or w[1] % 2 == 0:
                raise ConfigError(f"kernel size must be odd, got {w[:2]}", field="kernel")
            nout = w[2]
        elif self.kind == "pointwise":
            if len(w) != 2:
                raise ConfigError(f"pointwise weights must be [in, out], got {w}", field="weights")
            if tuple(self.dilation) != (1, 1):
                raise ConfigError("pointwise kernels have dilation [1, 1]", field="dilation")
            nout = w[1]
        else:
            raise ConfigError(f"unknown kernel kind {self.kind!r}", field="kind")
        if min(self.dilation) < 1:
            raise ConfigError(f"dilation must be >= 1, got {self.dilation}", field="dilation")
        if self.bias is not None and self.bias.shape != (nout,):
            raise ConfigError(f"bias must have shape ({nout},), got {self.bias.shape}", field="bias")
        self.dilation = tuple(int(d) for d in self.dilation)

    @property
    def spatial(self) -> tuple[int, int]:
        return tuple(self.weights.shape[:2]) if self.kind == "depthwise" else (1, 1)

    @property
    def in_channels(self) -> int:
        return self.weights.shape[-1] if self.kind == "depthwise" else self.weights.shape[0]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[-1]

    def parameters(self) -> list[Tensor]:
        return [self.weights] + ([self.bias] if self.bias is not None else [])

    def num_params(self) -> int:
        return sum(p.data.size for p in self.parameters())

    @classmethod
    def depthwise(cls, channels: int, size: Sequence[int], dilation=(1, 1), bias: bool = False,
                  rng: np.random.Generator | None = None, dtype=np.float32) -> "ConvKernel":
        kh, kw = size
        w = _fan_in_uniform(rng, (kh, kw, channels), kh * kw, dtype)
        b = Tensor(np.zeros(channels, dtype), requires_grad=True) if bias else None
        return cls("depthwise", Tensor(w, requires_grad=True), b, tuple(dilation))

    @classmethod
    def pointwise(cls, in_channels: int, out_channels: int, bias: bool = True,
                  rng: np.random.Generator | None = None, dtype=np.float32) -> "ConvKernel":
        w = _fan_in_uniform(rng, (in_channels, out_channels), in_channels, dtype)
        b = Tensor(np.zeros(out_channels, dtype), requires_grad=True) if bias else None
        return cls("pointwise", Tensor(w, requires_grad=True), b)


def _fan_in_uniform(rng, shape, fan_in, dtype) -> np.ndarray:
    if rng is None:
        return np.zeros(shape, dtype)
    limit = np.sqrt(3.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def depthwise_conv2d(x: Tensor, k: ConvKernel, dilation: Sequence[int] | None = None) -> Tensor:
    """Per-channel 2-D convolution with SAME zero padding and optional dilation."""
    _check4d(x)
    if k.kind != "depthwise":
        raise ConfigError("depthwise_conv2d needs a depthwise kernel", field="kind")
    if x.shape[3] != k.in_channels:
        raise ShapeError(f"input has {x.shape[3]} channels, kernel expects {k.in_channels}", dim="channels")
    dh, dw = tuple(dilation) if dilation is not None else k.dilation
    w = k.weights.data
    kh, kw, _ = w.shape
    ph, pw = (kh // 2) * dh, (kw // 2) * dw
    b_, h, wd, c = x.shape
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    out = np.zeros(x.shape, dtype=x.dtype)
    taps = [(i, j, (slice(None), slice(i * dh, i * dh + h), slice(j * dw, j * dw + wd)))
            for i in range(kh) for j in range(kw)]
    for i, j, s in taps:
        out += xp[s] * w[i, j]
    if k.bias is not None:
        out += k.bias.data

    def back(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(w)
        for i, j, s in taps:
            gxp[s] += g * w[i, j]
            gw[i, j] = np.einsum("bhwc,bhwc->c", xp[s], g)
        gx = gxp[:, ph:ph + h, pw:pw + wd, :]
        grads = [gx, gw]
        if k.bias is not None:
            grads.append(g.sum(axis=(0, 1, 2)))
        return grads

    return Tensor.from_op(out, [x, *k.parameters()], back, "depthwise_conv2d")


def pointwise_conv2d(x: Tensor, k: ConvKernel) -> Tensor:
    """1x1 convolution: a linear map of every pixel's channel vector, plus bias."""
    _check4d(x)
    if k.kind != "pointwise":
        raise ConfigError("pointwise_conv2d needs a pointwise kernel", field="kind")
    if x.shape[3] != k.in_channels:
        raise ShapeError(f"input has {x.shape[3]} channels, kernel expects {k.in_channels}", dim="channels")
    w = k.weights.data
    flat = x.data.reshape(-1, w.shape[0])
    out = flat @ w
    if k.bias is not None:
        out += k.bias.data
    out_shape = x.shape[:3] + (w.shape[1],)

    def back(g):
        g2 = g.reshape(-1, w.shape[1])
        grads = [(g2 @ w.T).reshape(x.shape), flat.T @ g2]
        if k.bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return Tensor.from_op(out.reshape(out_shape), [x, *k.parameters()], back, "pointwise_conv2d")


def separable_atrous_conv2d(x: Tensor, depthwise_k: ConvKernel, pointwise_k: ConvKernel) -> Tensor:
    return pointwise_conv2d(depthwise_conv2d(x, depthwise_k), pointwise_k)


# ``x > 0`` patterns of leaky_relu inputs, collected only inside kink_trace()
_kink_trace: list[np.ndarray] | None = None


@contextmanager
def kink_trace() -> Iterator[list[np.ndarray]]:
    """Record which side of the kink every leaky_relu input element falls on.

    Two evaluations whose traces differ crossed a non-differentiable point
    in between; gradient checking uses this to exclude those coordinates.
    """
    global _kink_trace
    prev, _kink_trace = _kink_trace, []
    try:
        yield _kink_trace
    finally:
        _kink_trace = prev


def leaky_relu(x: Tensor, alpha: float = 0.3) -> Tensor:
    if not 0 <= alpha < 1:
        raise ConfigError(f"leaky ReLU slope must be in [0, 1), got {alpha}", field="leaky_alpha")
    pos = x.data > 0
    if _kink_trace is not None:
        _kink_trace.append(pos)
    out = np.where(pos, x.data, x.data * x.dtype.type(alpha))
    return Tensor.from_op(out, [x], lambda g: (np.where(pos, g, g * g.dtype.type(alpha)),), "leaky_relu")


def spatial_dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Zero whole channels with probability ``rate``; survivors scaled by 1/(1-rate).

    One keep/drop draw per (batch, channel), shared by every pixel.  In
    inference mode (or at rate 0) the input tensor is returned unchanged.
    """
    if not 0 <= rate < 1:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}", field="dropout_rate")
    if not training or rate == 0:
        return x
    _check4d(x)
    if rng is None:
        raise ConfigError("training-mode dropout needs an rng", field="rng")
    keep = rng.random((x.shape[0], 1, 1, x.shape[3])) >= rate
    scale = (keep / (1.0 - rate)).astype(x.dtype)
    return Tensor.from_op(x.data * scale, [x], lambda g: (g * scale,), "spatial_dropout")


def softmax_channels(x: Tensor) -> Tensor:
    _check4d(x)
    if x.shape[3] < 2:
        raise ShapeError("softmax over channels needs at least 2 channels", dim="channels")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor.from_op(s, [x], back, "softmax")


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat of an empty list", dim="channels")
    for x in xs:
        _check4d(x)
    ref = xs[0].shape[:3]
    for i, x in enumerate(xs[1:], 1):
        for name, a, b in zip(("batch", "rows", "cols"), ref, x.shape[:3]):
            if a != b:
                raise ShapeError(f"concat input {i} has {name}={b}, expected {a}", dim=name)
    if len(xs) == 1:
        return xs[0]
    return concat(xs, axis=-1)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    return x[..., start:stop]


def add(x: Tensor, y: Tensor) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    if x.shape != y.shape:
        dims = ("batch", "rows", "cols", "channels")
        bad = next((dims[i] if i < 4 else str(i) for i, (a, b) in enumerate(zip(x.shape, y.shape)) if a != b), "rank")
        raise ShapeError(f"add needs identical shapes, got {x.shape} and {y.shape}", dim=bad)
    return x + y


@dataclass
class BatchNormState:
    """Per-channel affine scale/shift plus running statistics for inference."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.99
    eps: float = 1e-3

    @classmethod
    def create(cls, channels: int, dtype=np.float32) -> "BatchNormState":
        return cls(Tensor(np.ones(channels, dtype), requires_grad=True),
                   Tensor(np.zeros(channels, dtype), requires_grad=True),
                   np.zeros(channels, dtype), np.ones(channels, dtype))

    def parameters(self) -> list[Tensor]:
        return [self.gamma, self.beta]


def batch_norm(x: Tensor, st: BatchNormState, training: bool) -> Tensor:
    """Batch normalisation over (batch, rows, cols) per channel.

    Statistics and the normalisation run in float64 whatever the storage
    dtype; only the output and the gradients are rounded back.
    """
    _check4d(x)
    axes = (0, 1, 2)
    xd = x.data.astype(np.float64)
    if training:
        mean = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        m = st.momentum
        st.running_mean[...] = m * st.running_mean + (1 - m) * mean
        st.running_var[...] = m * st.running_var + (1 - m) * var
    else:
        mean, var = st.running_mean.astype(np.float64), st.running_var.astype(np.float64)
    inv = 1.0 / np.sqrt(var + st.eps)
    xhat = (xd - mean) * inv
    gamma = st.gamma.data.astype(np.float64)
    out = xhat * gamma + st.beta.data
    n = x.data.size // x.shape[3]

    def back(g):
        g = g.astype(np.float64)
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        if training:
            gx = (gamma * inv / n) * (n * g - gb - xhat * gg)
        else:
            gx = g * (gamma * inv)
        return gx.astype(x.dtype), gg.astype(st.gamma.dtype), gb.astype(st.beta.dtype)

    return Tensor.from_op(out.astype(x.dtype), [x, st.gamma, st.beta], back, "batch_norm")


def conv1d_same(x: Tensor, w: Tensor) -> Tensor:
    """1-D SAME convolution along axis -2 of ``[..., length, in]`` with ``w: [k, in, out]``."""
    k = w.shape[0]
    if k % 2 == 0:
        raise ConfigError(f"kernel size must be odd, got {k}", field="kernel")
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"input has {x.shape[-1]} channels, kernel expects {w.shape[1]}", dim="channels")
    p = k // 2
    n = x.shape[-2]
    pad = [(0, 0)] * (x.ndim - 2) + [(p, p), (0, 0)]
    xp = np.pad(x.data, pad)
    wd = w.data
    out = sum(xp[..., t:t + n, :] @ wd[t] for t in range(k))

    def back(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(wd)
        for t in range(k):
            gxp[..., t:t + n, :] += g @ wd[t].T
            xs = xp[..., t:t + n, :].reshape(-1, wd.shape[1])
            gw[t] = xs.T @ g.reshape(-1, wd.shape[2])
        return gxp[..., p:p + n, :], gw

    return Tensor.from_op(np.asarray(out, dtype=x.dtype), [x, w], back, "conv1d")
