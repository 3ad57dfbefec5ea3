"""Bidirectional convolutional LSTM scanning one spatial axis as time.

For ``axis="rows"`` each row of the ``[b, rows, cols, ch]`` map is one time
step and the gate convolutions run along the columns of that row.  The
``"cols"`` scan is the same recurrence applied to the map rotated by 90
degrees clockwise, implemented natively (axes swapped, kernels flipped).

Gates follow the standard formulation without peepholes::

    i, f, o = sigmoid(Wx*x_t + Wh*h_{t-1} + b)
    g       = tanh(Wx*x_t + Wh*h_{t-1} + b)
    c_t     = f * c_{t-1} + i * g
    h_t     = o * tanh(c_t)

The forward and backward scans are concatenated along channels, giving
``2 * hidden`` output channels.  The recurrence runs in float64 and the
result is rounded back to the input dtype, so 32-bit models do not
accumulate rounding error along the scan.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError
from .ops import conv1d_same
from .tensor import Tensor, concat, stack


@dataclass
class LSTMDirection:
    wx: Tensor  # [k, in, 4*hidden], gate order i, f, g, o
    wh: Tensor  # [k, hidden, 4*hidden]
    bias: Tensor  # [4*hidden]

    @property
    def hidden(self) -> int:
        return self.wh.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.wx, self.wh, self.bias]


@dataclass
class ConvLSTMParams:
    forward: LSTMDirection
    backward: LSTMDirection

    @classmethod
    def create(cls, in_channels: int, hidden: int, kernel: int = 3,
               rng: np.random.Generator | None = None, dtype=np.float32) -> "ConvLSTMParams":
        if kernel % 2 == 0:
            raise ConfigError(f"LSTM kernel size must be odd, got {kernel}", field="lstm_kernel")

        def one():
            def init(shape, fan_in):
                if rng is None:
                    return np.zeros(shape, dtype)
                lim = np.sqrt(3.0 / fan_in)
                return rng.uniform(-lim, lim, size=shape).astype(dtype)

            return LSTMDirection(
                Tensor(init((kernel, in_channels, 4 * hidden), kernel * in_channels), requires_grad=True),
                Tensor(init((kernel, hidden, 4 * hidden), kernel * hidden), requires_grad=True),
                Tensor(np.zeros(4 * hidden, dtype), requires_grad=True),
            )

        return cls(one(), one())

    @property
    def in_channels(self) -> int:
        return self.forward.wx.shape[1]

    @property
    def hidden(self) -> int:
        return self.forward.hidden

    def parameters(self) -> list[Tensor]:
        return self.forward.parameters() + self.backward.parameters()


def _scan(x: Tensor, p: LSTMDirection, reverse: bool, flip_kernel: bool) -> Tensor:
    """Run one direction over axis 1 of ``x: [b, T, L, ch]``; returns ``[b, T, L, hidden]``."""
    wx, wh = (p.wx.flip(0), p.wh.flip(0)) if flip_kernel else (p.wx, p.wh)
    wx, wh, bias = wx.astype(np.float64), wh.astype(np.float64), p.bias.astype(np.float64)
    hd = p.hidden
    xg = conv1d_same(x.astype(np.float64), wx) + bias
    steps = range(x.shape[1] - 1, -1, -1) if reverse else range(x.shape[1])
    h = c = None
    outs: dict[int, Tensor] = {}
    for t in steps:
        z = xg[:, t] if h is None else xg[:, t] + conv1d_same(h, wh)
        i = z[..., :hd].sigmoid()
        f = z[..., hd:2 * hd].sigmoid()
        g = z[..., 2 * hd:3 * hd].tanh()
        o = z[..., 3 * hd:].sigmoid()
        c = i * g if c is None else f * c + i * g
        h = o * c.tanh()
        outs[t] = h
    return stack([outs[t] for t in range(x.shape[1])], axis=1).astype(x.dtype)


def conv_lstm_bidirectional(x: Tensor, params: ConvLSTMParams, axis: str = "rows") -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"input must be [batch, rows, cols, channels], got {x.shape}", dim="rank")
    if x.shape[3] != params.in_channels:
        raise ShapeError(f"input has {x.shape[3]} channels, LSTM expects {params.in_channels}", dim="channels")
    if params.backward.wx.shape != params.forward.wx.shape or params.backward.wh.shape != params.forward.wh.shape:
        raise ShapeError("forward and backward LSTM parameters differ in shape", dim="lstm")
    if axis == "rows":
        return concat([_scan(x, params.forward, False, False), _scan(x, params.backward, True, False)], axis=-1)
    if axis == "cols":
        xt = x.swapaxes(1, 2)
        out = concat([_scan(xt, params.forward, False, True), _scan(xt, params.backward, True, True)], axis=-1)
        return out.swapaxes(1, 2)
    raise ConfigError(f"axis must be 'rows' or 'cols', got {axis!r}", field="axis")
