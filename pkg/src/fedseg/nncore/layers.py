"""Layer specs and their forward/backward kernels.

All tensors are NCHW (or N×features for dense layers). Kernels are plain
numpy; the dtype of the parameters decides the compute dtype.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class LayerSpec:
    # name of the node feeding this layer; None means the previous layer
    src: Optional[str] = None

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        return []

    def fan_in(self) -> int:
        return 0

    def extra_inputs(self) -> tuple[str, ...]:
        return ()


@dataclass(frozen=True)
class Conv2D(LayerSpec):
    in_ch: int = 1
    out_ch: int = 1
    k: int = 3
    stride: int = 1
    pad: int = 0

    def param_shapes(self):
        return [("weight", (self.out_ch, self.in_ch, self.k, self.k)), ("bias", (self.out_ch,))]

    def fan_in(self):
        return self.in_ch * self.k * self.k


@dataclass(frozen=True)
class Dense(LayerSpec):
    n_in: int = 1
    n_out: int = 1

    def param_shapes(self):
        return [("weight", (self.n_out, self.n_in)), ("bias", (self.n_out,))]

    def fan_in(self):
        return self.n_in


@dataclass(frozen=True)
class ReLU(LayerSpec):
    pass


@dataclass(frozen=True)
class Sigmoid(LayerSpec):
    pass


@dataclass(frozen=True)
class MaxPool2(LayerSpec):
    pass


@dataclass(frozen=True)
class UpsampleBilinear(LayerSpec):
    factor: int = 2


@dataclass(frozen=True)
class AvgPoolToGrid(LayerSpec):
    """Adaptive average pool into an s×s grid, then bilinear back to input size."""

    s: int = 1


@dataclass(frozen=True)
class Add(LayerSpec):
    skip: str = ""

    def extra_inputs(self):
        return (self.skip,)


@dataclass(frozen=True)
class ConcatCh(LayerSpec):
    """Concatenate the input with ``sources`` along axis 1, in that order."""

    sources: tuple[str, ...] = ()

    def extra_inputs(self):
        return tuple(self.sources)


def param_count(spec: LayerSpec) -> int:
    return sum(int(np.prod(shape)) for _, shape in spec.param_shapes())


# --------------------------------------------------------------------------
# interpolation matrices

@lru_cache(maxsize=None)
def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) half-pixel-centred linear interpolation weights."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        w1 = src - i0
        m[o, i0] += 1.0 - w1
        m[o, i1] += w1
    m.flags.writeable = False
    return m


@lru_cache(maxsize=None)
def adaptive_pool_matrix(n_in: int, s: int) -> np.ndarray:
    """(s, n_in) averaging weights with bins [floor(i*n/s), ceil((i+1)*n/s))."""
    m = np.zeros((s, n_in), dtype=np.float64)
    for i in range(s):
        lo = (i * n_in) // s
        hi = -((-(i + 1) * n_in) // s)
        m[i, lo:hi] = 1.0 / (hi - lo)
    m.flags.writeable = False
    return m


@lru_cache(maxsize=None)
def pool_to_grid_matrix(n: int, s: int) -> np.ndarray:
    m = bilinear_matrix(s, n) @ adaptive_pool_matrix(n, s)
    m.flags.writeable = False
    return m


def _separable(x, mh, mw):
    # y[n,c] = mh @ x[n,c] @ mw.T
    y = np.matmul(mh, x)
    return np.matmul(y, mw.T)


# --------------------------------------------------------------------------
# kernels: forward returns (out, cache); backward returns (dinputs, dparams)

def conv_forward(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, ci, k, _ = w.shape
    if ci != c:
        raise ValueError(f"Conv2D expects {ci} input channels, got {c}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ValueError("Conv2D input smaller than kernel")
    cols = np.empty((n, c, k, k, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    cols = cols.reshape(n, c * k * k, ho * wo)
    out = np.matmul(w.reshape(o, -1), cols)
    out += b[None, :, None]
    return out.reshape(n, o, ho, wo), (cols, x.shape, xp.shape)


def conv_backward(cache, dout, w, stride, pad):
    cols, xshape, xpshape = cache
    n, o, ho, wo = dout.shape
    _, c, k, _ = w.shape
    d2 = dout.reshape(n, o, ho * wo)
    dw = np.tensordot(d2, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
    db = d2.sum(axis=(0, 2))
    dcols = np.matmul(w.reshape(o, -1).T, d2).reshape(n, c, k, k, ho, wo)
    dxp = np.zeros(xpshape, dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i, j]
    if pad:
        dxp = dxp[:, :, pad:-pad, pad:-pad]
    return dxp, dw, db


def dense_forward(x, w, b):
    flat = x.reshape(x.shape[0], -1)
    if flat.shape[1] != w.shape[1]:
        raise ValueError(f"Dense expects {w.shape[1]} inputs, got {flat.shape[1]}")
    return flat @ w.T + b, (flat, x.shape)


def dense_backward(cache, dout, w):
    flat, xshape = cache
    dw = dout.T @ flat
    db = dout.sum(axis=0)
    dx = (dout @ w).reshape(xshape)
    return dx, dw, db


def maxpool2_forward(x):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError("MaxPool2 needs even spatial dims")
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape)


def maxpool2_backward(cache, dout):
    idx, shape = cache
    n, c, h, w = shape
    d = np.zeros((n, c, h // 2, w // 2, 4), dtype=dout.dtype)
    np.put_along_axis(d, idx[..., None], dout[..., None], axis=-1)
    return d.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)


def forward_layer(spec: LayerSpec, params: dict, inputs: list):
    x = inputs[0]
    if isinstance(spec, Conv2D):
        return conv_forward(x, params["weight"], params["bias"], spec.stride, spec.pad)
    if isinstance(spec, Dense):
        return dense_forward(x, params["weight"], params["bias"])
    if isinstance(spec, ReLU):
        return np.maximum(x, 0), x > 0
    if isinstance(spec, Sigmoid):
        out = 0.5 * (1.0 + np.tanh(0.5 * x))
        return out, out
    if isinstance(spec, MaxPool2):
        return maxpool2_forward(x)
    if isinstance(spec, UpsampleBilinear):
        h, w = x.shape[-2:]
        mh = bilinear_matrix(h, h * spec.factor).astype(x.dtype)
        mw = bilinear_matrix(w, w * spec.factor).astype(x.dtype)
        return _separable(x, mh, mw), (mh, mw)
    if isinstance(spec, AvgPoolToGrid):
        h, w = x.shape[-2:]
        mh = pool_to_grid_matrix(h, spec.s).astype(x.dtype)
        mw = pool_to_grid_matrix(w, spec.s).astype(x.dtype)
        return _separable(x, mh, mw), (mh, mw)
    if isinstance(spec, Add):
        if x.shape != inputs[1].shape:
            raise ValueError(f"Add shape mismatch: {x.shape} vs {inputs[1].shape}")
        return x + inputs[1], None
    if isinstance(spec, ConcatCh):
        return np.concatenate(inputs, axis=1), [a.shape[1] for a in inputs]
    raise TypeError(f"unknown layer spec {spec!r}")


def backward_layer(spec: LayerSpec, params: dict, cache, dout):
    """Return (list of input grads, dict of param grads)."""
    if isinstance(spec, Conv2D):
        dx, dw, db = conv_backward(cache, dout, params["weight"], spec.stride, spec.pad)
        return [dx], {"weight": dw, "bias": db}
    if isinstance(spec, Dense):
        dx, dw, db = dense_backward(cache, dout, params["weight"])
        return [dx], {"weight": dw, "bias": db}
    if isinstance(spec, ReLU):
        return [dout * cache], {}
    if isinstance(spec, Sigmoid):
        return [dout * cache * (1 - cache)], {}
    if isinstance(spec, MaxPool2):
        return [maxpool2_backward(cache, dout)], {}
    if isinstance(spec, (UpsampleBilinear, AvgPoolToGrid)):
        mh, mw = cache
        return [np.matmul(np.matmul(mh.T, dout), mw)], {}
    if isinstance(spec, Add):
        return [dout, dout], {}
    if isinstance(spec, ConcatCh):
        splits = np.cumsum(cache)[:-1]
        return list(np.split(dout, splits, axis=1)), {}
    raise TypeError(f"unknown layer spec {spec!r}")
