"""Layers with explicit forward and backward passes.

Public functions take feature maps as ``(batch, height, width, channels)``.
Layers work on the channels-first ``(channels, batch, height, width)``
layout internally so that im2col copies and per-channel reductions run over
contiguous memory; :class:`~sepgenre.nn.model.Model` converts once at the
input. Every layer caches what its backward pass needs during ``forward``
and stores parameter gradients in ``self.grads`` during ``backward``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, LabelError, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def to_internal(x: np.ndarray) -> np.ndarray:
    """NHWC -> CNHW."""
    return np.ascontiguousarray(np.moveaxis(x, -1, 0))


def to_nhwc(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(x, 0, -1))


# --------------------------------------------------------------------------
# Kernels


@dataclass
class ConvKernel:
    weights: np.ndarray  # (kh, kw, c_in, c_out)
    bias: np.ndarray  # (c_out,)

    def __post_init__(self):
        if self.weights.ndim != 4 or self.weights.shape[0] % 2 == 0 or self.weights.shape[1] % 2 == 0:
            raise ShapeError(f"conv kernel must be (odd, odd, c_in, c_out), got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[3],):
            raise ShapeError("bias length must equal c_out")


@dataclass
class DepthwiseKernel:
    """Per-channel spatial filters ``(kh, kw, c)``; ``c == 1`` shares one filter."""

    weights: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 3 or self.weights.shape[0] % 2 == 0 or self.weights.shape[1] % 2 == 0:
            raise ShapeError(f"depthwise kernel must be (odd, odd, c), got {self.weights.shape}")


@dataclass
class PointwiseKernel:
    weights: np.ndarray  # (1, 1, c, c_out)
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim == 2:
            self.weights = self.weights[np.newaxis, np.newaxis]
        if self.weights.ndim != 4 or self.weights.shape[:2] != (1, 1):
            raise ShapeError(f"pointwise kernel must be (1, 1, c, c_out), got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[3],):
            raise ShapeError("bias length must equal c_out")


# --------------------------------------------------------------------------
# Channels-first primitives


def _pad_same(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    ph, pw = kh // 2, kw // 2
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _im2col(xp: np.ndarray, kh: int, kw: int, h: int, w: int) -> np.ndarray:
    """Rows ordered (i, j, c) to match ``weights.reshape(kh * kw * c_in, c_out)``."""
    c, b = xp.shape[:2]
    cols = np.empty((kh, kw, c, b, h, w), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[i, j] = xp[:, :, i:i + h, j:j + w]
    return cols.reshape(kh * kw * c, b * h * w)


def _col2im(dcols: np.ndarray, kh: int, kw: int, c: int, b: int, h: int, w: int) -> np.ndarray:
    dcols = dcols.reshape(kh, kw, c, b, h, w)
    dxp = np.zeros((c, b, h + kh - 1, w + kw - 1), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + h, j:j + w] += dcols[i, j]
    return dxp[:, :, kh // 2:kh // 2 + h, kw // 2:kw // 2 + w]


def _conv_forward(x, weights, bias):
    kh, kw, cin, cout = weights.shape
    if x.shape[0] != cin:
        raise ShapeError(f"input has {x.shape[0]} channels, kernel expects {cin}")
    _, b, h, w = x.shape
    cols = _im2col(_pad_same(x, kh, kw), kh, kw, h, w)
    out = weights.reshape(-1, cout).T @ cols + bias[:, None]
    return out.reshape(cout, b, h, w), cols


def _depthwise_forward(x, weights):
    kh, kw, c = weights.shape
    if c not in (1, x.shape[0]):
        raise ShapeError(f"input has {x.shape[0]} channels, depthwise kernel has {c}")
    _, b, h, w = x.shape
    xp = _pad_same(x, kh, kw)
    wt = np.broadcast_to(weights, (kh, kw, x.shape[0]))
    out = np.zeros(x.shape, dtype=np.result_type(x, weights))
    for i in range(kh):
        for j in range(kw):
            out += xp[:, :, i:i + h, j:j + w] * wt[i, j][:, None, None, None]
    return out, xp


def _pointwise_forward(x, weights, bias):
    wm = weights[0, 0]
    if x.shape[0] != wm.shape[0]:
        raise ShapeError(f"input has {x.shape[0]} channels, pointwise kernel expects {wm.shape[0]}")
    c, b, h, w = x.shape
    out = wm.T @ x.reshape(c, -1) + bias[:, None]
    return out.reshape(wm.shape[1], b, h, w)


# --------------------------------------------------------------------------
# Functional API (NHWC)


def conv2d(x: np.ndarray, kernel: ConvKernel) -> np.ndarray:
    """Same-padded, stride-1 multichannel cross-correlation plus bias."""
    if x.shape[-1] != kernel.weights.shape[2]:
        raise ShapeError(f"input has {x.shape[-1]} channels, kernel expects {kernel.weights.shape[2]}")
    out, _ = _conv_forward(to_internal(x), kernel.weights, kernel.bias)
    return to_nhwc(out)


def depthwise_conv2d(x: np.ndarray, dw: DepthwiseKernel) -> np.ndarray:
    out, _ = _depthwise_forward(to_internal(x), dw.weights)
    return to_nhwc(out)


def pointwise_conv2d(x: np.ndarray, pw: PointwiseKernel) -> np.ndarray:
    return to_nhwc(_pointwise_forward(to_internal(x), pw.weights, pw.bias))


def sepconv2d(x: np.ndarray, dw: DepthwiseKernel, pw: PointwiseKernel) -> np.ndarray:
    """Depthwise separable convolution: pointwise mixing of depthwise outputs."""
    if dw.weights.shape[2] not in (1, pw.weights.shape[2]):
        raise ShapeError("depthwise and pointwise channel counts differ")
    return pointwise_conv2d(depthwise_conv2d(x, dw), pw)


def conv_weight_counts(c: int, k: int, c_out: int | None = None) -> tuple[int, int]:
    """Weights of a standard vs a depthwise separable convolution.

    ``k`` is the number of kernel elements (9 for 3x3). Returns
    ``(c * k * c_out, c * k + c * c_out)``.
    """
    if c_out is None:
        c_out = c
    return c * k * c_out, c * k + c * c_out


# --------------------------------------------------------------------------
# Layers (CNHW)


class Layer:
    regularized: tuple[str, ...] = ()

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.needs_input_grad = True

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray | None:
        raise NotImplementedError

    def __repr__(self):
        shapes = ", ".join(f"{k}={v.shape}" for k, v in self.params.items())
        return f"{type(self).__name__}({shapes})"


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2D(Layer):
    regularized = ("W",)

    def __init__(self, c_in: int, c_out: int, kernel=(3, 3), rng=None, dtype=np.float64):
        super().__init__()
        kh, kw = kernel
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = he_uniform(rng, (kh, kw, c_in, c_out), kh * kw * c_in, dtype)
        self.params["b"] = np.zeros(c_out, dtype=dtype)

    def forward(self, x, train=False):
        out, self._cols = _conv_forward(x, self.params["W"], self.params["b"])
        self._in_shape = x.shape
        return out

    def backward(self, dy):
        W = self.params["W"]
        kh, kw, cin, cout = W.shape
        dy2 = dy.reshape(cout, -1)
        self.grads["W"] = (self._cols @ dy2.T).reshape(W.shape)
        self.grads["b"] = dy2.sum(axis=1)
        self._cols = None
        if not self.needs_input_grad:
            return None
        dcols = W.reshape(-1, cout) @ dy2
        return _col2im(dcols, kh, kw, *self._in_shape)


class DepthwiseConv2D(Layer):
    """One spatial filter per channel, or a single filter shared by all channels."""

    regularized = ("W",)

    def __init__(self, channels: int, kernel=(3, 3), shared: bool = False, rng=None,
                 dtype=np.float64):
        super().__init__()
        kh, kw = kernel
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.shared = shared
        self.params["W"] = he_uniform(rng, (kh, kw, 1 if shared else channels), kh * kw, dtype)

    def forward(self, x, train=False):
        if x.shape[0] != self.channels:
            raise ShapeError(f"input has {x.shape[0]} channels, layer expects {self.channels}")
        out, self._xp = _depthwise_forward(x, self.params["W"])
        return out

    def backward(self, dy):
        W = self.params["W"]
        kh, kw, _ = W.shape
        c, b, h, w = dy.shape
        xp = self._xp
        dW = np.empty_like(W)
        wt = np.broadcast_to(W, (kh, kw, c))
        dxp = np.zeros_like(xp) if self.needs_input_grad else None
        dy2 = dy.reshape(c, -1)
        for i in range(kh):
            for j in range(kw):
                window = xp[:, :, i:i + h, j:j + w]
                g = np.einsum("cn,cn->c", window.reshape(c, -1), dy2)
                dW[i, j] = g.sum(keepdims=True) if self.shared else g
                if dxp is not None:
                    dxp[:, :, i:i + h, j:j + w] += dy * wt[i, j][:, None, None, None]
        self.grads["W"] = dW
        self._xp = None
        if dxp is None:
            return None
        return dxp[:, :, kh // 2:kh // 2 + h, kw // 2:kw // 2 + w]


class PointwiseConv2D(Layer):
    regularized = ("W",)

    def __init__(self, c_in: int, c_out: int, rng=None, dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = he_uniform(rng, (1, 1, c_in, c_out), c_in, dtype)
        self.params["b"] = np.zeros(c_out, dtype=dtype)

    def forward(self, x, train=False):
        self._x = x
        return _pointwise_forward(x, self.params["W"], self.params["b"])

    def backward(self, dy):
        wm = self.params["W"][0, 0]
        cin, cout = wm.shape
        x2 = self._x.reshape(cin, -1)
        dy2 = dy.reshape(cout, -1)
        self.grads["W"] = (x2 @ dy2.T)[np.newaxis, np.newaxis]
        self.grads["b"] = dy2.sum(axis=1)
        shape = self._x.shape
        self._x = None
        if not self.needs_input_grad:
            return None
        return (wm @ dy2).reshape(shape)


class SeparableConv2D(Layer):
    """Depthwise convolution followed by a 1x1 pointwise convolution.

    Parameters are exposed as ``dw.W``, ``pw.W`` and ``pw.b``.
    """

    regularized = ("dw.W", "pw.W")

    def __init__(self, c_in: int, c_out: int, kernel=(3, 3), shared: bool = False, rng=None,
                 dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.depthwise = DepthwiseConv2D(c_in, kernel, shared=shared, rng=rng, dtype=dtype)
        self.pointwise = PointwiseConv2D(c_in, c_out, rng=rng, dtype=dtype)
        self.params = _PrefixedDict({"dw": self.depthwise.params, "pw": self.pointwise.params})
        self.grads = _PrefixedDict({"dw": self.depthwise.grads, "pw": self.pointwise.grads})

    @property
    def needs_input_grad(self):
        return self.depthwise.needs_input_grad

    @needs_input_grad.setter
    def needs_input_grad(self, value):
        # called from Layer.__init__ before the sublayers exist
        if hasattr(self, "depthwise"):
            self.depthwise.needs_input_grad = value

    def forward(self, x, train=False):
        return self.pointwise.forward(self.depthwise.forward(x, train), train)

    def backward(self, dy):
        return self.depthwise.backward(self.pointwise.backward(dy))


class _PrefixedDict(dict):
    """Flat ``"prefix.name"`` view over nested parameter dicts."""

    def __init__(self, groups: dict[str, dict]):
        super().__init__()
        self._groups = groups

    def _split(self, key):
        prefix, _, name = key.partition(".")
        return self._groups[prefix], name

    def __getitem__(self, key):
        group, name = self._split(key)
        return group[name]

    def __setitem__(self, key, value):
        group, name = self._split(key)
        group[name] = value

    def __contains__(self, key):
        prefix, _, name = key.partition(".")
        return prefix in self._groups and name in self._groups[prefix]

    def keys(self):
        return [f"{p}.{n}" for p, g in self._groups.items() for n in g]

    def __iter__(self):
        return iter(self.keys())

    def __len__(self):
        return len(self.keys())

    def items(self):
        return [(k, self[k]) for k in self.keys()]

    def values(self):
        return [self[k] for k in self.keys()]


class BatchNorm(Layer):
    """Per-channel normalisation over batch and spatial positions.

    Batch statistics are accumulated in float64 whatever the storage dtype.
    Running statistics follow ``r = momentum * r + (1 - momentum) * batch``.
    """

    def __init__(self, channels: int, eps: float = BN_EPS, momentum: float = BN_MOMENTUM,
                 dtype=np.float64):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)

    def forward(self, x, train=False):
        c = x.shape[0]
        x2 = x.reshape(c, -1)
        if train:
            mean = x2.mean(axis=1, dtype=np.float64)
            centered = x2 - mean.astype(x.dtype)[:, None]
            var = np.einsum("cn,cn->c", centered, centered, dtype=np.float64) / x2.shape[1]
            m = self.momentum
            self.buffers["running_mean"] = m * self.buffers["running_mean"] + (1 - m) * mean
            self.buffers["running_var"] = m * self.buffers["running_var"] + (1 - m) * var
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
            centered = x2 - mean.astype(x.dtype)[:, None]
        inv_std = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        xhat = centered * inv_std[:, None]
        self._xhat, self._inv_std = xhat, inv_std
        out = xhat * self.params["gamma"][:, None] + self.params["beta"][:, None]
        return out.reshape(x.shape)

    def backward(self, dy):
        c = dy.shape[0]
        dy2 = dy.reshape(c, -1)
        xhat, inv_std = self._xhat, self._inv_std
        n = dy2.shape[1]
        dbeta = dy2.sum(axis=1, dtype=np.float64)
        dgamma = np.einsum("cn,cn->c", dy2, xhat, dtype=np.float64)
        self.grads["beta"] = dbeta.astype(dy.dtype)
        self.grads["gamma"] = dgamma.astype(dy.dtype)
        self._xhat = None
        if not self.needs_input_grad:
            return None
        # with dxhat = gamma * dy, sum(dxhat) = gamma * dbeta and
        # sum(dxhat * xhat) = gamma * dgamma
        scale = (self.params["gamma"] * inv_std / n).astype(dy.dtype)[:, None]
        dx = scale * (n * dy2 - dbeta.astype(dy.dtype)[:, None]
                      - xhat * dgamma.astype(dy.dtype)[:, None])
        return dx.reshape(dy.shape)


class ReLU(Layer):
    def forward(self, x, train=False):
        self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dy):
        out = dy * self._mask
        self._mask = None
        return out


class MaxPool(Layer):
    """Non-overlapping ``size x size`` max pooling; trailing rows/cols are dropped.

    Gradients flow to the first maximal element of each window in row-major
    order.
    """

    def __init__(self, size: int = 4):
        super().__init__()
        self.size = size

    def _views(self, x):
        s = self.size
        h, w = x.shape[2] // s, x.shape[3] // s
        for i in range(s):
            for j in range(s):
                yield x[:, :, i:h * s:s, j:w * s:s]

    def forward(self, x, train=False):
        s = self.size
        if x.shape[2] < s or x.shape[3] < s:
            raise ShapeError(f"input {x.shape[2]}x{x.shape[3]} smaller than pool size {s}")
        views = self._views(x)
        best = next(views).copy()
        idx = np.zeros(best.shape, dtype=np.int8)
        for k, v in enumerate(views, start=1):
            better = v > best
            np.copyto(best, v, where=better)
            idx[better] = k
        self._idx, self._in_shape = idx, x.shape
        return best

    def backward(self, dy):
        dx = np.zeros(self._in_shape, dtype=dy.dtype)
        for k, view in enumerate(self._views(dx)):
            np.copyto(view, dy, where=self._idx == k)
        self._idx = None
        return dx


class Dropout(Layer):
    """Inverted dropout; identity in eval mode."""

    def __init__(self, p: float = 0.5, rng=None):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"dropout p must be in [0, 1), got {p}")
        self.p = p
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._mask = None

    def forward(self, x, train=False):
        if not train or self.p == 0.0:
            self._mask = None
            return x
        keep = self.rng.random(x.shape) >= self.p
        self._mask = (keep / (1.0 - self.p)).astype(x.dtype)
        return x * self._mask

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask


class Flatten(Layer):
    """CNHW -> ``(batch, height * width * channels)`` in NHWC order."""

    def forward(self, x, train=False):
        self._shape = x.shape
        b = x.shape[1]
        return np.ascontiguousarray(x.transpose(1, 2, 3, 0)).reshape(b, -1)

    def backward(self, dy):
        c, b, h, w = self._shape
        return np.ascontiguousarray(dy.reshape(b, h, w, c).transpose(3, 0, 1, 2))


class Dense(Layer):
    regularized = ("W",)

    def __init__(self, n_in: int, n_out: int, rng=None, dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = he_uniform(rng, (n_in, n_out), n_in, dtype)
        self.params["b"] = np.zeros(n_out, dtype=dtype)

    def forward(self, x, train=False):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dy):
        self.grads["W"] = self._x.T @ dy
        self.grads["b"] = dy.sum(axis=0)
        self._x = None
        return dy @ self.params["W"].T


# --------------------------------------------------------------------------
# Output and loss


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def weighted_xent(logits: np.ndarray, labels, weights=None) -> tuple[float, np.ndarray]:
    """Class-weighted sparse categorical cross-entropy.

    ``loss = sum_b w[y_b] * -log p_b[y_b] / sum_b w[y_b]``. Returns the loss
    and its gradient with respect to ``logits``.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.intp)
    b, k = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"expected {b} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    w = np.ones(k) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (k,) or np.any(w <= 0):
        raise ConfigError("class weights must be K positive values")
    sw = w[labels]
    total = sw.sum()
    lsm = log_softmax(logits.astype(np.float64))
    rows = np.arange(b)
    loss = float(-(sw * lsm[rows, labels]).sum() / total)
    grad = np.exp(lsm)
    grad[rows, labels] -= 1.0
    grad *= (sw / total)[:, None]
    return loss, grad.astype(logits.dtype)
