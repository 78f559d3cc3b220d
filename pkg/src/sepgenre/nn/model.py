"""Model configuration, the four classifier architectures, Adam and training."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError, DivergenceError
from .layers import (
    BatchNorm,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    Layer,
    MaxPool,
    ReLU,
    SeparableConv2D,
    softmax,
    to_internal,
    to_nhwc,
    weighted_xent,
)

VARIANT_CHANNELS = {
    "conv2d_full": 1,
    "conv2d_novox": 1,
    "conv2d_stems3": 3,
    "dwconv_stems3": 3,
}
VARIANTS = tuple(VARIANT_CHANNELS)


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    n_classes: int
    in_channels: int | None = None
    input_shape: tuple[int, int] = (128, 458)
    conv_filters: tuple[int, ...] = (8, 16)
    kernel: tuple[int, int] = (3, 3)
    pool: int = 4
    dropout_p: float = 0.5
    l1: float = 1e-4
    l2: float = 1e-4
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    shared_depthwise: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        if self.variant not in VARIANT_CHANNELS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        expected = VARIANT_CHANNELS[self.variant]
        if self.in_channels is None:
            object.__setattr__(self, "in_channels", expected)
        elif self.in_channels != expected:
            raise ConfigError(
                f"variant {self.variant} takes {expected} input channels, got {self.in_channels}"
            )
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must be in [0, 1)")
        if self.n_classes < 2:
            raise ConfigError("need at least two classes")
        if any(k % 2 == 0 for k in self.kernel):
            raise ConfigError("kernel dimensions must be odd")
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "conv_filters", tuple(self.conv_filters))
        object.__setattr__(self, "kernel", tuple(self.kernel))

    @property
    def separable(self) -> bool:
        return self.variant.startswith("dwconv")

    def to_dict(self) -> dict:
        return asdict(self)


class Model:
    """A sequential stack ending in logits; softmax is applied by the loss."""

    def __init__(self, config: ModelConfig, layers: list[Layer]):
        self.config = config
        self.layers = layers
        self.dtype = np.dtype(config.dtype)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """Map an NHWC batch to logits of shape ``(batch, n_classes)``."""
        x = to_internal(np.asarray(x, dtype=self.dtype))
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dlogits: np.ndarray) -> np.ndarray | None:
        g = dlogits
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return None if g is None else to_nhwc(g)

    def predict_proba(self, x: np.ndarray, batch_size: int = 16) -> np.ndarray:
        out = [softmax(self.forward(x[i:i + batch_size]).astype(np.float64))
               for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.config.n_classes))

    def named_params(self):
        """Yield ``(key, layer, name)`` for every trainable parameter."""
        for i, layer in enumerate(self.layers):
            for name in layer.params.keys():
                yield f"{i}.{type(layer).__name__}.{name}", layer, name

    def regularized_params(self):
        for i, layer in enumerate(self.layers):
            for name in layer.regularized:
                yield layer, name

    def penalty(self) -> float:
        c = self.config
        total = 0.0
        for layer, name in self.regularized_params():
            w = layer.params[name].astype(np.float64)
            total += c.l1 * np.abs(w).sum() + c.l2 * np.square(w).sum()
        return float(total)

    def loss_and_grads(self, x, labels, class_weights=None, train: bool = True) -> float:
        """Forward, backward, and add the L1/L2 penalty gradients.

        Returns the total loss (data term plus penalty).
        """
        logits = self.forward(x, train)
        data_loss, dlogits = weighted_xent(logits, labels, class_weights)
        self.backward(dlogits)
        c = self.config
        for layer, name in self.regularized_params():
            w = layer.params[name]
            layer.grads[name] = layer.grads[name] + (c.l1 * np.sign(w) + 2.0 * c.l2 * w).astype(w.dtype)
        return data_loss + self.penalty()

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for key, layer, name in self.named_params():
            out[key] = layer.params[name]
        for i, layer in enumerate(self.layers):
            for name, buf in layer.buffers.items():
                out[f"{i}.{type(layer).__name__}.{name}"] = buf
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        mine = self.state_dict()
        if set(mine) != set(state):
            missing = sorted(set(mine) - set(state))
            extra = sorted(set(state) - set(mine))
            raise ConfigError(f"state mismatch: missing {missing}, unexpected {extra}")
        for key, layer, name in self.named_params():
            if state[key].shape != layer.params[name].shape:
                raise ConfigError(f"{key}: shape {state[key].shape} != {layer.params[name].shape}")
            layer.params[name] = np.array(state[key], dtype=layer.params[name].dtype)
        for i, layer in enumerate(self.layers):
            for name in layer.buffers:
                layer.buffers[name] = np.array(state[f"{i}.{type(layer).__name__}.{name}"],
                                               dtype=np.float64)


def build_model(config: ModelConfig, seed: int | np.random.SeedSequence = 0) -> Model:
    """Conv -> BN -> ReLU -> MaxPool (x2) -> Dropout -> Flatten -> Dense.

    ``seed`` drives He-uniform initialisation (one stream) and dropout
    masks (a second, independent stream).
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    init_ss, drop_ss = ss.spawn(2)
    init_rng = np.random.default_rng(init_ss)
    dtype = np.dtype(config.dtype)
    layers: list[Layer] = []
    c = config.in_channels
    h, w = config.input_shape
    for filters in config.conv_filters:
        if config.separable:
            layers.append(SeparableConv2D(c, filters, config.kernel, config.shared_depthwise,
                                          rng=init_rng, dtype=dtype))
        else:
            layers.append(Conv2D(c, filters, config.kernel, rng=init_rng, dtype=dtype))
        layers += [BatchNorm(filters, dtype=dtype), ReLU(), MaxPool(config.pool)]
        c = filters
        h, w = h // config.pool, w // config.pool
    if h == 0 or w == 0:
        raise ConfigError(f"input {config.input_shape} too small for the pooling stack")
    layers += [
        Dropout(config.dropout_p, rng=np.random.default_rng(drop_ss)),
        Flatten(),
        Dense(h * w * c, config.n_classes, rng=init_rng, dtype=dtype),
    ]
    layers[0].needs_input_grad = False
    return Model(config, layers)


def flatten_size(config: ModelConfig) -> int:
    h, w = config.input_shape
    for _ in config.conv_filters:
        h, w = h // config.pool, w // config.pool
    return h * w * config.conv_filters[-1]


def count_params(config: ModelConfig) -> dict:
    """Per-layer weight and bias counts, from shapes alone.

    Batch-norm scale/shift are reported separately under ``norm``.
    """
    k = config.kernel[0] * config.kernel[1]
    rows = []
    c = config.in_channels
    for i, filters in enumerate(config.conv_filters, start=1):
        if config.separable:
            dw = k * (1 if config.shared_depthwise else c)
            rows.append({"layer": f"depthwise{i}", "weights": dw, "biases": 0})
            rows.append({"layer": f"pointwise{i}", "weights": c * filters, "biases": filters})
        else:
            rows.append({"layer": f"conv{i}", "weights": k * c * filters, "biases": filters})
        rows.append({"layer": f"batchnorm{i}", "weights": 0, "biases": 0, "norm": 2 * filters})
        c = filters
    f = flatten_size(config)
    rows.append({"layer": "dense", "weights": f * config.n_classes, "biases": config.n_classes})
    for r in rows:
        r.setdefault("norm", 0)
    weights = sum(r["weights"] for r in rows)
    biases = sum(r["biases"] for r in rows)
    norm = sum(r["norm"] for r in rows)
    conv_weights = sum(r["weights"] for r in rows if r["layer"] != "dense")
    return {
        "layers": rows,
        "conv_weights": conv_weights,
        "weights": weights,
        "weights_and_biases": weights + biases,
        "trainable": weights + biases + norm,
    }


# --------------------------------------------------------------------------
# Optimisation


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_config(cls, config: ModelConfig) -> "Adam":
        return cls(config.lr, config.beta1, config.beta2, config.adam_eps)

    def step(self, model: Model) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for key, layer, name in model.named_params():
            g = layer.grads[name]
            p = layer.params[name]
            if key not in self.m:
                self.m[key] = np.zeros_like(p)
                self.v[key] = np.zeros_like(p)
            m = self.m[key] = b1 * self.m[key] + (1 - b1) * g
            v = self.v[key] = b2 * self.v[key] + (1 - b2) * (g * g)
            step = self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)
            layer.params[name] = (p - step).astype(p.dtype)


def train_step(model: Model, x: np.ndarray, labels, optimizer: Adam, class_weights=None) -> float:
    """One Adam update on a batch; raises DivergenceError on a non-finite loss."""
    loss = model.loss_and_grads(x, labels, class_weights, train=True)
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite training loss {loss}")
    optimizer.step(model)
    return loss
