"""Minimal float64 tensor network: conv/pool/dense layers with exact
backward passes, Adam, cross-entropy losses, the spoofnet builder, a
deterministic training loop, and the PADM model container.

Layer ops take (H, W, C) arrays and transparently accept a leading batch
axis (N, H, W, C). Everything is float64; training is a pure function of
(seed, data, config), so repeated runs produce bit-identical models.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .seeds import make_rng

PROB_EPS = 1e-7

LOSSES = ("binary_ce", "categorical_ce")


class NumericalAbort(RuntimeError):
    """Non-finite loss or gradient; training fails loudly, never silently."""


# ---------------------------------------------------------------------------
# layer specs


@dataclass(frozen=True)
class LayerSpec:
    """One architecture entry: conv2d, maxpool, flatten, or dense."""

    kind: str
    kernel: int | None = None
    filters: int | None = None
    window: int | None = None
    stride: int | None = None
    units: int | None = None
    activation: str | None = None

    def __post_init__(self) -> None:
        if self.kind == "conv2d":
            if not (self.kernel and self.kernel >= 1 and self.filters and self.filters >= 1):
                raise ValueError(f"conv2d needs positive kernel and filters: {self}")
            if self.activation != "relu":
                raise ValueError(f"conv2d activation must be relu, got {self.activation}")
        elif self.kind == "maxpool":
            if not (self.window and self.window >= 1 and self.stride and self.stride >= 1):
                raise ValueError(f"maxpool needs positive window and stride: {self}")
            if self.activation is not None:
                raise ValueError("maxpool takes no activation")
        elif self.kind == "flatten":
            if self.activation is not None:
                raise ValueError("flatten takes no activation")
        elif self.kind == "dense":
            if not (self.units and self.units >= 1):
                raise ValueError(f"dense needs positive units: {self}")
            if self.activation not in ("relu", "sigmoid", "softmax"):
                raise ValueError(f"illegal dense activation {self.activation}")
        else:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    @property
    def trainable(self) -> bool:
        return self.kind in ("conv2d", "dense")

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for key in ("kernel", "filters", "window", "stride", "units", "activation"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "LayerSpec":
        return cls(**data)


def conv2d(filters: int, kernel: int = 5) -> LayerSpec:
    return LayerSpec(kind="conv2d", kernel=kernel, filters=filters, activation="relu")


def maxpool(window: int = 3, stride: int = 3) -> LayerSpec:
    return LayerSpec(kind="maxpool", window=window, stride=stride)


def flatten() -> LayerSpec:
    return LayerSpec(kind="flatten")


def dense(units: int, activation: str) -> LayerSpec:
    return LayerSpec(kind="dense", units=units, activation=activation)


# ---------------------------------------------------------------------------
# layer ops


def _batched(x: np.ndarray, rank: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == rank:
        return x[None], True
    if x.ndim == rank + 1:
        return x, False
    raise ValueError(f"expected rank {rank} or {rank + 1} input, got shape {x.shape}")


def _im2col(xb: np.ndarray, k: int) -> tuple[np.ndarray, int, int]:
    """Window matrix of shape (n*ho*wo, cin*k*k); column order (c, dy, dx)."""
    win = sliding_window_view(xb, (k, k), axis=(1, 2))  # (n, ho, wo, c, k, k)
    n, ho, wo = win.shape[:3]
    return win.reshape(n * ho * wo, -1), ho, wo


def _kernel_matrix(kernel: np.ndarray) -> np.ndarray:
    return kernel.transpose(2, 0, 1, 3).reshape(-1, kernel.shape[3])


def _check_conv_shapes(xb: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None) -> None:
    k = kernel.shape[0]
    if kernel.ndim != 4 or kernel.shape[1] != k:
        raise ValueError(f"kernel must be (k, k, Cin, F), got {kernel.shape}")
    if xb.shape[3] != kernel.shape[2]:
        raise ValueError(f"channel mismatch: input {xb.shape[3]} vs kernel {kernel.shape[2]}")
    if xb.shape[1] < k or xb.shape[2] < k:
        raise ValueError(f"input {xb.shape[1]}x{xb.shape[2]} smaller than kernel {k}x{k}")
    if bias is not None and bias.shape != (kernel.shape[3],):
        raise ValueError(f"bias shape {bias.shape} != ({kernel.shape[3]},)")


def conv2d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid (no padding) stride-1 cross-correlation.

    x: (H, W, Cin) or (N, H, W, Cin); kernel: (k, k, Cin, F); bias: (F,).
    out[y, x, f] = bias_f + sum_{dy,dx,c} x[y+dy, x+dx, c] * kernel[dy, dx, c, f]
    """
    xb, single = _batched(x, 3)
    kernel = np.asarray(kernel, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    _check_conv_shapes(xb, kernel, bias)
    cols, ho, wo = _im2col(xb, kernel.shape[0])
    out = (cols @ _kernel_matrix(kernel) + bias).reshape(xb.shape[0], ho, wo, kernel.shape[3])
    return out[0] if single else out


def conv2d_backward(
    grad_out: np.ndarray,
    x: np.ndarray,
    kernel: np.ndarray,
    need_input_grad: bool = True,
    cols: np.ndarray | None = None,
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Exact gradients of conv2d_forward w.r.t. input, kernel, and bias.

    need_input_grad=False skips the input gradient (None in its slot);
    the first layer of a network has no use for it. cols reuses an im2col
    matrix already computed during the forward pass.
    """
    xb, single = _batched(x, 3)
    gb, gsingle = _batched(grad_out, 3)
    if single != gsingle:
        raise ValueError("grad_out and input must agree on batching")
    kernel = np.asarray(kernel, dtype=np.float64)
    k = kernel.shape[0]
    cin, nf = kernel.shape[2], kernel.shape[3]
    n, h, w = xb.shape[0], xb.shape[1], xb.shape[2]
    expected = (n, h - k + 1, w - k + 1, nf)
    if gb.shape != expected:
        raise ValueError(f"grad_out shape {gb.shape} != {expected}")

    ho, wo = h - k + 1, w - k + 1
    if cols is None:
        cols, ho, wo = _im2col(xb, k)
    gflat = gb.reshape(n * ho * wo, nf)

    grad_kernel = (cols.T @ gflat).reshape(cin, k, k, nf).transpose(1, 2, 0, 3)
    grad_bias = gflat.sum(axis=0)

    grad_x = None
    if need_input_grad:
        # scatter per-window gradients back via overlap-add over (dy, dx)
        kmat = _kernel_matrix(kernel)
        dwin = (gflat @ kmat.T).reshape(n, ho, wo, cin, k, k)
        grad_x = np.zeros((n, h, w, cin), dtype=np.float64)
        for dy in range(k):
            for dx in range(k):
                grad_x[:, dy : dy + ho, dx : dx + wo, :] += dwin[:, :, :, :, dy, dx]
        if single:
            grad_x = grad_x[0]
    return grad_x, grad_kernel, grad_bias


def maxpool_forward(
    x: np.ndarray, window: int = 3, stride: int = 3
) -> tuple[np.ndarray, np.ndarray]:
    """Max over non-padded windows; overrunning windows are dropped.

    Returns (output, argmax) where argmax holds the flat row-major index of
    the first maximum within each window.
    """
    xb, single = _batched(x, 3)
    if xb.shape[1] < window or xb.shape[2] < window:
        raise ValueError(
            f"input {xb.shape[1]}x{xb.shape[2]} smaller than window {window}x{window}"
        )
    win = sliding_window_view(xb, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    flat = win.reshape(*win.shape[:4], window * window)
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    if single:
        return out[0], argmax[0]
    return out, argmax


def maxpool_backward(
    grad_out: np.ndarray,
    argmax: np.ndarray,
    input_shape: Sequence[int],
    window: int = 3,
    stride: int = 3,
) -> np.ndarray:
    """Route each output gradient to its recorded argmax position."""
    gb, single = _batched(grad_out, 3)
    arg = np.asarray(argmax)
    if single:
        arg = arg[None]
    if arg.shape != gb.shape:
        raise ValueError(f"argmax shape {arg.shape} != grad shape {gb.shape}")
    if np.any(arg < 0) or np.any(arg >= window * window):
        raise IndexError(f"argmax index out of range for a {window}x{window} window")

    ishape = tuple(input_shape)
    if len(ishape) == 3:
        ishape = (gb.shape[0],) + ishape
    grad_x = np.zeros(ishape, dtype=np.float64)
    n, ho, wo, c = gb.shape
    ni = np.arange(n)[:, None, None, None]
    ci = np.arange(c)[None, None, None, :]
    rows = np.arange(ho)[None, :, None, None] * stride + arg // window
    cols_ = np.arange(wo)[None, None, :, None] * stride + arg % window
    if np.any(rows >= ishape[1]) or np.any(cols_ >= ishape[2]):
        raise IndexError("argmax position outside the input shape")
    if stride >= window:
        grad_x[ni, rows, cols_, ci] = gb  # windows are disjoint
    else:
        np.add.at(grad_x, (ni, rows, cols_, ci), gb)
    return grad_x[0] if single else grad_x


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """out = x @ W + b with W of shape (fan_in, units)."""
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if x.shape[-1] != weights.shape[0]:
        raise ValueError(f"input dim {x.shape[-1]} != weight fan-in {weights.shape[0]}")
    if bias.shape != (weights.shape[1],):
        raise ValueError(f"bias shape {bias.shape} != ({weights.shape[1]},)")
    return x @ weights + bias


def dense_backward(
    grad_out: np.ndarray, x: np.ndarray, weights: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact gradients of dense_forward w.r.t. input, weights, and bias."""
    x = np.asarray(x, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if x.ndim == 1:
        if grad_out.shape != (weights.shape[1],):
            raise ValueError(f"grad shape {grad_out.shape} != ({weights.shape[1]},)")
        return grad_out @ weights.T, np.outer(x, grad_out), grad_out.copy()
    if grad_out.shape != (x.shape[0], weights.shape[1]):
        raise ValueError(f"grad shape {grad_out.shape} != {(x.shape[0], weights.shape[1])}")
    return grad_out @ weights.T, x.T @ grad_out, grad_out.sum(axis=0)


# ---------------------------------------------------------------------------
# activations


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.asarray(grad_out, dtype=np.float64) * (np.asarray(x) > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid_backward(grad_out: np.ndarray, out: np.ndarray) -> np.ndarray:
    out = np.asarray(out, dtype=np.float64)
    return np.asarray(grad_out, dtype=np.float64) * out * (1.0 - out)


def softmax(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(grad_out: np.ndarray, out: np.ndarray) -> np.ndarray:
    grad_out = np.asarray(grad_out, dtype=np.float64)
    out = np.asarray(out, dtype=np.float64)
    inner = (grad_out * out).sum(axis=-1, keepdims=True)
    return out * (grad_out - inner)


_ACTIVATION = {"relu": relu, "sigmoid": sigmoid, "softmax": softmax}


# ---------------------------------------------------------------------------
# losses


def loss_binary_ce(p, y) -> tuple[np.ndarray, np.ndarray]:
    """Binary cross-entropy on a probability of the positive class.

    p is clamped to [1e-7, 1 - 1e-7] before evaluation; returns
    (loss, dL/dp) elementwise.
    """
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(y, dtype=np.float64)
    loss = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    grad = (p - y) / (p * (1.0 - p))
    return loss, grad


def loss_categorical_ce(p, y) -> tuple[np.ndarray, np.ndarray]:
    """Cross-entropy on a probability vector (or batch of vectors).

    y is a class index (or index batch). The returned gradient is the
    combined softmax + cross-entropy gradient with respect to the logits,
    p - onehot(y).
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y)
    sums = p.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-9):
        raise ValueError("probability vectors must sum to 1 within 1e-9")
    if p.ndim == 1:
        py = p[int(y)]
        grad = p.copy()
        grad[int(y)] -= 1.0
    else:
        idx = y.astype(np.int64)
        py = np.take_along_axis(p, idx[:, None], axis=1)[:, 0]
        grad = p.copy()
        grad[np.arange(p.shape[0]), idx] -= 1.0
    loss = -np.log(np.clip(py, PROB_EPS, None))
    return loss, grad


# ---------------------------------------------------------------------------
# Adam


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 0.001
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    loss: str = "binary_ce"

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        for name, beta in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0.0 <= beta < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {beta}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "seed": self.seed,
            "loss": self.loss,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**data)


@dataclass
class AdamState:
    """First/second moment estimates plus the step counter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def init_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            t=0,
        )


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> tuple[list[np.ndarray], AdamState]:
    """One Adam update; aborts loudly on any non-finite gradient."""
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            bad = int(np.count_nonzero(~np.isfinite(g)))
            raise NumericalAbort(
                f"non-finite gradient in parameter {i} "
                f"({bad} of {g.size} entries; shape {g.shape})"
            )
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    new_params: list[np.ndarray] = []
    new_m: list[np.ndarray] = []
    new_v: list[np.ndarray] = []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_params.append(p - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, t)


# ---------------------------------------------------------------------------
# model


@dataclass(eq=False)
class ModelParams:
    """Architecture plus ordered (kernel/weight, bias) pairs per trainable layer."""

    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]
    weights: list[tuple[np.ndarray, np.ndarray]]
    seed: int | None = None
    train_config: TrainConfig | None = None

    @property
    def num_outputs(self) -> int:
        last = self.layers[-1]
        if last.kind != "dense":
            raise ValueError("model does not end in a dense layer")
        return int(last.units)

    def parameter_list(self) -> list[np.ndarray]:
        return [a for pair in self.weights for a in pair]

    def set_parameter_list(self, params: Sequence[np.ndarray]) -> None:
        if len(params) != 2 * len(self.weights):
            raise ValueError("parameter list length mismatch")
        self.weights = [
            (np.asarray(params[2 * i]), np.asarray(params[2 * i + 1]))
            for i in range(len(self.weights))
        ]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelParams):
            return NotImplemented
        if (
            self.input_shape != other.input_shape
            or self.layers != other.layers
            or self.seed != other.seed
            or self.train_config != other.train_config
            or len(self.weights) != len(other.weights)
        ):
            return False
        for (ka, ba), (kb, bb) in zip(self.weights, other.weights):
            if ka.shape != kb.shape or ba.shape != bb.shape:
                return False
            if ka.tobytes() != kb.tobytes() or ba.tobytes() != bb.tobytes():
                return False
        return True


def layer_output_shapes(
    input_shape: Sequence[int], layers: Sequence[LayerSpec]
) -> list[tuple[int, ...]]:
    """Shape after each layer; raises if any extent would fall below 1."""
    shape: tuple[int, ...] = tuple(int(v) for v in input_shape)
    out: list[tuple[int, ...]] = []
    for spec in layers:
        if spec.kind == "conv2d":
            h, w, _ = shape
            if h < spec.kernel or w < spec.kernel:
                raise ValueError(f"input {h}x{w} too small for {spec.kernel}x{spec.kernel} conv")
            shape = (h - spec.kernel + 1, w - spec.kernel + 1, spec.filters)
        elif spec.kind == "maxpool":
            h, w, c = shape
            if h < spec.window or w < spec.window:
                raise ValueError(f"input {h}x{w} too small for {spec.window}x{spec.window} pool")
            shape = (
                (h - spec.window) // spec.stride + 1,
                (w - spec.window) // spec.stride + 1,
                c,
            )
        elif spec.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif spec.kind == "dense":
            if len(shape) != 1:
                raise ValueError("dense layer requires a flattened input")
            shape = (spec.units,)
        out.append(shape)
    return out


def trainable_param_shapes(
    input_shape: Sequence[int], layers: Sequence[LayerSpec]
) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """(kernel/weight, bias) shapes per trainable layer, in layer order."""
    shapes: list[tuple[tuple[int, ...], tuple[int, ...]]] = []
    shape = tuple(int(v) for v in input_shape)
    for spec, out_shape in zip(layers, layer_output_shapes(input_shape, layers)):
        if spec.kind == "conv2d":
            shapes.append(((spec.kernel, spec.kernel, shape[2], spec.filters), (spec.filters,)))
        elif spec.kind == "dense":
            shapes.append(((shape[0], spec.units), (spec.units,)))
        shape = out_shape
    return shapes


def init_weights(
    input_shape: Sequence[int], layers: Sequence[LayerSpec], seed: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Glorot-uniform kernels/weights, zero biases, from the derived init stream."""
    rng = make_rng(seed, "init")
    weights: list[tuple[np.ndarray, np.ndarray]] = []
    for wshape, bshape in trainable_param_shapes(input_shape, layers):
        if len(wshape) == 4:
            k, _, cin, f = wshape
            fan_in, fan_out = k * k * cin, k * k * f
        else:
            fan_in, fan_out = wshape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append((rng.uniform(-limit, limit, size=wshape), np.zeros(bshape)))
    return weights


def spoofnet_layers(num_outputs: int) -> tuple[LayerSpec, ...]:
    """Two conv/pool stages, a 128-unit ReLU dense layer, and the output head."""
    head = "sigmoid" if num_outputs == 1 else "softmax"
    return (
        conv2d(16),
        maxpool(),
        conv2d(32),
        maxpool(),
        flatten(),
        dense(128, "relu"),
        dense(num_outputs, head),
    )


def build_spoofnet(
    input_h: int, input_w: int, num_outputs: int = 1, seed: int = 0
) -> ModelParams:
    """Spoofnet over a grayscale (input_h, input_w, 1) input.

    A single output gets a sigmoid head, multiple outputs a softmax head.
    """
    if num_outputs < 1:
        raise ValueError(f"num_outputs must be >= 1, got {num_outputs}")
    input_shape = (int(input_h), int(input_w), 1)
    layers = spoofnet_layers(num_outputs)
    layer_output_shapes(input_shape, layers)  # validates the whole stack
    return ModelParams(
        input_shape=input_shape,
        layers=layers,
        weights=init_weights(input_shape, layers, seed),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# forward / backward over a whole model


def _forward(model: ModelParams, xb: np.ndarray, keep_cache: bool):
    """Run the batch through every layer. Returns (output, caches).

    Each cache entry carries what the corresponding backward step needs.
    """
    caches: list[tuple] = []
    tidx = 0
    act = xb
    for spec in model.layers:
        if spec.kind == "conv2d":
            kernel, bias = model.weights[tidx]
            if keep_cache:
                _check_conv_shapes(act, kernel, bias)
                cols, ho, wo = _im2col(act, spec.kernel)
                z = (cols @ _kernel_matrix(kernel) + bias).reshape(
                    act.shape[0], ho, wo, spec.filters
                )
                caches.append(("conv2d", act, cols, z, tidx))
            else:
                z = conv2d_forward(act, kernel, bias)
            out = relu(z)
            act = out
            tidx += 1
        elif spec.kind == "maxpool":
            out, argmax = maxpool_forward(act, spec.window, spec.stride)
            if keep_cache:
                caches.append(("maxpool", act.shape, argmax, spec))
            act = out
        elif spec.kind == "flatten":
            if keep_cache:
                caches.append(("flatten", act.shape))
            act = act.reshape(act.shape[0], -1)
        elif spec.kind == "dense":
            weights, bias = model.weights[tidx]
            z = dense_forward(act, weights, bias)
            out = _ACTIVATION[spec.activation](z)
            if keep_cache:
                caches.append(("dense", act, z, out, spec.activation, tidx))
            act = out
            tidx += 1
    return act, caches


def _backward(model: ModelParams, caches: list[tuple], grad_z_head: np.ndarray):
    """Backpropagate from the head's pre-activation gradient.

    Returns per-parameter gradients aligned with model.parameter_list().
    """
    grads: list[np.ndarray | None] = [None] * (2 * len(model.weights))
    grad = grad_z_head
    at_head = True
    for pos in range(len(caches) - 1, -1, -1):
        cache = caches[pos]
        kind = cache[0]
        if kind == "dense":
            _, x, z, out, activation, tidx = cache
            if at_head:
                grad_z = grad  # combined loss+activation gradient
                at_head = False
            elif activation == "relu":
                grad_z = relu_backward(grad, z)
            elif activation == "sigmoid":
                grad_z = sigmoid_backward(grad, out)
            else:
                grad_z = softmax_backward(grad, out)
            weights, _ = model.weights[tidx]
            grad, gw, gb = dense_backward(grad_z, x, weights)
            grads[2 * tidx] = gw
            grads[2 * tidx + 1] = gb
        elif kind == "flatten":
            _, shape = cache
            grad = grad.reshape(shape)
        elif kind == "maxpool":
            _, in_shape, argmax, spec = cache
            grad = maxpool_backward(grad, argmax, in_shape, spec.window, spec.stride)
        elif kind == "conv2d":
            _, x, cols, z, tidx = cache
            grad_z = relu_backward(grad, z)
            kernel, _ = model.weights[tidx]
            grad, gk, gb = conv2d_backward(
                grad_z, x, kernel, need_input_grad=pos > 0, cols=cols
            )
            grads[2 * tidx] = gk
            grads[2 * tidx + 1] = gb
    assert all(g is not None for g in grads)
    return grads


def predict(model: ModelParams, x: np.ndarray) -> np.ndarray:
    """Forward pass only. A single (H, W, C) input yields a (num_outputs,)
    score vector; a batch yields (N, num_outputs)."""
    xb, single = _batched(x, 3)
    if xb.shape[1:] != tuple(model.input_shape):
        raise ValueError(f"input shape {xb.shape[1:]} != model input {model.input_shape}")
    out, _ = _forward(model, xb, keep_cache=False)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_loss: float
    val_accuracy: float | None = None


BatchesForEpoch = Callable[[int], Iterable[tuple[np.ndarray, np.ndarray]]]


def _head_loss_and_grad(p: np.ndarray, y: np.ndarray, loss: str):
    """Mean batch loss plus dL/dz at the head's pre-activation.

    For the sigmoid head dL/dz = p - y, which is loss_binary_ce's dL/dp
    chained through sigmoid_backward, written in its cancellation-free form.
    """
    n = p.shape[0]
    if loss == "binary_ce":
        losses, _ = loss_binary_ce(p[:, 0], y)
        grad_z = (p - y[:, None].astype(np.float64)) / n
    else:
        losses, grad = loss_categorical_ce(p, y)
        grad_z = grad / n
    return float(np.mean(losses)), grad_z


def _check_head(model: ModelParams, loss: str) -> None:
    head = model.layers[-1]
    if loss == "binary_ce" and (head.activation != "sigmoid" or head.units != 1):
        raise ValueError("binary_ce requires a 1-unit sigmoid head")
    if loss == "categorical_ce" and head.activation != "softmax":
        raise ValueError("categorical_ce requires a softmax head")


def classify_scores(scores: np.ndarray) -> np.ndarray:
    """Predicted class indices from head scores.

    Sigmoid scores of shape (N, 1) threshold at 0.5 (class 1 = positive);
    softmax scores use argmax.
    """
    scores = np.asarray(scores)
    if scores.shape[-1] == 1:
        return (scores[..., 0] >= 0.5).astype(np.int64)
    return scores.argmax(axis=-1)


def train(
    model: ModelParams,
    batches_for_epoch: BatchesForEpoch,
    config: TrainConfig,
    val_data: tuple[np.ndarray, np.ndarray] | None = None,
    progress: Callable[[EpochMetrics], None] | None = None,
) -> tuple[ModelParams, list[EpochMetrics]]:
    """Train with Adam; deterministic given (seed, data, config).

    batches_for_epoch maps a 1-based epoch number to an iterable of
    (inputs, labels) batches; labels are class indices (0/1 for the binary
    head). Raises NumericalAbort on any non-finite loss or gradient.
    """
    _check_head(model, config.loss)
    params = model.parameter_list()
    state = AdamState.init_like(params)
    metrics: list[EpochMetrics] = []

    for epoch in range(1, config.epochs + 1):
        loss_sum = 0.0
        sample_count = 0
        for xb, yb in batches_for_epoch(epoch):
            xb = np.asarray(xb, dtype=np.float64)
            yb = np.asarray(yb)
            out, caches = _forward(model, xb, keep_cache=True)
            batch_loss, grad_z = _head_loss_and_grad(out, yb, config.loss)
            if not np.isfinite(batch_loss):
                raise NumericalAbort(
                    f"non-finite training loss at epoch {epoch} "
                    f"after {sample_count} samples"
                )
            grads = _backward(model, caches, grad_z)
            try:
                params, state = adam_step(params, grads, state, config)
            except NumericalAbort as abort:
                raise NumericalAbort(f"epoch {epoch}: {abort}") from None
            model.set_parameter_list(params)
            loss_sum += batch_loss * xb.shape[0]
            sample_count += xb.shape[0]
        if sample_count == 0:
            raise ValueError("training split produced no batches")

        val_accuracy = None
        if val_data is not None:
            val_x, val_y = val_data
            scores = predict(model, val_x)
            val_accuracy = float(np.mean(classify_scores(scores) == val_y))
        row = EpochMetrics(epoch, loss_sum / sample_count, val_accuracy)
        metrics.append(row)
        if progress is not None:
            progress(row)

    model.train_config = config
    return model, metrics


def metrics_csv(metrics: Sequence[EpochMetrics]) -> str:
    """Per-epoch metrics as comma-separated rows: epoch, train_loss, val_accuracy."""
    lines = ["epoch,train_loss,val_accuracy"]
    for row in metrics:
        val = "" if row.val_accuracy is None else f"{row.val_accuracy:.9g}"
        lines.append(f"{row.epoch},{row.train_loss:.9g},{val}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# PADM model container


PADM_MAGIC = b"PADM"
PADM_VERSION = 1


class ModelFormatError(ValueError):
    """Base class for PADM container failures."""


class BadMagicError(ModelFormatError):
    """Stream does not begin with the PADM magic."""


class VersionMismatchError(ModelFormatError):
    """Container format version is not supported."""


class LengthMismatchError(ModelFormatError):
    """Declared and actual payload sizes disagree."""


def save_model(model: ModelParams) -> bytes:
    """Serialize to the PADM container.

    Layout: magic line, version line, a human-readable JSON metadata block
    (architecture, shapes, seed, training config), then raw little-endian
    float64 parameters in declared layer order (kernel then bias per layer).
    """
    meta = {
        "input_shape": list(model.input_shape),
        "layers": [spec.to_dict() for spec in model.layers],
        "seed": model.seed,
        "train_config": model.train_config.to_dict() if model.train_config else None,
        "param_shapes": [
            [list(w.shape), list(b.shape)] for w, b in model.weights
        ],
    }
    meta_json = json.dumps(meta, indent=2, sort_keys=True).encode("utf-8")
    blob = b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes()
        for pair in model.weights
        for arr in pair
    )
    count = len(blob) // 8
    return (
        PADM_MAGIC
        + b"\n"
        + f"version {PADM_VERSION}\n".encode("ascii")
        + f"meta {len(meta_json)}\n".encode("ascii")
        + meta_json
        + b"\n"
        + f"data {count}\n".encode("ascii")
        + blob
    )


def _read_line(buf: bytes, pos: int) -> tuple[bytes, int]:
    end = buf.find(b"\n", pos)
    if end < 0:
        raise ModelFormatError("unexpected end of container header")
    return buf[pos:end], end + 1


def load_model(data: bytes) -> ModelParams:
    """Parse a PADM container; the inverse of save_model, bit-exactly."""
    buf = bytes(data)
    line, pos = _read_line(buf, 0)
    if line != PADM_MAGIC:
        raise BadMagicError(f"bad magic {line!r}")
    line, pos = _read_line(buf, pos)
    if not line.startswith(b"version "):
        raise ModelFormatError(f"expected version line, got {line!r}")
    version = line.split(b" ", 1)[1]
    if version != str(PADM_VERSION).encode("ascii"):
        raise VersionMismatchError(f"unsupported format version {version!r}")

    line, pos = _read_line(buf, pos)
    if not line.startswith(b"meta "):
        raise ModelFormatError(f"expected meta line, got {line!r}")
    try:
        meta_len = int(line.split(b" ", 1)[1])
    except ValueError:
        raise ModelFormatError(f"non-numeric meta length in {line!r}") from None
    if pos + meta_len + 1 > len(buf):
        raise LengthMismatchError("metadata block truncated")
    try:
        meta = json.loads(buf[pos : pos + meta_len].decode("utf-8"))
    except ValueError as exc:
        raise ModelFormatError(f"invalid metadata JSON: {exc}") from None
    pos += meta_len
    if buf[pos : pos + 1] != b"\n":
        raise ModelFormatError("missing newline after metadata block")
    pos += 1

    line, pos = _read_line(buf, pos)
    if not line.startswith(b"data "):
        raise ModelFormatError(f"expected data line, got {line!r}")
    try:
        count = int(line.split(b" ", 1)[1])
    except ValueError:
        raise ModelFormatError(f"non-numeric float count in {line!r}") from None
    payload = buf[pos:]
    if len(payload) != count * 8:
        raise LengthMismatchError(
            f"payload is {len(payload)} bytes, header declares {count * 8}"
        )

    try:
        input_shape = tuple(int(v) for v in meta["input_shape"])
        layers = tuple(LayerSpec.from_dict(d) for d in meta["layers"])
        expected_shapes = trainable_param_shapes(input_shape, layers)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"invalid architecture metadata: {exc}") from None
    declared = [
        (tuple(w), tuple(b)) for w, b in meta.get("param_shapes", [])
    ]
    if declared and declared != expected_shapes:
        raise ModelFormatError("param_shapes inconsistent with the architecture")
    expected_count = sum(
        int(np.prod(w)) + int(np.prod(b)) for w, b in expected_shapes
    )
    if count != expected_count:
        raise LengthMismatchError(
            f"header declares {count} floats, architecture needs {expected_count}"
        )

    flat = np.frombuffer(payload, dtype="<f8")
    weights: list[tuple[np.ndarray, np.ndarray]] = []
    offset = 0
    for wshape, bshape in expected_shapes:
        wsize = int(np.prod(wshape))
        bsize = int(np.prod(bshape))
        w = flat[offset : offset + wsize].reshape(wshape).copy()
        offset += wsize
        b = flat[offset : offset + bsize].reshape(bshape).copy()
        offset += bsize
        weights.append((w, b))

    config = meta.get("train_config")
    return ModelParams(
        input_shape=input_shape,
        layers=layers,
        weights=weights,
        seed=meta.get("seed"),
        train_config=TrainConfig.from_dict(config) if config else None,
    )
