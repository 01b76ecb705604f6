"""Float64 conv/pool/dense layers with hand-written reverse-mode gradients.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Every layer
operator accepts either a single sample (``[C, H, W]`` or ``[n]``) or a batch
with a leading sample axis, so one forward call can push both branches of a
Siamese pair through the same parameters.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GradientError, ShapeError, TrainingError

DTYPE = np.float64
LAYER_KINDS = ("conv2d", "maxpool2d", "relu", "dense", "flatten")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel_h: int = 0
    kernel_w: int = 0
    stride: int = 1
    pad: int = 0
    window: int = 0
    in_features: int = 0
    out_features: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.stride < 1:
            raise ValueError(f"{self.kind}: stride must be >= 1, got {self.stride}")
        if self.pad < 0:
            raise ValueError(f"{self.kind}: padding must be >= 0, got {self.pad}")
        if self.kind == "conv2d":
            for name in ("in_channels", "out_channels", "kernel_h", "kernel_w"):
                if getattr(self, name) < 1:
                    raise ValueError(f"conv2d: {name} must be >= 1")
        elif self.kind == "maxpool2d" and self.window < 1:
            raise ValueError("maxpool2d: window must be >= 1")
        elif self.kind == "dense" and (self.in_features < 1 or self.out_features < 1):
            raise ValueError("dense: in_features and out_features must be >= 1")

    @property
    def has_params(self) -> bool:
        return self.kind in ("conv2d", "dense")

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        if self.kind == "conv2d":
            return {
                "weight": (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w),
                "bias": (self.out_channels,),
            }
        if self.kind == "dense":
            return {"weight": (self.out_features, self.in_features), "bias": (self.out_features,)}
        return {}

    def output_shape(self, in_shape: Sequence[int]) -> tuple[int, ...]:
        """Shape of one sample after this layer, or ShapeError if ``in_shape`` does not fit."""
        in_shape = tuple(in_shape)
        if self.kind == "conv2d":
            if len(in_shape) != 3:
                raise ShapeError("conv2d expects [C, H, W] input", ndim=(3, len(in_shape)))
            c, h, w = in_shape
            if c != self.in_channels:
                raise ShapeError("conv2d channel mismatch", channels=(self.in_channels, c))
            oh = _out_extent(h, self.kernel_h, self.stride, self.pad)
            ow = _out_extent(w, self.kernel_w, self.stride, self.pad)
            if oh < 1 or ow < 1:
                raise ShapeError(
                    "conv2d output would be empty",
                    height=(f">= {self.kernel_h - 2 * self.pad}", h),
                    width=(f">= {self.kernel_w - 2 * self.pad}", w),
                )
            return (self.out_channels, oh, ow)
        if self.kind == "maxpool2d":
            if len(in_shape) != 3:
                raise ShapeError("maxpool2d expects [C, H, W] input", ndim=(3, len(in_shape)))
            c, h, w = in_shape
            if h < self.window or w < self.window:
                raise ShapeError(
                    "pool window larger than input", height=(f">= {self.window}", h), width=(f">= {self.window}", w)
                )
            return (c, _out_extent(h, self.window, self.stride, 0), _out_extent(w, self.window, self.stride, 0))
        if self.kind == "relu":
            return in_shape
        if self.kind == "flatten":
            return (math.prod(in_shape),)
        # dense
        if len(in_shape) != 1:
            raise ShapeError("dense expects a flat input; insert a flatten layer", ndim=(1, len(in_shape)))
        if in_shape[0] != self.in_features:
            raise ShapeError("dense input width mismatch", features=(self.in_features, in_shape[0]))
        return (self.out_features,)


def conv2d(in_channels, out_channels, kernel, stride=1, pad=0, kernel_w=None) -> LayerSpec:
    return LayerSpec(
        "conv2d",
        in_channels=in_channels,
        out_channels=out_channels,
        kernel_h=kernel,
        kernel_w=kernel if kernel_w is None else kernel_w,
        stride=stride,
        pad=pad,
    )


def maxpool2d(window, stride=None) -> LayerSpec:
    return LayerSpec("maxpool2d", window=window, stride=window if stride is None else stride)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def dense(in_features, out_features) -> LayerSpec:
    return LayerSpec("dense", in_features=in_features, out_features=out_features)


def _out_extent(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


@dataclass(frozen=True)
class Architecture:
    """Input sample shape plus the ordered layer list."""

    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if any(s < 1 for s in self.input_shape):
            raise ShapeError("input extents must be positive", input_shape=("all >= 1", self.input_shape))
        self.shapes()

    def shapes(self) -> list[tuple[int, ...]]:
        """Per-sample shape before the first layer and after each layer."""
        shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            try:
                shapes.append(layer.output_shape(shapes[-1]))
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
        return shapes

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.shapes()[-1]

    def to_dict(self) -> dict[str, Any]:
        return {"input_shape": list(self.input_shape), "layers": [asdict(layer) for layer in self.layers]}

    @classmethod
    def from_dict(cls, d) -> "Architecture":
        return cls(tuple(d["input_shape"]), tuple(LayerSpec(**layer) for layer in d["layers"]))

    @classmethod
    def parse(cls, text: str, input_shape: Sequence[int]) -> "Architecture":
        """Build from a compact description such as ``"conv:8:3:1:1 relu pool:2 flatten dense:32"``.

        Tokens are separated by whitespace or commas. ``conv:OUT:K[:STRIDE[:PAD]]``,
        ``pool:WINDOW[:STRIDE]``, ``relu``, ``flatten``, ``dense:OUT``. Input
        channel and feature counts are inferred by chaining shapes.
        """
        layers = []
        shape = tuple(input_shape)
        for token in text.replace(",", " ").split():
            name, *args = token.split(":")
            try:
                nums = [int(a) for a in args]
            except ValueError:
                raise ValueError(f"bad layer token {token!r}") from None
            if name in ("conv", "conv2d"):
                if not 2 <= len(nums) <= 4 or len(shape) != 3:
                    raise ValueError(f"bad conv token {token!r} for input shape {shape}")
                layer = conv2d(shape[0], nums[0], nums[1], *nums[2:])
            elif name in ("pool", "maxpool", "maxpool2d"):
                if not 1 <= len(nums) <= 2:
                    raise ValueError(f"bad pool token {token!r}")
                layer = maxpool2d(*nums)
            elif name in ("relu", "flatten") and not nums:
                layer = LayerSpec(name)
            elif name == "dense" and len(nums) == 1:
                if len(shape) != 1:
                    raise ShapeError(f"{token!r} needs a flat input; insert a flatten layer", ndim=(1, len(shape)))
                layer = dense(shape[0], nums[0])
            else:
                raise ValueError(f"bad layer token {token!r} for input shape {shape}")
            shape = layer.output_shape(shape)
            layers.append(layer)
        return cls(tuple(input_shape), tuple(layers))


def default_architecture(size: int = 64, embedding_dim: int = 32) -> Architecture:
    """Two conv/relu/pool blocks and a dense projection; trains in minutes on a CPU."""
    return Architecture.parse(
        f"conv:8:3:1:1 relu pool:2:2 conv:16:3:1:1 relu pool:2:2 flatten dense:{embedding_dim}",
        (1, size, size),
    )


def five_conv_architecture(size: int = 64, embedding_dim: int = 128) -> Architecture:
    """AlexNet-style layout with five conv layers and three pooling layers."""
    return Architecture.parse(
        "conv:16:5:1:2 relu pool:2 conv:32:3:1:1 relu pool:2 "
        "conv:48:3:1:1 relu conv:48:3:1:1 relu conv:32:3:1:1 relu pool:2 "
        f"flatten dense:{embedding_dim}",
        (1, size, size),
    )


class ParamStore:
    """The single parameter store shared by both Siamese branches.

    ``params[i][name]`` and ``grads[i][name]`` hold float64 arrays for layer ``i``.
    """

    def __init__(self, params: dict[int, dict[str, np.ndarray]] | None = None):
        self.params = {} if params is None else params
        self.grads = {i: {k: np.zeros_like(v) for k, v in p.items()} for i, p in self.params.items()}

    @classmethod
    def initialize(cls, arch: Architecture, seed: int) -> "ParamStore":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        params = {}
        for i, layer in enumerate(arch.layers):
            if not layer.has_params:
                continue
            shapes = layer.param_shapes()
            w_shape = shapes["weight"]
            receptive = math.prod(w_shape[2:])
            fan_in, fan_out = w_shape[1] * receptive, w_shape[0] * receptive
            s = math.sqrt(6.0 / (fan_in + fan_out))
            params[i] = {
                "weight": rng.uniform(-s, s, size=w_shape).astype(DTYPE),
                "bias": np.zeros(shapes["bias"], dtype=DTYPE),
            }
        return cls(params)

    @classmethod
    def zeros(cls, arch: Architecture) -> "ParamStore":
        return cls(
            {
                i: {k: np.zeros(s, dtype=DTYPE) for k, s in layer.param_shapes().items()}
                for i, layer in enumerate(arch.layers)
                if layer.has_params
            }
        )

    def items(self) -> Iterator[tuple[int, str, np.ndarray, np.ndarray]]:
        for i in sorted(self.params):
            for name in sorted(self.params[i]):
                yield i, name, self.params[i][name], self.grads[i][name]

    def zero_grad(self):
        for _, _, _, g in self.items():
            g.fill(0.0)

    def copy(self) -> "ParamStore":
        return ParamStore({i: {k: v.copy() for k, v in p.items()} for i, p in self.params.items()})

    @property
    def size(self) -> int:
        return sum(p.size for _, _, p, _ in self.items())

    def check_against(self, arch: Architecture):
        expected = {i: layer.param_shapes() for i, layer in enumerate(arch.layers) if layer.has_params}
        if sorted(expected) != sorted(self.params):
            raise ShapeError("parameter layers do not match architecture", layers=(sorted(expected), sorted(self.params)))
        for i, shapes in expected.items():
            for name, shape in shapes.items():
                got = self.params[i].get(name)
                got_shape = None if got is None else got.shape
                if got_shape != shape:
                    raise ShapeError(f"layer {i} {name} has wrong shape", **{name: (shape, got_shape)})


# --- layer operators -------------------------------------------------------


def _batched(x, sample_ndim):
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim == sample_ndim:
        return x[None], True
    if x.ndim == sample_ndim + 1:
        return x, False
    raise ShapeError("wrong number of dimensions", ndim=(f"{sample_ndim} or {sample_ndim + 1}", x.ndim))


def _im2col(x, kh, kw, stride, pad):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, oh, ow = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh, ow, c * kh * kw)
    return cols, oh, ow


@dataclass
class ConvCache:
    input_shape: tuple[int, ...]
    cols: np.ndarray
    kernel: np.ndarray
    stride: int
    pad: int


def conv2d_forward(x, kernel, bias, stride=1, pad=0, return_cache=False):
    """Zero-padded cross-correlation plus per-channel bias.

    ``x`` is ``[C_in, H, W]`` or ``[N, C_in, H, W]``; ``kernel`` is
    ``[C_out, C_in, kH, kW]``.
    """
    xb, single = _batched(x, 3)
    kernel = np.asarray(kernel, dtype=DTYPE)
    bias = np.asarray(bias, dtype=DTYPE)
    if kernel.ndim != 4:
        raise ShapeError("kernel must be [C_out, C_in, kH, kW]", ndim=(4, kernel.ndim))
    c_out, c_in, kh, kw = kernel.shape
    spec = LayerSpec("conv2d", in_channels=c_in, out_channels=c_out, kernel_h=kh, kernel_w=kw, stride=stride, pad=pad)
    spec.output_shape(xb.shape[1:])
    if bias.shape != (c_out,):
        raise ShapeError("bias length must equal output channels", bias=((c_out,), bias.shape))
    cols, oh, ow = _im2col(xb, kh, kw, stride, pad)
    out = cols.reshape(-1, c_in * kh * kw) @ kernel.reshape(c_out, -1).T + bias
    out = np.ascontiguousarray(out.reshape(xb.shape[0], oh, ow, c_out).transpose(0, 3, 1, 2))
    if single:
        out = out[0]
    if return_cache:
        return out, ConvCache(xb.shape, cols, kernel, stride, pad)
    return out


def conv2d_backward(grad_out, cache: ConvCache, input_grad=True):
    """Returns ``(grad_input, grad_kernel, grad_bias)``; ``grad_input`` is batched.

    With ``input_grad=False`` the (expensive) input gradient is skipped and returned as None.
    """
    n, c_in, h, w = cache.input_shape
    c_out, _, kh, kw = cache.kernel.shape
    g = np.asarray(grad_out, dtype=DTYPE).reshape(n, c_out, -1)
    oh, ow = cache.cols.shape[1:3]
    g = g.reshape(n, c_out, oh, ow).transpose(0, 2, 3, 1).reshape(-1, c_out)
    flat_cols = cache.cols.reshape(-1, c_in * kh * kw)
    grad_kernel = (g.T @ flat_cols).reshape(cache.kernel.shape)
    grad_bias = g.sum(axis=0)
    if not input_grad:
        return None, grad_kernel, grad_bias
    grad_cols = (g @ cache.kernel.reshape(c_out, -1)).reshape(n, oh, ow, c_in, kh, kw)
    s, p = cache.stride, cache.pad
    grad_padded = np.zeros((n, c_in, h + 2 * p, w + 2 * p), dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            grad_padded[:, :, i : i + s * oh : s, j : j + s * ow : s] += grad_cols[..., i, j].transpose(0, 3, 1, 2)
    grad_input = grad_padded[:, :, p : p + h, p : p + w]
    return np.ascontiguousarray(grad_input), grad_kernel, grad_bias


@dataclass
class PoolRouting:
    """Flat ``H*W`` index of the winning input cell for every output cell (batched)."""

    input_shape: tuple[int, ...]
    indices: np.ndarray


def maxpool2d_forward(x, window, stride=None):
    """Max over ``window x window`` patches. Returns ``(output, routing)``.

    Ties go to the first maximal element in row-major window order.
    """
    stride = window if stride is None else stride
    xb, single = _batched(x, 3)
    LayerSpec("maxpool2d", window=window, stride=stride).output_shape(xb.shape[1:])
    n, c, h, w = xb.shape
    win = sliding_window_view(xb, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2:4]
    flat = win.reshape(n, c, oh, ow, window * window)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    rows = np.arange(oh)[:, None] * stride + arg // window
    cols = np.arange(ow)[None, :] * stride + arg % window
    routing = PoolRouting(xb.shape, rows * w + cols)
    if single:
        out = out[0]
    return np.ascontiguousarray(out), routing


def maxpool2d_backward(grad_out, routing: PoolRouting):
    n, c, h, w = routing.input_shape
    plane = np.arange(n * c).reshape(n, c, 1, 1) * (h * w)
    target = (plane + routing.indices).ravel()
    g = np.asarray(grad_out, dtype=DTYPE).ravel()
    return np.bincount(target, weights=g, minlength=n * c * h * w).reshape(n, c, h, w)


def relu_forward(x):
    return np.maximum(np.asarray(x, dtype=DTYPE), 0.0)


def relu_backward(grad_out, x):
    # derivative at exactly 0 is taken as 0
    return np.where(x > 0, grad_out, 0.0)


def dense_forward(x, weights, bias):
    """``weights @ x + bias`` for ``x`` of shape ``[n]`` or ``[N, n]``."""
    xb, single = _batched(x, 1)
    weights = np.asarray(weights, dtype=DTYPE)
    bias = np.asarray(bias, dtype=DTYPE)
    if weights.ndim != 2:
        raise ShapeError("weights must be a matrix", ndim=(2, weights.ndim))
    m, n = weights.shape
    if xb.shape[1] != n:
        raise ShapeError("input length must match weight columns", columns=(n, xb.shape[1]))
    if bias.shape != (m,):
        raise ShapeError("bias length must match weight rows", bias=((m,), bias.shape))
    out = xb @ weights.T + bias
    return out[0] if single else out


# --- whole-network passes ---------------------------------------------------


@dataclass
class Tape:
    """Intermediates recorded by :func:`forward` for :func:`backward_pass`."""

    batch_size: int
    entries: list = field(default_factory=list)


def forward(arch: Architecture, store: ParamStore, x, record=False):
    """Run a batch ``[N, *input_shape]`` (or one sample) through the network.

    With ``record=True`` returns ``(output, tape)``.
    """
    xb, single = _batched(x, len(arch.input_shape))
    if xb.shape[1:] != arch.input_shape:
        raise ShapeError("input does not match architecture", input_shape=(arch.input_shape, xb.shape[1:]))
    tape = Tape(xb.shape[0]) if record else None
    h = xb
    for i, layer in enumerate(arch.layers):
        if layer.kind == "conv2d":
            p = store.params[i]
            h, cache = conv2d_forward(h, p["weight"], p["bias"], layer.stride, layer.pad, return_cache=True)
        elif layer.kind == "maxpool2d":
            h, cache = maxpool2d_forward(h, layer.window, layer.stride)
        elif layer.kind == "relu":
            cache = h
            h = relu_forward(h)
        elif layer.kind == "flatten":
            cache = h.shape
            h = h.reshape(h.shape[0], -1)
        else:
            p = store.params[i]
            cache = h
            h = dense_forward(h, p["weight"], p["bias"])
        if record:
            tape.entries.append(cache)
    out = h[0] if single else h
    return (out, tape) if record else out


def backward_pass(arch: Architecture, store: ParamStore, tape: Tape | None, grad_output, input_grad=True):
    """Backpropagate ``grad_output`` (batched like the forward output).

    Parameter gradients are added into ``store.grads``; every sample in the
    batch contributes to the same accumulators. Returns the gradient with
    respect to the batched network input, or None when ``input_grad`` is off.
    """
    if tape is None or len(tape.entries) != len(arch.layers):
        raise GradientError("backward_pass called without a recorded forward pass")
    g = np.asarray(grad_output, dtype=DTYPE)
    if g.shape[0] != tape.batch_size or g.ndim != len(arch.output_shape) + 1:
        g = g.reshape((tape.batch_size,) + arch.output_shape)
    for i in reversed(range(len(arch.layers))):
        layer, cache = arch.layers[i], tape.entries[i]
        if layer.kind == "conv2d":
            g, gk, gb = conv2d_backward(g, cache, input_grad=input_grad or i > 0)
            store.grads[i]["weight"] += gk
            store.grads[i]["bias"] += gb
        elif layer.kind == "maxpool2d":
            g = maxpool2d_backward(g, cache)
        elif layer.kind == "relu":
            g = relu_backward(g, cache)
        elif layer.kind == "flatten":
            g = g.reshape(cache)
        else:
            w = store.params[i]["weight"]
            store.grads[i]["weight"] += g.T @ cache
            store.grads[i]["bias"] += g.sum(axis=0)
            if input_grad or i > 0:
                g = g @ w
        if g is None:
            break
    return g if input_grad else None


def sgd_step(store: ParamStore, learning_rate: float):
    """Plain gradient descent ``p -= lr * grad``, then zero the gradients.

    Raises TrainingError before touching any parameter if a gradient is not finite.
    """
    if not learning_rate >= 0:
        raise ValueError(f"learning rate must be non-negative, got {learning_rate}")
    for i, name, _, g in store.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in layer {i} {name}; step aborted")
    for _, _, p, g in store.items():
        p -= learning_rate * g
    store.zero_grad()
    return store
