"""Layer composition: network specs, checkpoints, traced forward passes,
standard backpropagation and the guided (gradient-clipping) variant.

The guided pass follows the clipped-chain recipe exactly: the gradient of
the selected output probability is rectified, then rectified again after
every single layer's backward step, down to and including the step onto
the input image. Max-pool steps route through the recorded argmax,
unchanged from the standard pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .tensor import DEFAULT_DTYPE, DimensionError, as_tensor, require_shape

LAYER_KINDS = ("conv", "relu", "maxpool", "flatten", "dense", "softmax")
PARAM_KINDS = ("conv", "dense")

_REQUIRED_FIELDS = {
    "conv": ("kernels", "kh", "kw", "stride", "pad"),
    "relu": (),
    "maxpool": ("window", "stride"),
    "flatten": (),
    "dense": ("units",),
    "softmax": (),
}
_ALL_FIELDS = ("kernels", "kh", "kw", "stride", "pad", "window", "units")


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the classifier stack.

    ``trainable`` marks head layers: the ones the heads-only training
    phase updates. Only conv and dense layers may carry it.
    """

    kind: str
    kernels: int | None = None
    kh: int | None = None
    kw: int | None = None
    stride: int | None = None
    pad: int | None = None
    window: int | None = None
    units: int | None = None
    trainable: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        required = _REQUIRED_FIELDS[self.kind]
        for name in _ALL_FIELDS:
            value = getattr(self, name)
            if name in required and value is None:
                raise ValueError(f"{self.kind} layer requires {name}")
            if name not in required and value is not None:
                raise ValueError(f"{self.kind} layer does not take {name}")
        for name in required:
            value = getattr(self, name)
            minimum = 0 if name == "pad" else 1
            if value < minimum:
                raise ValueError(f"{self.kind} layer {name} must be >= {minimum}")
        if self.trainable and self.kind not in PARAM_KINDS:
            raise ValueError(f"{self.kind} layer has no parameters to train")


def conv(kernels: int, kh: int, kw: int, stride: int = 1, pad: int = 0,
         trainable: bool = True) -> LayerSpec:
    return LayerSpec("conv", kernels=kernels, kh=kh, kw=kw, stride=stride,
                     pad=pad, trainable=trainable)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def maxpool(window: int, stride: int | None = None) -> LayerSpec:
    return LayerSpec("maxpool", window=window, stride=window if stride is None else stride)


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def dense(units: int, trainable: bool = True) -> LayerSpec:
    return LayerSpec("dense", units=units, trainable=trainable)


def softmax() -> LayerSpec:
    return LayerSpec("softmax")


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer stack with a fixed [C,H,W] input shape.

    Shapes must chain; a softmax layer may appear only in final position.
    Classifier networks end in softmax; test fixtures may omit it, in
    which case the final activation doubles as the output scores.
    """

    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        if len(self.input_shape) != 3 or any(d < 1 for d in self.input_shape):
            raise DimensionError(f"input_shape must be [C,H,W] >= 1, got {self.input_shape}")
        if not self.layers:
            raise ValueError("network needs at least one layer")
        self.activation_shapes()  # validates chaining and softmax placement

    def activation_shapes(self) -> list[tuple[int, ...]]:
        """Shapes of A_0 (the input) through A_N (the output)."""
        shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            cur = shapes[-1]
            if layer.kind == "conv":
                if len(cur) != 3:
                    raise DimensionError(f"layer {i}: conv needs a [C,H,W] input, got {cur}")
                w_shape = (layer.kernels, cur[0], layer.kh, layer.kw)
                try:
                    nxt = kernels.conv2d_output_shape(cur, w_shape, layer.stride, layer.pad)
                except DimensionError as exc:
                    raise DimensionError(f"layer {i}: {exc}") from None
            elif layer.kind == "maxpool":
                if len(cur) != 3:
                    raise DimensionError(f"layer {i}: maxpool needs a [C,H,W] input, got {cur}")
                if layer.window > cur[1] or layer.window > cur[2]:
                    raise DimensionError(f"layer {i}: window {layer.window} exceeds {cur[1:]}")
                nxt = (cur[0],
                       (cur[1] - layer.window) // layer.stride + 1,
                       (cur[2] - layer.window) // layer.stride + 1)
            elif layer.kind == "relu":
                nxt = cur
            elif layer.kind == "flatten":
                nxt = (int(np.prod(cur)),)
            elif layer.kind == "dense":
                if len(cur) != 1:
                    raise DimensionError(f"layer {i}: dense needs a flat input, got {cur}")
                nxt = (layer.units,)
            elif layer.kind == "softmax":
                if i != len(self.layers) - 1:
                    raise ValueError("softmax may appear only as the final layer")
                if len(cur) != 1:
                    raise DimensionError(f"layer {i}: softmax needs a flat input, got {cur}")
                nxt = cur
            shapes.append(tuple(int(d) for d in nxt))
        if len(shapes[-1]) != 1:
            raise DimensionError("network output must be a flat class vector")
        return shapes

    @property
    def class_count(self) -> int:
        return self.activation_shapes()[-1][0]

    def param_shapes(self, index: int) -> dict[str, tuple[int, ...]] | None:
        layer = self.layers[index]
        cur = self.activation_shapes()[index]
        if layer.kind == "conv":
            return {"w": (layer.kernels, cur[0], layer.kh, layer.kw), "b": (layer.kernels,)}
        if layer.kind == "dense":
            return {"w": (layer.units, cur[0]), "b": (layer.units,)}
        return None


@dataclass
class Checkpoint:
    """A NetworkSpec plus its learned parameters, aligned per layer."""

    spec: NetworkSpec
    params: list[dict[str, np.ndarray] | None]

    def __post_init__(self):
        if len(self.params) != len(self.spec.layers):
            raise DimensionError("params list must align with spec layers")
        for i in range(len(self.params)):
            expected = self.spec.param_shapes(i)
            got = self.params[i]
            if expected is None:
                if got is not None:
                    raise DimensionError(f"layer {i} takes no parameters")
                continue
            if got is None or set(got) != set(expected):
                raise DimensionError(f"layer {i} expects parameters {sorted(expected)}")
            for name, shape in expected.items():
                require_shape(f"layer {i} param {name!r}", got[name], shape)

    @property
    def dtype(self) -> np.dtype:
        for p in self.params:
            if p is not None:
                return p["w"].dtype
        return DEFAULT_DTYPE

    def copy(self) -> "Checkpoint":
        return Checkpoint(self.spec, [None if p is None else
                                      {k: v.copy() for k, v in p.items()}
                                      for p in self.params])

    def astype(self, dtype) -> "Checkpoint":
        return Checkpoint(self.spec, [None if p is None else
                                      {k: v.astype(dtype) for k, v in p.items()}
                                      for p in self.params])


def init_checkpoint(spec: NetworkSpec, seed: int = 0, dtype=DEFAULT_DTYPE) -> Checkpoint:
    """Seeded Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params: list[dict[str, np.ndarray] | None] = []
    shapes = spec.activation_shapes()
    for i, layer in enumerate(spec.layers):
        if layer.kind == "conv":
            fan_in = shapes[i][0] * layer.kh * layer.kw
            fan_out = layer.kernels * layer.kh * layer.kw
        elif layer.kind == "dense":
            fan_in, fan_out = shapes[i][0], layer.units
        else:
            params.append(None)
            continue
        limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
        p = spec.param_shapes(i)
        w = rng.uniform(-limit, limit, size=p["w"]).astype(dtype)
        b = np.zeros(p["b"], dtype=dtype)
        params.append({"w": w, "b": b})
    return Checkpoint(spec, params)


@dataclass
class ActivationTrace:
    """Every forward activation of one image: A_0 (input) .. A_N (output),
    plus pool argmax indices and the final probabilities."""

    activations: list[np.ndarray]
    pool_argmax: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def probs(self) -> np.ndarray:
        return self.activations[-1].astype(np.float64)


def forward(checkpoint: Checkpoint, image) -> tuple[np.ndarray, ActivationTrace]:
    """Run the stack on a [C,H,W] image; returns (probs, trace).

    The trace caches every intermediate activation for the backward
    passes. For softmax-terminated networks `probs` is a float64
    probability vector summing to 1.
    """
    spec = checkpoint.spec
    image = as_tensor(image, dtype=checkpoint.dtype)
    require_shape("image", image, spec.input_shape)
    acts = [image]
    argmaxes: dict[int, np.ndarray] = {}
    for i, layer in enumerate(spec.layers):
        x = acts[-1]
        if layer.kind == "conv":
            p = checkpoint.params[i]
            out = kernels.conv2d_forward(x, p["w"], p["b"], layer.stride, layer.pad)
        elif layer.kind == "relu":
            out = kernels.relu(x)
        elif layer.kind == "maxpool":
            out, argmaxes[i] = kernels.maxpool_forward(x, layer.window, layer.stride)
        elif layer.kind == "flatten":
            out = x.reshape(-1)
        elif layer.kind == "dense":
            p = checkpoint.params[i]
            out = kernels.dense_forward(x, p["w"], p["b"])
        else:  # softmax
            out = kernels.softmax(x)
        acts.append(out)
    trace = ActivationTrace(acts, argmaxes)
    return trace.probs, trace


def _check_class(checkpoint: Checkpoint, y: int) -> int:
    k = checkpoint.spec.class_count
    y = int(y)
    if not 0 <= y < k:
        raise IndexError(f"class index {y} out of range [0, {k})")
    return y


def _vjp_input(checkpoint: Checkpoint, trace: ActivationTrace, i: int,
               grad: np.ndarray) -> np.ndarray:
    """Backward step of layer i on an upstream gradient, input part only."""
    layer = checkpoint.spec.layers[i]
    x = trace.activations[i]
    if layer.kind == "conv":
        p = checkpoint.params[i]
        gx, _, _ = kernels.conv2d_backward(x, p["w"], grad, layer.stride, layer.pad)
        return gx
    if layer.kind == "relu":
        return kernels.relu_backward(x, grad)
    if layer.kind == "maxpool":
        return kernels.maxpool_backward(grad, trace.pool_argmax[i], x.shape)
    if layer.kind == "flatten":
        return grad.reshape(x.shape)
    if layer.kind == "dense":
        return kernels.dense_backward(x, checkpoint.params[i]["w"], grad)[0]
    # softmax: activations[i+1] holds the float64 probabilities
    return kernels.softmax_backward(trace.activations[i + 1], grad)


def _output_backprop(checkpoint: Checkpoint, trace: ActivationTrace, y: int,
                     clip: bool) -> np.ndarray:
    spec = checkpoint.spec
    y = _check_class(checkpoint, y)
    n_layers = len(spec.layers)
    last = spec.layers[-1]
    seed_dtype = np.float64 if last.kind == "softmax" else checkpoint.dtype
    grad = np.zeros(spec.class_count, dtype=seed_dtype)
    grad[y] = 1.0
    for i in reversed(range(n_layers)):
        grad = _vjp_input(checkpoint, trace, i, grad)
        if spec.layers[i].kind == "softmax":
            grad = grad.astype(checkpoint.dtype)
        if clip:
            grad = kernels.relu(grad)
    return grad


def guided_backward(checkpoint: Checkpoint, trace: ActivationTrace, y: int) -> np.ndarray:
    """Clipped backward pass for output class ``y``.

    Seeds with the rectified gradient of the class probability w.r.t. the
    last intermediate layer, rectifies again after every layer's backward
    step, and returns the resulting non-negative input-shaped map.
    """
    return _output_backprop(checkpoint, trace, y, clip=True)


def input_gradient(checkpoint: Checkpoint, trace: ActivationTrace, y: int) -> np.ndarray:
    """Plain (unclipped) gradient of output ``y`` w.r.t. the input image."""
    return _output_backprop(checkpoint, trace, y, clip=False)


def backward(checkpoint: Checkpoint, trace: ActivationTrace, target_class: int,
             trainable_only: bool = True):
    """Cross-entropy gradients at ``target_class``.

    Returns ``(input_grad, param_grads)`` where ``param_grads`` aligns
    with the layers; frozen layers get no entry unless
    ``trainable_only=False``. The weight-decay term is not included here
    (the trainer adds its closed-form gradient).
    """
    spec = checkpoint.spec
    target = _check_class(checkpoint, target_class)
    if spec.layers[-1].kind != "softmax":
        raise ValueError("cross-entropy backward requires a softmax-terminated network")
    probs = trace.probs
    grad = probs.copy()
    grad[target] -= 1.0  # d(-ln p_t)/d logits, softmax fused
    grad = grad.astype(checkpoint.dtype)
    param_grads: list[dict[str, np.ndarray] | None] = [None] * len(spec.layers)
    for i in reversed(range(len(spec.layers) - 1)):
        layer = spec.layers[i]
        x = trace.activations[i]
        if layer.kind == "conv":
            p = checkpoint.params[i]
            grad, gw, gb = kernels.conv2d_backward(x, p["w"], grad, layer.stride, layer.pad)
            if layer.trainable or not trainable_only:
                param_grads[i] = {"w": gw, "b": gb}
        elif layer.kind == "dense":
            p = checkpoint.params[i]
            grad, gw, gb = kernels.dense_backward(x, p["w"], grad)
            if layer.trainable or not trainable_only:
                param_grads[i] = {"w": gw, "b": gb}
        else:
            grad = _vjp_input(checkpoint, trace, i, grad)
    return grad, param_grads
