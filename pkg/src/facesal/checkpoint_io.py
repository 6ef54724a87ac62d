"""Checkpoint persistence.

Binary layout (little-endian): magic ``GBWB``, u32 format version, u32
layer count; then per layer a u8 kind tag, a u32 parameter-tensor count,
and for each tensor u32 ndim + u32 dims followed by its raw f32 data.
Hyperparameters that shapes alone cannot carry (stride, pad, window,
trainable flags, the input shape) live in a human-readable ``.arch``
sidecar, one line per layer.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .network import (Checkpoint, LayerSpec, NetworkSpec, conv, dense,
                      flatten, maxpool, relu, softmax)

MAGIC = b"GBWB"
FORMAT_VERSION = 1

KIND_TAGS = {"conv": 1, "relu": 2, "maxpool": 3, "flatten": 4, "dense": 5, "softmax": 6}
TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}

# Fixed serialization order of each layer's parameter tensors.
PARAM_ORDER = ("w", "b")


class CheckpointFormatError(ValueError):
    """Raised for unreadable checkpoint or architecture files."""


def format_arch(spec: NetworkSpec) -> str:
    """Render a NetworkSpec as line-per-layer architecture text."""
    c, h, w = spec.input_shape
    lines = [f"input c={c} h={h} w={w}"]
    shapes = spec.activation_shapes()
    for i, layer in enumerate(spec.layers):
        if layer.kind == "conv":
            lines.append(f"conv k={layer.kernels} c={shapes[i][0]} kh={layer.kh} "
                         f"kw={layer.kw} stride={layer.stride} pad={layer.pad} "
                         f"trainable={int(layer.trainable)}")
        elif layer.kind == "maxpool":
            lines.append(f"maxpool window={layer.window} stride={layer.stride}")
        elif layer.kind == "dense":
            lines.append(f"dense units={layer.units} trainable={int(layer.trainable)}")
        else:
            lines.append(layer.kind)
    return "\n".join(lines) + "\n"


def _parse_fields(parts: list[str], line_no: int) -> dict[str, int]:
    fields = {}
    for part in parts:
        key, sep, value = part.partition("=")
        if not sep or not key:
            raise CheckpointFormatError(f"line {line_no}: expected key=value, got {part!r}")
        if key in fields:
            raise CheckpointFormatError(f"line {line_no}: duplicate field {key}")
        try:
            fields[key] = int(value)
        except ValueError:
            raise CheckpointFormatError(f"line {line_no}: {key} must be an integer, "
                                        f"got {value!r}") from None
    return fields


def _take(fields: dict[str, int], line_no: int, name: str, required: bool = True,
          default=None):
    if name in fields:
        return fields.pop(name)
    if required:
        raise CheckpointFormatError(f"line {line_no}: missing field {name}")
    return default


def parse_arch(text: str) -> NetworkSpec:
    """Parse architecture text; blank lines and ``#`` comments are skipped.

    The first effective line must be ``input c=.. h=.. w=..``; each later
    line describes one layer. A redundant ``c=`` on conv lines is checked
    against the chained shape.
    """
    input_shape = None
    layers: list[LayerSpec] = []
    conv_channel_checks: list[tuple[int, int, int]] = []  # (layer idx, c, line_no)
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        word, *parts = line.split()
        fields = _parse_fields(parts, line_no)
        if input_shape is None:
            if word != "input":
                raise CheckpointFormatError(f"line {line_no}: architecture must start "
                                            f"with an input line, got {word!r}")
            input_shape = (_take(fields, line_no, "c"), _take(fields, line_no, "h"),
                           _take(fields, line_no, "w"))
        elif word == "input":
            raise CheckpointFormatError(f"line {line_no}: duplicate input line")
        elif word == "conv":
            k = _take(fields, line_no, "k")
            if "c" in fields:
                conv_channel_checks.append((len(layers), fields.pop("c"), line_no))
            layers.append(conv(k, _take(fields, line_no, "kh"), _take(fields, line_no, "kw"),
                               stride=_take(fields, line_no, "stride", False, 1),
                               pad=_take(fields, line_no, "pad", False, 0),
                               trainable=bool(_take(fields, line_no, "trainable", False, 0))))
        elif word == "maxpool":
            window = _take(fields, line_no, "window")
            layers.append(maxpool(window, _take(fields, line_no, "stride", False, window)))
        elif word == "dense":
            layers.append(dense(_take(fields, line_no, "units"),
                                trainable=bool(_take(fields, line_no, "trainable", False, 0))))
        elif word in ("relu", "flatten", "softmax"):
            layers.append({"relu": relu, "flatten": flatten, "softmax": softmax}[word]())
        else:
            raise CheckpointFormatError(f"line {line_no}: unknown layer {word!r}")
        if fields:
            raise CheckpointFormatError(f"line {line_no}: unexpected fields "
                                        f"{sorted(fields)}")
    if input_shape is None:
        raise CheckpointFormatError("architecture text is empty")
    try:
        spec = NetworkSpec(tuple(layers), input_shape)
    except (ValueError, TypeError) as exc:
        raise CheckpointFormatError(str(exc)) from None
    shapes = spec.activation_shapes()
    for idx, c, line_no in conv_channel_checks:
        if shapes[idx][0] != c:
            raise CheckpointFormatError(f"line {line_no}: conv c={c} does not match "
                                        f"incoming channels {shapes[idx][0]}")
    return spec


def save_arch(spec: NetworkSpec, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_arch(spec))


def load_arch(path: str | os.PathLike) -> NetworkSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_arch(fh.read())


def arch_path(path: str | os.PathLike) -> str:
    return f"{os.fspath(path)}.arch"


def save_checkpoint(checkpoint: Checkpoint, path: str | os.PathLike) -> None:
    """Write the binary parameter file plus its ``.arch`` sidecar."""
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(checkpoint.spec.layers))]
    for layer, params in zip(checkpoint.spec.layers, checkpoint.params):
        tensors = [] if params is None else [params[name] for name in PARAM_ORDER]
        chunks.append(struct.pack("<BI", KIND_TAGS[layer.kind], len(tensors)))
        for arr in tensors:
            chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))
    save_arch(checkpoint.spec, arch_path(path))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError("checkpoint file is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    """Read a checkpoint written by save_checkpoint.

    The sidecar provides the NetworkSpec; the binary must agree with it
    on layer kinds and parameter shapes.
    """
    spec = load_arch(arch_path(path))
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    if reader.take(4) != MAGIC:
        raise CheckpointFormatError("bad magic: not a checkpoint file")
    version, n_layers = reader.unpack("<II")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported format version {version}")
    if n_layers != len(spec.layers):
        raise CheckpointFormatError(f"binary has {n_layers} layers but the "
                                    f"sidecar describes {len(spec.layers)}")
    params: list[dict[str, np.ndarray] | None] = []
    for i, layer in enumerate(spec.layers):
        tag, n_tensors = reader.unpack("<BI")
        if TAG_KINDS.get(tag) != layer.kind:
            raise CheckpointFormatError(f"layer {i}: binary kind tag {tag} does not "
                                        f"match sidecar kind {layer.kind!r}")
        expected = spec.param_shapes(i)
        want = 0 if expected is None else len(PARAM_ORDER)
        if n_tensors != want:
            raise CheckpointFormatError(f"layer {i}: expected {want} parameter "
                                        f"tensors, found {n_tensors}")
        if expected is None:
            params.append(None)
            continue
        tensors = {}
        for name in PARAM_ORDER:
            (ndim,) = reader.unpack("<I")
            if not 1 <= ndim <= 8:
                raise CheckpointFormatError(f"layer {i}: implausible ndim {ndim}")
            dims = reader.unpack(f"<{ndim}I")
            count = int(np.prod(dims))
            raw = reader.take(4 * count)
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
        params.append(tensors)
    if reader.pos != len(reader.data):
        raise CheckpointFormatError("trailing bytes after last layer")
    try:
        return Checkpoint(spec, params)
    except ValueError as exc:
        raise CheckpointFormatError(str(exc)) from None
