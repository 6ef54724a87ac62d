"""Two-phase classifier training: heads-only on a frozen trunk, then
end-to-end fine-tuning. Plain seeded SGD on cross-entropy with an L2
weight-decay term spanning every parameter tensor.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import network
from .network import Checkpoint, NetworkSpec
from .tensor import DEFAULT_DTYPE, DimensionError, as_tensor

PHASES = ("heads_only", "end_to_end")

MANIFEST_NAME = "manifest.ndjson"


class TrainingDivergedError(RuntimeError):
    """Raised when the loss goes non-finite mid-run."""


class LabeledExample(NamedTuple):
    image: np.ndarray
    label: int
    image_id: str


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    weight_decay: float = 0.0
    epochs: int = 1
    batch_size: int = 16
    phase: str = "heads_only"
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}")


@dataclass(frozen=True)
class LabeledDataset:
    """Uniformly shaped images with integer labels and a split tag."""

    items: tuple[LabeledExample, ...]
    class_count: int
    split: str
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        if self.split not in ("train", "test"):
            raise ValueError("split must be 'train' or 'test'")
        if self.class_count < 1:
            raise ValueError("class_count must be >= 1")
        if self.class_names is not None:
            object.__setattr__(self, "class_names", tuple(self.class_names))
            if len(self.class_names) != self.class_count:
                raise ValueError("class_names length must equal class_count")
        shapes = {item.image.shape for item in self.items}
        if len(shapes) > 1:
            raise DimensionError(f"image shapes are not uniform: {sorted(shapes)}")
        for item in self.items:
            if not 0 <= item.label < self.class_count:
                raise ValueError(f"label {item.label} out of range for "
                                 f"{self.class_count} classes ({item.image_id})")

    def __len__(self) -> int:
        return len(self.items)


def _decay_term(checkpoint: Checkpoint, weight_decay: float) -> float:
    total = 0.0
    for params in checkpoint.params:
        if params is None:
            continue
        for arr in params.values():
            total += float(np.sum(np.square(arr, dtype=np.float64)))
    return weight_decay * total


def loss(probs, target: int, checkpoint: Checkpoint, weight_decay: float = 0.0) -> float:
    """Cross-entropy at ``target`` plus λ·Σθ² over every parameter tensor."""
    probs = np.asarray(probs, dtype=np.float64)
    target = int(target)
    if not 0 <= target < probs.shape[0]:
        raise IndexError(f"target {target} out of range [0, {probs.shape[0]})")
    with np.errstate(divide="ignore"):  # -ln(0) = inf is a valid answer
        ce = -float(np.log(probs[target]))
    return ce + _decay_term(checkpoint, weight_decay)


def _updated_layers(spec: NetworkSpec, phase: str) -> list[int]:
    out = []
    for i, layer in enumerate(spec.layers):
        if layer.kind not in network.PARAM_KINDS:
            continue
        if phase == "end_to_end" or layer.trainable:
            out.append(i)
    return out


def train(dataset: LabeledDataset, start: NetworkSpec | Checkpoint, config: TrainConfig,
          on_epoch: Callable[[dict], None] | None = None) -> Checkpoint:
    """Mini-batch SGD for ``config.epochs`` over a train-split dataset.

    ``start`` is either a NetworkSpec (parameters drawn fresh from
    config.seed) or a Checkpoint to resume from. The heads_only phase
    updates only layers flagged trainable; end_to_end updates every
    parameter layer. The shuffle schedule is fixed by the seed, so a
    rerun with identical inputs is bit-identical. ``on_epoch`` receives
    one dict per epoch with loss and train accuracy.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if dataset.split != "train":
        raise ValueError(f"train requires the train split, got {dataset.split!r}")
    if config.batch_size > len(dataset):
        raise ValueError(f"batch_size {config.batch_size} exceeds dataset "
                         f"size {len(dataset)}")
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    if isinstance(start, NetworkSpec):
        checkpoint = network.init_checkpoint(start, seed=seeds[0])
    else:
        checkpoint = start.copy()
    if checkpoint.spec.layers[-1].kind != "softmax":
        raise ValueError("training requires a softmax-terminated network")
    if checkpoint.spec.class_count < dataset.class_count:
        raise DimensionError(f"network emits {checkpoint.spec.class_count} classes, "
                             f"dataset has {dataset.class_count}")

    updated = _updated_layers(checkpoint.spec, config.phase)
    shuffle_rng = np.random.default_rng(seeds[1])
    n = len(dataset)
    lr = float(config.learning_rate)
    lam = float(config.weight_decay)
    trainable_only = config.phase == "heads_only"

    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        epoch_ce = 0.0
        correct = 0
        for lo in range(0, n, config.batch_size):
            batch = order[lo:lo + config.batch_size]
            acc = {i: {k: np.zeros_like(v, dtype=np.float64)
                       for k, v in checkpoint.params[i].items()}
                   for i in updated}
            batch_ce = 0.0
            for idx in batch:
                item = dataset.items[int(idx)]
                probs, trace = network.forward(checkpoint, item.image)
                with np.errstate(divide="ignore"):
                    batch_ce += -float(np.log(probs[item.label]))
                correct += int(np.argmax(probs)) == item.label
                _, grads = network.backward(checkpoint, trace, item.label,
                                            trainable_only=trainable_only)
                for i in updated:
                    if grads[i] is None:
                        continue
                    for name, g in grads[i].items():
                        acc[i][name] += g
            batch_loss = batch_ce / len(batch) + _decay_term(checkpoint, lam)
            if not np.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"non-finite loss {batch_loss} at epoch {epoch}, "
                    f"batch starting at item {lo}")
            epoch_ce += batch_ce
            for i in updated:
                params = checkpoint.params[i]
                for name in params:
                    g = acc[i][name] / len(batch)
                    if lam > 0.0:
                        g = g + 2.0 * lam * params[name]
                    params[name] = (params[name] - lr * g.astype(params[name].dtype)
                                    ).astype(params[name].dtype)
        if on_epoch is not None:
            on_epoch({"epoch": epoch,
                      "loss": epoch_ce / n + _decay_term(checkpoint, lam),
                      "accuracy": correct / n})
    return checkpoint


def evaluate(checkpoint: Checkpoint, dataset: LabeledDataset) -> float:
    """Fraction of test items whose argmax prediction matches the label."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    if dataset.split != "test":
        raise ValueError(f"evaluate requires the test split, got {dataset.split!r}")
    correct = 0
    for item in dataset.items:
        probs, _ = network.forward(checkpoint, item.image)
        correct += int(np.argmax(probs)) == item.label
    return correct / len(dataset)


def synthetic_dataset(seed: int = 0, train_per_class: int = 20, test_per_class: int = 5,
                      side: int = 16) -> tuple[LabeledDataset, LabeledDataset]:
    """Procedural 4-class dataset of single-channel blob images.

    Class c places a soft Gaussian blob in quadrant c of a side×side
    frame, jittered by up to 2 px, over low uniform noise. Separable by
    construction, so a small conv net can reach full accuracy.
    """
    rng = np.random.default_rng(seed)
    half = side // 2
    centers = [(half // 2, half // 2), (half // 2, half + half // 2),
               (half + half // 2, half // 2), (half + half // 2, half + half // 2)]
    ys, xs = np.mgrid[0:side, 0:side]

    def make(cls: int, tag: str, count: int) -> list[LabeledExample]:
        cy, cx = centers[cls]
        out = []
        for j in range(count):
            jy = cy + rng.integers(-2, 3)
            jx = cx + rng.integers(-2, 3)
            blob = np.exp(-((ys - jy) ** 2 + (xs - jx) ** 2) / (2.0 * 2.0 ** 2))
            img = blob + rng.uniform(0.0, 0.2, size=(side, side))
            img = np.clip(img, 0.0, 1.0).astype(DEFAULT_DTYPE)[None, :, :]
            out.append(LabeledExample(img, cls, f"{tag}_c{cls}_{j:03d}"))
        return out

    names = tuple(f"class{c}" for c in range(4))
    train_items: list[LabeledExample] = []
    test_items: list[LabeledExample] = []
    for cls in range(4):
        train_items.extend(make(cls, "train", train_per_class))
        test_items.extend(make(cls, "test", test_per_class))
    return (LabeledDataset(tuple(train_items), 4, "train", names),
            LabeledDataset(tuple(test_items), 4, "test", names))


def _to_png_array(image: np.ndarray) -> np.ndarray:
    quantized = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    if image.shape[0] == 1:
        return quantized[0]
    return np.transpose(quantized, (1, 2, 0))


def _from_png_array(raw: np.ndarray) -> np.ndarray:
    arr = raw.astype(DEFAULT_DTYPE) / np.array(255.0, dtype=DEFAULT_DTYPE)
    if arr.ndim == 2:
        return arr[None, :, :]
    return np.ascontiguousarray(np.transpose(arr, (2, 0, 1)))


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Decode one PNG to a [C,H,W] float array in [0,1]."""
    from PIL import Image

    with Image.open(path) as img:
        return _from_png_array(np.asarray(img))


def write_dataset(root: str | os.PathLike, *datasets: LabeledDataset) -> None:
    """Lay a dataset out on disk: <root>/<class_name>/<image_id>.png plus a
    newline-delimited JSON manifest recording class and split per image."""
    from PIL import Image

    root = os.fspath(root)
    os.makedirs(root, exist_ok=True)
    lines = []
    for ds in datasets:
        if ds.class_names is None:
            raise ValueError("write_dataset needs datasets with class_names")
        for item in ds.items:
            name = ds.class_names[item.label]
            class_dir = os.path.join(root, name)
            os.makedirs(class_dir, exist_ok=True)
            Image.fromarray(_to_png_array(item.image)).save(
                os.path.join(class_dir, f"{item.image_id}.png"))
            lines.append(json.dumps({"image_id": item.image_id, "class": name,
                                     "split": ds.split}))
    with open(os.path.join(root, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(root: str | os.PathLike, split: str) -> LabeledDataset:
    """Read one split back from a write_dataset layout.

    Class indices come from the sorted set of class names across the
    whole manifest, so the train and test splits always agree on K.
    """
    from PIL import Image

    root = os.fspath(root)
    with open(os.path.join(root, MANIFEST_NAME), encoding="utf-8") as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    names = tuple(sorted({row["class"] for row in rows}))
    index = {name: i for i, name in enumerate(names)}
    items = []
    for row in rows:
        if row["split"] != split:
            continue
        path = os.path.join(root, row["class"], f"{row['image_id']}.png")
        with Image.open(path) as img:
            image = _from_png_array(np.asarray(img))
        items.append(LabeledExample(as_tensor(image), index[row["class"]],
                                    row["image_id"]))
    return LabeledDataset(tuple(items), len(names), split, names)
