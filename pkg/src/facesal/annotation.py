"""Human bounding-box responses: the record model, store serialization,
and the aggregations built on them (box-count heatmaps with percentile
highlighting, person-balanced label histograms).

Box convention is half-open: a box (x0, y0, x1, y1) contains pixel
(x, y) iff x0 <= x < x1 and y0 <= y < y1, so areas compose exactly and
the annotator frontend and this aggregator agree bit-exactly.
"""

from __future__ import annotations

import json
import os
from collections import Counter
from dataclasses import dataclass

import numpy as np

# Fixed feature vocabulary shown to workers; custom labels stay allowed.
CANONICAL_LABELS = ("beard", "cheek", "chin", "ears", "eyes", "eye brows",
                    "hairline", "laugh line", "lips", "moustache", "nose")

# Serialized field order of one record line in the annotation store.
RECORD_FIELDS = ("response_id", "worker_id", "image_id", "person_id",
                 "box", "label", "created_at")


def canonical_labels() -> list[str]:
    return list(CANONICAL_LABELS)


def canonicalize_label(label: str) -> str:
    return label.strip().lower()


@dataclass(frozen=True)
class AnnotationRecord:
    response_id: str
    worker_id: str
    image_id: str
    person_id: str
    box: tuple[int, int, int, int]
    label: str
    created_at: str

    def __post_init__(self):
        object.__setattr__(self, "box", tuple(int(v) for v in self.box))
        if len(self.box) != 4:
            raise ValueError(f"box must be (x0, y0, x1, y1), got {self.box}")


def validate_box(box, image_size: tuple[int, int]) -> tuple[int, int, int, int]:
    """Check 0 <= x0 < x1 <= W and 0 <= y0 < y1 <= H; returns the box as ints."""
    if len(box) != 4:
        raise ValueError(f"box must have 4 coordinates, got {len(box)}")
    try:
        x0, y0, x1, y1 = (int(v) for v in box)
    except (TypeError, ValueError):
        raise ValueError(f"box coordinates must be integers, got {box!r}") from None
    w, h = (int(v) for v in image_size)
    if not (0 <= x0 < x1 <= w):
        raise ValueError(f"box x range [{x0}, {x1}) invalid for width {w}")
    if not (0 <= y0 < y1 <= h):
        raise ValueError(f"box y range [{y0}, {y1}) invalid for height {h}")
    return x0, y0, x1, y1


def validate_record(record: AnnotationRecord, image_size: tuple[int, int]) -> None:
    """Raise ValueError unless the record satisfies every invariant."""
    validate_box(record.box, image_size)
    if not canonicalize_label(record.label):
        raise ValueError("label is empty after trimming")
    for field in ("response_id", "worker_id", "image_id", "person_id"):
        if not getattr(record, field):
            raise ValueError(f"{field} must be non-empty")


def bbox_center(record: AnnotationRecord) -> tuple[float, float]:
    x0, y0, x1, y1 = record.box
    return (x0 + x1) / 2, (y0 + y1) / 2


def bbox_heatmap(records: list[AnnotationRecord], image_size: tuple[int, int],
                 highlight_percentile: float = 90.0) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel count of boxes covering each pixel for one person.

    Returns (counts [H,W], highlight [H,W] of {0,1}); the highlight
    marks pixels whose count is strictly above the nearest-rank
    percentile of the pooled count distribution.
    """
    if not records:
        raise ValueError("need at least one record")
    persons = {r.person_id for r in records}
    if len(persons) > 1:
        raise ValueError(f"records span multiple persons: {sorted(persons)}")
    w, h = (int(v) for v in image_size)
    counts = np.zeros((h, w), dtype=np.int64)
    for record in records:
        x0, y0, x1, y1 = validate_box(record.box, (w, h))
        counts[y0:y1, x0:x1] += 1
    threshold = np.percentile(counts, highlight_percentile, method="higher")
    highlight = (counts > threshold).astype(np.uint8)
    return counts, highlight


def balanced_label_histogram(records: list[AnnotationRecord]) -> dict[str, float]:
    """Label weights averaged with equal weight per person.

    Each person's responses are first normalized to frequencies, so a
    prolific person cannot skew the pooled histogram. Labels are
    canonicalized; custom ones keep their own bins. Weights sum to 1.
    """
    if not records:
        raise ValueError("need at least one record")
    per_person: dict[str, Counter] = {}
    for record in records:
        label = canonicalize_label(record.label)
        if not label:
            raise ValueError(f"record {record.response_id} has an empty label")
        per_person.setdefault(record.person_id, Counter())[label] += 1
    weights: dict[str, float] = {}
    share = 1.0 / len(per_person)
    for counter in per_person.values():
        total = sum(counter.values())
        for label, count in counter.items():
            weights[label] = weights.get(label, 0.0) + share * count / total
    return dict(sorted(weights.items()))


def record_to_json(record: AnnotationRecord) -> str:
    payload = {field: getattr(record, field) for field in RECORD_FIELDS}
    payload["box"] = list(record.box)
    return json.dumps(payload, ensure_ascii=False)


def record_from_json(line: str) -> AnnotationRecord:
    payload = json.loads(line)
    missing = [field for field in RECORD_FIELDS if field not in payload]
    if missing:
        raise ValueError(f"record line missing fields: {missing}")
    return AnnotationRecord(**{field: tuple(payload[field]) if field == "box"
                               else payload[field] for field in RECORD_FIELDS})


def append_record(path: str | os.PathLike, record: AnnotationRecord) -> None:
    """Append one record line durably (flush + fsync before returning)."""
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(record_to_json(record) + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def read_records(path: str | os.PathLike) -> list[AnnotationRecord]:
    """Read every complete line of an annotation store."""
    if not os.path.exists(path):
        return []
    with open(path, encoding="utf-8") as fh:
        return [record_from_json(line) for line in fh if line.strip()]
