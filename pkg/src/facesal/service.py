"""HTTP service for the human annotation task: hand out random images
with the label vocabulary, accept bounding-box responses, persist them
append-only, and export the record set.

Durability contract: a response is flushed and fsynced to the store
before the 200 goes out, and writes are serialized so lines never
interleave. Export reads a consistent snapshot up to the last complete
line.
"""

from __future__ import annotations

import os
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image

from .annotation import (AnnotationRecord, append_record, canonical_labels,
                         canonicalize_label, record_to_json, validate_box)


@dataclass(frozen=True)
class PoolImage:
    image_id: str
    person_id: str
    path: str
    size: tuple[int, int]  # (W, H)


def scan_image_pool(images_dir: str | os.PathLike) -> list[PoolImage]:
    """Collect PNGs under ``images_dir``, one pool entry per file.

    A file nested as <person>/<name>.png takes its person id from the
    directory; a flat file is its own person. Image ids (file stems)
    must be unique across the pool.
    """
    images_dir = os.fspath(images_dir)
    pool = []
    seen: dict[str, str] = {}
    for dirpath, dirnames, filenames in os.walk(images_dir):
        dirnames.sort()
        for filename in sorted(filenames):
            if not filename.endswith(".png"):
                continue
            path = os.path.join(dirpath, filename)
            stem = filename[:-4]
            rel_parent = os.path.relpath(dirpath, images_dir)
            person = stem if rel_parent == "." else rel_parent.split(os.sep)[0]
            if stem in seen:
                raise ValueError(f"duplicate image id {stem!r}: {seen[stem]} "
                                 f"and {path}")
            seen[stem] = path
            with Image.open(path) as img:
                size = img.size
            pool.append(PoolImage(stem, person, path, size))
    return pool


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse({"detail": message}, status_code=status)


def create_app(images_dir: str | os.PathLike, store_path: str | os.PathLike,
               labels: list[str] | None = None,
               rng: np.random.Generator | None = None,
               frontend_dir: str | os.PathLike | None = None) -> FastAPI:
    """Build the annotation service around an image pool and a store file.

    ``rng`` drives task selection and may be injected for deterministic
    tests. ``frontend_dir`` optionally mounts compiled static assets at
    the root path.
    """
    pool = scan_image_pool(images_dir)
    by_id = {img.image_id: img for img in pool}
    labels = canonical_labels() if labels is None else list(labels)
    rng = np.random.default_rng() if rng is None else rng
    store_path = os.fspath(store_path)
    write_lock = threading.Lock()
    app = FastAPI(title="facesal annotation service", docs_url=None, redoc_url=None)

    @app.get("/api/task")
    def get_task():
        if not pool:
            return _error(503, "image pool is empty")
        img = pool[int(rng.integers(len(pool)))]
        return {"task_id": uuid.uuid4().hex,
                "image_id": img.image_id,
                "person_id": img.person_id,
                "image_url": f"/images/{img.image_id}.png",
                "labels": labels,
                "image_size": list(img.size)}

    @app.post("/api/response")
    async def post_response(request: Request):
        try:
            body = await request.json()
        except Exception:
            return _error(400, "request body is not valid JSON")
        if not isinstance(body, dict):
            return _error(400, "request body must be a JSON object")
        missing = [k for k in ("worker_id", "image_id", "person_id", "box", "label")
                   if k not in body]
        if missing:
            return _error(400, f"missing fields: {', '.join(missing)}")
        image_id = body["image_id"]
        img = by_id.get(image_id)
        if img is None:
            return _error(404, f"unknown image_id {image_id!r}")
        for key in ("worker_id", "person_id"):
            if not isinstance(body[key], str) or not body[key].strip():
                return _error(400, f"{key} must be a non-empty string")
        if not isinstance(body["label"], str) or not canonicalize_label(body["label"]):
            return _error(400, "label must be non-empty after trimming")
        try:
            box = validate_box(body["box"], img.size)
        except ValueError as exc:
            return _error(400, str(exc))
        record = AnnotationRecord(
            response_id=uuid.uuid4().hex,
            worker_id=body["worker_id"].strip(),
            image_id=image_id,
            person_id=body["person_id"].strip(),
            box=box,
            label=canonicalize_label(body["label"]),
            created_at=datetime.now(timezone.utc).isoformat(timespec="milliseconds")
                       .replace("+00:00", "Z"),
        )
        with write_lock:
            append_record(store_path, record)
        return Response(record_to_json(record), media_type="application/json")

    @app.get("/api/export")
    def export():
        if not os.path.exists(store_path):
            return Response(b"", media_type="application/x-ndjson")
        with open(store_path, "rb") as fh:
            blob = fh.read()
        # snapshot up to the last fully written line
        cut = blob.rfind(b"\n")
        blob = b"" if cut < 0 else blob[:cut + 1]
        return Response(blob, media_type="application/x-ndjson")

    @app.get("/images/{filename}")
    def serve_image(filename: str):
        if not filename.endswith(".png"):
            return _error(404, "not found")
        img = by_id.get(filename[:-4])
        if img is None:
            return _error(404, f"unknown image {filename!r}")
        return FileResponse(img.path, media_type="image/png")

    if frontend_dir is not None and os.path.isdir(frontend_dir):
        app.mount("/", StaticFiles(directory=os.fspath(frontend_dir), html=True),
                  name="frontend")

    return app
