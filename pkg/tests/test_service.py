import json
import threading
import time
import urllib.request

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from facesal import annotation, service


def write_png(path, size=(12, 10)):
    path.parent.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(hash(path.name) % 2**32)
    pixels = rng.integers(0, 256, size=(size[1], size[0]), dtype=np.uint8)
    Image.fromarray(pixels, mode="L").save(path)


@pytest.fixture()
def pool_dir(tmp_path):
    images = tmp_path / "images"
    write_png(images / "alice" / "alice_front.png")
    write_png(images / "alice" / "alice_side.png", size=(8, 8))
    write_png(images / "bob" / "bob_front.png")
    write_png(images / "stray.png", size=(6, 4))
    return images


@pytest.fixture()
def client(pool_dir, tmp_path):
    app = service.create_app(pool_dir, tmp_path / "store.ndjson",
                             rng=np.random.default_rng(0))
    with TestClient(app) as tc:
        tc.store_path = tmp_path / "store.ndjson"
        yield tc


def valid_body(image_id="alice_front", **overrides):
    body = {"worker_id": "w1", "image_id": image_id, "person_id": "alice",
            "box": [1, 2, 5, 6], "label": "eyes"}
    body.update(overrides)
    return body


class TestImagePool:
    def test_person_from_directory_and_stem(self, pool_dir):
        pool = service.scan_image_pool(pool_dir)
        entries = {img.image_id: img for img in pool}
        assert set(entries) == {"alice_front", "alice_side", "bob_front", "stray"}
        assert entries["alice_front"].person_id == "alice"
        assert entries["bob_front"].person_id == "bob"
        assert entries["stray"].person_id == "stray"
        assert entries["alice_front"].size == (12, 10)
        assert entries["stray"].size == (6, 4)

    def test_duplicate_stems_rejected(self, pool_dir):
        write_png(pool_dir / "bob" / "stray.png")
        with pytest.raises(ValueError):
            service.scan_image_pool(pool_dir)

    def test_non_png_ignored(self, pool_dir):
        (pool_dir / "notes.txt").write_text("ignore me")
        assert len(service.scan_image_pool(pool_dir)) == 4


class TestTaskEndpoint:
    def test_payload_fields(self, client):
        res = client.get("/api/task")
        assert res.status_code == 200
        task = res.json()
        assert set(task) == {"task_id", "image_id", "person_id", "image_url",
                             "labels", "image_size"}
        assert task["image_url"] == f"/images/{task['image_id']}.png"
        assert task["labels"] == annotation.canonical_labels()
        assert len(task["image_size"]) == 2

    def test_task_ids_unique(self, client):
        ids = {client.get("/api/task").json()["task_id"] for _ in range(20)}
        assert len(ids) == 20

    def test_single_image_pool_always_served(self, tmp_path):
        images = tmp_path / "one"
        write_png(images / "only.png")
        app = service.create_app(images, tmp_path / "s.ndjson")
        with TestClient(app) as tc:
            for _ in range(5):
                assert tc.get("/api/task").json()["image_id"] == "only"

    def test_selection_uniform_with_seeded_rng(self, client):
        counts = {}
        for _ in range(10_000):
            image_id = client.get("/api/task").json()["image_id"]
            counts[image_id] = counts.get(image_id, 0) + 1
        assert set(counts) == {"alice_front", "alice_side", "bob_front", "stray"}
        for n in counts.values():
            assert abs(n / 10_000 - 0.25) < 0.05 * 0.25 + 0.02

    def test_empty_pool_is_unavailable(self, tmp_path):
        (tmp_path / "empty").mkdir()
        app = service.create_app(tmp_path / "empty", tmp_path / "s.ndjson")
        with TestClient(app) as tc:
            assert tc.get("/api/task").status_code == 503


class TestResponseEndpoint:
    def test_accepted_response_echoes_record(self, client):
        res = client.post("/api/response", json=valid_body())
        assert res.status_code == 200
        record = res.json()
        assert record["worker_id"] == "w1"
        assert record["box"] == [1, 2, 5, 6]
        assert record["label"] == "eyes"
        assert record["created_at"].endswith("Z")
        assert len(record["response_id"]) == 32

    def test_label_and_ids_canonicalized(self, client):
        res = client.post("/api/response", json=valid_body(
            label="  Laugh Line ", worker_id=" w9 "))
        record = res.json()
        assert record["label"] == "laugh line"
        assert record["worker_id"] == "w9"

    def test_custom_label_accepted(self, client):
        assert client.post("/api/response",
                           json=valid_body(label="dimple")).status_code == 200

    def test_accepted_row_visible_in_next_export(self, client):
        client.post("/api/response", json=valid_body())
        lines = client.get("/api/export").content.decode().splitlines()
        assert len(lines) == 1
        row = json.loads(lines[0])
        assert list(row) == list(annotation.RECORD_FIELDS)
        assert row["image_id"] == "alice_front"

    def test_unknown_image_404(self, client):
        res = client.post("/api/response", json=valid_body(image_id="nobody"))
        assert res.status_code == 404

    @pytest.mark.parametrize("mutate", [
        {"box": [5, 2, 1, 6]},            # inverted x
        {"box": [0, 0, 13, 5]},           # past image width 12
        {"box": [0, 0, 5]},               # arity
        {"box": [0, 0, "x", 5]},          # type
        {"label": "   "},                 # blank label
        {"worker_id": ""},                # blank worker
        {"person_id": "  "},              # blank person
        {"worker_id": 7},                 # wrong type
    ])
    def test_invalid_payload_400(self, client, mutate):
        res = client.post("/api/response", json=valid_body(**mutate))
        assert res.status_code == 400
        assert "detail" in res.json()

    def test_missing_fields_listed(self, client):
        body = valid_body()
        del body["box"], body["label"]
        res = client.post("/api/response", json=body)
        assert res.status_code == 400
        assert "box" in res.json()["detail"] and "label" in res.json()["detail"]

    def test_malformed_json_400(self, client):
        res = client.post("/api/response", content=b"{nope",
                          headers={"content-type": "application/json"})
        assert res.status_code == 400

    def test_rejected_requests_leave_store_untouched(self, client):
        client.post("/api/response", json=valid_body())
        before = client.store_path.read_bytes()
        client.post("/api/response", json=valid_body(box=[9, 9, 1, 1]))
        client.post("/api/response", json=valid_body(image_id="ghost"))
        client.post("/api/response", content=b"junk",
                    headers={"content-type": "application/json"})
        assert client.store_path.read_bytes() == before

    def test_box_boundaries_at_image_edge(self, client):
        assert client.post("/api/response", json=valid_body(
            box=[0, 0, 12, 10])).status_code == 200
        assert client.post("/api/response", json=valid_body(
            box=[0, 0, 12, 11])).status_code == 400


class TestExportEndpoint:
    def test_empty_store_exports_nothing(self, client):
        res = client.get("/api/export")
        assert res.status_code == 200
        assert res.content == b""
        assert res.headers["content-type"].startswith("application/x-ndjson")

    def test_line_count_matches_accepted_responses(self, client):
        for i in range(7):
            client.post("/api/response", json=valid_body(worker_id=f"w{i}"))
        blob = client.get("/api/export").content
        assert blob.endswith(b"\n")
        assert blob.count(b"\n") == 7

    def test_export_byte_stable(self, client):
        for _ in range(3):
            client.post("/api/response", json=valid_body())
        assert client.get("/api/export").content == client.get("/api/export").content

    def test_partial_trailing_line_withheld(self, client):
        client.post("/api/response", json=valid_body())
        complete = client.store_path.read_bytes()
        with open(client.store_path, "ab") as fh:
            fh.write(b'{"response_id": "half')
        assert client.get("/api/export").content == complete

    def test_round_trip_parses_as_records(self, client):
        client.post("/api/response", json=valid_body(label=" EYES "))
        blob = client.get("/api/export").content.decode()
        records = [annotation.record_from_json(line)
                   for line in blob.splitlines()]
        assert records[0].label == "eyes"
        assert records[0].box == (1, 2, 5, 6)


class TestImageEndpoint:
    def test_serves_pool_file_bytes(self, client, pool_dir):
        res = client.get("/images/alice_front.png")
        assert res.status_code == 200
        assert res.headers["content-type"] == "image/png"
        assert res.content == (pool_dir / "alice" / "alice_front.png").read_bytes()

    def test_unknown_image_404(self, client):
        assert client.get("/images/ghost.png").status_code == 404
        assert client.get("/images/alice_front.jpg").status_code == 404


class TestFrontendMount:
    def test_static_index_served_when_configured(self, pool_dir, tmp_path):
        frontend = tmp_path / "dist"
        frontend.mkdir()
        (frontend / "index.html").write_text("<!doctype html><title>ok</title>")
        app = service.create_app(pool_dir, tmp_path / "s.ndjson",
                                 frontend_dir=frontend)
        with TestClient(app) as tc:
            res = tc.get("/")
            assert res.status_code == 200
            assert "ok" in res.text
            # API routes must still win over the static mount
            assert tc.get("/api/task").status_code == 200


class TestLiveServer:
    def test_uvicorn_serves_task_endpoint(self, pool_dir, tmp_path):
        import uvicorn

        app = service.create_app(pool_dir, tmp_path / "s.ndjson")
        config = uvicorn.Config(app, host="127.0.0.1", port=8731,
                                log_level="error")
        server = uvicorn.Server(config)
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        try:
            deadline = time.time() + 10
            while not server.started:
                if time.time() > deadline:
                    pytest.fail("server did not start")
                time.sleep(0.02)
            with urllib.request.urlopen(
                    "http://127.0.0.1:8731/api/task", timeout=5) as res:
                assert res.status == 200
                task = json.loads(res.read())
            assert task["image_id"] in {"alice_front", "alice_side",
                                        "bob_front", "stray"}
        finally:
            server.should_exit = True
            thread.join(timeout=10)
