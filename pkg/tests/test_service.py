import base64
import io
import threading
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from matedit.service import create_app


@pytest.fixture(scope="module")
def client(tiny_model):
    app = create_app(tiny_model, queue_limit=4)
    with TestClient(app) as c:
        c.app = app
        yield c


def _png_b64(pixels: np.ndarray) -> str:
    data = np.clip(pixels * 255 + 0.5, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(data, "RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


def _decode(b64: str) -> np.ndarray:
    with Image.open(io.BytesIO(base64.b64decode(b64))) as im:
        return np.asarray(im.convert("RGB"))


def _context(size=16):
    rng = np.random.default_rng(0)
    return _png_b64(rng.uniform(0, 1, (size, size, 3)))


def test_health(client):
    r = client.get("/v1/health")
    assert r.status_code == 200
    body = r.json()
    assert body["status"] == "ok"
    assert len(body["model_hash"]) == 64


def test_attributes_schema(client):
    r = client.get("/v1/attributes")
    assert r.status_code == 200
    body = r.json()
    names = [a["name"] for a in body["attributes"]]
    assert names == ["roughness"]
    a = body["attributes"][0]
    assert (a["min"], a["max"]) == (-1.0, 1.0)
    assert (a["overdrive_min"], a["overdrive_max"]) == (-2.0, 2.0)
    assert body["resolution"] == 16


def test_edit_round_trip_and_determinism(client):
    req = {"image": _context(), "strengths": {"roughness": 0.7},
           "seed": 11, "steps": 4}
    r1 = client.post("/v1/edit", json=req)
    assert r1.status_code == 200, r1.text
    b1 = r1.json()
    out = _decode(b1["image"])
    assert out.shape == (16, 16, 3)
    assert b1["seed"] == 11
    assert b1["elapsed_ms"] > 0
    r2 = client.post("/v1/edit", json=req)
    assert r2.json()["image"] == b1["image"]  # lossless + deterministic


def test_edit_letterboxes_foreign_resolution(client):
    req = {"image": _context(40), "strengths": {"roughness": 0.2},
           "seed": 1, "steps": 2}
    r = client.post("/v1/edit", json=req)
    assert r.status_code == 200
    body = r.json()
    assert body["original_size"] == [40, 40]
    assert _decode(body["image"]).shape == (16, 16, 3)


def test_edit_unsupported_attribute_422(client):
    r = client.post("/v1/edit", json={"image": _context(),
                                      "strengths": {"shininess": 1.0}})
    assert r.status_code == 422
    assert "roughness" in r.json()["detail"]


def test_edit_malformed_requests_400(client):
    # not base64/PNG
    r = client.post("/v1/edit", json={"image": "@@not-base64@@",
                                      "strengths": {"roughness": 0.5}})
    assert r.status_code == 400
    # missing required field
    r2 = client.post("/v1/edit", json={"strengths": {"roughness": 0.5}})
    assert r2.status_code == 400
    # wrong type
    r3 = client.post("/v1/edit", json={"image": _context(),
                                       "strengths": {"roughness": "high"}})
    assert r3.status_code == 400


def test_overdrive_requires_mask(client):
    r = client.post("/v1/edit", json={"image": _context(),
                                      "strengths": {"roughness": 1.7}})
    assert r.status_code == 400
    assert "over-drive" in r.json()["detail"]
    mask = _png_b64(np.ones((16, 16, 3)))
    r2 = client.post("/v1/edit", json={"image": _context(),
                                       "strengths": {"roughness": 1.7},
                                       "mask": mask, "seed": 2, "steps": 2})
    assert r2.status_code == 200


def test_mask_size_mismatch_400(client):
    mask = _png_b64(np.ones((8, 8, 3)))
    r = client.post("/v1/edit", json={"image": _context(16),
                                      "strengths": {"roughness": 0.5},
                                      "mask": mask})
    assert r.status_code == 400
    assert "mask size" in r.json()["detail"]


def test_unknown_object_class_422(client):
    r = client.post("/v1/edit", json={"image": _context(),
                                      "strengths": {"roughness": 0.5},
                                      "object_class": "teapot"})
    assert r.status_code == 422


def test_queue_full_gives_429(client):
    worker = client.app.state.worker
    release = threading.Event()

    def blocker():
        release.wait(timeout=10)
        return "done"

    jobs = []
    jobs.append(worker.submit(blocker))          # occupies the worker
    time.sleep(0.05)
    for _ in range(4):                           # fills the bounded queue
        jobs.append(worker.submit(lambda: None))
    assert all(j is not None for j in jobs)
    try:
        r = client.post("/v1/edit", json={"image": _context(),
                                          "strengths": {"roughness": 0.1},
                                          "seed": 1, "steps": 2})
        assert r.status_code == 429
        assert "queue" in r.json()["detail"]
    finally:
        release.set()
        for j in jobs:
            j.done.wait(timeout=10)
    # service recovers afterwards
    r2 = client.post("/v1/edit", json={"image": _context(),
                                       "strengths": {"roughness": 0.1},
                                       "seed": 1, "steps": 2})
    assert r2.status_code == 200
