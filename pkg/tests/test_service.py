from __future__ import annotations

import io
import time
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from alcor.acquisition import AcquisitionKind
from alcor.loop import CorrectionRun, LoopConfig, OracleConfig, load_dataset, \
    run_simulation
from alcor.service import InteractiveSession, create_app
from alcor.synth import SynthSpec, generate_dataset
from alcor.tensor_io import load_manifest


@pytest.fixture(scope="module")
def manifest_path(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc_data")
    return generate_dataset(root, SynthSpec(images=2, height=16, width=16,
                                            classes=3, noise=0.5, grid=4, seed=31))


def make_client(manifest_path, tmp_path, batch_size=4, rounds=2,
                lease_seconds=120.0):
    dataset = load_dataset(load_manifest(manifest_path))
    cfg = LoopConfig(batch_size=batch_size, rounds=rounds,
                     kind=AcquisitionKind.SIM, epsilon=0.0, seed=5)
    run = CorrectionRun(dataset, cfg, tmp_path)
    session = InteractiveSession.start(run, "test-session",
                                       lease_seconds=lease_seconds)
    return TestClient(create_app(session)), session


def test_no_session_returns_503():
    client = TestClient(create_app(None))
    assert client.get("/api/session").status_code == 503
    assert client.get("/api/queries/next").status_code == 503
    assert client.post("/api/queries/x/answer",
                       json={"verdict": "confirmed"}).status_code == 503
    assert client.post("/api/rounds/advance").status_code == 503


def test_session_snapshot_counts(manifest_path, tmp_path):
    client, _ = make_client(manifest_path, tmp_path, batch_size=4)
    info = client.get("/api/session").json()
    assert info["queries_pending"] == 4
    assert info["queries_answered"] == 0
    assert info["round"] == 1
    assert info["batch_size"] == 4
    assert info["acquisition"] == "sim"
    assert info["status"] == "active"

    view = client.get("/api/queries/next", params={"annotator": "u1"}).json()
    client.post(f"/api/queries/{view['query_id']}/answer",
                json={"verdict": "confirmed"})
    info = client.get("/api/session").json()
    assert info["queries_pending"] == 3
    assert info["queries_answered"] == 1


def test_query_view_contract(manifest_path, tmp_path):
    client, session = make_client(manifest_path, tmp_path)
    view = client.get("/api/queries/next", params={"annotator": "u1"}).json()
    for key in ("query_id", "image_id", "x", "y", "bbox", "pseudo_label",
                "pseudo_label_name", "class_names", "image_url", "overlay_url"):
        assert key in view
    x0, y0, x1, y1 = view["bbox"]
    assert x0 <= view["x"] <= x1
    assert y0 <= view["y"] <= y1
    names = session.run.dataset.manifest.class_names
    assert view["class_names"] == names
    assert view["pseudo_label_name"] == names[view["pseudo_label"]]


def test_leases_hold_and_expire(manifest_path, tmp_path):
    client, _ = make_client(manifest_path, tmp_path, batch_size=2,
                            lease_seconds=0.05)
    a = client.get("/api/queries/next", params={"annotator": "a"}).json()
    b = client.get("/api/queries/next", params={"annotator": "b"}).json()
    assert a["query_id"] != b["query_id"]
    # batch exhausted while leases are fresh
    assert client.get("/api/queries/next",
                      params={"annotator": "c"}).status_code == 204
    time.sleep(0.1)  # both leases lapse; the earliest query is re-issued
    c = client.get("/api/queries/next", params={"annotator": "c"}).json()
    assert c["query_id"] == a["query_id"]


def test_same_annotator_keeps_its_lease(manifest_path, tmp_path):
    client, _ = make_client(manifest_path, tmp_path, batch_size=2)
    first = client.get("/api/queries/next", params={"annotator": "a"}).json()
    again = client.get("/api/queries/next", params={"annotator": "a"}).json()
    assert first["query_id"] == again["query_id"]


def test_answer_paths(manifest_path, tmp_path):
    client, session = make_client(manifest_path, tmp_path)
    view = client.get("/api/queries/next", params={"annotator": "u"}).json()
    qid = view["query_id"]

    ok = client.post(f"/api/queries/{qid}/answer", json={"verdict": "confirmed"})
    assert ok.status_code == 200
    assert session.run.ledger.clicks_spent == 1
    assert session.run.ledger.bits_spent == 1.0

    dup = client.post(f"/api/queries/{qid}/answer", json={"verdict": "confirmed"})
    assert dup.status_code == 409

    other = client.get("/api/queries/next", params={"annotator": "u"}).json()
    same_label = client.post(
        f"/api/queries/{other['query_id']}/answer",
        json={"verdict": "corrected", "label": other["pseudo_label"]})
    assert same_label.status_code == 422

    bad_label = client.post(f"/api/queries/{other['query_id']}/answer",
                            json={"verdict": "corrected", "label": 999})
    assert bad_label.status_code == 422

    unknown = client.post("/api/queries/nope/answer", json={"verdict": "confirmed"})
    assert unknown.status_code == 404


def test_corrected_answer_charges_log2_bits(manifest_path, tmp_path):
    client, session = make_client(manifest_path, tmp_path)
    view = client.get("/api/queries/next", params={"annotator": "u"}).json()
    wrong = next(c for c in range(3) if c != view["pseudo_label"])
    resp = client.post(f"/api/queries/{view['query_id']}/answer",
                       json={"verdict": "corrected", "label": wrong})
    assert resp.status_code == 200
    assert session.run.ledger.bits_spent == pytest.approx(np.log2(3))


def answer_all(client, honest):
    """Answer every pending query via the API; returns the count answered."""
    answered = 0
    while True:
        resp = client.get("/api/queries/next", params={"annotator": "bot"})
        if resp.status_code == 204:
            return answered
        view = resp.json()
        body = honest(view)
        assert client.post(f"/api/queries/{view['query_id']}/answer",
                           json=body).status_code == 200
        answered += 1


def oracle_body(dataset):
    def honest(view):
        gt = dataset.gt[view["image_id"]].data[view["y"], view["x"]]
        if int(gt) == view["pseudo_label"]:
            return {"verdict": "confirmed"}
        return {"verdict": "corrected", "label": int(gt)}
    return honest


def test_advance_guard_and_round_progression(manifest_path, tmp_path):
    client, session = make_client(manifest_path, tmp_path, batch_size=3, rounds=2)
    assert client.post("/api/rounds/advance").status_code == 409

    answer_all(client, oracle_body(session.run.dataset))
    resp = client.post("/api/rounds/advance")
    assert resp.status_code == 200
    assert client.get("/api/session").json()["round"] == 2

    answer_all(client, oracle_body(session.run.dataset))
    resp = client.post("/api/rounds/advance")
    assert resp.status_code == 200
    info = client.get("/api/session").json()
    assert info["status"] == "finished"
    assert (tmp_path / "final" / "manifest.json").exists()
    # a finished session refuses further advances
    assert client.post("/api/rounds/advance").status_code == 409


def test_png_endpoints(manifest_path, tmp_path):
    client, session = make_client(manifest_path, tmp_path)
    iid = session.run.dataset.image_ids[0]
    img = client.get(f"/api/images/{iid}.png")
    assert img.status_code == 200
    assert img.headers["content-type"] == "image/png"
    decoded = Image.open(io.BytesIO(img.content))
    assert decoded.size == (16, 16)

    assert client.get("/api/images/nope.png").status_code == 404

    view = client.get("/api/queries/next", params={"annotator": "u"}).json()
    overlay = client.get(view["overlay_url"])
    assert overlay.status_code == 200
    od = Image.open(io.BytesIO(overlay.content))
    assert od.size == decoded.size
    assert od.mode == "RGBA"

    assert client.get("/api/overlays/nope.png").status_code == 404


def tensor_bytes(run_dir: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes()
            for p in sorted((run_dir / "final" / "labels").glob("*.alct"))}


def test_outcome_independent_of_answer_order(manifest_path, tmp_path):
    """Same answers, reversed arrival order: identical corrected tensors."""
    outputs = []
    for direction in (1, -1):
        out = tmp_path / f"order_{direction}"
        client, session = make_client(manifest_path, out, batch_size=4, rounds=1)
        views = []
        for k in range(99):  # one annotator per lease drains the batch
            resp = client.get("/api/queries/next", params={"annotator": f"bot{k}"})
            if resp.status_code == 204:
                break
            views.append(resp.json())
        assert len(views) == 4
        honest = oracle_body(session.run.dataset)
        for view in views[::direction]:
            assert client.post(f"/api/queries/{view['query_id']}/answer",
                               json=honest(view)).status_code == 200
        assert client.post("/api/rounds/advance").status_code == 200
        outputs.append(tensor_bytes(out))
    assert outputs[0] == outputs[1]


def test_concurrent_answers_linearize(manifest_path, tmp_path):
    """Many racing answers to one query: exactly one lands, rest conflict."""
    from concurrent.futures import ThreadPoolExecutor

    _, session = make_client(manifest_path, tmp_path)
    qid = sorted(session.queries)[0]

    def submit(k: int) -> int:
        code, _ = session.answer(qid, "confirmed", None, f"worker-{k}")
        return code

    with ThreadPoolExecutor(max_workers=16) as pool:
        codes = list(pool.map(submit, range(64)))
    assert codes.count(200) == 1
    assert codes.count(409) == 63
    assert session.run.ledger.clicks_spent == 1


def test_serve_mode_resume_continues_rounds(manifest_path, tmp_path):
    dataset = load_dataset(load_manifest(manifest_path))
    cfg = LoopConfig(batch_size=4, rounds=3, kind=AcquisitionKind.SIM,
                     epsilon=0.0, oracle=OracleConfig(0.0, 5), seed=5)
    run_simulation(dataset, LoopConfig(batch_size=4, rounds=1,
                                       kind=AcquisitionKind.SIM, epsilon=0.0,
                                       oracle=OracleConfig(0.0, 5), seed=5),
                   tmp_path)

    resumed = CorrectionRun.resume(load_dataset(load_manifest(manifest_path)),
                                   cfg, tmp_path)
    session = InteractiveSession(run=resumed, session_id="resumed")
    session._issue_round()
    client = TestClient(create_app(session))
    assert client.get("/api/session").json()["round"] == 2


def test_http_replay_matches_simulation(manifest_path, tmp_path):
    """Scripted HTTP client with oracle answers == simulate mode, byte for byte."""
    dataset = load_dataset(load_manifest(manifest_path))
    cfg = LoopConfig(batch_size=4, rounds=2, kind=AcquisitionKind.SIM,
                     epsilon=0.0, oracle=OracleConfig(0.0, 5), seed=5)
    run_simulation(dataset, cfg, tmp_path / "sim")

    client, session = make_client(manifest_path, tmp_path / "http",
                                  batch_size=4, rounds=2)
    honest = oracle_body(session.run.dataset)
    while client.get("/api/session").json()["status"] == "active":
        answer_all(client, honest)
        assert client.post("/api/rounds/advance").status_code == 200

    sim_files = {p.relative_to(tmp_path / "sim").as_posix(): p.read_bytes()
                 for p in sorted((tmp_path / "sim").rglob("*.alct"))}
    http_files = {p.relative_to(tmp_path / "http").as_posix(): p.read_bytes()
                  for p in sorted((tmp_path / "http").rglob("*.alct"))}
    assert sim_files == http_files
    assert (tmp_path / "sim" / "queries.jsonl").read_bytes() == \
           (tmp_path / "http" / "queries.jsonl").read_bytes()
