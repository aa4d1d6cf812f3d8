import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from cxreport.images import SynthConfig, synth_dataset, write_dataset, load_dataset
from cxreport.service import RUBRIC, ReviewStore, ServiceError, create_app
from cxreport.training import Model, TrainConfig, TrainSample, build_vocab


def tiny_model(samples):
    cfg = TrainConfig(hidden_size=8, embed_size=8, n_blocks=1, layers_per_block=1,
                      growth_rate=4, input_size=16, frozen_blocks=0, max_len=12)
    vocab = build_vocab(
        [TrainSample(id=r.id, image=r.load_image(), report=r.report) for r in samples],
        min_count=1,
    )
    return Model.create(cfg, vocab, seed=0)


@pytest.fixture()
def store(tmp_path):
    samples = synth_dataset(SynthConfig(n_samples=14, image_size=16), seed=3)
    data_dir = tmp_path / "data"
    write_dataset(samples, {"test": list(range(12)), "train": [12, 13]}, data_dir)
    records = load_dataset(data_dir)
    model = tiny_model(records)
    return ReviewStore(tmp_path / "state", dataset_records=records, model=model)


def test_create_session_counts_and_determinism(store):
    sid_a = store.create_session(n_model=4, n_human=4, seed=9)
    sid_b = store.create_session(n_model=4, n_human=4, seed=9)
    items_a = store.session(sid_a).items
    items_b = store.session(sid_b).items
    assert len(items_a) == 8
    assert [i.sample_id for i in items_a] == [i.sample_id for i in items_b]
    assert [i.origin for i in items_a] == [i.origin for i in items_b]


def test_session_draws_are_disjoint(store):
    sid = store.create_session(n_model=6, n_human=6, seed=1)
    items = store.session(sid).items
    model_ids = {i.sample_id for i in items if i.origin == "model"}
    human_ids = {i.sample_id for i in items if i.origin == "human"}
    assert len(model_ids) == 6 and len(human_ids) == 6
    assert not model_ids & human_ids


def test_insufficient_samples_rejected(store):
    with pytest.raises(ServiceError) as err:
        store.create_session(n_model=10, n_human=10, seed=0)
    assert err.value.code == "insufficient_samples"


def test_blinded_payload_has_no_origin(store):
    sid = store.create_session(n_model=3, n_human=3, seed=5)
    payload = store.blinded_items(sid)
    text = json.dumps(payload)
    assert "origin" not in text
    assert "human" not in text and "model" not in text
    for entry in payload:
        assert set(entry) == {"item_id", "report", "image_url"}


def test_score_validation_and_upsert(store):
    sid = store.create_session(n_model=2, n_human=2, seed=7)
    item = store.session(sid).items[0]

    with pytest.raises(ServiceError) as err:
        store.submit_score(item.item_id, "rater-a", 6)
    assert err.value.code == "invalid_score"

    with pytest.raises(ServiceError):
        store.submit_score("nope", "rater-a", 3)

    store.submit_score(item.item_id, "rater-a", 4)
    store.submit_score(item.item_id, "rater-a", 5)  # overwrite
    assert len(store.session(sid).scores) == 1
    assert store.session(sid).scores[(item.item_id, "rater-a")].score == 5

    store.submit_score(item.item_id, "rater-b", 3)
    assert len(store.session(sid).scores) == 2


def test_distribution_empty_state(store):
    sid = store.create_session(n_model=3, n_human=3, seed=2)
    dist = store.distribution(sid)
    assert dist["pending"] == 6
    for origin in ("human", "model"):
        assert dist["per_origin"][origin]["total"] == 0
        assert all(c == 0 for c in dist["per_origin"][origin]["counts"].values())


def test_distribution_recovers_injected_counts(store):
    sid = store.create_session(n_model=4, n_human=4, seed=4)
    items = store.session(sid).items
    # deterministic injection: model items get 5,4,5,3 ; human items 5,5,4,2
    model_scores = [5, 4, 5, 3]
    human_scores = [5, 5, 4, 2]
    mi = hi = 0
    for item in items:
        if item.origin == "model":
            store.submit_score(item.item_id, "r1", model_scores[mi])
            mi += 1
        else:
            store.submit_score(item.item_id, "r1", human_scores[hi])
            hi += 1
    dist = store.distribution(sid)
    m = dist["per_origin"]["model"]
    h = dist["per_origin"]["human"]
    assert m["counts"] == {"1": 0, "2": 0, "3": 1, "4": 1, "5": 2}
    assert h["counts"] == {"1": 0, "2": 1, "3": 0, "4": 1, "5": 2}
    assert m["percent"]["5"] == pytest.approx(50.0)
    assert m["acceptable_pct"] == pytest.approx(75.0)
    assert h["acceptable_pct"] == pytest.approx(75.0)
    assert dist["pending"] == 0
    assert m["total"] + h["total"] == 8


def test_rebuild_from_event_log(tmp_path, store):
    sid = store.create_session(n_model=2, n_human=2, seed=8)
    item = store.session(sid).items[0]
    store.submit_score(item.item_id, "r1", 4)

    reopened = ReviewStore(store.state_dir)
    assert len(reopened.session(sid).items) == 4
    assert reopened.session(sid).scores[(item.item_id, "r1")].score == 4
    dist = reopened.distribution(sid)
    assert dist["pending"] == 3


def test_histogram_totals_match_submissions(store):
    sid = store.create_session(n_model=3, n_human=3, seed=6)
    items = store.session(sid).items
    rng = np.random.default_rng(0)
    n_scores = 0
    for item in items:
        for rater in ("a", "b"):
            store.submit_score(item.item_id, rater, int(rng.integers(1, 6)))
            n_scores += 1
    dist = store.distribution(sid)
    total = dist["per_origin"]["human"]["total"] + dist["per_origin"]["model"]["total"]
    assert total == n_scores


# --- HTTP surface -------------------------------------------------------------


@pytest.fixture()
def client(store):
    return TestClient(create_app(store), raise_server_exceptions=False)


def test_http_roundtrip(client):
    created = client.post("/sessions", json={"n_model": 3, "n_human": 3, "seed": 1})
    assert created.status_code == 200
    sid = created.json()["session_id"]
    assert created.json()["n_items"] == 6

    items = client.get(f"/sessions/{sid}/items")
    assert items.status_code == 200
    body = items.json()
    assert body["total"] == 6
    assert "origin" not in items.text

    first = body["items"][0]
    image = client.get(first["image_url"])
    assert image.status_code == 200
    assert image.headers["content-type"] == "image/png"
    assert image.content[:8] == b"\x89PNG\r\n\x1a\n"

    scored = client.post(f"/items/{first['item_id']}/scores", json={"rater_id": "r1", "score": 5})
    assert scored.status_code == 200

    dist = client.get(f"/sessions/{sid}/distribution")
    assert dist.status_code == 200
    per_origin = dist.json()["per_origin"]
    assert per_origin["human"]["total"] + per_origin["model"]["total"] == 1
    assert dist.json()["pending"] == 5


def test_http_errors_are_json(client):
    resp = client.get("/sessions/unknown/items")
    assert resp.status_code == 404
    assert resp.json() == {"code": "not_found", "message": "unknown session unknown"}

    created = client.post("/sessions", json={"n_model": 2, "n_human": 2, "seed": 0})
    sid = created.json()["session_id"]
    item_id = client.get(f"/sessions/{sid}/items").json()["items"][0]["item_id"]
    bad = client.post(f"/items/{item_id}/scores", json={"rater_id": "r", "score": 6})
    assert bad.status_code == 422
    assert bad.json()["code"] == "invalid_score"


def test_http_rubric_served(client):
    resp = client.get("/rubric")
    assert resp.status_code == 200
    assert resp.json()["levels"] == RUBRIC
