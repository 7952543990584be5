import random

import pytest
from fastapi.testclient import TestClient

from privspn import shamir
from privspn.field import MERSENNE_89
from privspn.service.app import create_app

CONFIG = {"criterion": "3", "eval_rows": 100, "infer_rows": 0, "latency_ms": 0}


@pytest.fixture(scope="module")
def client():
    with TestClient(create_app()) as c:
        yield c


@pytest.fixture(scope="module")
def live_run(client):
    resp = client.post("/train", json={"config": CONFIG, "keep": True})
    assert resp.status_code == 200, resp.text
    return resp.json()


def test_health(client):
    assert client.get("/health").json()["status"] == "ok"


def test_partition(client, tmp_path):
    resp = client.post("/partition", json={"parties": 4, "seed": 3, "output": str(tmp_path)})
    body = resp.json()
    assert resp.status_code == 200
    assert sum(body["sizes"].values()) == 19253
    assert body["plan"].startswith("privspn-plan 1") and (tmp_path / "plan.txt").read_text() == body["plan"]


def test_partition_rejects_bad_regime(client):
    assert client.post("/partition", json={"regime": "zipf"}).status_code == 422


def test_train_report(live_run):
    report = live_run["report"]
    assert live_run["live"] and report["status"] == "ok"
    assert "mean test log-likelihood" in live_run["table"]
    assert {row["node"] for row in live_run["rows"]} == {0, 1, 2, 3, 4}


def test_get_run(client, live_run):
    got = client.get(f"/runs/{live_run['run_id']}").json()
    assert got["report"]["test_ll"] == live_run["report"]["test_ll"]
    assert client.get("/runs/nope").status_code == 404


def test_infer_with_evidence(client, live_run):
    resp = client.post(f"/runs/{live_run['run_id']}/infer", json={"evidence": [[0] * 8, [1, 0] * 4]})
    body = resp.json()
    assert resp.status_code == 200
    assert len(body["probabilities"]) == 2 and body["d"] == 10**7
    assert all(0 < p < 1 for p in body["probabilities"])
    assert body["probabilities"][0] == int(body["raw"][0]) / 10**7


def test_infer_with_prepared_shares(client, live_run):
    rng = random.Random(4)
    rows = [[0, 1, 1, 0, 0, 0, 1, 0]]
    sharing = shamir.SharingParams(3)
    shares = [[{str(s.party): str(s.value) for s in shamir.make_shares(bit, sharing, rng, MERSENNE_89)}
               for bit in row] for row in rows]
    prepared = client.post(f"/runs/{live_run['run_id']}/infer", json={"shares": shares}).json()
    plain = client.post(f"/runs/{live_run['run_id']}/infer", json={"evidence": rows}).json()
    assert prepared["probabilities"][0] == pytest.approx(plain["probabilities"][0], rel=1e-4)


def test_infer_validation(client, live_run):
    url = f"/runs/{live_run['run_id']}/infer"
    assert client.post(url, json={"evidence": [[0, 2] * 4]}).status_code == 422
    assert client.post(url, json={"evidence": [[0] * 7]}).status_code == 422
    assert client.post(url, json={}).status_code == 422
    assert client.post(url, json={"shares": [[{"1": "5"}] * 8]}).status_code == 422


def test_baseline_and_infer_refused(client):
    resp = client.post("/baseline", json={"config": CONFIG, "kind": "pooled"})
    assert resp.status_code == 200
    run_id = resp.json()["run_id"]
    assert client.post(f"/runs/{run_id}/infer", json={"evidence": [[0] * 8]}).status_code == 409


def test_config_errors_map_to_status(client):
    resp = client.post("/train", json={"config": CONFIG | {"regime": "dirichlet"}})
    assert resp.status_code == 200 and resp.json()["report"]["status"] == "failed"
    resp = client.post("/train", json={"config": CONFIG | {"transport": "tcp", "debug": True}})
    assert resp.json()["report"]["error"].startswith("PrivacyError")
    assert client.post("/baseline", json={"config": CONFIG | {"preset": 7}}).status_code == 422
    assert client.post("/train", json={"config": {"parties": "many"}}).status_code == 422


def test_bench(client):
    resp = client.post("/bench", json={"config": CONFIG, "parties": [3], "rows": 2})
    body = resp.json()
    assert resp.status_code == 200
    assert body["rows"][0]["parties"] == 3 and "manager I+O" in body["table"]


def test_delete_run(client):
    run_id = client.post("/train", json={"config": CONFIG, "keep": True}).json()["run_id"]
    assert client.delete(f"/runs/{run_id}").status_code == 200
    assert client.get(f"/runs/{run_id}").status_code == 404
