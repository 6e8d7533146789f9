import json

import pytest
from fastapi.testclient import TestClient

from app.main import app
from app.routers.runs import limiter


SCRIPT = """\
create /f rw-
h = open /f                => eSucc 0
write $h 0 "abc"           => eSucc
seek $h 0
read $h 3                  => eSucc abc
"""

TAMPER = {
    "seed": 4,
    "strategies": ["ContentTamper"],
    "trigger": {"kind": "every", "k": 1, "ops": ["xReadPage"]},
}


@pytest.fixture(scope="module")
def client():
    with TestClient(app) as c:
        yield c


@pytest.fixture(autouse=True)
def fresh_limits():
    limiter.reset()
    yield


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "healthy"
    assert body["page_pool_capacity"] >= 1


class TestRun:
    def test_clean_run(self, client):
        response = client.post("/api/v1/run", json={"script": SCRIPT})
        assert response.status_code == 200
        report = response.json()
        assert report["mode"] == "benign"
        assert report["summary"]["status"] == "clean"
        assert report["summary"]["assertions"] == 3
        assert [r["call"] for r in report["records"]] == ["create", "open", "write", "seek", "read"]

    def test_script_that_does_not_parse(self, client):
        response = client.post("/api/v1/run", json={"script": "create /f rw-\nfrobnicate\n"})
        assert response.status_code == 400
        body = response.json()
        assert body["line"] == 2
        assert "unknown call" in body["detail"]

    def test_monitored_run_flags_tampering(self, client):
        response = client.post("/api/v1/run", json={"script": SCRIPT, "mode": "adv", "adversary": TAMPER})
        summary = response.json()["summary"]
        assert summary["status"] == "failed"
        assert summary["first_violation_kind"] == "ContentTamper"
        assert summary["first_violation_index"] == 4

    def test_unknown_mode(self, client):
        response = client.post("/api/v1/run", json={"script": SCRIPT, "mode": "paranoid"})
        assert response.status_code == 422


class TestUpload:
    def test_upload(self, client):
        response = client.post(
            "/api/v1/run/upload",
            files={"file": ("w.bfs", SCRIPT.encode(), "text/plain")},
            data={"mode": "adv", "adversary": json.dumps(TAMPER)},
        )
        assert response.status_code == 200
        assert response.json()["summary"]["violations"] >= 1

    def test_not_utf8(self, client):
        response = client.post("/api/v1/run/upload", files={"file": ("w.bfs", b"\xff\xfe", "text/plain")})
        assert response.status_code == 400
        assert response.json()["detail"]["error"] == "script is not utf-8"

    def test_bad_adversary_json(self, client):
        response = client.post(
            "/api/v1/run/upload",
            files={"file": ("w.bfs", SCRIPT.encode(), "text/plain")},
            data={"adversary": '{"strategies": ["Gremlins"]}'},
        )
        assert response.status_code == 422
        assert response.json()["detail"]["error"] == "bad adversary config"


def test_generate(client):
    response = client.post("/api/v1/generate", json={"seed": 3, "length": 10})
    assert response.status_code == 200
    assert response.text.startswith("# seed=3 length=10\n")
    assert response.text == client.post("/api/v1/generate", json={"seed": 3, "length": 10}).text


def test_campaign(client):
    response = client.post("/api/v1/campaign", json={"seed": 2, "scripts": 1, "length": 15,
                                                     "strategies": ["ContentTamper", "ErrnoLie"]})
    assert response.status_code == 200
    body = response.json()
    assert body["accepted"] is True
    assert [t["strategy"] for t in body["tallies"]] == ["ContentTamper", "ErrnoLie"]


def test_rate_limit(client):
    for _ in range(30):
        client.post("/api/v1/generate", json={"seed": 1, "length": 1})
    response = client.post("/api/v1/generate", json={"seed": 1, "length": 1})
    assert response.status_code == 429
    assert response.json()["error"] == "rate limit exceeded"
