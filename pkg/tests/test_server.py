"""Service and HTTP endpoint behavior: sessions, durability, recovery."""

import json

import pytest
from fastapi.testclient import TestClient

from prefrank.config import ExperimentConfig
from prefrank.eventlog import LogCorruptError, read_log
from prefrank.server import (
    BusyTokenError,
    DuplicateSubmitError,
    ExpiredRequestError,
    ExperimentService,
    UnknownRequestError,
    create_app,
)


class FakeClock:
    def __init__(self, start=1000.0):
        self.now = start

    def __call__(self):
        return self.now

    def advance(self, seconds):
        self.now += seconds


def make_config(n=2, budget=400, ttl=600.0, **overrides):
    data = {
        "experiment_id": "exp-test",
        "epsilon": 0.0877,
        "delta": 0.05,
        "budget": budget,
        "request_ttl": ttl,
        "targets": [
            {"id": f"t{i}", "label": f"T{i}", "stimuli": [f"t{i}-a.wav", f"t{i}-b.wav"]}
            for i in range(n)
        ],
    }
    data.update(overrides)
    return ExperimentConfig.from_dict(data)


@pytest.fixture
def clock():
    return FakeClock()


@pytest.fixture
def service(tmp_path, clock):
    svc = ExperimentService(tmp_path / "run.log", make_config(), now_fn=clock)
    yield svc
    svc.close()


class TestServiceFlow:
    def test_fresh_join_issues_leaf_pair(self, service):
        response = service.join("alice")
        assert response["pair"] == {"left": "t0", "right": "t1"}
        assert response["presentation_order"] in ("left_first", "right_first")
        assert all(url.startswith("/media/") for url in response["stimuli"])

    def test_concurrent_tokens_get_distinct_pairs(self, tmp_path, clock):
        svc = ExperimentService(
            tmp_path / "multi.log", make_config(n=4, budget=5000), now_fn=clock
        )
        first = svc.join("alice")
        second = svc.join("bob")
        assert first["pair"] != second["pair"]
        svc.close()

    def test_token_limited_to_one_outstanding(self, service):
        service.join("alice")
        with pytest.raises(BusyTokenError):
            service.join("alice")

    def test_submit_then_rejoin(self, service):
        issued = service.join("alice")
        result = service.submit("alice", issued["request_id"], "left")
        assert result["accepted"]
        assert service.join("alice")["request_id"] != issued["request_id"]

    def test_duplicate_submit_rejected_without_state_change(self, service):
        issued = service.join("alice")
        service.submit("alice", issued["request_id"], "left")
        before = service.status()
        with pytest.raises(DuplicateSubmitError):
            service.submit("alice", issued["request_id"], "left")
        assert service.status() == before

    def test_unknown_request_rejected(self, service):
        with pytest.raises(UnknownRequestError):
            service.submit("alice", "r999999", "left")

    def test_submit_by_wrong_token_rejected(self, service):
        issued = service.join("alice")
        with pytest.raises(UnknownRequestError):
            service.submit("mallory", issued["request_id"], "left")

    def test_expired_request_rejected_and_released(self, tmp_path, clock):
        svc = ExperimentService(
            tmp_path / "ttl.log", make_config(ttl=60.0), now_fn=clock
        )
        issued = svc.join("alice")
        clock.advance(61)
        with pytest.raises(ExpiredRequestError):
            svc.submit("alice", issued["request_id"], "left")
        # Slot released: the token can join again.
        assert svc.join("alice")["request_id"] != issued["request_id"]
        svc.close()

    def test_stale_requests_swept_on_other_joins(self, tmp_path, clock):
        svc = ExperimentService(
            tmp_path / "sweep.log", make_config(ttl=60.0), now_fn=clock
        )
        svc.join("alice")
        clock.advance(120)
        svc.join("bob")
        assert svc.status()["outstanding_count"] == 1  # alice's lapsed
        svc.close()

    def test_preference_maps_to_pair_orientation(self, service):
        # "left" always credits the pair's left element, whatever the
        # presentation order asked the client to play first.
        issued = service.join("alice")
        service.submit("alice", issued["request_id"], "left")
        row = service.status()["pairs"][0]
        assert row["wins"] == 1
        issued = service.join("alice")
        service.submit("alice", issued["request_id"], "right")
        row = service.status()["pairs"][0]
        assert row["wins"] == 1 and row["received"] == 2

    def test_done_after_exhaustion(self, tmp_path, clock):
        svc = ExperimentService(
            tmp_path / "small.log", make_config(budget=3), now_fn=clock
        )
        for _ in range(3):
            issued = svc.join("alice")
            svc.submit("alice", issued["request_id"], "left")
        assert svc.join("alice") == {"done": True}
        assert svc.status()["phase"] == "exhausted"
        svc.close()

    def test_determined_response_carries_winner(self, service):
        for i in range(14):
            issued = service.join("alice")
            result = service.submit("alice", issued["request_id"], "left")
        assert result["determined"] and result["converged"]
        assert result["winner"] == "t0"


class TestStatusAndResults:
    def test_fresh_status(self, service):
        status = service.status()
        assert status["submitted_total"] == 0
        assert status["phase"] == "sorting"
        assert not status["complete"]
        for row in status["pairs"]:
            assert row["win_rate"] == 0.5
            assert row["interval"] == 0.5

    def test_row_arithmetic(self, service):
        for preference in ("left", "left", "right"):
            issued = service.join("alice")
            service.submit("alice", issued["request_id"], preference)
        row = service.status()["pairs"][0]
        assert row["win_rate"] == row["wins"] / row["received"]

    def test_results_significance_flags(self, tmp_path, clock):
        svc = ExperimentService(tmp_path / "sig.log", make_config(budget=400), now_fn=clock)
        for _ in range(14):
            issued = svc.join("alice")
            svc.submit("alice", issued["request_id"], "left")
        results = svc.results()
        row = results["pairs"][0]
        assert row["significant"]
        assert not results["partial"]
        assert results["order"] == ["t1", "t0"]
        svc.close()

    def test_export_round_trip(self, service, tmp_path):
        for _ in range(5):
            issued = service.join("alice")
            service.submit("alice", issued["request_id"], "left")
        text = service.export_text()
        exported = tmp_path / "exported.log"
        exported.write_text(text)
        config, records = read_log(exported)
        assert config["experiment_id"] == "exp-test"
        submits = [r for r in records if r.kind == "Submit"]
        assert len(submits) == 5  # every acknowledged submit persisted

    def test_analyze_of_export_matches_live_results(self, service, tmp_path):
        from prefrank.report import analyze_log

        for preference in ("left", "right", "left", "left", "right"):
            issued = service.join("alice")
            service.submit("alice", issued["request_id"], preference)
        exported = tmp_path / "exported.log"
        exported.write_text(service.export_text())
        analysis = analyze_log(exported)
        live = service.results()
        assert [r.pair for r in analysis.rows] == [p["pair"] for p in live["pairs"]]
        for row, live_pair in zip(analysis.rows, live["pairs"]):
            assert row.final_received == live_pair["final_received"]
            assert row.final_win_rate == live_pair["final_win_rate"]
            assert row.p_value == live_pair["p_value"]
        assert analysis.summary["order"] == live["order"]


class TestRecovery:
    def drive(self, svc, judgments):
        for preference in judgments:
            issued = svc.join("alice")
            svc.submit("alice", issued["request_id"], preference)

    def test_restart_reproduces_state(self, tmp_path, clock):
        path = tmp_path / "exp.log"
        svc = ExperimentService(path, make_config(), now_fn=clock)
        self.drive(svc, ["left", "right", "left", "left"])
        live = svc.engine.snapshot()
        svc.close()
        recovered = ExperimentService(path, now_fn=clock)
        assert recovered.engine.snapshot() == live
        recovered.close()

    def test_recovered_log_resumes_gapless(self, tmp_path, clock):
        path = tmp_path / "exp.log"
        svc = ExperimentService(path, make_config(), now_fn=clock)
        self.drive(svc, ["left"] * 3)
        svc.close()
        recovered = ExperimentService(path, now_fn=clock)
        self.drive(recovered, ["left"] * 2)
        recovered.close()
        _, records = read_log(path)  # read_log enforces the gapless audit
        assert [r.seq for r in records] == list(range(1, len(records) + 1))

    def test_converged_log_recovers_into_refinement(self, tmp_path, clock):
        path = tmp_path / "conv.log"
        svc = ExperimentService(path, make_config(budget=400), now_fn=clock)
        self.drive(svc, ["left"] * 14)
        assert svc.status()["phase"] == "refinement"
        svc.close()
        recovered = ExperimentService(path, now_fn=clock)
        assert recovered.status()["phase"] == "refinement"
        assert recovered.status()["complete"]
        recovered.close()

    def test_outstanding_past_ttl_expired_on_load(self, tmp_path, clock):
        path = tmp_path / "stale.log"
        svc = ExperimentService(path, make_config(ttl=60.0), now_fn=clock)
        svc.join("alice")
        svc.close()
        clock.advance(3600)
        recovered = ExperimentService(path, now_fn=clock)
        assert recovered.status()["outstanding_count"] == 0
        # The recovery-time expiry is itself durable.
        recovered.close()
        _, records = read_log(path)
        assert any(r.kind == "Expire" for r in records)

    def test_corrupt_log_refuses_to_start(self, tmp_path, clock):
        path = tmp_path / "corrupt.log"
        svc = ExperimentService(path, make_config(), now_fn=clock)
        self.drive(svc, ["left"] * 3)
        svc.close()
        lines = path.read_text().splitlines()
        lines[2] = "{garbage"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(LogCorruptError, match="line 3"):
            ExperimentService(path, now_fn=clock)

    def test_fresh_service_requires_config(self, tmp_path, clock):
        with pytest.raises(ValueError):
            ExperimentService(tmp_path / "none.log", now_fn=clock)


class TestHttpApi:
    @pytest.fixture
    def client(self, tmp_path, clock):
        svc = ExperimentService(tmp_path / "http.log", make_config(), now_fn=clock)
        app = create_app(svc, admin_token="sekrit")
        with TestClient(app) as client:
            yield client
        svc.close()

    def test_join_submit_cycle(self, client):
        joined = client.post("/api/join", json={"evaluator_token": "tok1"})
        assert joined.status_code == 200
        body = joined.json()
        assert set(body) == {"request_id", "pair", "stimuli", "presentation_order"}
        submitted = client.post(
            "/api/submit",
            json={
                "evaluator_token": "tok1",
                "request_id": body["request_id"],
                "preference": "left",
            },
        )
        assert submitted.status_code == 200
        assert submitted.json()["accepted"]

    def test_second_join_conflicts(self, client):
        client.post("/api/join", json={"evaluator_token": "tok1"})
        again = client.post("/api/join", json={"evaluator_token": "tok1"})
        assert again.status_code == 409

    def test_duplicate_submit_conflicts(self, client):
        body = client.post("/api/join", json={"evaluator_token": "tok1"}).json()
        payload = {
            "evaluator_token": "tok1",
            "request_id": body["request_id"],
            "preference": "right",
        }
        assert client.post("/api/submit", json=payload).status_code == 200
        assert client.post("/api/submit", json=payload).status_code == 409

    def test_unknown_submit_404(self, client):
        response = client.post(
            "/api/submit",
            json={"evaluator_token": "x", "request_id": "r42", "preference": "left"},
        )
        assert response.status_code == 404

    def test_bad_preference_rejected(self, client):
        body = client.post("/api/join", json={"evaluator_token": "tok1"}).json()
        response = client.post(
            "/api/submit",
            json={
                "evaluator_token": "tok1",
                "request_id": body["request_id"],
                "preference": "both",
            },
        )
        assert response.status_code == 422

    def test_status_is_open(self, client):
        assert client.get("/api/status").status_code == 200

    def test_results_and_export_guarded(self, client):
        assert client.get("/api/results").status_code == 401
        assert client.get("/api/export").status_code == 401
        ok = client.get("/api/results", headers={"x-admin-token": "sekrit"})
        assert ok.status_code == 200
        bearer = client.get(
            "/api/export", headers={"authorization": "Bearer sekrit"}
        )
        assert bearer.status_code == 200

    def test_no_service_is_503(self):
        app = create_app(None)
        with TestClient(app) as client:
            assert client.post("/api/join", json={"evaluator_token": "t"}).status_code == 503
            assert client.get("/api/status").status_code == 503

    def test_admin_load_and_reset(self, tmp_path):
        app = create_app(None, admin_token="sekrit")
        with TestClient(app) as client:
            config = make_config().to_dict()
            loaded = client.post(
                "/api/admin/load",
                json={"config": config, "log_path": str(tmp_path / "loaded.log")},
                headers={"x-admin-token": "sekrit"},
            )
            assert loaded.status_code == 200
            assert client.get("/api/status").status_code == 200
            reset = client.post("/api/admin/reset", headers={"x-admin-token": "sekrit"})
            assert reset.status_code == 200
            assert client.get("/api/status").status_code == 503

    def test_media_served_from_media_root(self, tmp_path, clock):
        media = tmp_path / "media"
        media.mkdir()
        (media / "t0-a.wav").write_bytes(b"RIFFfake")
        config = make_config(media_root=str(media))
        svc = ExperimentService(tmp_path / "media.log", config, now_fn=clock)
        with TestClient(create_app(svc)) as client:
            assert client.get("/media/t0-a.wav").status_code == 200
            assert client.get("/media/absent.wav").status_code == 404
        svc.close()
