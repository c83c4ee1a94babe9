import json

import pytest
from fastapi.testclient import TestClient

from active_measure.errors import (
    ExhaustedError,
    ModeError,
    PendingConflictError,
    ReplayMismatchError,
)
from active_measure.pool import Unit, UnitPool, write_pool
from active_measure.proposal import ClampPolicy
from active_measure.service import SessionStore, create_app
from active_measure.weights import WeightScheme


def _live_pool(n=6):
    return UnitPool([Unit(f"u{i}", f"card:{i}", None) for i in range(n)])


def _store(tmp_path):
    return SessionStore(tmp_path / "sessions")


def _create(store, pool=None, **kw):
    defaults = dict(
        scheme=WeightScheme("comb"), clamp=ClampPolicy("floor", 1.0), level=0.95, seed=5
    )
    defaults.update(kw)
    return store.create(pool or _live_pool(), **defaults)


def test_session_flow_minimal(tmp_path):
    store = _store(tmp_path)
    sid = _create(store)
    info = store.info(sid)
    assert info["t"] == 0 and not info["exhausted"] and info["pending_unit"] is None
    uid, ref, q = store.next_sample(sid)
    assert ref.startswith("card:")
    assert store.next_sample(sid) == (uid, ref, q)  # idempotent re-fetch
    rep = store.submit_label(sid, uid, 4.0)
    assert rep.t == 1
    assert store.info(sid)["t"] == 1


def test_same_seed_gives_identical_first_sample(tmp_path):
    store = _store(tmp_path)
    preds = {f"u{i}": float(i + 1) for i in range(6)}
    sid_a = _create(store, seed=77, predictions=preds)
    sid_b = _create(store, seed=77, predictions=preds)
    assert store.next_sample(sid_a) == store.next_sample(sid_b)


def test_session_rejects_simulation_pool(tmp_path):
    pool = UnitPool([Unit("a", "r", 1.0)])
    with pytest.raises(ModeError):
        _create(_store(tmp_path), pool=pool)


def test_single_unit_pool_exhausts_with_exact_total(tmp_path):
    store = _store(tmp_path)
    sid = _create(store, pool=UnitPool([Unit("only", "r", None)]))
    uid, _, q = store.next_sample(sid)
    assert q == 1.0
    rep = store.submit_label(sid, uid, 7.5)
    assert rep.estimate == 7.5
    assert rep.ci_lo == rep.ci_hi == 7.5
    with pytest.raises(ExhaustedError):
        store.next_sample(sid)


def test_two_unit_uniform_first_estimate(tmp_path):
    store = _store(tmp_path)
    sid = _create(store, pool=UnitPool([Unit("a", "r", None), Unit("b", "r", None)]))
    uid, _, q = store.next_sample(sid)
    assert q == 0.5
    rep = store.submit_label(sid, uid, 3.0)
    assert rep.estimate == 6.0  # 0 + 3.0 / 0.5


def test_wrong_unit_label_is_conflict(tmp_path):
    store = _store(tmp_path)
    sid = _create(store)
    uid, _, _ = store.next_sample(sid)
    wrong = next(u for u in ("u0", "u1") if u != uid)
    with pytest.raises(PendingConflictError):
        store.submit_label(sid, wrong, 1.0)


def test_push_predictions_redirects_sampling(tmp_path):
    store = _store(tmp_path)
    sid = _create(store, seed=2)
    table = {f"u{i}": 1.0 for i in range(6)}
    table["u3"] = 10_000.0
    store.push_predictions(sid, table)
    uid, _, q = store.next_sample(sid)
    assert uid == "u3" and q > 0.99
    with pytest.raises(PendingConflictError):
        store.push_predictions(sid, table)  # pending sample now


def test_trajectory_matches_submitted_reports(tmp_path):
    store = _store(tmp_path)
    sid = _create(store)
    reports = []
    for _ in range(4):
        uid, _, _ = store.next_sample(sid)
        reports.append(store.submit_label(sid, uid, 2.0))
    traj = store.trajectory(sid)
    assert traj == reports


def test_replay_is_bit_identical(tmp_path):
    store = _store(tmp_path)
    sid = _create(store, seed=11, predictions={f"u{i}": float(i + 1) for i in range(6)})
    for value in (1.0, 0.0, 5.0):
        uid, _, _ = store.next_sample(sid)
        store.submit_label(sid, uid, value)
    store.push_predictions(sid, {f"u{i}": 2.0 for i in range(6)})
    for value in (2.0, 4.0):
        uid, _, _ = store.next_sample(sid)
        store.submit_label(sid, uid, value)
    recorded = [r.as_dict() for r in store.trajectory(sid)]
    replayed = [r.as_dict() for r in SessionStore.replay_log(store.export_log(sid))]
    assert recorded == replayed


def test_restart_restores_pending_state(tmp_path):
    data = tmp_path / "sessions"
    store = SessionStore(data)
    sid = _create(store)
    uid, ref, q = store.next_sample(sid)
    store2 = SessionStore(data)  # simulated restart mid-pending
    assert store2.info(sid)["pending_unit"] == uid
    assert store2.next_sample(sid) == (uid, ref, q)
    rep = store2.submit_label(sid, uid, 1.0)
    assert rep.t == 1
    store3 = SessionStore(data)  # restart in idle state
    assert store3.info(sid)["t"] == 1
    assert store3.info(sid)["pending_unit"] is None
    assert [r.as_dict() for r in store3.trajectory(sid)] == [
        r.as_dict() for r in store2.trajectory(sid)
    ]


def test_replay_detects_tampered_log(tmp_path):
    store = _store(tmp_path)
    sid = _create(store)
    uid, _, _ = store.next_sample(sid)
    store.submit_label(sid, uid, 1.0)
    log = store.export_log(sid)
    tampered = log.replace(f'"unit": "{uid}"', '"unit": "u999"')
    with pytest.raises(ReplayMismatchError):
        SessionStore.replay_log(tampered)
    with pytest.raises(ReplayMismatchError, match="line 2"):
        SessionStore.replay_log(log.splitlines()[0] + "\n{not json}\n")


def test_unknown_session(tmp_path):
    store = _store(tmp_path)
    with pytest.raises(KeyError):
        store.next_sample("nope")


# -- HTTP layer ---------------------------------------------------------------


@pytest.fixture
def client(tmp_path):
    pools = tmp_path / "pools"
    pools.mkdir()
    write_pool(_live_pool(), pools / "demo.pool")
    write_pool(UnitPool([Unit("a", "r", 1.0), Unit("b", "r", 2.0)]), pools / "sim.pool")
    app = create_app(pool_dir=pools, data_dir=tmp_path / "sessions", ui_dir=None)
    return TestClient(app)


def _create_http(client, **overrides):
    body = {"pool": "demo", "weights": "comb", "seed": 3}
    body.update(overrides)
    resp = client.post("/sessions", json=body)
    assert resp.status_code == 201, resp.text
    return resp.json()["session"]


def test_http_health_and_pools(client):
    assert client.get("/health").json() == {"status": "ok"}
    assert client.get("/pools").json() == {"pools": ["demo", "sim"]}


def test_http_full_labeling_flow(client):
    sid = _create_http(client)
    seen = []
    for value in (1.0, 2.0, 0.0):
        nxt = client.get(f"/sessions/{sid}/next").json()
        assert nxt["status"] == "pending"
        again = client.get(f"/sessions/{sid}/next").json()
        assert again == nxt
        resp = client.post(
            f"/sessions/{sid}/labels", json={"unit_id": nxt["unit_id"], "value": value}
        )
        assert resp.status_code == 200
        seen.append(resp.json())
    points = client.get(f"/sessions/{sid}/trajectory").json()["points"]
    assert points == seen
    listing = client.get("/sessions").json()["sessions"]
    assert any(s["session"] == sid and s["t"] == 3 for s in listing)


def test_http_error_shapes(client):
    assert client.get("/sessions/nope/trajectory").status_code == 404
    body = client.get("/sessions/nope/trajectory").json()
    assert set(body) == {"code", "message"} and body["code"] == "not_found"

    resp = client.post("/sessions", json={"pool": "missing"})
    assert resp.status_code == 404

    resp = client.post("/sessions", json={"pool": "sim"})
    assert resp.status_code == 400
    assert resp.json()["code"] == "validation"

    sid = _create_http(client)
    nxt = client.get(f"/sessions/{sid}/next").json()
    resp = client.post(f"/sessions/{sid}/labels", json={"unit_id": nxt["unit_id"], "value": -1})
    assert resp.status_code == 400 and resp.json()["code"] == "validation"
    wrong = "u0" if nxt["unit_id"] != "u0" else "u1"
    resp = client.post(f"/sessions/{sid}/labels", json={"unit_id": wrong, "value": 1})
    assert resp.status_code == 409 and resp.json()["code"] == "conflict"
    resp = client.post(f"/sessions/{sid}/predictions", json={"table": {f"u{i}": 1.0 for i in range(6)}})
    assert resp.status_code == 409  # pending sample


def test_http_prediction_coverage_validation(client):
    sid = _create_http(client)
    resp = client.post(f"/sessions/{sid}/predictions", json={"table": {"u0": 1.0}})
    assert resp.status_code == 400 and resp.json()["code"] == "validation"


def test_http_missing_predictions_without_fallback(client):
    resp = client.post("/sessions", json={"pool": "demo", "uniform_fallback": False})
    assert resp.status_code == 400
    assert resp.json()["code"] == "validation"


def test_http_exhaustion_status(client):
    sid = _create_http(client)
    for _ in range(6):
        nxt = client.get(f"/sessions/{sid}/next").json()
        client.post(f"/sessions/{sid}/labels", json={"unit_id": nxt["unit_id"], "value": 2.0})
    nxt = client.get(f"/sessions/{sid}/next").json()
    assert nxt["status"] == "exhausted"
    assert nxt["report"]["estimate"] == pytest.approx(12.0)  # six labels of 2.0, exact at the end
    assert nxt["report"]["var_cond"] == 0.0


def test_http_export_replays(client):
    sid = _create_http(client, predictions={f"u{i}": float(i + 1) for i in range(6)})
    for value in (3.0, 1.0):
        nxt = client.get(f"/sessions/{sid}/next").json()
        client.post(f"/sessions/{sid}/labels", json={"unit_id": nxt["unit_id"], "value": value})
    log = client.get(f"/sessions/{sid}/export").text
    points = client.get(f"/sessions/{sid}/trajectory").json()["points"]
    replayed = [r.as_dict() for r in SessionStore.replay_log(log)]
    assert json.loads(json.dumps(replayed)) == points
