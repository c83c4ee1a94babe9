"""Session service: live-mode runs behind an HTTP+JSON API.

One suspended run per session, one pending sample at a time. Every accepted
mutation appends to a per-session JSON-lines event log; session state is a
pure fold over those events, which is what makes restarts and replays exact.
"""

import json
import os
import threading
import uuid
from datetime import datetime, timezone
from pathlib import Path

from .errors import (
    ActiveMeasureError,
    ExhaustedError,
    LabelError,
    ModeError,
    PendingConflictError,
    ReplayMismatchError,
)
from .estimator import ActiveRun, EstimateReport
from .pool import Unit, UnitPool, load_pool
from .proposal import ClampPolicy, PredictionTable
from .weights import WeightScheme


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class _Session:
    def __init__(self, sid: str, run: ActiveRun, log_path: Path, created: str):
        self.id = sid
        self.run = run
        self.log_path = log_path
        self.created = created
        self.updated = created
        self.lock = threading.Lock()


class SessionStore:
    """Creates, persists, restores, and replays live labeling sessions."""

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._sessions: dict[str, _Session] = {}
        self._registry_lock = threading.Lock()
        for log_path in sorted(self.data_dir.glob("*.jsonl")):
            sid = log_path.stem
            run, created, updated = self._fold_log(log_path.read_text(encoding="utf-8"))
            session = _Session(sid, run, log_path, created)
            session.updated = updated
            self._sessions[sid] = session

    # -- event plumbing ----------------------------------------------------

    def _append(self, session: _Session, event: dict):
        event = {"ts": _now(), **event}
        with open(session.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        session.updated = event["ts"]

    @staticmethod
    def _build_run(config: dict, pool_records: list, predictions: dict | None) -> ActiveRun:
        pool = UnitPool([Unit(uid, ref, None) for uid, ref in pool_records])
        scheme = WeightScheme(config["scheme"], config.get("gamma"))
        clamp = ClampPolicy(config["clamp"]["mode"], config["clamp"]["value"])
        return ActiveRun(
            pool,
            scheme,
            clamp,
            seed=config["seed"],
            predictions=PredictionTable(predictions) if predictions else None,
            level=config["level"],
            uniform_fallback=config.get("uniform_fallback", True),
        )

    @classmethod
    def _fold_log(cls, text: str) -> tuple[ActiveRun, str, str]:
        run = None
        created = updated = ""
        for line_no, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                event = json.loads(line)
            except json.JSONDecodeError:
                raise ReplayMismatchError(f"line {line_no}: malformed event record") from None
            kind = event.get("event")
            updated = event.get("ts", updated)
            if kind == "created":
                run = cls._build_run(event["config"], event["pool"], event.get("predictions"))
                created = event.get("ts", "")
            elif run is None:
                raise ReplayMismatchError(f"line {line_no}: event before session creation")
            elif kind == "sampled":
                uid, _, _ = run.next_sample()
                if uid != event["unit"]:
                    raise ReplayMismatchError(
                        f"line {line_no}: log says unit {event['unit']!r} was sampled, run drew {uid!r}"
                    )
            elif kind == "labeled":
                try:
                    run.submit_label(event["unit"], event["value"])
                except ActiveMeasureError as exc:
                    raise ReplayMismatchError(f"line {line_no}: {exc}") from exc
            elif kind == "predictions":
                run.push_predictions(PredictionTable(event["table"]))
            else:
                raise ReplayMismatchError(f"line {line_no}: unknown event {kind!r}")
        if run is None:
            raise ReplayMismatchError("log contains no creation event")
        return run, created, updated

    # -- session API ---------------------------------------------------------

    def create(
        self,
        pool: UnitPool,
        scheme: WeightScheme,
        clamp: ClampPolicy,
        level: float = 0.95,
        seed: int = 0,
        predictions: dict | None = None,
        uniform_fallback: bool = True,
        pool_name: str | None = None,
    ) -> str:
        if pool.simulation_mode:
            raise ModeError("sessions label live pools; this pool already carries ground truth")
        config = {
            "scheme": scheme.kind,
            "gamma": scheme.gamma,
            "clamp": {"mode": clamp.mode, "value": clamp.value},
            "level": level,
            "seed": seed,
            "uniform_fallback": uniform_fallback,
            "pool_name": pool_name,
        }
        pool_records = [[u.id, u.payload_ref] for u in pool.units]
        run = self._build_run(config, pool_records, predictions)
        sid = uuid.uuid4().hex[:16]
        session = _Session(sid, run, self.data_dir / f"{sid}.jsonl", _now())
        self._append(
            session,
            {
                "event": "created",
                "session": sid,
                "config": config,
                "pool": pool_records,
                "predictions": predictions,
            },
        )
        with self._registry_lock:
            self._sessions[sid] = session
        return sid

    def _get(self, sid: str) -> _Session:
        try:
            return self._sessions[sid]
        except KeyError:
            raise KeyError(f"unknown session {sid!r}") from None

    def next_sample(self, sid: str) -> tuple[str, str, float]:
        session = self._get(sid)
        with session.lock:
            if session.run.pending is not None:
                return session.run.pending
            uid, ref, q = session.run.next_sample()
            self._append(session, {"event": "sampled", "t": session.run.t + 1, "unit": uid, "q": q})
            return uid, ref, q

    def submit_label(self, sid: str, unit_id: str, value: float) -> EstimateReport:
        session = self._get(sid)
        with session.lock:
            report = session.run.submit_label(unit_id, value)
            self._append(
                session,
                {"event": "labeled", "t": report.t, "unit": unit_id, "value": float(value)},
            )
            return report

    def push_predictions(self, sid: str, table: dict):
        session = self._get(sid)
        with session.lock:
            session.run.push_predictions(PredictionTable(table))
            self._append(session, {"event": "predictions", "table": dict(table)})

    def trajectory(self, sid: str) -> list[EstimateReport]:
        return self._get(sid).run.trajectory()

    def export_log(self, sid: str) -> str:
        return self._get(sid).log_path.read_text(encoding="utf-8")

    def info(self, sid: str) -> dict:
        session = self._get(sid)
        run = session.run
        pending = run.pending
        return {
            "session": sid,
            "t": run.t,
            "n_units": run.pool.N,
            "exhausted": run.exhausted,
            "pending_unit": pending[0] if pending else None,
            "created": session.created,
            "updated": session.updated,
        }

    def session_ids(self) -> list[str]:
        return sorted(self._sessions)

    @classmethod
    def replay_log(cls, text: str) -> list[EstimateReport]:
        """Rebuild a session from its event log and return its trajectory."""
        run, _, _ = cls._fold_log(text)
        return run.trajectory()


def create_app(pool_dir: str | Path | None = None, data_dir: str | Path = "sessions", ui_dir: str | Path | None = None):
    """FastAPI app exposing the session workflow plus static files for the console."""
    from fastapi import FastAPI, Request
    from fastapi.exceptions import RequestValidationError
    from fastapi.responses import JSONResponse, PlainTextResponse
    from pydantic import BaseModel, Field

    store = SessionStore(data_dir)
    pool_root = Path(pool_dir) if pool_dir else None
    app = FastAPI(title="active-measure session service")
    app.state.store = store

    def _error(status: int, code: str, message: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"code": code, "message": message})

    @app.exception_handler(RequestValidationError)
    async def _on_invalid(request: Request, exc: RequestValidationError):
        return _error(400, "validation", str(exc.errors()[:1]))

    @app.exception_handler(KeyError)
    async def _on_missing(request: Request, exc: KeyError):
        return _error(404, "not_found", str(exc).strip("'\""))

    @app.exception_handler(PendingConflictError)
    async def _on_conflict(request: Request, exc: PendingConflictError):
        return _error(409, "conflict", str(exc))

    @app.exception_handler(ExhaustedError)
    async def _on_exhausted(request: Request, exc: ExhaustedError):
        return _error(409, "exhausted", str(exc))

    @app.exception_handler(ActiveMeasureError)
    async def _on_domain_error(request: Request, exc: ActiveMeasureError):
        return _error(400, "validation", str(exc))

    class CreateSession(BaseModel):
        pool: str
        weights: str = "comb"
        gamma: float | None = None
        clamp_mode: str = "floor"
        clamp_value: float = 1.0
        level: float = Field(default=0.95, gt=0, lt=1)
        seed: int = 0
        predictions: dict[str, float] | None = None
        uniform_fallback: bool = True

    class SubmitLabel(BaseModel):
        unit_id: str
        value: float

    class PushPredictions(BaseModel):
        table: dict[str, float]

    def _load_named_pool(name: str) -> UnitPool:
        if pool_root is None:
            raise KeyError("no pool directory configured")
        for candidate in (pool_root / name, pool_root / f"{name}.pool", pool_root / f"{name}.tsv"):
            if candidate.is_file():
                return load_pool(candidate)
        raise KeyError(f"unknown pool {name!r}")

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/pools")
    def pools():
        if pool_root is None:
            return {"pools": []}
        names = sorted({p.stem for p in pool_root.iterdir() if p.suffix in (".pool", ".tsv")})
        return {"pools": names}

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSession):
        pool = _load_named_pool(body.pool)
        try:
            scheme = WeightScheme(body.weights, body.gamma)
            clamp = ClampPolicy(body.clamp_mode, body.clamp_value)
        except ValueError as exc:
            raise LabelError(str(exc)) from exc  # rendered as a 400 validation error
        sid = store.create(
            pool, scheme, clamp, level=body.level, seed=body.seed,
            predictions=body.predictions, uniform_fallback=body.uniform_fallback,
            pool_name=body.pool,
        )
        return store.info(sid)

    @app.get("/sessions")
    def list_sessions():
        return {"sessions": [store.info(sid) for sid in store.session_ids()]}

    @app.get("/sessions/{sid}")
    def session_info(sid: str):
        return store.info(sid)

    @app.get("/sessions/{sid}/next")
    def next_sample(sid: str):
        try:
            uid, ref, q = store.next_sample(sid)
        except ExhaustedError:
            report = store._get(sid).run.report().as_dict()
            return {"status": "exhausted", "report": report}
        return {"status": "pending", "unit_id": uid, "payload_ref": ref, "q": q}

    @app.post("/sessions/{sid}/labels")
    def submit_label(sid: str, body: SubmitLabel):
        report = store.submit_label(sid, body.unit_id, body.value)
        return report.as_dict()

    @app.get("/sessions/{sid}/trajectory")
    def trajectory(sid: str):
        return {"points": [r.as_dict() for r in store.trajectory(sid)]}

    @app.post("/sessions/{sid}/predictions")
    def push_predictions(sid: str, body: PushPredictions):
        store.push_predictions(sid, body.table)
        return {"ok": True}

    @app.get("/sessions/{sid}/export")
    def export_log(sid: str):
        return PlainTextResponse(store.export_log(sid), media_type="application/x-ndjson")

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
