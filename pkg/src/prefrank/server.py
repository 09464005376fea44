"""HTTP service exposing the ranking engine to evaluators and monitors.

All engine mutations are serialized through one lock; every event is appended
to the log (flushed and fsynced) before the response that acknowledges it
leaves the service. Restarting from the log file reproduces the exact state.
"""

from __future__ import annotations

import threading
import time
from pathlib import Path
from typing import Callable, Literal

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import FileResponse, PlainTextResponse, RedirectResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .config import ExperimentConfig
from .engine import replay_events
from .eventlog import EventLogWriter, audit_records, read_log
from .report import build_rows, summarize
from .stats import anytime_interval, error_bias, hoeffding_interval


class ServiceError(Exception):
    status_code = 500


class NotLoadedError(ServiceError):
    status_code = 503


class BusyTokenError(ServiceError):
    status_code = 409


class DuplicateSubmitError(ServiceError):
    status_code = 409


class UnknownRequestError(ServiceError):
    status_code = 404


class ExpiredRequestError(ServiceError):
    status_code = 410


class ExperimentService:
    """One experiment: engine + durable log + evaluator sessions."""

    def __init__(
        self,
        log_path: str | Path,
        config: ExperimentConfig | None = None,
        *,
        now_fn: Callable[[], float] = time.time,
    ) -> None:
        self._lock = threading.RLock()
        self._now = now_fn
        self._pending: list[tuple[str, dict]] = []
        log_path = Path(log_path)

        if log_path.exists() and log_path.stat().st_size > 0:
            header_config, records = read_log(log_path)
            audit_records(records)
            if config is None:
                config = ExperimentConfig.from_dict(header_config)
            engine = config.build_engine()
            replay_events(engine, ((r.kind, r.payload) for r in records))
            self.engine = engine
            self._writer = EventLogWriter(
                log_path, config.to_dict(), resume_seq=records[-1].seq if records else 0
            )
            self.engine._sink = self._collect
            now = self._now()
            for rid, req in list(self.engine.outstanding.items()):
                if now >= req.issued_at + req.ttl:
                    self.engine.expire(rid, now)
            self._flush(now)
        else:
            if config is None:
                raise ValueError("a fresh experiment needs a config")
            self._writer = EventLogWriter(log_path, config.to_dict())
            self.engine = config.build_engine(sink=self._collect)
        self.config = config
        self._sessions: dict[str, str] = {
            req.token: rid for rid, req in self.engine.outstanding.items()
        }

    # -- log plumbing -------------------------------------------------------

    def _collect(self, kind: str, payload: dict) -> None:
        self._pending.append((kind, payload))

    def _flush(self, ts: float) -> None:
        for kind, payload in self._pending:
            self._writer.append(kind, payload, ts)
        self._pending.clear()

    def _sweep_expired(self, now: float) -> None:
        for rid, req in list(self.engine.outstanding.items()):
            if now >= req.issued_at + req.ttl:
                self.engine.expire(rid, now)
                if self._sessions.get(req.token) == rid:
                    del self._sessions[req.token]

    @staticmethod
    def _media_url(stimulus: str) -> str:
        return f"/media/{stimulus}"

    # -- evaluator API --------------------------------------------------------

    def join(self, token: str) -> dict:
        if not token:
            raise UnknownRequestError("evaluator_token must be non-empty")
        with self._lock:
            now = self._now()
            self._sweep_expired(now)
            if token in self._sessions:
                raise BusyTokenError(f"token already holds request {self._sessions[token]}")
            request = self.engine.join(token, now)
            self._writer.append(
                "Join",
                {
                    "token": token,
                    "result": "done" if request is None else "issued",
                    "request_id": None if request is None else request.request_id,
                },
                now,
            )
            self._flush(now)
            if request is None:
                return {"done": True}
            self._sessions[token] = request.request_id
            return {
                "request_id": request.request_id,
                "pair": {"left": request.left, "right": request.right},
                "stimuli": [
                    self._media_url(request.left_stimulus),
                    self._media_url(request.right_stimulus),
                ],
                "presentation_order": "left_first" if request.left_first else "right_first",
            }

    def submit(self, token: str, request_id: str, preference: str) -> dict:
        if preference not in ("left", "right"):
            raise UnknownRequestError(f"preference must be left or right, got {preference!r}")
        with self._lock:
            now = self._now()
            request = self.engine.outstanding.get(request_id)
            if request is None:
                if self.engine.is_consumed(request_id):
                    raise DuplicateSubmitError(f"request {request_id} already submitted")
                raise UnknownRequestError(f"unknown request {request_id}")
            if request.token != token:
                raise UnknownRequestError(f"request {request_id} not owned by this token")
            if now >= request.issued_at + request.ttl:
                self.engine.expire(request_id, now)
                self._sessions.pop(token, None)
                self._flush(now)
                raise ExpiredRequestError(f"request {request_id} expired")
            result = self.engine.submit(request_id, preference == "left", now)
            self._flush(now)
            self._sessions.pop(token, None)
            response = {
                "accepted": result.accepted,
                "determined": result.status in ("determined", "converged"),
                "converged": result.status == "converged",
            }
            if result.determination is not None:
                response["winner"] = result.determination.winner
            return response

    # -- monitor / operator API -----------------------------------------------

    def status(self) -> dict:
        with self._lock:
            engine = self.engine
            delta = engine.accuracy.delta
            order, complete = engine.order()
            pairs = []
            for p in sorted(engine.pairs.values(), key=lambda p: p.created_seq):
                interval = anytime_interval(p.received, delta)
                hoeff = hoeffding_interval(p.received, delta) if p.received > 0 else None
                pairs.append(
                    {
                        "pair": p.key,
                        "left": p.left,
                        "right": p.right,
                        "status": p.status,
                        "wins": p.wins,
                        "received": p.received,
                        "requested": p.requested,
                        "win_rate": p.win_rate,
                        "interval": interval,
                        "hoeffding_interval": hoeff,
                        "error_bias": error_bias(interval, p.win_rate),
                        "hoeffding_error_bias": error_bias(hoeff, p.win_rate)
                        if hoeff is not None
                        else None,
                    }
                )
            return {
                "experiment_id": self.config.experiment_id,
                "phase": engine.phase,
                "submitted_total": engine.submitted_total,
                "budget": engine.budget,
                "outstanding_count": len(engine.outstanding),
                "converged_at": engine.converged_at,
                "max_comparisons": engine.m,
                "current_order": order,
                "complete": complete,
                "pairs": pairs,
            }

    def results(self, confidence: float = 0.95) -> dict:
        with self._lock:
            rows = build_rows(self.engine, confidence)
            summary = summarize(self.engine)
            return {
                "experiment_id": self.config.experiment_id,
                "partial": not summary["complete"],
                "order": summary["order"],
                "summary": summary,
                "confidence": confidence,
                "pairs": [
                    {
                        "pair": r.pair,
                        "left": r.left,
                        "right": r.right,
                        "final_received": r.final_received,
                        "final_win_rate": r.final_win_rate,
                        "determined_received": r.determined_received,
                        "determined_win_rate": r.determined_win_rate,
                        "winner": r.winner,
                        "interval": r.interval,
                        "hoeffding_interval": r.hoeffding,
                        "error_bias": r.bias,
                        "hoeffding_error_bias": r.hoeffding_bias,
                        "p_value": r.p_value,
                        "significant": r.significant,
                        "ci_low": r.ci_low,
                        "ci_high": r.ci_high,
                        "termination": r.termination,
                        "reversal": r.reversal,
                    }
                    for r in rows
                ],
            }

    def export_text(self) -> str:
        with self._lock:
            return Path(self._writer.path).read_text(encoding="utf-8")

    def close(self) -> None:
        self._writer.close()


class JoinBody(BaseModel):
    evaluator_token: str


class SubmitBody(BaseModel):
    evaluator_token: str
    request_id: str
    preference: Literal["left", "right"]


class LoadBody(BaseModel):
    config: dict
    log_path: str | None = None


def create_app(
    service: ExperimentService | None = None,
    *,
    admin_token: str | None = None,
    web_root: str | Path | None = None,
) -> FastAPI:
    """Wire the service into HTTP endpoints. `admin_token=None` disables the guard."""
    app = FastAPI(title="prefrank")
    state: dict[str, ExperimentService | None] = {"service": service}

    def current() -> ExperimentService:
        svc = state["service"]
        if svc is None:
            raise HTTPException(status_code=503, detail="no experiment loaded")
        return svc

    def require_admin(request: Request) -> None:
        if admin_token is None:
            return
        header = request.headers.get("x-admin-token") or ""
        bearer = request.headers.get("authorization") or ""
        if header == admin_token or bearer == f"Bearer {admin_token}":
            return
        raise HTTPException(status_code=401, detail="admin token required")

    def run(fn, *args):
        try:
            return fn(*args)
        except ServiceError as exc:
            raise HTTPException(status_code=exc.status_code, detail=str(exc)) from exc

    @app.post("/api/join")
    def join(body: JoinBody):
        return run(current().join, body.evaluator_token)

    @app.post("/api/submit")
    def submit(body: SubmitBody):
        return run(current().submit, body.evaluator_token, body.request_id, body.preference)

    @app.get("/api/status")
    def status():
        return current().status()

    @app.get("/api/results")
    def results(request: Request, confidence: float = 0.95):
        require_admin(request)
        return current().results(confidence)

    @app.get("/api/export")
    def export(request: Request):
        require_admin(request)
        return PlainTextResponse(current().export_text())

    @app.post("/api/admin/load")
    def load(body: LoadBody, request: Request):
        require_admin(request)
        config = ExperimentConfig.from_dict(body.config)
        log_path = body.log_path or f"{config.experiment_id}.log"
        old = state["service"]
        state["service"] = ExperimentService(log_path, config)
        if old is not None:
            old.close()
        return {"loaded": config.experiment_id, "log_path": str(log_path)}

    @app.post("/api/admin/reset")
    def reset(request: Request):
        require_admin(request)
        old = state["service"]
        state["service"] = None
        if old is not None:
            old.close()
        return {"reset": True}

    @app.get("/media/{stimulus:path}")
    def media(stimulus: str):
        svc = current()
        root = svc.config.media_root
        if root is None:
            raise HTTPException(status_code=404, detail="no media root configured")
        path = (Path(root) / stimulus).resolve()
        if not str(path).startswith(str(Path(root).resolve())):
            raise HTTPException(status_code=404, detail="bad path")
        if not path.is_file():
            raise HTTPException(status_code=404, detail=f"no such stimulus {stimulus}")
        return FileResponse(path)

    if web_root is not None and Path(web_root).is_dir():
        app.mount("/ui", StaticFiles(directory=str(web_root), html=True), name="ui")

        @app.get("/")
        def index():
            return RedirectResponse(url="/ui/")

    return app
