"""HTTP facade over annotation sessions and mesh scoring.

Sessions are event-sourced: every state change is fsynced to a per-session
JSON-lines log before the client sees an acknowledgment, and startup
recovery is a deterministic replay of those logs. Snapshots are written as
a convenience for humans poking at the data directory; replay never reads
them.
"""

from __future__ import annotations

import json
import re
import threading
import uuid
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles

from . import annotation as ann
from .checkpoint import restore_model
from .config import ConfigError, ServiceConfig
from .dataset import load_dataset
from .geometry import MeshParseError, MeshValidationError, parse_mesh_bytes
from .model import RealismModel

MESH_ID_RE = re.compile(r"^[A-Za-z0-9._-]{1,128}$")
_CONTENT_TYPES = {".obj": "text/plain; charset=utf-8", ".ply": "application/octet-stream"}


class MeshStore:
    """Flat directory of mesh files addressed by id."""

    def __init__(self, root: Path):
        self.root = root
        root.mkdir(parents=True, exist_ok=True)

    def _check_id(self, mesh_id: str):
        if not MESH_ID_RE.match(mesh_id):
            raise ValueError(f"bad mesh id {mesh_id!r}")

    def put(self, mesh_id: str, data: bytes) -> str:
        self._check_id(mesh_id)
        ext = ".ply" if data.lstrip()[:3] == b"ply" else ".obj"
        path = self.root / f"{mesh_id}{ext}"
        other = self.root / f"{mesh_id}{'.obj' if ext == '.ply' else '.ply'}"
        if other.exists():
            other.unlink()
        path.write_bytes(data)
        return path.name

    def get(self, mesh_id: str) -> tuple[bytes, str] | None:
        self._check_id(mesh_id)
        for ext, ctype in _CONTENT_TYPES.items():
            path = self.root / f"{mesh_id}{ext}"
            if path.exists():
                return path.read_bytes(), ctype
        return None


class ServiceState:
    """In-memory sessions backed by per-session event logs."""

    def __init__(self, cfg: ServiceConfig):
        self.cfg = cfg
        self.session_dir = Path(cfg.session_dir)
        self.session_dir.mkdir(parents=True, exist_ok=True)
        self.dataset_dir = Path(cfg.dataset_dir)
        self.meshes = MeshStore(Path(cfg.mesh_dir))
        self.sessions: dict[str, ann.AnnotationSession] = {}
        self.locks: dict[str, threading.Lock] = {}
        self.create_keys: dict[str, str] = {}       # idempotency key -> session id
        self.choice_keys: dict[tuple[str, str], dict] = {}  # (session, key) -> response body
        self.models: dict[str, RealismModel] = {}
        self._lock = threading.Lock()
        self._recover()
        self._load_checkpoints()

    def _recover(self):
        for log in sorted(self.session_dir.glob("*.jsonl")):
            events = ann.read_events(log)
            if not events:
                continue
            session = ann.replay_events(events)
            self.sessions[session.session_id] = session
            self.locks[session.session_id] = threading.Lock()
            key = events[0].get("idempotency_key")
            if key:
                self.create_keys[key] = session.session_id

    def _load_checkpoints(self):
        for name, path in self.cfg.checkpoints.items():
            if not Path(path).exists():
                raise ConfigError(f"checkpoint {name!r}: file {path} does not exist")
            model, _, _ = restore_model(path)
            model.eval()
            self.models[name] = model

    def log_path(self, session_id: str) -> Path:
        return self.session_dir / f"{session_id}.jsonl"

    def lock_for(self, session_id: str) -> threading.Lock:
        with self._lock:
            return self.locks.setdefault(session_id, threading.Lock())

    def snapshot(self, session: ann.AnnotationSession):
        # informational only; recovery always replays the event log
        snap = {
            "session": session.session_id,
            "object_id": session.object_id,
            "round": session.round_index,
            "wins": session.wins,
            "rounds_played": session.rounds_played,
            "recorded": len(session.history),
        }
        path = self.session_dir / f"{session.session_id}.snapshot.json"
        path.write_text(json.dumps(snap, indent=2) + "\n", encoding="utf-8")


def _error(status: int, detail: str, **extra) -> JSONResponse:
    return JSONResponse({"detail": detail, **extra}, status_code=status)


def _session_wire(session: ann.AnnotationSession) -> dict:
    complete = session.is_complete()
    outstanding = session.outstanding()
    return {
        "session_id": session.session_id,
        "object_id": session.object_id,
        "mesh_ids": list(session.mesh_ids),
        "round": session.round_index,
        "total_rounds": ann.NUM_ROUNDS,
        "recorded": len(session.history),
        "pending_pairs": len(outstanding.pairs) if outstanding else 0,
        "complete": complete,
    }


def _pairing_wire(session: ann.AnnotationSession, issued: ann.RoundPairing) -> dict:
    body = {
        "round": issued.round,
        "total_rounds": ann.NUM_ROUNDS,
        "pairs": [{"left_mesh": a, "right_mesh": b} for a, b in issued.pairs],
    }
    if issued.bye is not None:
        body["bye"] = issued.bye
    if issued.extra_byes:
        body["extra_byes"] = list(issued.extra_byes)
    return body


def create_app(cfg: ServiceConfig) -> FastAPI:
    cfg.validate()
    app = FastAPI(title="shaperealism", docs_url=None, redoc_url=None)
    state = ServiceState(cfg)
    app.state.service = state

    if cfg.cors_origins:
        app.add_middleware(
            CORSMiddleware, allow_origins=list(cfg.cors_origins),
            allow_methods=["*"], allow_headers=["*"],
        )

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok", "sessions": len(state.sessions)}

    # sessions --------------------------------------------------------------

    @app.post("/sessions")
    async def create_session(request: Request):
        try:
            body = await request.json()
        except json.JSONDecodeError:
            return _error(400, "request body is not valid JSON")
        if not isinstance(body, dict):
            return _error(400, "request body must be a JSON object")
        key = request.headers.get("Idempotency-Key") or body.get("idempotency_key")
        if key and key in state.create_keys:
            return JSONResponse({"session_id": state.create_keys[key], "replayed": True})
        object_id = body.get("object_id")
        mesh_ids = body.get("mesh_ids")
        if not isinstance(object_id, str) or not object_id:
            return _error(400, "object_id must be a non-empty string")
        if not isinstance(mesh_ids, list) or not all(isinstance(m, str) for m in mesh_ids):
            return _error(400, "mesh_ids must be a list of strings")
        seed = body.get("seed", 0)
        if not isinstance(seed, int):
            return _error(400, "seed must be an integer")
        subject_id = body.get("subject_id")
        if subject_id is not None and not isinstance(subject_id, str):
            return _error(400, "subject_id must be a string")
        session_id = uuid.uuid4().hex
        try:
            session = ann.create_session(object_id, mesh_ids, seed,
                                         session_id=session_id, subject_id=subject_id)
        except ann.AnnotationError as exc:
            return _error(400, str(exc))
        with state._lock:
            ann.append_event(state.log_path(session_id), ann.created_event(session, key))
            state.sessions[session_id] = session
            state.locks[session_id] = threading.Lock()
            if key:
                state.create_keys[key] = session_id
        return JSONResponse({"session_id": session_id}, status_code=201)

    @app.get("/sessions/{session_id}")
    async def get_session(session_id: str):
        session = state.sessions.get(session_id)
        if session is None:
            return _error(404, f"unknown session {session_id!r}")
        with state.lock_for(session_id):
            return _session_wire(session)

    @app.get("/sessions/{session_id}/next")
    async def get_next(session_id: str):
        session = state.sessions.get(session_id)
        if session is None:
            return _error(404, f"unknown session {session_id!r}")
        with state.lock_for(session_id):
            outstanding = session.outstanding()
            if outstanding is not None:
                return _pairing_wire(session, outstanding)
            if session.is_complete():
                return _error(409, f"session {session_id!r} is complete")
            issued = session.next_pairings()
            return _pairing_wire(session, issued)

    @app.post("/sessions/{session_id}/choice")
    async def post_choice(session_id: str, request: Request):
        session = state.sessions.get(session_id)
        if session is None:
            return _error(404, f"unknown session {session_id!r}")
        try:
            body = await request.json()
        except json.JSONDecodeError:
            return _error(400, "request body is not valid JSON")
        left, right, winner = body.get("left_mesh"), body.get("right_mesh"), body.get("winner")
        if not all(isinstance(v, str) and v for v in (left, right, winner)):
            return _error(400, "left_mesh, right_mesh, and winner must be non-empty strings")
        key = request.headers.get("Idempotency-Key") or body.get("idempotency_key")
        with state.lock_for(session_id):
            if key and (session_id, key) in state.choice_keys:
                return JSONResponse({**state.choice_keys[(session_id, key)], "replayed": True})
            pair = (left, right)
            fs = frozenset(pair)
            # validate first so invalid requests never reach the log
            if fs not in {frozenset(p) for p in session.pending_pairs}:
                if fs in session.history:
                    return _error(409, "choice already recorded for this pair",
                                  duplicate=True, winner=session.outcomes[fs])
                return _error(409, f"pair ({left}, {right}) is not outstanding")
            if winner not in fs:
                return _error(422, f"winner {winner!r} is not in pair ({left}, {right})")
            ann.append_event(state.log_path(session_id), ann.choice_event(session, pair, winner))
            session.record_choice(pair, winner)
            remaining = len(session.pending_pairs)
            if remaining == 0:
                state.snapshot(session)
            response = {
                "accepted": True,
                "round": session.round_index,
                "remaining_pairs": remaining,
                "complete": session.is_complete(),
            }
            if key:
                state.choice_keys[(session_id, key)] = response
            return JSONResponse(response)

    @app.get("/sessions/{session_id}/export")
    async def export_session(session_id: str):
        session = state.sessions.get(session_id)
        if session is None:
            return _error(404, f"unknown session {session_id!r}")
        with state.lock_for(session_id):
            if not session.is_complete():
                return _error(409, f"session {session_id!r} is not complete")
            records = session.session_scores()
        return {
            "session_id": session_id,
            "object_id": session.object_id,
            "records": [
                {"mesh_id": r.mesh_id, "subject_id": r.subject_id, "wins": r.wins,
                 "rounds_played": r.rounds_played, "score": r.score}
                for r in records
            ],
        }

    @app.get("/datasets/{name}")
    async def get_dataset(name: str):
        if not MESH_ID_RE.match(name):
            return _error(404, f"unknown dataset {name!r}")
        path = state.dataset_dir / f"{name}.json"
        if not path.exists():
            return _error(404, f"unknown dataset {name!r}")
        load_dataset(path)  # refuse to serve a file that no longer validates
        return JSONResponse(json.loads(path.read_text(encoding="utf-8")),
                            media_type="application/json")

    # meshes ----------------------------------------------------------------

    @app.put("/meshes/{mesh_id}")
    async def put_mesh(mesh_id: str, request: Request):
        if not MESH_ID_RE.match(mesh_id):
            return _error(400, f"mesh id must match {MESH_ID_RE.pattern}")
        data = await request.body()
        if len(data) > cfg.max_upload_bytes:
            return _error(413, f"mesh exceeds {cfg.max_upload_bytes} bytes")
        if not data:
            return _error(422, "empty mesh body")
        try:
            parse_mesh_bytes(data, name=mesh_id)
        except (MeshParseError, MeshValidationError) as exc:
            return _error(422, f"unparseable mesh: {exc}")
        filename = state.meshes.put(mesh_id, data)
        return JSONResponse({"mesh_id": mesh_id, "file": filename}, status_code=201)

    @app.get("/meshes/{mesh_id}")
    async def get_mesh(mesh_id: str):
        if not MESH_ID_RE.match(mesh_id):
            return _error(404, f"unknown mesh {mesh_id!r}")
        found = state.meshes.get(mesh_id)
        if found is None:
            return _error(404, f"unknown mesh {mesh_id!r}")
        data, ctype = found
        return Response(content=data, media_type=ctype)

    # scoring ---------------------------------------------------------------

    @app.post("/score")
    async def score(request: Request, checkpoint: str = "default"):
        model = state.models.get(checkpoint)
        if model is None:
            return _error(404, f"unknown checkpoint {checkpoint!r}; "
                               f"loaded: {sorted(state.models) or 'none'}")
        data = await request.body()
        if len(data) > cfg.max_upload_bytes:
            return _error(413, f"mesh exceeds {cfg.max_upload_bytes} bytes")
        try:
            mesh = parse_mesh_bytes(data)
        except (MeshParseError, MeshValidationError) as exc:
            return _error(422, f"unparseable mesh: {exc}")
        try:
            value = model.score_mesh(mesh)
        except ValueError as exc:
            return _error(422, f"unscorable mesh: {exc}")
        return {"realism": value, "checkpoint": checkpoint}

    if cfg.ui_dir and Path(cfg.ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=cfg.ui_dir, html=True), name="ui")

    return app
