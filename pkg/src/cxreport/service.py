"""Blind-review protocol: shuffled mixed-origin sessions, 1-5 scores, distributions.

Raters never see report origin; it lives only in the event log and the
post-hoc distribution view.  Persistence is an append-only JSONL event log per
session with the in-memory index rebuilt on startup.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response

__all__ = ["ReviewStore", "ReviewItem", "ScoreRecord", "ServiceError", "RUBRIC", "create_app"]

# Scoring standard shown verbatim to raters.
RUBRIC = {
    "5": "All findings identified and described accurately.",
    "4": "Major findings correct; minor issues outside the chest missed.",
    "3": "Major findings correct; minor issues inside the chest missed.",
    "2": "Major findings identified but described inaccurately.",
    "1": "Major findings missed or identified incorrectly.",
}

VALID_SCORES = (1, 2, 3, 4, 5)


class ServiceError(Exception):
    def __init__(self, code: str, message: str, status: int = 400):
        super().__init__(message)
        self.code = code
        self.message = message
        self.status = status


@dataclass(frozen=True)
class ReviewItem:
    item_id: str
    session_id: str
    sample_id: str
    image_path: str
    report: str
    origin: str  # "human" or "model"; never serialized into rater payloads

    def blinded(self) -> dict:
        return {
            "item_id": self.item_id,
            "report": self.report,
            "image_url": f"/items/{self.item_id}/image",
        }


@dataclass(frozen=True)
class ScoreRecord:
    item_id: str
    rater_id: str
    score: int
    timestamp: float


class _Session:
    def __init__(self, session_id: str, items: list[ReviewItem]):
        self.session_id = session_id
        self.items = items
        self.scores: dict[tuple[str, str], ScoreRecord] = {}


class ReviewStore:
    """Event-sourced session storage; a single writer lock serializes appends."""

    def __init__(self, state_dir, dataset_records=None, model=None):
        self.state_dir = Path(state_dir)
        (self.state_dir / "sessions").mkdir(parents=True, exist_ok=True)
        self.dataset_records = list(dataset_records or [])
        self.model = model
        self._sessions: dict[str, _Session] = {}
        self._items: dict[str, ReviewItem] = {}
        self._lock = threading.Lock()
        self._rebuild()

    def _log_path(self, session_id: str) -> Path:
        return self.state_dir / "sessions" / f"{session_id}.jsonl"

    def _rebuild(self) -> None:
        for path in sorted((self.state_dir / "sessions").glob("*.jsonl")):
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        self._apply(json.loads(line))

    def _apply(self, event: dict) -> None:
        if event["type"] == "session":
            items = [ReviewItem(session_id=event["session_id"], **obj) for obj in event["items"]]
            session = _Session(event["session_id"], items)
            self._sessions[session.session_id] = session
            for item in items:
                self._items[item.item_id] = item
        elif event["type"] == "score":
            item = self._items.get(event["item_id"])
            if item is None:
                return
            record = ScoreRecord(
                item_id=event["item_id"],
                rater_id=event["rater_id"],
                score=int(event["score"]),
                timestamp=float(event["timestamp"]),
            )
            self._sessions[item.session_id].scores[(record.item_id, record.rater_id)] = record

    def _append(self, session_id: str, event: dict) -> None:
        # durable before acknowledgement
        with open(self._log_path(session_id), "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    # --- protocol operations ---

    def create_session(self, n_model: int, n_human: int, seed: int) -> str:
        if self.model is None or not self.dataset_records:
            raise ServiceError("unavailable", "session creation needs a dataset and a checkpoint", 503)
        test_records = [r for r in self.dataset_records if r.split == "test"]
        if len(test_records) < n_model + n_human:
            raise ServiceError(
                "insufficient_samples",
                f"need {n_model + n_human} test samples, have {len(test_records)}",
                400,
            )
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(test_records))
        model_records = [test_records[i] for i in order[:n_model]]
        human_records = [test_records[i] for i in order[n_model : n_model + n_human]]
        if {r.id for r in model_records} & {r.id for r in human_records}:
            raise ServiceError("overlap", "model and human draws overlap", 500)

        session_id = uuid.uuid4().hex[:12]
        raw_items = []
        for record in model_records:
            text, _ = self.model.generate(record.load_image(), beam_width=3, n_best=1)[0]
            raw_items.append((record, text, "model"))
        for record in human_records:
            raw_items.append((record, record.report, "human"))
        shuffled = [raw_items[i] for i in rng.permutation(len(raw_items))]

        items = [
            {
                "item_id": f"{session_id}-{i:04d}",
                "sample_id": record.id,
                "image_path": str(record.root / record.image_file),
                "report": text,
                "origin": origin,
            }
            for i, (record, text, origin) in enumerate(shuffled)
        ]
        with self._lock:
            event = {"type": "session", "session_id": session_id, "seed": seed, "items": items}
            self._append(session_id, event)
            self._apply(event)
        return session_id

    def session(self, session_id: str) -> _Session:
        session = self._sessions.get(session_id)
        if session is None:
            raise ServiceError("not_found", f"unknown session {session_id}", 404)
        return session

    def blinded_items(self, session_id: str) -> list[dict]:
        return [item.blinded() for item in self.session(session_id).items]

    def image_bytes(self, item_id: str) -> bytes:
        item = self._items.get(item_id)
        if item is None:
            raise ServiceError("not_found", f"unknown item {item_id}", 404)
        return Path(item.image_path).read_bytes()

    def submit_score(self, item_id: str, rater_id: str, score: int) -> ScoreRecord:
        if score not in VALID_SCORES:
            raise ServiceError("invalid_score", f"score must be 1..5, got {score}", 422)
        if not rater_id or not str(rater_id).strip():
            raise ServiceError("invalid_rater", "rater_id must be a non-empty string", 422)
        item = self._items.get(item_id)
        if item is None:
            raise ServiceError("not_found", f"unknown item {item_id}", 404)
        record = ScoreRecord(item_id=item_id, rater_id=str(rater_id), score=int(score), timestamp=time.time())
        with self._lock:
            self._append(
                item.session_id,
                {
                    "type": "score",
                    "item_id": record.item_id,
                    "rater_id": record.rater_id,
                    "score": record.score,
                    "timestamp": record.timestamp,
                },
            )
            # idempotent upsert per (item, rater): replay keeps the latest
            self._sessions[item.session_id].scores[(record.item_id, record.rater_id)] = record
        return record

    def distribution(self, session_id: str) -> dict:
        session = self.session(session_id)
        origins = ("human", "model")

        def empty_hist():
            return {str(s): 0 for s in VALID_SCORES}

        pooled = {o: empty_hist() for o in origins}
        per_rater: dict[str, dict[str, dict[str, int]]] = {}
        origin_of = {item.item_id: item.origin for item in session.items}
        for record in session.scores.values():
            origin = origin_of[record.item_id]
            pooled[origin][str(record.score)] += 1
            rater_hist = per_rater.setdefault(record.rater_id, {o: empty_hist() for o in origins})
            rater_hist[origin][str(record.score)] += 1

        def summarize(hist: dict[str, int]) -> dict:
            total = sum(hist.values())
            percent = {s: (100.0 * c / total if total else 0.0) for s, c in hist.items()}
            acceptable = hist["4"] + hist["5"]
            return {
                "counts": hist,
                "total": total,
                "percent": percent,
                "acceptable_pct": 100.0 * acceptable / total if total else 0.0,
            }

        scored_items = {record.item_id for record in session.scores.values()}
        pending = sum(1 for item in session.items if item.item_id not in scored_items)
        return {
            "session_id": session_id,
            "per_origin": {o: summarize(pooled[o]) for o in origins},
            "per_rater": {
                rater: {o: summarize(h[o]) for o in origins} for rater, h in sorted(per_rater.items())
            },
            "pending": pending,
            "n_items": len(session.items),
        }


def create_app(store: ReviewStore, ui_dir=None):
    """FastAPI wrapper over the store; errors surface as JSON {code, message}."""
    app = FastAPI(title="cxreport review service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.exception_handler(ServiceError)
    async def service_error_handler(_request: Request, err: ServiceError):
        return JSONResponse(status_code=err.status, content={"code": err.code, "message": err.message})

    async def json_body(request: Request) -> dict:
        try:
            body = await request.json()
        except Exception:
            raise ServiceError("bad_request", "request body must be JSON", 400) from None
        if not isinstance(body, dict):
            raise ServiceError("bad_request", "request body must be a JSON object", 400)
        return body

    def require_int(body: dict, key: str, default=None) -> int:
        value = body.get(key, default)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ServiceError("bad_request", f"{key} must be an integer", 400)
        return value

    @app.post("/sessions")
    async def create_session(request: Request):
        body = await json_body(request)
        session_id = store.create_session(
            require_int(body, "n_model"), require_int(body, "n_human"), require_int(body, "seed", 0)
        )
        return {"session_id": session_id, "n_items": len(store.session(session_id).items)}

    @app.get("/sessions/{session_id}/items")
    def session_items(session_id: str):
        items = store.blinded_items(session_id)
        return {"session_id": session_id, "total": len(items), "items": items}

    @app.get("/sessions/{session_id}/distribution")
    def session_distribution(session_id: str):
        return store.distribution(session_id)

    @app.get("/items/{item_id}/image")
    def item_image(item_id: str):
        return Response(content=store.image_bytes(item_id), media_type="image/png")

    @app.post("/items/{item_id}/scores")
    async def submit_score(item_id: str, request: Request):
        body = await json_body(request)
        rater_id = body.get("rater_id")
        if not isinstance(rater_id, str):
            raise ServiceError("bad_request", "rater_id must be a string", 400)
        record = store.submit_score(item_id, rater_id, require_int(body, "score"))
        return {"item_id": record.item_id, "rater_id": record.rater_id, "score": record.score}

    @app.get("/rubric")
    def rubric():
        return {"levels": RUBRIC}

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
