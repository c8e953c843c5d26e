"""HTTP facade for the human-in-the-loop restoration review workflow and
direct translation.

Sessions are persisted as canonical JSON documents in a single-file sqlite
store running in write-ahead mode, so a crash between mutations loses
nothing. Candidates are computed once at session creation and pinned along
with the checkpoint id; loading a newer model never rewrites an open
session.
"""

import datetime
import json
import os
import sqlite3
import threading
import uuid
from dataclasses import dataclass

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel

from .corpus import Vocab
from .inference import (
    InferenceError,
    normalize_damage_marks,
    restore_topk,
    translate_text,
)
from .subword import UnigramTokenizer
from .training import checkpoint_id, load_checkpoint


class SessionStore:
    """Keyed JSON documents in one sqlite file; every mutation commits."""

    def __init__(self, path):
        self.path = path
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        self._lock = threading.Lock()
        self._conn = sqlite3.connect(path, check_same_thread=False)
        self._conn.execute("PRAGMA journal_mode=WAL")
        self._conn.execute("PRAGMA synchronous=FULL")
        self._conn.execute(
            "CREATE TABLE IF NOT EXISTS sessions ("
            "id TEXT PRIMARY KEY, created TEXT, doc TEXT)"
        )
        self._conn.commit()

    def put(self, doc):
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT INTO sessions (id, created, doc) VALUES (?, ?, ?) "
                "ON CONFLICT(id) DO UPDATE SET doc = excluded.doc",
                (doc["id"], doc["created"], json.dumps(doc, ensure_ascii=False)),
            )

    def get(self, session_id):
        with self._lock:
            row = self._conn.execute(
                "SELECT doc FROM sessions WHERE id = ?", (session_id,)
            ).fetchone()
        return json.loads(row[0]) if row else None

    def all_docs(self):
        with self._lock:
            rows = self._conn.execute(
                "SELECT doc FROM sessions ORDER BY created, id"
            ).fetchall()
        return [json.loads(r[0]) for r in rows]

    def close(self):
        with self._lock:
            self._conn.close()


@dataclass
class ModelBundle:
    params: object
    hanja_vocab: Vocab
    korean_vocab: Vocab
    tokenizer: object
    checkpoint: str


def load_bundle(checkpoint_path, hanja_vocab_path, korean_vocab_path):
    params, _ = load_checkpoint(checkpoint_path)
    hv = Vocab.load(hanja_vocab_path)
    kv = Vocab.load(korean_vocab_path)
    tokenizer = UnigramTokenizer.from_vocab(kv) if kv.logprobs else None
    return ModelBundle(
        params=params,
        hanja_vocab=hv,
        korean_vocab=kv,
        tokenizer=tokenizer,
        checkpoint=checkpoint_id(checkpoint_path),
    )


class CreateSessionRequest(BaseModel):
    text: str
    k: int | None = None


class ConfirmRequest(BaseModel):
    position: int
    token: str
    override: bool = False


class TranslateRequest(BaseModel):
    text: str
    beam_size: int | None = None
    alpha: float | None = None


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _session_view(doc):
    """The wire form: everything the review UI needs, nothing internal."""
    confirmed = {p: c for p, c in doc["confirmations"].items() if c is not None}
    view = dict(doc)
    view["n_positions"] = len(doc["positions"])
    view["n_confirmed"] = len(confirmed)
    view["completed"] = len(confirmed) == len(doc["positions"])
    view["restored_text"] = _restored_text(doc) if view["completed"] else None
    return view


def _restored_text(doc):
    chars = list(doc["normalized_text"])
    for pos_str, choice in doc["confirmations"].items():
        if choice is not None:
            chars[int(pos_str)] = choice["token"]
    return "".join(chars)


def _summary(doc):
    confirmed = sum(1 for c in doc["confirmations"].values() if c is not None)
    return {
        "id": doc["id"],
        "status": "completed" if confirmed == len(doc["positions"]) else "open",
        "created": doc["created"],
        "n_positions": len(doc["positions"]),
        "n_confirmed": confirmed,
    }


def create_app(store: SessionStore, bundle: ModelBundle | None, defaults=None):
    defaults = defaults or {}
    default_k = defaults.get("default_k", 10)
    default_beam = defaults.get("beam_size", 3)
    default_alpha = defaults.get("alpha", 0.6)

    app = FastAPI(title="restoration review service")

    def require_model():
        if bundle is None:
            raise HTTPException(503, "no model checkpoint is loaded")
        return bundle

    @app.post("/sessions", status_code=201)
    def create_session(req: CreateSessionRequest):
        b = require_model()
        k = req.k or default_k
        try:
            candidates = restore_topk(req.text, k, b.params, b.hanja_vocab)
        except InferenceError as e:
            raise HTTPException(422, str(e))
        normalized, positions = normalize_damage_marks(req.text)
        doc = {
            "id": uuid.uuid4().hex,
            "original_text": req.text,
            "normalized_text": normalized,
            "positions": positions,
            "k": k,
            "candidates": {
                str(pos): [
                    {
                        "token": c.token,
                        "token_id": c.token_id,
                        "logprob": c.logprob,
                        "rank": c.rank,
                    }
                    for c in cands
                ]
                for pos, cands in candidates.items()
            },
            "confirmations": {str(p): None for p in positions},
            "created": _now(),
            "updated": _now(),
            "checkpoint_id": b.checkpoint,
        }
        store.put(doc)
        return _session_view(doc)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        doc = store.get(session_id)
        if doc is None:
            raise HTTPException(404, f"no session {session_id}")
        return _session_view(doc)

    @app.post("/sessions/{session_id}/confirm")
    def confirm(session_id: str, req: ConfirmRequest):
        doc = store.get(session_id)
        if doc is None:
            raise HTTPException(404, f"no session {session_id}")
        key = str(req.position)
        if key not in doc["confirmations"]:
            raise HTTPException(404, f"position {req.position} is not a damage slot")
        offered = {c["token"] for c in doc["candidates"][key]}
        if req.token not in offered and not req.override:
            raise HTTPException(
                409, f"token {req.token!r} was not offered; set override to force it"
            )
        doc["confirmations"][key] = {"token": req.token, "override": req.override}
        doc["updated"] = _now()
        store.put(doc)
        return _session_view(doc)

    @app.get("/sessions")
    def list_sessions(
        status: str | None = None,
        page: int = Query(1, ge=1),
        page_size: int = Query(20, ge=1, le=200),
    ):
        docs = store.all_docs()
        summaries = [_summary(d) for d in docs]
        if status:
            summaries = [s for s in summaries if s["status"] == status]
        start = (page - 1) * page_size
        return {
            "total": len(summaries),
            "page": page,
            "page_size": page_size,
            "sessions": summaries[start : start + page_size],
        }

    @app.post("/translate")
    def translate(req: TranslateRequest):
        b = require_model()
        try:
            result = translate_text(
                req.text,
                b.params,
                b.hanja_vocab,
                b.korean_vocab,
                tokenizer=b.tokenizer,
                beam_size=req.beam_size or default_beam,
                alpha=req.alpha if req.alpha is not None else default_alpha,
            )
        except Exception as e:  # encoding failures and the like
            raise HTTPException(422, str(e))
        result["checkpoint_id"] = b.checkpoint
        return result

    @app.get("/export/confirmed", response_class=PlainTextResponse)
    def export_confirmed():
        """Completed sessions as corpus JSON-lines, ready for retraining."""
        lines = []
        for doc in store.all_docs():
            view = _session_view(doc)
            if view["completed"]:
                lines.append(
                    json.dumps(
                        {
                            "id": doc["id"],
                            "side": "hanja",
                            "text": view["restored_text"],
                        },
                        ensure_ascii=False,
                    )
                )
        return "\n".join(lines) + ("\n" if lines else "")

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "model_loaded": bundle is not None,
            "checkpoint_id": bundle.checkpoint if bundle else None,
        }

    return app


def serve(cfg_serve, host=None, port=None):
    """Build the app from the serve config section and run it.

    Path settings yield to environment overrides: HANMT_CHECKPOINT,
    HANMT_HANJA_VOCAB, HANMT_KOREAN_VOCAB, HANMT_STORE.
    """
    import uvicorn

    env = os.environ
    checkpoint = env.get("HANMT_CHECKPOINT", cfg_serve.get("checkpoint"))
    store = SessionStore(env.get("HANMT_STORE", cfg_serve["store_path"]))
    bundle = None
    if checkpoint:
        bundle = load_bundle(
            checkpoint,
            env.get("HANMT_HANJA_VOCAB", cfg_serve["hanja_vocab"]),
            env.get("HANMT_KOREAN_VOCAB", cfg_serve["korean_vocab"]),
        )
    app = create_app(store, bundle, defaults=cfg_serve)

    ui_dir = cfg_serve.get("ui_dir")
    if ui_dir and os.path.isdir(ui_dir):
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    uvicorn.run(
        app,
        host=host or cfg_serve["host"],
        port=port or cfg_serve["port"],
        log_level="warning",
    )
