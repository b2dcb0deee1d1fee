"""HTTP inference service (``/v1``) over one loaded checkpoint.

Handlers read the current :class:`Paraphraser` snapshot once per request;
``ModelHolder.load`` builds a new snapshot fully before swapping it in.
"""

from __future__ import annotations

import logging
import os
import threading
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .actions import Mode, parse_actions
from .checkpoint import CheckpointError
from .pipeline import Paraphraser

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
SCHEMA_HEADER = "X-Actionpara-Schema"
SERVICE_MODES = ("Random", "Ks", "Ps", "Os")


class TokenizeRequest(BaseModel):
    text: str


class TokenizeResponse(BaseModel):
    tokens: list[str]
    count: int


class ParaphraseRequest(BaseModel):
    text: str
    actions: str | None = None
    mode: str | None = None
    beams: int = Field(8, ge=1, le=64)
    seed: int = 0


class ParaphraseResponse(BaseModel):
    paraphrase: str
    tokens: list[str]
    used_actions: str
    beam_score: float


class ApiError(Exception):
    def __init__(self, status: int, detail: str):
        super().__init__(detail)
        self.status, self.detail = status, detail


class ModelHolder:
    """Holds the immutable snapshot handlers use; swaps are atomic reference writes."""

    def __init__(self, snapshot: Paraphraser | None = None):
        self._snapshot = snapshot
        self._load_lock = threading.Lock()

    @property
    def snapshot(self) -> Paraphraser | None:
        return self._snapshot

    def load(self, path: str | Path) -> Paraphraser:
        with self._load_lock:
            para = Paraphraser.load(path)
            para.model.eval()
            self._snapshot = para
        log.info("loaded checkpoint %s from %s", para.checkpoint_id[:12], path)
        return para

    def set(self, para: Paraphraser) -> None:
        para.model.eval()
        self._snapshot = para

    def require(self) -> Paraphraser:
        snap = self._snapshot
        if snap is None:
            raise ApiError(503, "model not loaded")
        return snap


def _content_tokens(para: Paraphraser, text: str) -> tuple[str, ...]:
    if not text.strip():
        raise ApiError(400, "text must be non-empty")
    tokens = para.content_tokens(text)
    if not tokens:
        raise ApiError(400, "text has no tokens after normalization")
    return tokens


def create_app(checkpoint: str | Path | None = None, holder: ModelHolder | None = None) -> FastAPI:
    """Build the app. ``checkpoint`` (or ``$ACTIONPARA_CKPT``) is loaded at startup;
    /v1/health answers 503 until a model is present."""
    holder = holder or ModelHolder()
    path = checkpoint if checkpoint is not None else os.environ.get("ACTIONPARA_CKPT")

    @asynccontextmanager
    async def lifespan(_: FastAPI):
        if path and holder.snapshot is None:
            try:
                holder.load(path)
            except (CheckpointError, OSError) as e:
                log.error("could not load checkpoint %s: %s", path, e)
        yield

    app = FastAPI(title="actionpara", version=SCHEMA_VERSION, lifespan=lifespan)
    app.state.holder = holder

    @app.middleware("http")
    async def _schema_header(request: Request, call_next):
        response = await call_next(request)
        response.headers[SCHEMA_HEADER] = SCHEMA_VERSION
        return response

    @app.exception_handler(ApiError)
    async def _api_error(_, exc: ApiError):
        return JSONResponse({"detail": exc.detail}, status_code=exc.status)

    @app.exception_handler(RequestValidationError)
    async def _bad_request(_, exc: RequestValidationError):
        msgs = ["{}: {}".format(".".join(str(p) for p in e["loc"][1:]) or "body", e["msg"]) for e in exc.errors()]
        return JSONResponse({"detail": "; ".join(msgs)}, status_code=400)

    @app.get("/v1/health")
    def health():
        snap = holder.snapshot
        if snap is None:
            return JSONResponse({"status": "loading", "checkpoint_id": None}, status_code=503)
        cfg = snap.model.cfg
        return {
            "status": "ok",
            "checkpoint_id": snap.checkpoint_id,
            "config": {
                "vocab_size": cfg.vocab_size,
                "d_model": cfg.d_model,
                "enc_layers": cfg.enc_layers,
                "dec_layers": cfg.dec_layers,
                "fusion_mode": cfg.fusion_mode,
                "max_len": snap.max_len,
            },
        }

    @app.post("/v1/tokenize", response_model=TokenizeResponse)
    def tokenize(req: TokenizeRequest):
        tokens = _content_tokens(holder.require(), req.text)
        return TokenizeResponse(tokens=list(tokens), count=len(tokens))

    @app.post("/v1/paraphrase", response_model=ParaphraseResponse)
    def paraphrase(req: ParaphraseRequest):
        para = holder.require()
        if req.actions is not None and req.mode is not None:
            raise ApiError(400, "give at most one of actions and mode")
        mode = None
        if req.mode is not None:
            if req.mode not in SERVICE_MODES:
                raise ApiError(400, f"mode must be one of {', '.join(SERVICE_MODES)}")
            mode = Mode.parse(req.mode)
        tokens = _content_tokens(para, req.text)
        user = None
        if req.actions is not None:
            try:
                user = parse_actions(req.actions)
            except ValueError as e:
                raise ApiError(400, str(e)) from e
            if len(user) != len(tokens):
                raise ApiError(400, f"expected {len(tokens)} actions (one per token), got {len(user)}")
        gen = para.paraphrase(req.text, user, mode, req.beams, req.seed)
        return ParaphraseResponse(
            paraphrase=gen.paraphrase, tokens=list(gen.tokens), used_actions=gen.used_actions_str,
            beam_score=gen.score,
        )

    return app
