"""HTTP service for the blinded review loop: serves rater-facing
explanation payloads and accepts ratings.

Blinding is enforced at the serialization boundary: every rater-facing
payload is produced by build_rater_payload, which never carries the
prompt variant, the raw prompt, or knowledge-base text.
"""

from __future__ import annotations

import os
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .explain import BundleStore
from .usability import (
    DIMENSIONS,
    LIKERT_ANCHORS,
    AssessmentSession,
    DuplicateRatingError,
    RatingStore,
    RatingValidationError,
    build_rater_payload,
    summarize,
    validate_rating_payload,
)


class ApiFailure(Exception):
    """Maps to the error body {code, message, field} with an HTTP status."""

    def __init__(self, status: int, code: str, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.field = field


def create_app(
    bundles_path: str,
    session_path: str,
    ratings_path: str,
    cors_origin: str = "*",
    ui_dir: Optional[str] = None,
) -> FastAPI:
    app = FastAPI(title="casepath review service", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=[cors_origin],
        allow_methods=["GET", "POST"],
        allow_headers=["*"],
    )

    bundles = {b.bundle_id: b for b in BundleStore(bundles_path).load()}
    session = AssessmentSession.load(session_path)
    rating_store = RatingStore(ratings_path)

    missing = [sb.bundle_id for sb in session.bundles if sb.bundle_id not in bundles]
    if missing:
        raise ValueError(f"session references bundles absent from the store: {missing[:3]}")

    @app.exception_handler(ApiFailure)
    async def _api_failure(_request: Request, exc: ApiFailure) -> JSONResponse:
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "field": exc.field},
        )

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok"}

    @app.get("/api/session")
    def get_session() -> dict:
        return {
            "session_id": session.session_id,
            "blinded": session.blinded,
            "n_bundles": len(session.bundles),
            "dimensions": list(DIMENSIONS),
            "anchors": {str(k): v for k, v in LIKERT_ANCHORS.items()},
        }

    def _require_rater(rater: Optional[str]) -> str:
        if not rater:
            raise ApiFailure(400, "missing_rater", "query parameter 'rater' is required", field="rater")
        if rater not in session.raters:
            raise ApiFailure(400, "unknown_rater", f"rater token {rater!r} is not on the session roster", field="rater")
        return rater

    @app.get("/api/explanations")
    def get_explanations(rater: Optional[str] = None) -> dict:
        token = _require_rater(rater)
        try:
            rated = {r.bundle_id for r in rating_store.load() if r.rater_id == token}
        except OSError as exc:
            raise ApiFailure(500, "store_failure", f"cannot read rating store: {exc}")
        pending = [
            build_rater_payload(bundles[sb.bundle_id], sb.case_alias)
            for sb in session.bundles
            if sb.bundle_id not in rated
        ]
        return {
            "pending": pending,
            "done": len(session.bundles) - len(pending),
            "total": len(session.bundles),
        }

    @app.post("/api/ratings", status_code=201)
    async def post_rating(request: Request) -> dict:
        try:
            payload = await request.json()
        except Exception:
            raise ApiFailure(400, "invalid_json", "request body is not valid JSON")
        known_ids = {sb.bundle_id for sb in session.bundles}
        bundle_id = payload.get("bundle_id") if isinstance(payload, dict) else None
        if isinstance(bundle_id, str) and bundle_id and bundle_id not in known_ids:
            raise ApiFailure(404, "unknown_bundle", f"bundle {bundle_id!r} is not part of this session", field="/bundle_id")
        try:
            record = validate_rating_payload(payload, known_bundle_ids=known_ids)
        except RatingValidationError as exc:
            raise ApiFailure(400, exc.code, str(exc), field=exc.field)
        if record.rater_id not in session.raters:
            raise ApiFailure(400, "unknown_rater", f"rater token {record.rater_id!r} is not on the session roster", field="/rater_id")
        try:
            rating_store.append(record)
        except DuplicateRatingError as exc:
            raise ApiFailure(409, "duplicate_rating", str(exc))
        except OSError as exc:
            raise ApiFailure(500, "store_failure", f"cannot write rating store: {exc}")
        return {"rating_id": record.rating_id}

    @app.get("/api/summary")
    def get_summary() -> dict:
        try:
            ratings = rating_store.load()
        except OSError as exc:
            raise ApiFailure(500, "store_failure", f"cannot read rating store: {exc}")
        if not ratings:
            return {"n_ratings": 0, "summaries": []}
        return {
            "n_ratings": len(ratings),
            "summaries": [
                {"dimension": s.dimension, "mean": s.mean, "sd": s.sd, "n": s.n} for s in summarize(ratings)
            ],
        }

    if ui_dir and os.path.isdir(ui_dir):
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
