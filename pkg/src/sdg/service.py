"""HTTP job service backing the browser console.

Endpoints: submit/list/inspect jobs, cancel, paged sample inspection,
dataset download, and a server-sent-events stream that replays a job's
full progress history (from seq=0) before following it live. Frames are
plain `data: <json>\n\n`; clients deduplicate by `seq` on reconnect.
"""
from __future__ import annotations

import json
import logging
import queue
from pathlib import Path
from typing import Any

from fastapi import FastAPI, HTTPException, Response
from fastapi.responses import FileResponse, JSONResponse, StreamingResponse
from pydantic import BaseModel

from .config import ConfigError
from .core import read_jsonl
from .jobs import IllegalTransition, JobManager, TERMINAL_KINDS, UnknownJob

logger = logging.getLogger(__name__)

SSE_POLL_SECONDS = 0.5


class JobSubmission(BaseModel):
    type: str
    config: dict[str, Any]


def _sse_frame(event: dict[str, Any]) -> str:
    return f"data: {json.dumps(event, ensure_ascii=False)}\n\n"


def create_app(data_dir: str | Path, max_jobs: int | None = None, ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="sdg job service")
    manager = JobManager(data_dir, max_jobs=max_jobs)
    app.state.manager = manager

    def get_record(job_id: str):
        try:
            return manager.get(job_id)
        except UnknownJob:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id!r}") from None

    @app.get("/api/health")
    def health() -> dict[str, str]:
        return {"status": "ok"}

    @app.post("/api/jobs", status_code=201)
    def submit_job(submission: JobSubmission) -> dict[str, str]:
        try:
            record = manager.submit(submission.type, submission.config)
        except ConfigError as err:
            return JSONResponse(
                status_code=422,
                content={
                    "errors": [
                        {"loc": i.loc, "code": i.code, "message": i.message}
                        for i in err.issues
                    ]
                },
            )
        return {"job_id": record.job_id}

    @app.get("/api/jobs")
    def list_jobs() -> list[dict[str, Any]]:
        return [record.to_dict() for record in manager.list_jobs()]

    @app.get("/api/jobs/{job_id}")
    def get_job(job_id: str) -> dict[str, Any]:
        return get_record(job_id).to_dict()

    @app.post("/api/jobs/{job_id}/cancel", status_code=202)
    def cancel_job(job_id: str) -> dict[str, str]:
        get_record(job_id)
        try:
            manager.cancel(job_id)
        except IllegalTransition as err:
            raise HTTPException(status_code=409, detail=str(err)) from None
        return {"status": "cancelling"}

    @app.get("/api/jobs/{job_id}/events")
    def stream_events(job_id: str) -> StreamingResponse:
        get_record(job_id)

        def frames():
            q = manager.subscribe(job_id)
            try:
                last_seq = -1
                terminal_seen = False
                for event in manager.read_events(job_id):
                    last_seq = max(last_seq, event.get("seq", -1))
                    yield _sse_frame(event)
                    if event.get("kind") in TERMINAL_KINDS:
                        terminal_seen = True
                while not terminal_seen:
                    try:
                        event = q.get(timeout=SSE_POLL_SECONDS)
                    except queue.Empty:
                        yield ": keep-alive\n\n"
                        continue
                    if event.get("seq", -1) <= last_seq:
                        continue
                    last_seq = event["seq"]
                    yield _sse_frame(event)
                    if event.get("kind") in TERMINAL_KINDS:
                        terminal_seen = True
            finally:
                manager.unsubscribe(job_id, q)

        return StreamingResponse(frames(), media_type="text/event-stream")

    @app.get("/api/jobs/{job_id}/samples")
    def page_samples(job_id: str, offset: int = 0, limit: int = 50) -> dict[str, Any]:
        record = get_record(job_id)
        if offset < 0 or limit < 1:
            raise HTTPException(status_code=422, detail="offset must be >= 0 and limit >= 1")
        data_path = Path(record.output_dir) / "data.jsonl"
        if not data_path.exists():
            return {"total": 0, "offset": offset, "limit": limit, "samples": []}
        samples = read_jsonl(data_path)
        page = samples[offset : offset + limit]
        return {
            "total": len(samples),
            "offset": offset,
            "limit": limit,
            "samples": [s.to_dict() for s in page],
        }

    @app.get("/api/jobs/{job_id}/download")
    def download(job_id: str) -> Response:
        record = get_record(job_id)
        data_path = Path(record.output_dir) / "data.jsonl"
        if not data_path.exists():
            raise HTTPException(status_code=404, detail="job has produced no dataset yet")
        return FileResponse(
            data_path, media_type="application/jsonl", filename=f"{job_id}.jsonl"
        )

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
