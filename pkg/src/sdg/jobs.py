"""Job lifecycle management for the HTTP service.

Jobs run on background threads (one concurrent job by default, raise
with SDG_MAX_JOBS). Records persist to an append-only JSONL store that
is compacted at boot; per-job progress events persist to their own
append-only log so SSE subscribers can replay from seq=0 and then
follow live. Jobs left in a non-terminal phase by a dead process are
marked failed with reason `service_restart` on the next boot.
"""
from __future__ import annotations

import json
import logging
import os
import queue
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .config import (
    ConfigError,
    ConfigIssue,
    dump_config,
    validate_config,
    validate_eval_config,
    validate_train_config,
)
from .core import JobState, StepState, legal_transition
from .errors import CancelledRun, SdgError
from .parallel import CancelSignal
from .pipeline import generate_steps, run_eval, run_generate, run_train
from .progress import ProgressSink

logger = logging.getLogger(__name__)

JOB_TYPES = ("generate", "train", "eval")
EVENT_KINDS = (
    "step_started",
    "step_done",
    "item_done",
    "tokens",
    "log_line",
    "finished",
    "failed",
    "cancelled",
)
TERMINAL_KINDS = ("finished", "failed", "cancelled")
RESTART_REASON = "service_restart"


class UnknownJob(SdgError):
    pass


class IllegalTransition(SdgError):
    pass


@dataclass
class ProgressEvent:
    job_id: str
    kind: str
    payload: dict[str, Any]
    seq: int

    def to_dict(self) -> dict[str, Any]:
        return {"job_id": self.job_id, "kind": self.kind, "payload": self.payload, "seq": self.seq}


@dataclass
class JobRecord:
    job_id: str
    type: str
    state: JobState
    config: dict[str, Any]
    output_dir: str
    created_at: float
    updated_at: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "job_id": self.job_id,
            "type": self.type,
            "state": self.state.to_dict(),
            "config": self.config,
            "output_dir": self.output_dir,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "JobRecord":
        state_raw = raw["state"]
        state = JobState(
            job_id=state_raw["job_id"],
            phase=state_raw["phase"],
            steps=[StepState(s["name"], s["status"]) for s in state_raw.get("steps", [])],
            produced=state_raw.get("produced", 0),
            requested=state_raw.get("requested", 0),
            tokens_prompt=state_raw.get("tokens_prompt", 0),
            tokens_completion=state_raw.get("tokens_completion", 0),
            elapsed_s=state_raw.get("elapsed_s", 0.0),
            error=state_raw.get("error"),
        )
        return cls(
            job_id=raw["job_id"],
            type=raw["type"],
            state=state,
            config=raw.get("config", {}),
            output_dir=raw.get("output_dir", ""),
            created_at=raw.get("created_at", 0.0),
            updated_at=raw.get("updated_at", 0.0),
        )


def _default_max_jobs() -> int:
    raw = os.environ.get("SDG_MAX_JOBS", "")
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        return 1


class JobManager:
    """Single-writer owner of job records and their event streams."""

    def __init__(self, data_dir: str | Path, max_jobs: int | None = None):
        self.data_dir = Path(data_dir)
        self.jobs_dir = self.data_dir / "jobs"
        self.events_dir = self.data_dir / "events"
        self.store_path = self.data_dir / "jobs.jsonl"
        for directory in (self.data_dir, self.jobs_dir, self.events_dir):
            directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()
        self._jobs: dict[str, JobRecord] = {}
        self._seq: dict[str, int] = {}
        self._subscribers: dict[str, list[queue.Queue]] = {}
        self._cancels: dict[str, CancelSignal] = {}
        self._threads: list[threading.Thread] = []
        self._sem = threading.BoundedSemaphore(max_jobs or _default_max_jobs())
        self._load_and_recover()

    # -- persistence -------------------------------------------------------

    def _load_and_recover(self) -> None:
        if self.store_path.exists():
            for line in self.store_path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                try:
                    record = JobRecord.from_dict(json.loads(line))
                except (json.JSONDecodeError, KeyError) as err:
                    logger.warning("skipping unreadable job record: %s", err)
                    continue
                self._jobs[record.job_id] = record
        for record in self._jobs.values():
            if record.state.phase in ("pending", "running"):
                record.state.phase = "failed"
                record.state.error = RESTART_REASON
                record.updated_at = time.time()
                self._emit(record.job_id, "failed", {"error": RESTART_REASON, **_counters(record)})
        self._compact()

    def _compact(self) -> None:
        tmp = self.store_path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            for record in self._jobs.values():
                fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")
        tmp.replace(self.store_path)

    def _persist(self, record: JobRecord) -> None:
        with open(self.store_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")
            fh.flush()

    # -- events ------------------------------------------------------------

    def _event_path(self, job_id: str) -> Path:
        return self.events_dir / f"{job_id}.jsonl"

    def _next_seq(self, job_id: str) -> int:
        if job_id not in self._seq:
            last = -1
            path = self._event_path(job_id)
            if path.exists():
                for line in path.read_text(encoding="utf-8").splitlines():
                    if line.strip():
                        try:
                            last = max(last, int(json.loads(line).get("seq", -1)))
                        except (json.JSONDecodeError, TypeError, ValueError):
                            continue
            self._seq[job_id] = last + 1
        value = self._seq[job_id]
        self._seq[job_id] = value + 1
        return value

    def _emit(self, job_id: str, kind: str, payload: dict[str, Any]) -> ProgressEvent:
        with self._lock:
            event = ProgressEvent(job_id=job_id, kind=kind, payload=payload, seq=self._next_seq(job_id))
            with open(self._event_path(job_id), "a", encoding="utf-8") as fh:
                fh.write(json.dumps(event.to_dict(), ensure_ascii=False) + "\n")
                fh.flush()
            for q in self._subscribers.get(job_id, []):
                q.put(event.to_dict())
        return event

    def read_events(self, job_id: str) -> list[dict[str, Any]]:
        path = self._event_path(job_id)
        if not path.exists():
            return []
        events = []
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                try:
                    events.append(json.loads(line))
                except json.JSONDecodeError:
                    continue
        return events

    def subscribe(self, job_id: str) -> queue.Queue:
        q: queue.Queue = queue.Queue()
        with self._lock:
            self._subscribers.setdefault(job_id, []).append(q)
        return q

    def unsubscribe(self, job_id: str, q: queue.Queue) -> None:
        with self._lock:
            subs = self._subscribers.get(job_id, [])
            if q in subs:
                subs.remove(q)

    # -- lifecycle -----------------------------------------------------------

    def submit(self, job_type: str, config_doc: dict[str, Any]) -> JobRecord:
        """Validate, persist, and launch a job; raises ConfigError on 422s."""
        if job_type not in JOB_TYPES:
            raise ConfigError(
                [
                    ConfigIssue(
                        loc="type",
                        code="type_mismatch",
                        message=f"unknown job type {job_type!r}; expected one of {JOB_TYPES}",
                    )
                ]
            )
        job_id = uuid.uuid4().hex[:12]
        job_dir = self.jobs_dir / job_id
        if job_type == "generate":
            cfg = validate_config(config_doc)
            cfg.output.dir = str(job_dir)
            cfg.parallel.checkpoint_dir = str(job_dir / "checkpoints")
            snapshot = dump_config(cfg)
            requested = cfg.task.num_samples
            steps = generate_steps(cfg)
        elif job_type == "train":
            cfg = validate_train_config(config_doc)
            cfg.out_dir = str(job_dir)
            snapshot = dump_config(cfg)
            requested = 0
            steps = ["export", "train"]
        else:
            cfg = validate_eval_config(config_doc)
            cfg.out_dir = str(job_dir)
            snapshot = dump_config(cfg)
            requested = 0
            steps = ["evaluate"]

        state = JobState(
            job_id=job_id,
            phase="pending",
            steps=[StepState(name) for name in steps],
            requested=requested,
        )
        record = JobRecord(
            job_id=job_id,
            type=job_type,
            state=state,
            config=snapshot,
            output_dir=str(job_dir),
            created_at=time.time(),
            updated_at=time.time(),
        )
        with self._lock:
            self._jobs[job_id] = record
            self._cancels[job_id] = CancelSignal()
            self._persist(record)
        thread = threading.Thread(target=self._run_job, args=(record,), daemon=True)
        self._threads = [t for t in self._threads if t.is_alive()]
        self._threads.append(thread)
        thread.start()
        return record

    def get(self, job_id: str) -> JobRecord:
        with self._lock:
            try:
                return self._jobs[job_id]
            except KeyError:
                raise UnknownJob(job_id) from None

    def list_jobs(self) -> list[JobRecord]:
        with self._lock:
            return sorted(self._jobs.values(), key=lambda r: r.created_at, reverse=True)

    def transition(self, job_id: str, new_phase: str, error: str | None = None) -> JobRecord:
        """Apply a phase transition; exactly one terminal state ever wins."""
        with self._lock:
            record = self.get(job_id)
            if not legal_transition(record.state.phase, new_phase):
                raise IllegalTransition(
                    f"job {job_id}: cannot move from {record.state.phase} to {new_phase}"
                )
            record.state.phase = new_phase
            if error is not None:
                record.state.error = error
            record.updated_at = time.time()
            self._persist(record)
            if new_phase == "running":
                self._emit(job_id, "log_line", {"line": "job started"})
            elif new_phase == "completed":
                self._emit(job_id, "finished", _counters(record))
            elif new_phase == "failed":
                self._emit(job_id, "failed", {"error": record.state.error, **_counters(record)})
            elif new_phase == "cancelled":
                self._emit(job_id, "cancelled", _counters(record))
            return record

    def cancel(self, job_id: str) -> JobRecord:
        """Request cancellation; 409s (IllegalTransition) on terminal jobs."""
        with self._lock:
            record = self.get(job_id)
            if record.state.phase in ("completed", "failed", "cancelled"):
                raise IllegalTransition(f"job {job_id} already {record.state.phase}")
            self._cancels[job_id].set()
            if record.state.phase == "pending":
                return self.transition(job_id, "cancelled")
            return record

    # -- execution ---------------------------------------------------------

    def _run_job(self, record: JobRecord) -> None:
        job_id = record.job_id
        cancel = self._cancels[job_id]
        with self._sem:
            try:
                self.transition(job_id, "running")
            except IllegalTransition:
                return  # cancelled while pending
            sink = JobSink(self, record)
            started = time.monotonic()
            try:
                self._dispatch(record, sink, cancel)
            except CancelledRun:
                sink.flush_tokens()
                record.state.elapsed_s = time.monotonic() - started
                self._try_terminal(job_id, "cancelled")
            except Exception as err:
                sink.flush_tokens()
                record.state.elapsed_s = time.monotonic() - started
                logger.exception("job %s failed", job_id)
                self._try_terminal(job_id, "failed", error=str(err))
            else:
                sink.flush_tokens()
                record.state.elapsed_s = time.monotonic() - started
                self._try_terminal(job_id, "completed")

    def _try_terminal(self, job_id: str, phase: str, error: str | None = None) -> None:
        try:
            self.transition(job_id, phase, error=error)
        except IllegalTransition:
            logger.info("job %s already terminal; %s transition ignored", job_id, phase)

    def _dispatch(self, record: JobRecord, sink: "JobSink", cancel: CancelSignal) -> None:
        if record.type == "generate":
            cfg = validate_config(record.config)
            result = run_generate(cfg, sink=sink, cancel=cancel)
            record.state.produced = len(result.samples)
        elif record.type == "train":
            cfg = validate_train_config(record.config)
            result = run_train(cfg, sink=sink, cancel=cancel)
            record.state.produced = result.export.count
        else:
            cfg = validate_eval_config(record.config)
            run_eval(cfg, sink=sink, cancel=cancel)


def _counters(record: JobRecord) -> dict[str, Any]:
    state = record.state
    return {
        "produced": state.produced,
        "requested": state.requested,
        "tokens_prompt": state.tokens_prompt,
        "tokens_completion": state.tokens_completion,
        "elapsed_s": state.elapsed_s,
    }


class JobSink(ProgressSink):
    """Bridges pipeline callbacks into persisted progress events."""

    def __init__(self, manager: JobManager, record: JobRecord):
        self.manager = manager
        self.record = record
        self._token_lock = threading.Lock()
        self._pending_prompt = 0
        self._pending_completion = 0
        self._last_token_emit = 0.0

    def _set_step(self, name: str, status: str) -> None:
        for step in self.record.state.steps:
            if step.name == name:
                step.status = status
                break

    def step_started(self, name: str) -> None:
        self._set_step(name, "active")
        self.manager._emit(self.record.job_id, "step_started", {"step": name})

    def step_done(self, name: str) -> None:
        self._set_step(name, "done")
        self.manager._emit(self.record.job_id, "step_done", {"step": name})

    def step_failed(self, name: str, error: str) -> None:
        self._set_step(name, "failed")
        self.manager._emit(
            self.record.job_id, "log_line", {"line": f"step {name} failed: {error}"}
        )

    def items(self, produced: int) -> None:
        self.record.state.produced = produced
        self.manager._emit(self.record.job_id, "item_done", {"produced": produced})

    def tokens(self, prompt_delta: int, completion_delta: int) -> None:
        # Coalesce per-call deltas; exactness is restored by flush_tokens().
        with self._token_lock:
            self._pending_prompt += prompt_delta
            self._pending_completion += completion_delta
            now = time.monotonic()
            if now - self._last_token_emit < 0.5:
                return
            self._last_token_emit = now
            dp, dc = self._pending_prompt, self._pending_completion
            self._pending_prompt = 0
            self._pending_completion = 0
        self._publish_tokens(dp, dc)

    def flush_tokens(self) -> None:
        with self._token_lock:
            dp, dc = self._pending_prompt, self._pending_completion
            self._pending_prompt = 0
            self._pending_completion = 0
        if dp or dc:
            self._publish_tokens(dp, dc)

    def _publish_tokens(self, dp: int, dc: int) -> None:
        self.record.state.tokens_prompt += dp
        self.record.state.tokens_completion += dc
        self.manager._emit(
            self.record.job_id, "tokens", {"prompt": dp, "completion": dc}
        )

    def log(self, line: str) -> None:
        self.manager._emit(self.record.job_id, "log_line", {"line": line})
