"""Checkpointable parallel execution over ordered item collections.

This is the concurrency boundary of the system: worker functions run on
up to `n_workers` threads, results come back in input order with `None`
marking failed slots, and an append-only JSONL ledger makes interrupted
runs resumable without re-executing completed indexes.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .errors import SdgError

logger = logging.getLogger(__name__)

DEFAULT_FLUSH_RECORDS = 20
FLUSH_SECONDS = 2.0


class CheckpointCorrupt(SdgError):
    """The ledger file cannot be trusted; refuse to resume from it."""


class RunIdMismatch(SdgError):
    """The ledger belongs to a different (job, step, input count) identity."""


def compute_run_id(job_id: str, step: str, count: int) -> str:
    tag = f"{job_id}|{step}|{count}"
    return hashlib.sha256(tag.encode("utf-8")).hexdigest()[:16]


class CancelSignal:
    """Monotonic stop flag readable by every worker."""

    def __init__(self) -> None:
        self._event = threading.Event()

    def set(self) -> None:
        self._event.set()

    def is_set(self) -> bool:
        return self._event.is_set()


@dataclass
class ExecutionReport:
    total: int = 0
    succeeded: int = 0
    failed: int = 0
    skipped_from_cache: int = 0
    wall_time_s: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


@dataclass
class LedgerEntry:
    index: int
    status: str  # done | failed
    result: Any = None
    error: str | None = None
    attempts: int = 0


def _flush_interval() -> int:
    raw = os.environ.get("SDG_FLUSH_INTERVAL", "")
    try:
        return max(1, int(raw)) if raw else DEFAULT_FLUSH_RECORDS
    except ValueError:
        return DEFAULT_FLUSH_RECORDS


class CheckpointLedger:
    """Append-only index -> outcome record behind a single writer lock.

    Records are line-framed JSON: a record exists only once its newline
    hit the file, so a killed process can at worst leave one partial
    trailing line, which the loader ignores. Appends are flushed to the
    OS per record (surviving SIGKILL) and fsynced every `flush_interval`
    records or 2 s (bounding loss on machine crash).
    """

    def __init__(self, path: Path, run_id: str, total: int, entries: dict[int, LedgerEntry]):
        self.path = path
        self.run_id = run_id
        self.total = total
        self.entries = entries
        self._lock = threading.Lock()
        self._fh = open(path, "a", encoding="utf-8")
        self._since_fsync = 0
        self._last_fsync = time.monotonic()
        self._flush_every = _flush_interval()
        if path.stat().st_size == 0:
            self._write_line({"run_id": run_id, "total": total})

    @classmethod
    def open(cls, path: str | Path, run_id: str, total: int) -> "CheckpointLedger":
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        entries: dict[int, LedgerEntry] = {}
        if path.exists() and path.stat().st_size > 0:
            header, entries = cls._parse(path)
            if header.get("run_id") != run_id:
                raise RunIdMismatch(
                    f"ledger {path} was written for run {header.get('run_id')!r}, "
                    f"expected {run_id!r} (input identity changed?)"
                )
        return cls(path, run_id, total, entries)

    @staticmethod
    def _parse(path: Path) -> tuple[dict[str, Any], dict[int, LedgerEntry]]:
        raw = path.read_bytes()
        lines = raw.split(b"\n")
        if raw and not raw.endswith(b"\n"):
            # Partial trailing record from an interrupted write; drop it.
            lines = lines[:-1]
        lines = [ln for ln in lines if ln.strip()]
        if not lines:
            return {}, {}
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as err:
            raise CheckpointCorrupt(f"{path}: unreadable header: {err}") from err
        if not isinstance(header, dict) or "run_id" not in header:
            raise CheckpointCorrupt(f"{path}: first record is not a ledger header")
        entries: dict[int, LedgerEntry] = {}
        for n, line in enumerate(lines[1:], start=2):
            try:
                rec = json.loads(line)
                entry = LedgerEntry(
                    index=int(rec["i"]),
                    status=str(rec["status"]),
                    result=rec.get("result"),
                    error=rec.get("error"),
                    attempts=int(rec.get("attempts", 0)),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
                raise CheckpointCorrupt(f"{path}: bad record on line {n}: {err}") from err
            if entry.status not in ("done", "failed"):
                raise CheckpointCorrupt(f"{path}: bad status {entry.status!r} on line {n}")
            entries[entry.index] = entry  # later records win across resumed runs
        return header, entries

    def _write_line(self, record: dict[str, Any]) -> None:
        try:
            line = json.dumps(record, ensure_ascii=False)
        except TypeError as err:
            raise SdgError(
                f"checkpointed worker results must be JSON-serializable: {err}"
            ) from err
        self._fh.write(line + "\n")
        self._fh.flush()
        self._since_fsync += 1
        now = time.monotonic()
        if self._since_fsync >= self._flush_every or now - self._last_fsync >= FLUSH_SECONDS:
            os.fsync(self._fh.fileno())
            self._since_fsync = 0
            self._last_fsync = now

    def append(self, entry: LedgerEntry) -> None:
        record: dict[str, Any] = {
            "i": entry.index,
            "status": entry.status,
            "attempts": entry.attempts,
        }
        if entry.status == "done":
            record["result"] = entry.result
        else:
            record["error"] = entry.error
        with self._lock:
            self._write_line(record)
            self.entries[entry.index] = entry

    def close(self) -> None:
        with self._lock:
            try:
                self._fh.flush()
                os.fsync(self._fh.fileno())
            finally:
                self._fh.close()


def _resolve_ledger_path(checkpoint: str | Path, run_id: str) -> Path:
    path = Path(checkpoint)
    if path.suffixes[-2:] == [".ledger", ".jsonl"]:
        return path
    return path / f"{run_id}.ledger.jsonl"


class ParallelExecutor:
    """Ordered fan-out/fan-in over a worker pool with optional checkpointing."""

    def __init__(self, n_workers: int = 10):
        if n_workers < 1:
            raise ValueError("n_workers must be >= 1")
        self.n_workers = n_workers

    def execute(
        self,
        items: Iterable[Any],
        worker_fn: Callable[[Any], Any],
        *,
        checkpoint: str | Path | None = None,
        job_id: str = "",
        step: str = "",
        retry_limit: int = 0,
        cancel: CancelSignal | None = None,
    ) -> tuple[list[Any], ExecutionReport]:
        """Apply `worker_fn` to every item, preserving input order.

        Slot i of the result list holds `worker_fn(items[i])` on success
        and `None` when the item failed after `retry_limit + 1` attempts
        or never ran because the run was cancelled. With a checkpoint
        path, completed indexes are durable and a re-run with the same
        (job_id, step, item count) identity skips them.
        """
        seq: Sequence[Any] = list(items)
        cancel = cancel or CancelSignal()
        start = time.monotonic()
        results: list[Any] = [None] * len(seq)
        report = ExecutionReport(total=len(seq))

        ledger: CheckpointLedger | None = None
        if checkpoint is not None:
            run_id = compute_run_id(job_id, step, len(seq))
            ledger = CheckpointLedger.open(_resolve_ledger_path(checkpoint, run_id), run_id, len(seq))

        pending: list[int] = []
        for i in range(len(seq)):
            cached = ledger.entries.get(i) if ledger else None
            if cached is not None and cached.status == "done":
                results[i] = cached.result
                report.succeeded += 1
                report.skipped_from_cache += 1
            else:
                pending.append(i)

        def run_item(i: int) -> tuple[int, str, Any]:
            if cancel.is_set():
                return i, "cancelled", None
            attempts = 0
            while True:
                attempts += 1
                try:
                    value = worker_fn(seq[i])
                except Exception as err:  # worker failures become absent slots
                    if attempts > retry_limit:
                        if ledger is not None:
                            ledger.append(LedgerEntry(i, "failed", error=str(err), attempts=attempts))
                        return i, "failed", err
                    if cancel.is_set():
                        return i, "cancelled", None
                    continue
                if ledger is not None:
                    ledger.append(LedgerEntry(i, "done", result=value, attempts=attempts))
                return i, "done", value

        try:
            if pending:
                with ThreadPoolExecutor(max_workers=self.n_workers) as pool:
                    futures = [pool.submit(run_item, i) for i in pending]
                    try:
                        for fut in as_completed(futures):
                            i, status, value = fut.result()
                            if status == "done":
                                results[i] = value
                                report.succeeded += 1
                            elif status == "failed":
                                logger.warning("item %d failed permanently: %s", i, value)
                    except KeyboardInterrupt:
                        cancel.set()
                        raise
        finally:
            if ledger is not None:
                ledger.close()
            report.failed = report.total - report.succeeded
            report.wall_time_s = time.monotonic() - start
        return results, report
