from __future__ import annotations

import json
import random
import threading
import time

import pytest

from sdg.parallel import (
    CancelSignal,
    CheckpointCorrupt,
    CheckpointLedger,
    ParallelExecutor,
    RunIdMismatch,
    compute_run_id,
)


class CountingWorker:
    """Thread-safe per-index invocation counter around a worker function."""

    def __init__(self, fn):
        self.fn = fn
        self.lock = threading.Lock()
        self.invocations: dict[int, int] = {}

    def __call__(self, item):
        with self.lock:
            self.invocations[item] = self.invocations.get(item, 0) + 1
        return self.fn(item)

    def total(self) -> int:
        return sum(self.invocations.values())


class TestExecute:
    def test_empty_items(self):
        results, report = ParallelExecutor(4).execute([], lambda x: x)
        assert results == []
        assert report.total == 0 and report.succeeded == 0 and report.failed == 0

    def test_order_preserved_under_shuffled_latencies(self):
        rng = random.Random(7)
        delays = [rng.uniform(0, 0.02) for _ in range(40)]

        def worker(i):
            time.sleep(delays[i])
            return i * 10

        results, report = ParallelExecutor(10).execute(range(40), worker)
        assert results == [i * 10 for i in range(40)]
        assert report.succeeded == 40 and report.failed == 0

    def test_deterministic_failure_leaves_absent_slot(self):
        def worker(i):
            if i == 2:
                raise RuntimeError("boom")
            return i

        results, report = ParallelExecutor(3).execute(range(5), worker, retry_limit=0)
        assert results == [0, 1, None, 3, 4]
        assert (report.total, report.succeeded, report.failed) == (5, 4, 1)

    def test_retry_budget_allows_flaky_worker(self):
        attempts: dict[int, int] = {}
        lock = threading.Lock()

        def worker(i):
            with lock:
                attempts[i] = attempts.get(i, 0) + 1
                if i == 1 and attempts[i] < 3:
                    raise RuntimeError("transient")
            return i

        results, report = ParallelExecutor(2).execute(range(3), worker, retry_limit=2)
        assert results == [0, 1, 2]
        assert attempts[1] == 3
        assert report.failed == 0

    def test_report_invariant_total_split(self):
        def worker(i):
            if i % 3 == 0:
                raise ValueError("nope")
            return i

        _results, report = ParallelExecutor(4).execute(range(10), worker)
        assert report.total == report.succeeded + report.failed

    def test_pool_speedup_smoke(self):
        def worker(i):
            time.sleep(0.02)
            return i

        start = time.monotonic()
        ParallelExecutor(10).execute(range(20), worker)
        elapsed = time.monotonic() - start
        assert elapsed < 0.02 * 20 / 2  # far below sequential time


class TestCheckpointing:
    def test_resume_skips_done_and_retries_failed(self, tmp_path):
        fail_first_pass = {3, 7}

        def flaky(i):
            if i in fail_first_pass:
                raise RuntimeError("first pass failure")
            return i * 2

        worker = CountingWorker(flaky)
        results, report = ParallelExecutor(4).execute(
            range(10), worker, checkpoint=tmp_path, job_id="j", step="s", retry_limit=0
        )
        assert results[3] is None and results[7] is None
        assert report.succeeded == 8

        fail_first_pass.clear()
        worker2 = CountingWorker(lambda i: i * 2)
        results2, report2 = ParallelExecutor(4).execute(
            range(10), worker2, checkpoint=tmp_path, job_id="j", step="s", retry_limit=0
        )
        assert results2 == [i * 2 for i in range(10)]
        assert report2.skipped_from_cache == 8
        # only the two previously-failed indexes re-executed
        assert sorted(worker2.invocations) == [3, 7]

    def test_resume_of_completed_run_invokes_nothing(self, tmp_path):
        ParallelExecutor(4).execute(
            range(6), lambda i: i, checkpoint=tmp_path, job_id="j", step="s"
        )
        worker = CountingWorker(lambda i: i)
        results, report = ParallelExecutor(4).execute(
            range(6), worker, checkpoint=tmp_path, job_id="j", step="s"
        )
        assert worker.total() == 0
        assert results == list(range(6))
        assert report.skipped_from_cache == 6

    def test_each_index_succeeds_at_most_once_across_interruption(self, tmp_path):
        cancel = CancelSignal()

        def worker_phase1(i):
            if i == 4:
                cancel.set()  # simulate interruption partway through
            return i

        counted1 = CountingWorker(worker_phase1)
        ParallelExecutor(1).execute(
            range(12), counted1, checkpoint=tmp_path, job_id="j", step="s", cancel=cancel
        )
        counted2 = CountingWorker(lambda i: i)
        results, _ = ParallelExecutor(1).execute(
            range(12), counted2, checkpoint=tmp_path, job_id="j", step="s"
        )
        assert results == list(range(12))
        merged: dict[int, int] = dict(counted1.invocations)
        for idx, count in counted2.invocations.items():
            merged[idx] = merged.get(idx, 0) + count
        assert all(count == 1 for count in merged.values())

    def test_run_id_mismatch_on_changed_input_count(self, tmp_path):
        ledger_file = tmp_path / "fixed.ledger.jsonl"
        ParallelExecutor(2).execute(
            range(5), lambda i: i, checkpoint=ledger_file, job_id="j", step="s"
        )
        with pytest.raises(RunIdMismatch):
            ParallelExecutor(2).execute(
                range(6), lambda i: i, checkpoint=ledger_file, job_id="j", step="s"
            )

    def test_corrupt_ledger_refuses_resume(self, tmp_path):
        ledger_file = tmp_path / "fixed.ledger.jsonl"
        ParallelExecutor(2).execute(
            range(4), lambda i: i, checkpoint=ledger_file, job_id="j", step="s"
        )
        lines = ledger_file.read_text(encoding="utf-8").splitlines(keepends=True)
        lines[2] = "}{ definitely not json\n"
        ledger_file.write_text("".join(lines), encoding="utf-8")
        with pytest.raises(CheckpointCorrupt):
            ParallelExecutor(2).execute(
                range(4), lambda i: i, checkpoint=ledger_file, job_id="j", step="s"
            )

    def test_partial_trailing_line_is_ignored(self, tmp_path):
        ledger_file = tmp_path / "fixed.ledger.jsonl"
        ParallelExecutor(1).execute(
            range(3), lambda i: i, checkpoint=ledger_file, job_id="j", step="s"
        )
        with open(ledger_file, "a", encoding="utf-8") as fh:
            fh.write('{"i": 99, "status": "done", "resu')  # torn write, no newline
        worker = CountingWorker(lambda i: i)
        results, _ = ParallelExecutor(1).execute(
            range(3), worker, checkpoint=ledger_file, job_id="j", step="s"
        )
        assert results == [0, 1, 2]
        assert worker.total() == 0

    def test_flush_interval_env_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SDG_FLUSH_INTERVAL", "3")
        ledger = CheckpointLedger.open(tmp_path / "x.ledger.jsonl", "rid", 5)
        try:
            assert ledger._flush_every == 3
        finally:
            ledger.close()
        monkeypatch.setenv("SDG_FLUSH_INTERVAL", "not a number")
        ledger = CheckpointLedger.open(tmp_path / "y.ledger.jsonl", "rid2", 5)
        try:
            assert ledger._flush_every == 20  # falls back to the default
        finally:
            ledger.close()

    def test_ledger_loader_keeps_last_record_per_index(self, tmp_path):
        path = tmp_path / "x.ledger.jsonl"
        run_id = compute_run_id("j", "s", 2)
        records = [
            {"run_id": run_id, "total": 2},
            {"i": 0, "status": "failed", "error": "nope", "attempts": 1},
            {"i": 0, "status": "done", "result": 42, "attempts": 2},
        ]
        path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
        ledger = CheckpointLedger.open(path, run_id, 2)
        ledger.close()
        assert ledger.entries[0].status == "done"
        assert ledger.entries[0].result == 42


class TestCancel:
    def test_cancel_before_start(self):
        cancel = CancelSignal()
        cancel.set()
        worker = CountingWorker(lambda i: i)
        results, report = ParallelExecutor(4).execute(range(8), worker, cancel=cancel)
        assert results == [None] * 8
        assert report.total == 8 and report.succeeded == 0 and report.failed == 8
        assert worker.total() == 0

    def test_cancel_after_k_completions(self):
        cancel = CancelSignal()

        def worker(i):
            if i == 2:
                cancel.set()
            return i

        results, report = ParallelExecutor(1).execute(range(10), worker, cancel=cancel)
        assert results[:3] == [0, 1, 2]
        assert results[3:] == [None] * 7
        assert report.succeeded == 3

    def test_double_cancel_idempotent(self):
        cancel = CancelSignal()
        cancel.set()
        cancel.set()
        assert cancel.is_set()

    def test_cancel_returns_promptly(self):
        cancel = CancelSignal()

        def worker(i):
            if i == 0:
                cancel.set()
            time.sleep(0.05)
            return i

        start = time.monotonic()
        ParallelExecutor(2).execute(range(50), worker, cancel=cancel)
        # far less than 50 * 50ms / 2 workers; only in-flight items finish
        assert time.monotonic() - start < 1.0
