"""Progress reporting interface shared by the CLI and the job service."""
from __future__ import annotations

import logging

logger = logging.getLogger(__name__)


class ProgressSink:
    """No-op receiver for pipeline progress callbacks.

    The job manager supplies an implementation that turns these into
    persisted progress events; the CLI uses a console variant. Methods
    may be invoked from worker threads and must be thread-safe.
    """

    def step_started(self, name: str) -> None:
        pass

    def step_done(self, name: str) -> None:
        pass

    def step_failed(self, name: str, error: str) -> None:
        pass

    def items(self, produced: int) -> None:
        """Cumulative count of samples produced so far."""

    def tokens(self, prompt_delta: int, completion_delta: int) -> None:
        pass

    def log(self, line: str) -> None:
        pass


class ConsoleSink(ProgressSink):
    """Human-oriented progress lines for CLI runs."""

    def step_started(self, name: str) -> None:
        print(f"[step] {name} ...", flush=True)

    def step_done(self, name: str) -> None:
        print(f"[step] {name} done", flush=True)

    def step_failed(self, name: str, error: str) -> None:
        print(f"[step] {name} FAILED: {error}", flush=True)

    def log(self, line: str) -> None:
        print(line, flush=True)
