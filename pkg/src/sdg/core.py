"""Unified sample schema, job/progress state, and JSONL dataset io.

Every synthesis path emits the same record shape so downstream stages
(quality control, export, the job service) never branch on provenance.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable

from .errors import SdgError

SOURCES = ("local", "web", "distill")

JOB_PHASES = ("pending", "running", "completed", "failed", "cancelled")
TERMINAL_PHASES = ("completed", "failed", "cancelled")
STEP_STATUSES = ("waiting", "active", "done", "failed")


class SampleValidationError(SdgError):
    """A candidate sample violates the unified schema."""


class EmptyInputError(SampleValidationError):
    pass


class EmptyOutputError(SampleValidationError):
    pass


class BadSourceError(SampleValidationError):
    pass


class DanglingImageRefError(SampleValidationError):
    pass


class JsonlError(SdgError):
    """A dataset file could not be read."""


class MalformedLineError(JsonlError):
    def __init__(self, line_no: int, detail: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: not valid JSON ({detail})")


class SchemaViolationError(JsonlError):
    def __init__(self, line_no: int, detail: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {detail}")


@dataclass(frozen=True)
class UnifiedSample:
    """One instruction/answer record, identical across all synthesis paths.

    `metadata` always carries `source` (one of local/web/distill) and
    `task_id`; paths add keys such as `dataset_id` or
    `reference_passage_ids` on top.
    """

    input: str
    output: str
    image: str | None = None
    audio: str | None = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def with_metadata(self, **updates: Any) -> "UnifiedSample":
        merged = dict(self.metadata)
        merged.update(updates)
        return replace(self, metadata=merged)

    def to_dict(self) -> dict[str, Any]:
        """Canonical key order: input, output, image, audio, metadata.

        Absent optional fields are omitted, not serialized as null.
        """
        out: dict[str, Any] = {"input": self.input, "output": self.output}
        if self.image is not None:
            out["image"] = self.image
        if self.audio is not None:
            out["audio"] = self.audio
        out["metadata"] = {k: self.metadata[k] for k in sorted(self.metadata)}
        return out

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "UnifiedSample":
        unknown = set(raw) - {"input", "output", "image", "audio", "metadata"}
        if unknown:
            raise SampleValidationError(f"unknown keys: {sorted(unknown)}")
        for key in ("input", "output"):
            if key not in raw:
                raise SampleValidationError(f"missing required field '{key}'")
            if not isinstance(raw[key], str):
                raise SampleValidationError(f"field '{key}' must be a string")
        metadata = raw.get("metadata", {})
        if not isinstance(metadata, dict):
            raise SampleValidationError("field 'metadata' must be an object")
        for opt in ("image", "audio"):
            if raw.get(opt) is not None and not isinstance(raw[opt], str):
                raise SampleValidationError(f"field '{opt}' must be a string")
        return cls(
            input=raw["input"],
            output=raw["output"],
            image=raw.get("image"),
            audio=raw.get("audio"),
            metadata=dict(metadata),
        )


def validate_sample(
    candidate: UnifiedSample, *, allowed_images: set[str] | None = None
) -> UnifiedSample:
    """Normalize and gate a candidate sample.

    Returns a copy with trimmed text fields and canonically ordered
    metadata, or raises a `SampleValidationError` subclass.
    `allowed_images` is only supplied on multimodal runs, where every
    image reference must point at a declared seed image.
    """
    text_in = candidate.input.strip()
    text_out = candidate.output.strip()
    if not text_in:
        raise EmptyInputError("sample input is empty after trimming")
    if not text_out:
        raise EmptyOutputError("sample output is empty after trimming")
    source = candidate.metadata.get("source")
    if source not in SOURCES:
        raise BadSourceError(
            f"metadata.source must be one of {SOURCES}, got {source!r}"
        )
    if allowed_images is not None and candidate.image is not None:
        if candidate.image not in allowed_images:
            raise DanglingImageRefError(
                f"image {candidate.image!r} is not a declared seed image"
            )
    ordered = {k: candidate.metadata[k] for k in sorted(candidate.metadata)}
    return replace(candidate, input=text_in, output=text_out, metadata=ordered)


def read_jsonl(path: str | Path) -> list[UnifiedSample]:
    """Read a dataset file, one JSON object per line, UTF-8."""
    samples: list[UnifiedSample] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLineError(line_no, str(exc)) from exc
            if not isinstance(raw, dict):
                raise SchemaViolationError(line_no, "record is not a JSON object")
            try:
                samples.append(validate_sample(UnifiedSample.from_dict(raw)))
            except SampleValidationError as exc:
                raise SchemaViolationError(line_no, str(exc)) from exc
    return samples


def write_jsonl(path: str | Path, samples: Iterable[UnifiedSample]) -> int:
    """Write samples as JSONL with canonical key order. Returns the count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(sample.to_dict(), ensure_ascii=False))
            fh.write("\n")
            count += 1
    return count


def sample_digest(text: str) -> str:
    """Short stable digest used for attempt/rewrite bookkeeping."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def dedup_key(text: str) -> str:
    """Case-folded, whitespace-collapsed form used for input dedup."""
    return " ".join(text.casefold().split())


class Category(str, Enum):
    """Difficulty bucket assigned from an evaluation score."""

    SOLVED = "solved"
    LEARNABLE = "learnable"
    UNSOLVED = "unsolved"


@dataclass(frozen=True)
class Attempt:
    response_digest: str
    correct: bool


@dataclass(frozen=True)
class EvalScore:
    """Base-model pass rate for one sample over `attempts_k` tries.

    `score` is always #correct / attempts_k; attempts that failed at the
    transport level are simply not recorded, which keeps the denominator
    honest while flagging the sample as partially evaluated.
    """

    sample_ref: int
    score: float
    attempts: tuple[Attempt, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_ref": self.sample_ref,
            "score": self.score,
            "attempts": [
                {"response_digest": a.response_digest, "correct": a.correct}
                for a in self.attempts
            ],
        }


@dataclass
class StepState:
    name: str
    status: str = "waiting"


@dataclass
class JobState:
    """Lifecycle and progress counters for one pipeline run.

    Mutated only by the job manager behind a single-writer discipline;
    everything else treats it as read-only.
    """

    job_id: str
    phase: str = "pending"
    steps: list[StepState] = field(default_factory=list)
    produced: int = 0
    requested: int = 0
    tokens_prompt: int = 0
    tokens_completion: int = 0
    elapsed_s: float = 0.0
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "job_id": self.job_id,
            "phase": self.phase,
            "steps": [{"name": s.name, "status": s.status} for s in self.steps],
            "produced": self.produced,
            "requested": self.requested,
            "tokens_prompt": self.tokens_prompt,
            "tokens_completion": self.tokens_completion,
            "elapsed_s": self.elapsed_s,
            "error": self.error,
        }


def legal_transition(current: str, new: str) -> bool:
    """Phase transitions only run pending -> running -> terminal."""
    if current == new:
        return False
    if current == "pending":
        return new in ("running", "failed", "cancelled")
    if current == "running":
        return new in TERMINAL_PHASES
    return False
