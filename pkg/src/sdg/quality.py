"""Difficulty-based quality control: evaluate, rewrite, re-evaluate.

A sample's difficulty score is the base model's pass rate over
`attempts_k` judged tries. Samples the base model always solves teach
nothing and get hardened; samples it never solves get simplified; the
learnable middle flows on to training export. Rewrites go through a
generation stage and a judge-gated validation stage, and a rejected
rewrite always falls back to the original sample.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from . import prompts
from .config import EndpointConfig, TaskConfig
from .core import Attempt, Category, EvalScore, UnifiedSample, sample_digest, write_jsonl
from .errors import CancelledRun, SdgError
from .llm import ChatRequest, GatewayError, JsonExtractError, LlmClient, extract_json_payload
from .parallel import CancelSignal, ParallelExecutor
from .progress import ProgressSink

logger = logging.getLogger(__name__)

PARTIAL_EVAL_LIMIT = 0.2  # whole-run failure above this fraction of partial samples


class EvaluationError(SdgError):
    pass


@dataclass(frozen=True)
class RewriteRecord:
    original_digest: str
    direction: str  # harden | simplify
    validated: bool


@dataclass
class QualityReport:
    scores_initial: list[EvalScore]
    scores_final: list[EvalScore]
    categories: list[Category]
    counts: dict[str, int]
    rewrites_applied: int = 0
    rewrites_rejected: int = 0
    records: list[RewriteRecord] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "scores_initial": [s.to_dict() for s in self.scores_initial],
            "scores_final": [s.to_dict() for s in self.scores_final],
            "categories": [c.value for c in self.categories],
            "counts": dict(self.counts),
            "rewrites_applied": self.rewrites_applied,
            "rewrites_rejected": self.rewrites_rejected,
        }


def categorize(score: float, threshold_solved: float, threshold_unsolved: float) -> Category:
    """Pure, total on [0, 1]: >= solved is solved, <= unsolved is unsolved."""
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"score must be in [0, 1], got {score}")
    if score >= threshold_solved:
        return Category.SOLVED
    if score <= threshold_unsolved:
        return Category.UNSOLVED
    return Category.LEARNABLE


def _is_correct_verdict(content: str) -> bool:
    head = content.strip().split(None, 1)
    return bool(head) and head[0].strip(".,:;").upper() == "CORRECT"


def _is_valid_verdict(content: str) -> bool:
    head = content.strip().split(None, 1)
    return bool(head) and head[0].strip(".,:;").upper() == "VALID"


def evaluate(
    dataset: list[UnifiedSample],
    base_model: EndpointConfig,
    judge: EndpointConfig,
    attempts_k: int,
    *,
    llm: LlmClient | None = None,
    n_workers: int = 10,
    retry_limit: int = 2,
    cancel: CancelSignal | None = None,
    checkpoint: str | Path | None = None,
    job_id: str = "",
    step: str = "evaluate",
) -> list[EvalScore]:
    """Score every sample as (#judged-correct attempts) / attempts_k.

    Each attempt queries the base model with the sample input and has the
    judge mark it against the reference output. Transport failures leave
    that attempt unrecorded; the run only fails when more than 20% of
    samples end up partially evaluated.
    """
    if attempts_k < 1:
        raise ValueError("attempts_k must be >= 1")
    client = llm or LlmClient()
    items = [(si, ai) for si in range(len(dataset)) for ai in range(attempts_k)]

    def attempt(item: tuple[int, int]) -> dict[str, Any]:
        si, _ai = item
        sample = dataset[si]
        response = client.complete(
            base_model,
            ChatRequest.user(
                sample.input,
                temperature=base_model.resolved_temperature(0.7),
                max_tokens=base_model.max_tokens,
            ),
            retry_limit=retry_limit,
        )
        verdict = client.complete(
            judge,
            ChatRequest.user(
                prompts.judge_correctness(sample.input, sample.output, response.content),
                temperature=judge.resolved_temperature(0.0),
            ),
            retry_limit=retry_limit,
        )
        return {
            "sample": si,
            "digest": sample_digest(response.content),
            "correct": _is_correct_verdict(verdict.content),
        }

    pool = ParallelExecutor(n_workers)
    results, _report = pool.execute(
        items,
        attempt,
        checkpoint=checkpoint,
        job_id=job_id,
        step=step,
        retry_limit=0,  # transport retries already happen inside complete()
        cancel=cancel,
    )
    if cancel is not None and cancel.is_set():
        raise CancelledRun(step)

    per_sample: dict[int, list[Attempt]] = {si: [] for si in range(len(dataset))}
    for (si, _ai), outcome in zip(items, results):
        if outcome is None:
            continue
        per_sample[si].append(Attempt(outcome["digest"], outcome["correct"]))

    scores: list[EvalScore] = []
    partial = 0
    for si in range(len(dataset)):
        attempts = per_sample[si]
        if len(attempts) < attempts_k:
            partial += 1
        correct = sum(1 for a in attempts if a.correct)
        scores.append(EvalScore(sample_ref=si, score=correct / attempts_k, attempts=tuple(attempts)))
    if dataset and partial / len(dataset) > PARTIAL_EVAL_LIMIT:
        raise EvaluationError(
            f"{partial}/{len(dataset)} samples were only partially evaluated"
        )
    return scores


def is_partial(score: EvalScore, attempts_k: int) -> bool:
    return len(score.attempts) < attempts_k


def rewrite(
    dataset: list[UnifiedSample],
    scores: list[EvalScore],
    generator: EndpointConfig,
    judge: EndpointConfig,
    *,
    threshold_solved: float,
    threshold_unsolved: float,
    instruction: str = "",
    llm: LlmClient | None = None,
    n_workers: int = 10,
    retry_limit: int = 2,
    cancel: CancelSignal | None = None,
) -> tuple[list[UnifiedSample], list[RewriteRecord]]:
    """Harden solved samples, simplify unsolved ones, pass learnable through.

    The validation stage keeps a rewrite only when the judge confirms the
    new pair still satisfies the task and answers itself; anything else
    (including transport failures) retains the original sample, so the
    dataset size never changes here.
    """
    if len(scores) != len(dataset):
        raise ValueError("scores are not aligned with the dataset")
    client = llm or LlmClient()

    directions: dict[int, str] = {}
    for i, score in enumerate(scores):
        category = categorize(score.score, threshold_solved, threshold_unsolved)
        if category is Category.SOLVED:
            directions[i] = "harden"
        elif category is Category.UNSOLVED:
            directions[i] = "simplify"

    def rewrite_one(i: int) -> dict[str, Any]:
        sample = dataset[i]
        direction = directions[i]
        try:
            response = client.complete(
                generator,
                ChatRequest.user(
                    prompts.rewrite(direction, instruction, sample.input, sample.output),
                    temperature=generator.resolved_temperature(0.8),
                    max_tokens=generator.max_tokens,
                    response_hint="json_object",
                ),
                retry_limit=retry_limit,
            )
            payload = extract_json_payload(response.content)
            new_in = payload.get("input") if isinstance(payload, dict) else None
            new_out = payload.get("output") if isinstance(payload, dict) else None
            if (
                not isinstance(new_in, str)
                or not isinstance(new_out, str)
                or not new_in.strip()
                or not new_out.strip()
            ):
                return {"index": i, "validated": False}
            verdict = client.complete(
                judge,
                ChatRequest.user(
                    prompts.rewrite_validate(instruction, new_in, new_out),
                    temperature=judge.resolved_temperature(0.0),
                ),
                retry_limit=retry_limit,
            )
            if not _is_valid_verdict(verdict.content):
                return {"index": i, "validated": False}
            return {"index": i, "validated": True, "input": new_in, "output": new_out}
        except (GatewayError, JsonExtractError):
            return {"index": i, "validated": False}

    indices = sorted(directions)
    pool = ParallelExecutor(n_workers)
    results, _report = pool.execute(indices, rewrite_one, cancel=cancel)
    if cancel is not None and cancel.is_set():
        raise CancelledRun("rewrite")

    outcomes = {r["index"]: r for r in results if r is not None}
    new_dataset = list(dataset)
    records: list[RewriteRecord] = []
    for i in indices:
        original = dataset[i]
        direction = directions[i]
        outcome = outcomes.get(i, {"validated": False})
        validated = bool(outcome.get("validated"))
        records.append(
            RewriteRecord(
                original_digest=sample_digest(original.input),
                direction=direction,
                validated=validated,
            )
        )
        if validated:
            history = list(original.metadata.get("rewrite_history", []))
            history.append(
                {"direction": direction, "previous_digest": sample_digest(original.input)}
            )
            new_dataset[i] = replace(
                original.with_metadata(rewrite_history=history),
                input=outcome["input"],
                output=outcome["output"],
            )
    return new_dataset, records


def run_quality_loop(
    dataset: list[UnifiedSample],
    config: TaskConfig,
    *,
    llm: LlmClient | None = None,
    sink: ProgressSink | None = None,
    cancel: CancelSignal | None = None,
    out_dir: str | Path | None = None,
    job_id: str = "",
) -> tuple[list[UnifiedSample], QualityReport]:
    """Full loop: evaluate, rewrite, re-evaluate, categorize, select.

    Repeats rewrite + re-evaluate up to `max_rewrite_rounds` while any
    sample is still solved/unsolved, then returns the learnable subset
    and the report. When `out_dir` is given, the report plus the solved,
    unsolved, and rewrite-rejected subsets are written there.
    """
    q = config.quality
    sink = sink or ProgressSink()
    client = llm or LlmClient()
    kwargs = dict(
        llm=client,
        n_workers=config.parallel.n_workers,
        retry_limit=config.parallel.retry_limit,
        cancel=cancel,
    )

    scores_initial = evaluate(
        dataset,
        q.base_model,
        q.judge,
        q.attempts_k,
        checkpoint=config.parallel.checkpoint_dir,
        job_id=job_id,
        step="quality_eval_0",
        **kwargs,
    )
    sink.log(f"quality: initial evaluation complete over {len(dataset)} samples")

    current = list(dataset)
    scores = scores_initial
    applied = 0
    rejected = 0
    all_records: list[RewriteRecord] = []
    rejected_samples: list[UnifiedSample] = []

    for round_no in range(1, q.max_rewrite_rounds + 1):
        work_indices = [
            i
            for i, s in enumerate(scores)
            if categorize(s.score, q.threshold_solved, q.threshold_unsolved)
            is not Category.LEARNABLE
        ]
        if not work_indices:
            break
        rewritten, records = rewrite(
            current,
            scores,
            config.generator,
            q.judge,
            threshold_solved=q.threshold_solved,
            threshold_unsolved=q.threshold_unsolved,
            instruction=config.task.instruction,
            **kwargs,
        )
        round_applied = sum(1 for r in records if r.validated)
        round_rejected = sum(1 for r in records if not r.validated)
        applied += round_applied
        rejected += round_rejected
        all_records.extend(records)
        # records align with work_indices (both ascending sample order)
        rejected_samples.extend(
            current[i] for i, r in zip(work_indices, records) if not r.validated
        )
        sink.log(
            f"quality: round {round_no} rewrote {round_applied} samples "
            f"({round_rejected} rejected)"
        )
        if round_applied == 0:
            break
        current = rewritten
        scores = evaluate(
            current,
            q.base_model,
            q.judge,
            q.attempts_k,
            checkpoint=config.parallel.checkpoint_dir,
            job_id=job_id,
            step=f"quality_eval_{round_no}",
            **kwargs,
        )

    # Stamp partial-evaluation flags before categorizing the final scores.
    current = [
        s.with_metadata(partial_eval=True) if is_partial(scores[i], q.attempts_k) else s
        for i, s in enumerate(current)
    ]

    categories = [
        categorize(s.score, q.threshold_solved, q.threshold_unsolved) for s in scores
    ]
    counts = {
        "solved": sum(1 for c in categories if c is Category.SOLVED),
        "learnable": sum(1 for c in categories if c is Category.LEARNABLE),
        "unsolved": sum(1 for c in categories if c is Category.UNSOLVED),
    }
    learnable = [s for s, c in zip(current, categories) if c is Category.LEARNABLE]
    report = QualityReport(
        scores_initial=scores_initial,
        scores_final=scores,
        categories=categories,
        counts=counts,
        rewrites_applied=applied,
        rewrites_rejected=rejected,
        records=all_records,
    )
    if out_dir is not None:
        write_quality_artifacts(Path(out_dir), current, categories, rejected_samples, report)
    return learnable, report


def write_quality_artifacts(
    out_dir: Path,
    dataset: list[UnifiedSample],
    categories: list[Category],
    rejected_samples: list[UnifiedSample],
    report: QualityReport,
) -> None:
    """Inspection artifacts beside the dataset: report plus subset files."""
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "quality_report.json").write_text(
        json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    write_jsonl(
        out_dir / "solved.jsonl",
        [s for s, c in zip(dataset, categories) if c is Category.SOLVED],
    )
    write_jsonl(
        out_dir / "unsolved.jsonl",
        [s for s, c in zip(dataset, categories) if c is Category.UNSOLVED],
    )
    write_jsonl(out_dir / "rewrite_rejected.jsonl", rejected_samples)
