"""Judge-based model evaluation: rubric scoring over an eval set.

Three metrics are supported: answer correctness, format compliance, and
pairwise preference. The judge reasons first and then emits an integer
rating inside a fixed answer tag; ratings normalize linearly onto
[0, 1] and pairwise verdicts map to 1.0 / 0.5 / 0.0.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Any

from . import prompts
from .config import EndpointConfig
from .core import UnifiedSample
from .errors import SdgError
from .llm import ChatMessage, ChatRequest, GatewayError, LlmClient
from .parallel import CancelSignal, ParallelExecutor

logger = logging.getLogger(__name__)

METRICS = ("answer_correctness", "format_compliance", "pairwise_preference")

_SCORE_RE = re.compile(r"<score>\s*([1-5])\s*</score>")
_WINNER_RE = re.compile(r"<winner>\s*(A|B|TIE)\s*</winner>", re.I)


class JudgeParseError(SdgError):
    pass


@dataclass
class MetricResult:
    metric: str
    per_item: list[float | None]  # None marks items excluded after parse failure
    aggregate: float
    missing: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "metric": self.metric,
            "per_item": self.per_item,
            "aggregate": self.aggregate,
            "missing": self.missing,
        }


def _parse_rubric_score(content: str) -> float:
    matches = _SCORE_RE.findall(content)
    if not matches:
        raise JudgeParseError("no <score>1-5</score> tag in judge reply")
    return (int(matches[-1]) - 1) / 4


def _parse_winner(content: str) -> float:
    matches = _WINNER_RE.findall(content)
    if not matches:
        raise JudgeParseError("no <winner>A|B|TIE</winner> tag in judge reply")
    verdict = matches[-1].upper()
    return {"A": 1.0, "B": 0.0, "TIE": 0.5}[verdict]


def geval_score(
    metric: str,
    item: dict[str, str],
    judge: EndpointConfig,
    *,
    llm: LlmClient | None = None,
    retry_limit: int = 2,
) -> float:
    """Score one item in [0, 1] with a metric-specific rubric.

    `item` carries question/reference/candidate (and candidate_b for
    pairwise). One repair round re-prompts the judge when the answer tag
    is missing; after that the item raises JudgeParseError and the caller
    excludes it from the aggregate.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    if metric == "pairwise_preference" and "candidate_b" not in item:
        raise ValueError("pairwise_preference requires candidate_b")
    client = llm or LlmClient()
    prompt = prompts.geval(
        metric,
        item.get("question", ""),
        item.get("reference", ""),
        item.get("candidate", ""),
        item.get("candidate_b"),
    )
    parse = _parse_winner if metric == "pairwise_preference" else _parse_rubric_score
    tag_hint = (
        "<winner>A|B|TIE</winner>" if metric == "pairwise_preference" else "<score>1-5</score>"
    )
    request = ChatRequest.user(
        prompt, temperature=judge.resolved_temperature(0.0), max_tokens=judge.max_tokens
    )
    response = client.complete(judge, request, retry_limit=retry_limit)
    try:
        return parse(response.content)
    except JudgeParseError:
        repair = ChatRequest(
            messages=request.messages
            + (
                ChatMessage("assistant", response.content),
                ChatMessage(
                    "user",
                    f"Your reply did not contain the required {tag_hint} tag. "
                    "Repeat your verdict, ending with exactly that tag.",
                ),
            ),
            temperature=request.temperature,
            max_tokens=request.max_tokens,
        )
        second = client.complete(judge, repair, retry_limit=retry_limit)
        return parse(second.content)


def evaluate_model(
    model: EndpointConfig,
    eval_set: list[UnifiedSample],
    metrics: list[str],
    judge: EndpointConfig,
    *,
    model_b: EndpointConfig | None = None,
    llm: LlmClient | None = None,
    n_workers: int = 10,
    retry_limit: int = 2,
    cancel: CancelSignal | None = None,
) -> list[MetricResult]:
    """Query `model` per item, score responses per metric, aggregate means.

    Items whose model call or judge parse fails are excluded from the
    aggregate and counted in `missing`; the eval set itself is never
    mutated.
    """
    for metric in metrics:
        if metric not in METRICS:
            raise ValueError(f"unknown metric {metric!r}")
    if "pairwise_preference" in metrics and model_b is None:
        raise ValueError("pairwise_preference requires a second model endpoint")
    if not metrics:
        return []
    client = llm or LlmClient()

    def eval_item(sample: UnifiedSample) -> dict[str, float | None]:
        scores: dict[str, float | None] = {}
        try:
            candidate = client.complete(
                model,
                ChatRequest.user(
                    sample.input,
                    temperature=model.resolved_temperature(0.0),
                    max_tokens=model.max_tokens,
                ),
                retry_limit=retry_limit,
            ).content
            candidate_b = None
            if model_b is not None:
                candidate_b = client.complete(
                    model_b,
                    ChatRequest.user(
                        sample.input,
                        temperature=model_b.resolved_temperature(0.0),
                        max_tokens=model_b.max_tokens,
                    ),
                    retry_limit=retry_limit,
                ).content
        except GatewayError:
            return {metric: None for metric in metrics}
        for metric in metrics:
            item = {
                "question": sample.input,
                "reference": sample.output,
                "candidate": candidate,
            }
            if metric == "pairwise_preference":
                item["candidate_b"] = candidate_b or ""
            try:
                scores[metric] = geval_score(
                    metric, item, judge, llm=client, retry_limit=retry_limit
                )
            except (JudgeParseError, GatewayError):
                scores[metric] = None
        return scores

    pool = ParallelExecutor(n_workers)
    results, _report = pool.execute(eval_set, eval_item, cancel=cancel)

    out: list[MetricResult] = []
    for metric in metrics:
        per_item: list[float | None] = []
        for result in results:
            per_item.append(result.get(metric) if result is not None else None)
        present = [v for v in per_item if v is not None]
        aggregate = sum(present) / len(present) if present else 0.0
        out.append(
            MetricResult(
                metric=metric,
                per_item=per_item,
                aggregate=aggregate,
                missing=len(per_item) - len(present),
            )
        )
    return out
