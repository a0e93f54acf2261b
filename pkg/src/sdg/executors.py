"""The unified five-step synthesis paradigm and its three concrete paths.

Every executor runs the same skeleton - parse the task, prepare sources,
build constraints, acquire raw data, normalize - and differs only in how
each step is realized:

  local    corpus chunks -> BM25 passages -> grounded generation
  web      hub search -> field selection -> scored preferential sampling
  distill  teacher liveness -> pattern elicitation -> constrained generation
"""
from __future__ import annotations

import logging
import math
import os
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import prompts
from .adapters import SeedImageSet, project_batches
from .config import EndpointConfig, TaskConfig, config_task_id
from .core import UnifiedSample, dedup_key, validate_sample, SampleValidationError, read_jsonl, JsonlError
from .errors import CancelledRun, SdgError, StepFailure
from .hub import DatasetCandidate, HubClient, HubError
from .llm import ChatRequest, GatewayError, JsonExtractError, LlmClient, extract_json_payload
from .parallel import CancelSignal, ParallelExecutor
from .progress import ProgressSink
from .retrieval import (
    Bm25Retriever,
    EmptyQueryAfterTokenization,
    load_or_build_index,
)

logger = logging.getLogger(__name__)

BATCH_SIZE = 5
OVERGEN_FACTOR = 1.2
KEYWORD_QUERY_SAMPLE = 5  # keyword queries sampled per run (local and web)
MAX_PATTERNS = 8

SYNTHESIS_STEPS = (
    "task_parsing",
    "prepare",
    "construct_constraints",
    "data_acquisition",
    "structure_process",
)


class KeywordExtractionEmpty(SdgError):
    pass


class SeedFileInvalid(SdgError):
    pass


class TeacherUnreachable(SdgError):
    pass


class NoPassagesFound(SdgError):
    pass


class FieldSelectionFailed(SdgError):
    pass


class PatternExtractionFailed(SdgError):
    pass


class AllSamplesInvalid(SdgError):
    pass


class GenerationFailure(SdgError):
    pass


@dataclass
class ParsedTask:
    instruction: str
    domain: str
    keywords: list[str] = field(default_factory=list)
    format_constraints: str = prompts.FORMAT_CONSTRAINTS
    examples: list[dict[str, Any]] = field(default_factory=list)
    teacher_params: EndpointConfig | None = None


@dataclass
class Constraints:
    """Exactly one variant is populated, matching the executor path."""

    passages: list[Any] | None = None  # local: retrieval.Passage objects
    field_map: dict[str, tuple[str, str]] | None = None  # web: dataset -> (in, out)
    patterns: list[str] | None = None  # distill

    @property
    def variant(self) -> str:
        if self.passages is not None:
            return "passages"
        if self.field_map is not None:
            return "field_map"
        return "patterns"


@dataclass(frozen=True)
class DatasetScore:
    dataset_id: str
    task_consistency: int
    quality: int

    def __post_init__(self) -> None:
        for name in ("task_consistency", "quality"):
            value = getattr(self, name)
            if not 1 <= value <= 10:
                raise ValueError(f"{name} must be in 1..10, got {value}")

    @property
    def combined(self) -> float:
        return (self.task_consistency + self.quality) / 2


@dataclass
class LocalSourceHandle:
    retriever: Bm25Retriever


@dataclass
class WebSourceHandle:
    candidates: list[DatasetCandidate]
    client: HubClient


@dataclass
class DistillSourceHandle:
    teacher: EndpointConfig


def preferential_allocation(
    ranked: list[tuple[str, int]], n: int
) -> dict[str, int]:
    """Rows to draw per dataset, exhausting higher-ranked datasets first.

    `ranked` is (dataset_id, rows_available) in descending preference
    order. Raising a dataset's rank never decreases its allocation.
    """
    allocation: dict[str, int] = {}
    remaining = n
    for dataset_id, available in ranked:
        take = min(available, remaining)
        allocation[dataset_id] = take
        remaining -= take
    return allocation


def rank_candidates(
    candidates: list[DatasetCandidate], scores: dict[str, "DatasetScore"]
) -> list[DatasetCandidate]:
    """Descending combined score; ties by downloads desc then id asc."""
    return sorted(
        (c for c in candidates if c.dataset_id in scores),
        key=lambda c: (-scores[c.dataset_id].combined, -c.downloads, c.dataset_id),
    )


class BaseTaskExecutor:
    """Template for the five-step synthesis flow; paths override the hooks."""

    path = ""

    def __init__(
        self,
        config: TaskConfig,
        llm: LlmClient | None = None,
        sink: ProgressSink | None = None,
        cancel: CancelSignal | None = None,
        hub: HubClient | None = None,
    ):
        self.config = config
        self.llm = llm or LlmClient()
        self.sink = sink or ProgressSink()
        self.cancel = cancel or CancelSignal()
        self.hub = hub
        self.task_id = config_task_id(config)
        self.rng = random.Random(config.task.seed)
        self.pool = ParallelExecutor(config.parallel.n_workers)
        self.images: SeedImageSet | None = None
        self._custom_template: str | None = None
        if config.task.prompt_template:
            self._custom_template = prompts.load_custom_template(config.task.prompt_template)

    # -- orchestration ----------------------------------------------------

    def run(self) -> list[UnifiedSample]:
        """Execute the five steps in order, reporting transitions."""
        parsed = self._step("task_parsing", self.task_parsing)
        source = self._step("prepare", lambda: self.prepare(parsed))
        constraints = self._step(
            "construct_constraints", lambda: self.construct_constraints(parsed, source)
        )
        raw = self._step(
            "data_acquisition",
            lambda: self.data_acquisition(
                parsed, source, constraints, self.config.task.num_samples
            ),
        )
        return self._step(
            "structure_process", lambda: self.structure_process(raw, parsed)
        )

    def _step(self, name: str, fn):
        if self.cancel.is_set():
            raise CancelledRun(name)
        self.sink.step_started(name)
        try:
            value = fn()
        except CancelledRun:
            raise
        except KeyboardInterrupt:
            self.cancel.set()
            raise CancelledRun(name) from None
        except Exception as err:
            self.sink.step_failed(name, str(err))
            raise StepFailure(name, err) from err
        if self.cancel.is_set():
            raise CancelledRun(name)
        self.sink.step_done(name)
        return value

    # -- step 1: task parsing ---------------------------------------------

    def task_parsing(self) -> ParsedTask:
        task = self.config.task
        parsed = ParsedTask(instruction=task.instruction, domain=task.domain)
        if task.seed_examples:
            try:
                seeds = read_jsonl(task.seed_examples)
            except (JsonlError, OSError) as err:
                raise SeedFileInvalid(f"{task.seed_examples}: {err}") from err
            parsed.examples = [{"input": s.input, "output": s.output} for s in seeds]
        self._parse_path_specific(parsed)
        return parsed

    def _parse_path_specific(self, parsed: ParsedTask) -> None:
        parsed.keywords = self._extract_keywords(parsed)

    def _extract_keywords(self, parsed: ParsedTask) -> list[str]:
        request = ChatRequest.user(
            prompts.keyword_extraction(parsed.instruction, parsed.domain),
            temperature=self.config.generator.resolved_temperature(0.8),
            response_hint="json_object",
        )
        for _ in range(2):  # one retry before giving up
            try:
                response = self.llm.complete(
                    self.config.generator, request, retry_limit=self.config.parallel.retry_limit
                )
                payload = extract_json_payload(response.content)
            except (GatewayError, JsonExtractError):
                continue
            keywords: list[str] = []
            if isinstance(payload, list):
                for item in payload:
                    if isinstance(item, str) and item.strip():
                        word = item.strip().lower()
                        if word not in keywords:
                            keywords.append(word)
            if keywords:
                return keywords
        raise KeywordExtractionEmpty("keyword extraction returned nothing usable")

    # -- step 2: source preparation -----------------------------------------

    def prepare(self, parsed: ParsedTask):
        raise NotImplementedError

    def _load_images_if_enabled(self) -> None:
        if self.config.multimodal.enabled and self.images is None:
            self.images = SeedImageSet.load(self.config.multimodal.seed_images_dir)

    # -- step 3: constraints -------------------------------------------------

    def construct_constraints(self, parsed: ParsedTask, source) -> Constraints:
        raise NotImplementedError

    # -- step 4: acquisition ---------------------------------------------------

    def data_acquisition(
        self, parsed: ParsedTask, source, constraints: Constraints, n: int
    ) -> list[UnifiedSample]:
        raise NotImplementedError

    def _generation_batches(self, n: int) -> list[int]:
        raw_target = math.ceil(n * OVERGEN_FACTOR)
        return list(range(math.ceil(raw_target / BATCH_SIZE))) if n > 0 else []

    def _run_generation(
        self,
        batch_prompts: list[str],
        endpoint: EndpointConfig,
        batch_images: list[str] | None,
        extra_metadata,
        step: str,
    ) -> list[UnifiedSample]:
        """Run batched generation calls through the parallel executor."""
        produced_total = 0

        def worker(item: tuple[int, str]) -> list[dict[str, Any]]:
            index, prompt = item
            image = batch_images[index] if batch_images else None
            request = ChatRequest.user(
                prompt,
                image=image,
                temperature=endpoint.resolved_temperature(0.8),
                max_tokens=endpoint.max_tokens,
                response_hint="json_object",
            )
            response = self.llm.complete(
                endpoint, request, retry_limit=self.config.parallel.retry_limit
            )
            payload = extract_json_payload(response.content)
            if not isinstance(payload, list):
                raise GenerationFailure(f"batch {index}: expected a JSON array of examples")
            records: list[dict[str, Any]] = []
            for entry in payload:
                if not isinstance(entry, dict):
                    continue
                record = {
                    "input": entry.get("input"),
                    "output": entry.get("output"),
                    "metadata": extra_metadata(index),
                }
                if image is not None:
                    record["image"] = image
                records.append(record)
            return records

        items = list(enumerate(batch_prompts))
        results, report = self.pool.execute(
            items,
            worker,
            checkpoint=self.config.parallel.checkpoint_dir,
            job_id=self.task_id,
            step=step,
            retry_limit=self.config.parallel.retry_limit,
            cancel=self.cancel,
        )
        if self.cancel.is_set():
            raise CancelledRun("data_acquisition")
        if report.total >= 10 and report.failed / report.total > 0.5:
            raise GenerationFailure(
                f"{report.failed}/{report.total} generation batches failed to parse"
            )
        samples: list[UnifiedSample] = []
        for batch in results:
            if batch is None:
                continue
            for record in batch:
                samples.append(
                    UnifiedSample(
                        input=str(record.get("input") or ""),
                        output=str(record.get("output") or ""),
                        image=record.get("image"),
                        metadata=dict(record.get("metadata") or {}),
                    )
                )
            produced_total = len(samples)
            self.sink.items(produced_total)
        return samples

    # -- step 5: structured processing -----------------------------------------

    def structure_process(
        self, raw: list[UnifiedSample], parsed: ParsedTask
    ) -> list[UnifiedSample]:
        """Validate, dedup on normalized input, stamp identity, truncate."""
        allowed = self.images.uris() if self.images is not None else None
        kept: list[UnifiedSample] = []
        seen: set[str] = set()
        dropped = 0
        for candidate in raw:
            stamped = candidate.with_metadata(
                task_id=self.task_id, language=self.config.task.language
            )
            try:
                valid = validate_sample(stamped, allowed_images=allowed)
            except SampleValidationError:
                dropped += 1
                continue
            key = dedup_key(valid.input)
            if key in seen:
                continue
            seen.add(key)
            kept.append(valid)
        if raw and not kept:
            raise AllSamplesInvalid(f"all {len(raw)} raw samples failed validation")
        if dropped:
            logger.info("structure_process dropped %d invalid samples", dropped)
        final = kept[: self.config.task.num_samples]
        self.sink.items(len(final))
        return final


class LocalTaskExecutor(BaseTaskExecutor):
    """Grounded synthesis from a local text corpus via BM25 retrieval."""

    path = "local"

    def prepare(self, parsed: ParsedTask) -> LocalSourceHandle:
        self._load_images_if_enabled()
        src = self.config.source.local
        cache = Path(self.config.parallel.checkpoint_dir) / "bm25_index.cache.json"
        index = load_or_build_index(
            src.corpus_dir,
            cache_path=cache,
            chunk_size=src.chunk_size,
            overlap=src.overlap,
        )
        return LocalSourceHandle(retriever=Bm25Retriever(index))

    def construct_constraints(
        self, parsed: ParsedTask, source: LocalSourceHandle
    ) -> Constraints:
        queries = self._sample_keywords(parsed.keywords)
        top_k = self.config.source.local.top_k
        union: dict[str, Any] = {}
        for query in queries:
            try:
                hits = source.retriever.search(query, top_k)
            except EmptyQueryAfterTokenization:
                continue
            for passage, _score in hits:
                union.setdefault(passage.passage_id, passage)
        if not union:
            raise NoPassagesFound(
                f"no corpus passages matched any of the keyword queries {queries!r}"
            )
        return Constraints(passages=list(union.values()))

    def _sample_keywords(self, keywords: list[str]) -> list[str]:
        count = min(KEYWORD_QUERY_SAMPLE, len(keywords))
        return self.rng.sample(keywords, count)

    def data_acquisition(
        self,
        parsed: ParsedTask,
        source: LocalSourceHandle,
        constraints: Constraints,
        n: int,
    ) -> list[UnifiedSample]:
        batches = self._generation_batches(n)
        if not batches:
            return []
        top_k = self.config.source.local.top_k
        passage_picks: list[list] = []
        for index in batches:
            batch_rng = random.Random(f"{self.config.task.seed}:{index}")
            picks = batch_rng.sample(
                constraints.passages, min(top_k, len(constraints.passages))
            )
            passage_picks.append(picks)
        batch_prompts = [
            prompts.local_generation(
                parsed.instruction,
                [(p.passage_id, p.text) for p in passage_picks[i]],
                parsed.examples,
                BATCH_SIZE,
                i,
                template=self._custom_template,
            )
            for i in batches
        ]
        batch_images = (
            project_batches(self.images, len(batches)) if self.images else None
        )

        def metadata_for(index: int) -> dict[str, Any]:
            return {
                "source": "local",
                "reference_passage_ids": [p.passage_id for p in passage_picks[index]],
            }

        return self._run_generation(
            batch_prompts, self.config.generator, batch_images, metadata_for, "acquire"
        )


class WebTaskExecutor(BaseTaskExecutor):
    """Mines instruction pairs out of open hub datasets, best-scored first."""

    path = "web"

    def _scoring_endpoint(self) -> EndpointConfig:
        return self.config.quality.judge or self.config.generator

    def prepare(self, parsed: ParsedTask) -> WebSourceHandle:
        src = self.config.source.web
        if self.hub is None:
            token = os.environ.get(src.hub_token_env, "")
            self.hub = HubClient(token=token)
        queries = self.rng.sample(
            parsed.keywords, min(KEYWORD_QUERY_SAMPLE, len(parsed.keywords))
        )
        candidates = self.hub.search_datasets(queries, limit=src.max_candidate_datasets)
        return WebSourceHandle(candidates=candidates, client=self.hub)

    def construct_constraints(
        self, parsed: ParsedTask, source: WebSourceHandle
    ) -> Constraints:
        rows = self.config.source.web.preview_rows
        field_map: dict[str, tuple[str, str]] = {}
        failures: list[str] = []
        for candidate in source.candidates:
            try:
                source.client.fetch_preview(candidate, rows)
                field_map[candidate.dataset_id] = self._select_fields(parsed, candidate)
            except (HubError, GatewayError, JsonExtractError, SdgError) as err:
                failures.append(candidate.dataset_id)
                logger.warning(
                    "dropping candidate %s: %s", candidate.dataset_id, err
                )
        if not field_map:
            raise FieldSelectionFailed(
                f"field selection failed for every candidate: {failures!r}"
            )
        return Constraints(field_map=field_map)

    def _select_fields(
        self, parsed: ParsedTask, candidate: DatasetCandidate
    ) -> tuple[str, str]:
        request = ChatRequest.user(
            prompts.field_selection(
                parsed.instruction,
                candidate.dataset_id,
                candidate.columns,
                candidate.preview[:5],
            ),
            temperature=self.config.generator.resolved_temperature(0.8),
            response_hint="json_object",
        )
        response = self.llm.complete(
            self.config.generator, request, retry_limit=self.config.parallel.retry_limit
        )
        payload = extract_json_payload(response.content)
        if not isinstance(payload, dict):
            raise FieldSelectionFailed(f"{candidate.dataset_id}: not a JSON object")
        col_in, col_out = payload.get("input"), payload.get("output")
        if col_in not in candidate.columns or col_out not in candidate.columns:
            raise FieldSelectionFailed(
                f"{candidate.dataset_id}: selected columns {col_in!r}/{col_out!r} not in {candidate.columns}"
            )
        if col_in == col_out:
            raise FieldSelectionFailed(
                f"{candidate.dataset_id}: input and output columns must differ"
            )
        return str(col_in), str(col_out)

    def data_acquisition(
        self,
        parsed: ParsedTask,
        source: WebSourceHandle,
        constraints: Constraints,
        n: int,
    ) -> list[UnifiedSample]:
        if n <= 0:
            return []
        usable = [c for c in source.candidates if c.dataset_id in constraints.field_map]
        scores = self._score_candidates(parsed, usable)
        ranked = rank_candidates(usable, scores)
        allocation = preferential_allocation(
            [(c.dataset_id, len(c.preview)) for c in ranked], n
        )
        samples: list[UnifiedSample] = []
        for candidate in ranked:
            take = allocation.get(candidate.dataset_id, 0)
            if take == 0:
                continue
            col_in, col_out = constraints.field_map[candidate.dataset_id]
            score = scores[candidate.dataset_id]
            for row in candidate.preview[:take]:
                samples.append(
                    UnifiedSample(
                        input=str(row.get(col_in, "")),
                        output=str(row.get(col_out, "")),
                        metadata={
                            "source": "web",
                            "dataset_id": candidate.dataset_id,
                            "scores": {
                                "task_consistency": score.task_consistency,
                                "quality": score.quality,
                                "combined": score.combined,
                            },
                        },
                    )
                )
            self.sink.items(len(samples))
        if len(samples) < n:
            message = (
                f"web quota unreachable: drew {len(samples)} of {n} requested rows "
                "before exhausting all scored candidates"
            )
            logger.warning(message)
            self.sink.log("WARNING " + message)
        return samples

    def _score_candidates(
        self, parsed: ParsedTask, candidates: list[DatasetCandidate]
    ) -> dict[str, DatasetScore]:
        endpoint = self._scoring_endpoint()

        def worker(candidate: DatasetCandidate) -> dict[str, Any]:
            request = ChatRequest.user(
                prompts.dataset_scoring(
                    parsed.instruction, candidate.dataset_id, candidate.preview[:5]
                ),
                temperature=endpoint.resolved_temperature(0.0),
                response_hint="json_object",
            )
            response = self.llm.complete(
                endpoint, request, retry_limit=self.config.parallel.retry_limit
            )
            payload = extract_json_payload(response.content)
            return {
                "dataset_id": candidate.dataset_id,
                "task_consistency": _clamp_1_10(payload.get("task_consistency")),
                "quality": _clamp_1_10(payload.get("quality")),
            }

        results, _report = self.pool.execute(
            candidates,
            worker,
            retry_limit=self.config.parallel.retry_limit,
            cancel=self.cancel,
        )
        if self.cancel.is_set():
            raise CancelledRun("data_acquisition")
        scores: dict[str, DatasetScore] = {}
        for result in results:
            if result is None:
                continue
            scores[result["dataset_id"]] = DatasetScore(
                dataset_id=result["dataset_id"],
                task_consistency=result["task_consistency"],
                quality=result["quality"],
            )
        if not scores:
            raise GenerationFailure("no candidate dataset could be scored")
        return scores


class DistillTaskExecutor(BaseTaskExecutor):
    """Distills instruction data from a stronger teacher model."""

    path = "distill"

    def _parse_path_specific(self, parsed: ParsedTask) -> None:
        parsed.keywords = []
        parsed.teacher_params = self.config.source.distill.teacher

    def prepare(self, parsed: ParsedTask) -> DistillSourceHandle:
        self._load_images_if_enabled()
        teacher = parsed.teacher_params
        try:
            self.llm.complete(
                teacher,
                ChatRequest.user("ping", temperature=0.0, max_tokens=8),
                retry_limit=self.config.parallel.retry_limit,
            )
        except GatewayError as err:
            raise TeacherUnreachable(f"teacher endpoint {teacher.base_url}: {err}") from err
        return DistillSourceHandle(teacher=teacher)

    def construct_constraints(
        self, parsed: ParsedTask, source: DistillSourceHandle
    ) -> Constraints:
        request = ChatRequest.user(
            prompts.pattern_extraction(parsed.instruction, parsed.examples),
            temperature=source.teacher.resolved_temperature(0.8),
        )
        try:
            response = self.llm.complete(
                source.teacher, request, retry_limit=self.config.parallel.retry_limit
            )
        except GatewayError as err:
            raise PatternExtractionFailed(str(err)) from err
        patterns = _parse_patterns(response.content)
        if not patterns:
            raise PatternExtractionFailed(
                "teacher returned no usable generation patterns"
            )
        return Constraints(patterns=patterns[:MAX_PATTERNS])

    def data_acquisition(
        self,
        parsed: ParsedTask,
        source: DistillSourceHandle,
        constraints: Constraints,
        n: int,
    ) -> list[UnifiedSample]:
        batches = self._generation_batches(n)
        if not batches:
            return []
        batch_prompts = [
            prompts.distill_generation(
                parsed.instruction,
                constraints.patterns,
                parsed.examples,
                BATCH_SIZE,
                i,
                template=self._custom_template,
            )
            for i in batches
        ]
        batch_images = (
            project_batches(self.images, len(batches)) if self.images else None
        )
        return self._run_generation(
            batch_prompts,
            source.teacher,
            batch_images,
            lambda index: {"source": "distill"},
            "acquire",
        )


def _clamp_1_10(value: Any) -> int:
    try:
        return max(1, min(10, int(value)))
    except (TypeError, ValueError):
        return 1


def _parse_patterns(content: str) -> list[str]:
    """Accept a JSON array of strings or plain bullet/numbered lines."""
    try:
        payload = extract_json_payload(content)
        if isinstance(payload, list):
            return [p.strip() for p in payload if isinstance(p, str) and p.strip()]
    except JsonExtractError:
        pass
    bullets = re.findall(r"^\s*(?:[-*•]|\d+[.)])\s+(.*\S)\s*$", content, re.M)
    return [b.strip() for b in bullets if b.strip()]


_EXECUTORS = {
    "local": LocalTaskExecutor,
    "web": WebTaskExecutor,
    "distill": DistillTaskExecutor,
}


def make_executor(
    config: TaskConfig,
    llm: LlmClient | None = None,
    sink: ProgressSink | None = None,
    cancel: CancelSignal | None = None,
    hub: HubClient | None = None,
) -> BaseTaskExecutor:
    cls = _EXECUTORS[config.task.path]
    return cls(config, llm=llm, sink=sink, cancel=cancel, hub=hub)
