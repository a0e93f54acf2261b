"""Declarative task configuration: schema, defaults, and validation.

A config document (YAML or JSON) fully describes one synthesis job.
Validation is fail-fast on unknown keys and reports *every* violated
rule, not just the first one.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal, Optional
from urllib.parse import urlparse

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import SdgError

# Defaults are fixed here; referenced by tests and the README.
DEFAULT_LANGUAGE = "en"
DEFAULT_TOP_K = 4
DEFAULT_ATTEMPTS_K = 4
DEFAULT_THRESHOLD_SOLVED = 0.8
DEFAULT_THRESHOLD_UNSOLVED = 0.2
DEFAULT_MAX_REWRITE_ROUNDS = 1
DEFAULT_N_WORKERS = 10
DEFAULT_RETRY_LIMIT = 2
DEFAULT_PREVIEW_ROWS = 25
DEFAULT_MAX_CANDIDATE_DATASETS = 5
DEFAULT_SEED = 42
DEFAULT_GENERATOR_TEMPERATURE = 0.8
DEFAULT_JUDGE_TEMPERATURE = 0.0


@dataclass(frozen=True)
class ConfigIssue:
    loc: str
    code: str  # missing_field | type_mismatch | cross_field | unknown_path | unknown_key
    message: str

    def __str__(self) -> str:
        return f"{self.loc}: {self.message} [{self.code}]"


class ConfigError(SdgError):
    """Carries the full list of violated rules for one document."""

    def __init__(self, issues: list[ConfigIssue]):
        self.issues = issues
        super().__init__(
            "invalid configuration:\n" + "\n".join(f"  - {i}" for i in issues)
        )

    def codes(self) -> set[str]:
        return {i.code for i in self.issues}

    @classmethod
    def from_message(cls, loc: str, message: str, code: str = "cross_field") -> "ConfigError":
        return cls([ConfigIssue(loc=loc, code=code, message=message)])


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class EndpointConfig(_Model):
    """One chat-completion endpoint (generator, teacher, judge, or base model)."""

    base_url: str
    model: str
    api_key_env: str = ""
    temperature: Optional[float] = Field(default=None, ge=0.0)
    max_tokens: int = Field(default=1024, gt=0)
    timeout_s: float = Field(default=60.0, gt=0)

    def resolved_temperature(self, fallback: float) -> float:
        return self.temperature if self.temperature is not None else fallback

    def api_key(self) -> str:
        return os.environ.get(self.api_key_env, "") if self.api_key_env else ""


def _mock_endpoint(name: str) -> EndpointConfig:
    return EndpointConfig(base_url=f"mock://{name}", model="mock")


class LocalSource(_Model):
    corpus_dir: str
    retriever: Literal["bm25"] = "bm25"
    top_k: int = Field(default=DEFAULT_TOP_K, gt=0)
    chunk_size: int = Field(default=300, gt=0)
    overlap: int = Field(default=50, ge=0)


class WebSource(_Model):
    hub_token_env: str = "HF_TOKEN"
    max_candidate_datasets: int = Field(default=DEFAULT_MAX_CANDIDATE_DATASETS, gt=0)
    preview_rows: int = Field(default=DEFAULT_PREVIEW_ROWS, gt=0)


class DistillSource(_Model):
    teacher: EndpointConfig


class SourceBlock(_Model):
    local: Optional[LocalSource] = None
    web: Optional[WebSource] = None
    distill: Optional[DistillSource] = None


class TaskBlock(_Model):
    path: str
    instruction: str
    domain: str = ""
    language: str = DEFAULT_LANGUAGE
    num_samples: int = Field(gt=0)
    seed: int = DEFAULT_SEED
    seed_examples: Optional[str] = None
    prompt_template: Optional[str] = None


class QualityBlock(_Model):
    enabled: bool = False
    judge: Optional[EndpointConfig] = None
    base_model: Optional[EndpointConfig] = None
    attempts_k: int = Field(default=DEFAULT_ATTEMPTS_K, gt=0)
    threshold_solved: float = Field(default=DEFAULT_THRESHOLD_SOLVED, ge=0.0, le=1.0)
    threshold_unsolved: float = Field(default=DEFAULT_THRESHOLD_UNSOLVED, ge=0.0, le=1.0)
    max_rewrite_rounds: int = Field(default=DEFAULT_MAX_REWRITE_ROUNDS, ge=0)


class ParallelBlock(_Model):
    n_workers: int = Field(default=DEFAULT_N_WORKERS, gt=0)
    checkpoint_dir: Optional[str] = None
    retry_limit: int = Field(default=DEFAULT_RETRY_LIMIT, ge=0)


class OutputBlock(_Model):
    dir: str = "output"
    format: Literal["jsonl"] = "jsonl"


class MultimodalBlock(_Model):
    enabled: bool = False
    seed_images_dir: Optional[str] = None


class TranslateBlock(_Model):
    enabled: bool = False
    target_language: Optional[str] = None


class TaskConfig(_Model):
    task: TaskBlock
    source: SourceBlock = Field(default_factory=SourceBlock)
    generator: EndpointConfig = Field(default_factory=lambda: _mock_endpoint("generator"))
    quality: QualityBlock = Field(default_factory=QualityBlock)
    parallel: ParallelBlock = Field(default_factory=ParallelBlock)
    output: OutputBlock = Field(default_factory=OutputBlock)
    multimodal: MultimodalBlock = Field(default_factory=MultimodalBlock)
    translate: TranslateBlock = Field(default_factory=TranslateBlock)


_PYDANTIC_CODE_MAP = {
    "missing": "missing_field",
    "extra_forbidden": "unknown_key",
}


def _issue_from_pydantic(err: dict[str, Any]) -> ConfigIssue:
    loc = ".".join(str(part) for part in err["loc"]) or "<root>"
    code = _PYDANTIC_CODE_MAP.get(err["type"], "type_mismatch")
    return ConfigIssue(loc=loc, code=code, message=err["msg"])


def _is_absolute_url(url: str) -> bool:
    parsed = urlparse(url)
    return bool(parsed.scheme) and bool(parsed.netloc)


def _is_iso639_1(code: str) -> bool:
    return len(code) == 2 and code.isalpha() and code == code.lower()


def _walk(doc: Any, *keys: str) -> Any:
    for key in keys:
        if not isinstance(doc, dict):
            return None
        doc = doc.get(key)
    return doc


def _cross_field_issues(doc: dict[str, Any]) -> list[ConfigIssue]:
    """Structural rules checked on the raw document.

    Runs whether or not field-level parsing succeeded, so a single error
    response can list every violated rule.
    """
    issues: list[ConfigIssue] = []

    path = _walk(doc, "task", "path")
    if isinstance(path, str):
        if path not in ("local", "web", "distill"):
            issues.append(
                ConfigIssue(
                    loc="task.path",
                    code="unknown_path",
                    message=f"unknown synthesis path {path!r}; expected local, web, or distill",
                )
            )
        elif _walk(doc, "source", path) is None:
            issues.append(
                ConfigIssue(
                    loc=f"source.{path}",
                    code="missing_field",
                    message=f"task.path is {path!r} but the source.{path} block is missing",
                )
            )

    instruction = _walk(doc, "task", "instruction")
    if isinstance(instruction, str) and not instruction.strip():
        issues.append(
            ConfigIssue(
                loc="task.instruction",
                code="cross_field",
                message="task.instruction must be non-empty",
            )
        )

    language = _walk(doc, "task", "language")
    if isinstance(language, str) and not _is_iso639_1(language):
        issues.append(
            ConfigIssue(
                loc="task.language",
                code="type_mismatch",
                message=f"{language!r} is not a two-letter ISO-639-1 code",
            )
        )

    solved = _walk(doc, "quality", "threshold_solved")
    unsolved = _walk(doc, "quality", "threshold_unsolved")
    solved = solved if isinstance(solved, (int, float)) else DEFAULT_THRESHOLD_SOLVED
    unsolved = unsolved if isinstance(unsolved, (int, float)) else DEFAULT_THRESHOLD_UNSOLVED
    if not unsolved < solved:
        issues.append(
            ConfigIssue(
                loc="quality",
                code="cross_field",
                message=(
                    f"thresholds out of order: require threshold_unsolved "
                    f"({unsolved}) < threshold_solved ({solved})"
                ),
            )
        )
    if _walk(doc, "quality", "enabled"):
        for name in ("judge", "base_model"):
            if _walk(doc, "quality", name) is None:
                issues.append(
                    ConfigIssue(
                        loc=f"quality.{name}",
                        code="missing_field",
                        message=f"quality.enabled requires quality.{name}",
                    )
                )

    if _walk(doc, "multimodal", "enabled"):
        seed_dir = _walk(doc, "multimodal", "seed_images_dir")
        if not seed_dir:
            issues.append(
                ConfigIssue(
                    loc="multimodal.seed_images_dir",
                    code="missing_field",
                    message="multimodal.enabled requires seed_images_dir",
                )
            )
        elif isinstance(seed_dir, str):
            img_dir = Path(seed_dir)
            if not img_dir.is_dir() or not any(img_dir.iterdir()):
                issues.append(
                    ConfigIssue(
                        loc="multimodal.seed_images_dir",
                        code="cross_field",
                        message=f"{seed_dir!r} is not a non-empty directory",
                    )
                )

    if _walk(doc, "translate", "enabled"):
        target = _walk(doc, "translate", "target_language")
        if not target:
            issues.append(
                ConfigIssue(
                    loc="translate.target_language",
                    code="missing_field",
                    message="translate.enabled requires target_language",
                )
            )
        elif isinstance(target, str) and not _is_iso639_1(target):
            issues.append(
                ConfigIssue(
                    loc="translate.target_language",
                    code="type_mismatch",
                    message=f"{target!r} is not a two-letter ISO-639-1 code",
                )
            )

    endpoint_locs = [
        ("generator",),
        ("source", "distill", "teacher"),
        ("quality", "judge"),
        ("quality", "base_model"),
    ]
    for keys in endpoint_locs:
        endpoint = _walk(doc, *keys)
        if isinstance(endpoint, dict):
            base_url = endpoint.get("base_url")
            if isinstance(base_url, str) and not _is_absolute_url(base_url):
                issues.append(
                    ConfigIssue(
                        loc=".".join(keys) + ".base_url",
                        code="cross_field",
                        message=f"base_url {base_url!r} is not an absolute URL",
                    )
                )
    return issues


def _apply_defaults(cfg: TaskConfig) -> TaskConfig:
    """Fill derived defaults so the returned config is fully explicit."""
    if cfg.parallel.checkpoint_dir is None:
        cfg.parallel.checkpoint_dir = str(Path(cfg.output.dir) / "checkpoints")
    if cfg.generator.temperature is None:
        cfg.generator.temperature = DEFAULT_GENERATOR_TEMPERATURE
    if cfg.source.distill is not None and cfg.source.distill.teacher.temperature is None:
        cfg.source.distill.teacher.temperature = DEFAULT_GENERATOR_TEMPERATURE
    if cfg.quality.judge is not None and cfg.quality.judge.temperature is None:
        cfg.quality.judge.temperature = DEFAULT_JUDGE_TEMPERATURE
    if cfg.quality.base_model is not None and cfg.quality.base_model.temperature is None:
        cfg.quality.base_model.temperature = 0.7
    return cfg


def validate_config(raw_document: Any) -> TaskConfig:
    """Validate a parsed config document into a fully-defaulted TaskConfig.

    Raises ConfigError listing every violated rule. Idempotent: feeding an
    already-validated config dump back through changes nothing.
    """
    if not isinstance(raw_document, dict):
        raise ConfigError(
            [ConfigIssue(loc="<root>", code="type_mismatch", message="document must be a mapping")]
        )
    issues = _cross_field_issues(raw_document)
    try:
        cfg = TaskConfig.model_validate(raw_document)
    except ValidationError as exc:
        issues = [_issue_from_pydantic(e) for e in exc.errors()] + issues
        raise ConfigError(issues) from exc
    if issues:
        raise ConfigError(issues)
    return _apply_defaults(cfg)


def load_config_document(path: str | Path) -> Any:
    """Parse a YAML (or JSON, a subset of YAML) config file."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(
            [ConfigIssue(loc="<file>", code="type_mismatch", message=f"unparseable document: {exc}")]
        ) from exc


def load_task_config(path: str | Path) -> TaskConfig:
    return validate_config(load_config_document(path))


def config_task_id(cfg: TaskConfig) -> str:
    """Stable task identity used for metadata stamping and checkpoint binding."""
    tag = f"{cfg.task.path}|{cfg.task.instruction}|{cfg.task.domain}"
    return hashlib.sha256(tag.encode("utf-8")).hexdigest()[:12]


class TrainConfig(_Model):
    """Config consumed by `sdg train`."""

    data: str
    method: Literal["sft", "grpo"] = "sft"
    out_dir: str = "train_export"
    trainer_cmd: str
    judge: Optional[EndpointConfig] = None


class EvalRunConfig(_Model):
    """Config consumed by `sdg eval`."""

    model: EndpointConfig
    model_b: Optional[EndpointConfig] = None
    judge: EndpointConfig
    dataset: str
    metrics: list[str] = Field(
        default_factory=lambda: ["answer_correctness", "format_compliance"]
    )
    out_dir: str = "eval_out"


def validate_train_config(raw: Any) -> TrainConfig:
    return _validate_aux(TrainConfig, raw)


def validate_eval_config(raw: Any) -> EvalRunConfig:
    cfg = _validate_aux(EvalRunConfig, raw)
    known = {"answer_correctness", "format_compliance", "pairwise_preference"}
    issues = [
        ConfigIssue(loc="metrics", code="type_mismatch", message=f"unknown metric {m!r}")
        for m in cfg.metrics
        if m not in known
    ]
    if "pairwise_preference" in cfg.metrics and cfg.model_b is None:
        issues.append(
            ConfigIssue(
                loc="model_b",
                code="missing_field",
                message="pairwise_preference requires a second model endpoint",
            )
        )
    if issues:
        raise ConfigError(issues)
    return cfg


def _validate_aux(model_cls: type[_Model], raw: Any):
    if not isinstance(raw, dict):
        raise ConfigError(
            [ConfigIssue(loc="<root>", code="type_mismatch", message="document must be a mapping")]
        )
    try:
        return model_cls.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError([_issue_from_pydantic(e) for e in exc.errors()]) from exc


def dump_config(cfg: BaseModel) -> dict[str, Any]:
    """Round-trippable plain-dict form (used for job snapshots)."""
    return json.loads(cfg.model_dump_json(exclude_none=True))
