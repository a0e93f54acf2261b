"""End-to-end drivers shared by the CLI and the job service.

`run_generate` composes synthesis -> quality loop -> translation ->
output; `run_train` and `run_eval` wrap export/trainer invocation and
judge-based evaluation. All three report progress through a
ProgressSink and honor a CancelSignal.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .adapters import translate
from .config import EvalRunConfig, TaskConfig, TrainConfig, config_task_id
from .core import UnifiedSample, read_jsonl, write_jsonl
from .errors import CancelledRun, StepFailure
from .evaluation import evaluate_model
from .executors import SYNTHESIS_STEPS, make_executor
from .export import TrainExport, export_for_training, invoke_trainer
from .hub import HubClient
from .llm import LlmClient, UsageLedger
from .parallel import CancelSignal
from .progress import ProgressSink
from .quality import QualityReport, run_quality_loop

logger = logging.getLogger(__name__)

DATA_FILE = "data.jsonl"
EVAL_REPORT_FILE = "eval_report.json"


def generate_steps(config: TaskConfig) -> list[str]:
    steps = list(SYNTHESIS_STEPS)
    if config.quality.enabled:
        steps.append("quality_control")
    if config.translate.enabled:
        steps.append("translate")
    steps.append("write_output")
    return steps


@dataclass
class GenerateResult:
    samples: list[UnifiedSample]
    output_path: Path
    quality_report: QualityReport | None = None
    usage: dict[str, int] = field(default_factory=dict)
    wall_time_s: float = 0.0


def _guarded_step(name: str, sink: ProgressSink, cancel: CancelSignal, fn):
    if cancel.is_set():
        raise CancelledRun(name)
    sink.step_started(name)
    try:
        value = fn()
    except CancelledRun:
        raise
    except KeyboardInterrupt:
        cancel.set()
        raise CancelledRun(name) from None
    except StepFailure:
        raise
    except Exception as err:
        sink.step_failed(name, str(err))
        raise StepFailure(name, err) from err
    sink.step_done(name)
    return value


def run_generate(
    config: TaskConfig,
    *,
    sink: ProgressSink | None = None,
    cancel: CancelSignal | None = None,
    llm: LlmClient | None = None,
    hub: HubClient | None = None,
) -> GenerateResult:
    """Synthesis plus optional quality control and translation.

    Writes `<output.dir>/data.jsonl` (and quality artifacts when the loop
    is enabled) and returns the produced samples with usage totals.
    """
    sink = sink or ProgressSink()
    cancel = cancel or CancelSignal()
    if llm is None:
        ledger = UsageLedger(observer=sink.tokens)
        llm = LlmClient(ledger=ledger)
    start = time.monotonic()
    job_id = config_task_id(config)

    executor = make_executor(config, llm=llm, sink=sink, cancel=cancel, hub=hub)
    samples = executor.run()

    quality_report: QualityReport | None = None
    if config.quality.enabled:
        def quality_step():
            return run_quality_loop(
                samples,
                config,
                llm=llm,
                sink=sink,
                cancel=cancel,
                out_dir=config.output.dir,
                job_id=job_id,
            )

        learnable, quality_report = _guarded_step("quality_control", sink, cancel, quality_step)
        samples = learnable

    if config.translate.enabled:
        def translate_step():
            return translate(
                samples,
                config.translate.target_language,
                config.generator,
                llm=llm,
                n_workers=config.parallel.n_workers,
                retry_limit=config.parallel.retry_limit,
                cancel=cancel,
            )

        samples = _guarded_step("translate", sink, cancel, translate_step)

    def write_step() -> Path:
        out_path = Path(config.output.dir) / DATA_FILE
        write_jsonl(out_path, samples)
        sink.items(len(samples))
        return out_path

    output_path = _guarded_step("write_output", sink, cancel, write_step)

    return GenerateResult(
        samples=samples,
        output_path=output_path,
        quality_report=quality_report,
        usage=llm.ledger.totals(),
        wall_time_s=time.monotonic() - start,
    )


@dataclass
class TrainResult:
    export: TrainExport
    exit_status: int


def run_train(
    config: TrainConfig,
    *,
    sink: ProgressSink | None = None,
    cancel: CancelSignal | None = None,
) -> TrainResult:
    """Export the learnable dataset and hand it to the external trainer."""
    sink = sink or ProgressSink()
    cancel = cancel or CancelSignal()

    def export_step() -> TrainExport:
        learnable = read_jsonl(config.data)
        return export_for_training(
            learnable, config.method, config.out_dir, judge=config.judge
        )

    export = _guarded_step("export", sink, cancel, export_step)

    def train_step() -> int:
        return invoke_trainer(export, config.trainer_cmd, log_sink=sink.log)

    status = _guarded_step("train", sink, cancel, train_step)
    return TrainResult(export=export, exit_status=status)


def run_eval(
    config: EvalRunConfig,
    *,
    sink: ProgressSink | None = None,
    cancel: CancelSignal | None = None,
    llm: LlmClient | None = None,
) -> Path:
    """Evaluate a model over the configured dataset; write eval_report.json."""
    sink = sink or ProgressSink()
    cancel = cancel or CancelSignal()
    if llm is None:
        llm = LlmClient(ledger=UsageLedger(observer=sink.tokens))

    def eval_step() -> Path:
        eval_set = read_jsonl(config.dataset)
        results = evaluate_model(
            config.model,
            eval_set,
            config.metrics,
            config.judge,
            model_b=config.model_b,
            llm=llm,
            cancel=cancel,
        )
        out_dir = Path(config.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report_path = out_dir / EVAL_REPORT_FILE
        report: dict[str, Any] = {
            "dataset": config.dataset,
            "size": len(eval_set),
            "metrics": [r.to_dict() for r in results],
        }
        report_path.write_text(
            json.dumps(report, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
        sink.items(len(eval_set))
        return report_path

    return _guarded_step("evaluate", sink, cancel, eval_step)
