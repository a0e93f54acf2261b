"""Configuration-driven synthetic instruction data engine.

Three synthesis paths (local corpus RAG, dataset-hub mining, teacher
distillation) feed a difficulty-based quality-control loop, with a
checkpointable parallel executor underneath and a CLI plus job service
on top.
"""
from .config import EndpointConfig, TaskConfig, validate_config
from .core import Category, EvalScore, JobState, UnifiedSample, read_jsonl, validate_sample, write_jsonl
from .executors import BaseTaskExecutor, DistillTaskExecutor, LocalTaskExecutor, WebTaskExecutor, make_executor
from .llm import ChatRequest, ChatResponse, LlmClient, UsageLedger, extract_json_payload, mock_backend
from .parallel import CancelSignal, CheckpointLedger, ExecutionReport, ParallelExecutor
from .pipeline import run_eval, run_generate, run_train
from .quality import categorize, evaluate, rewrite, run_quality_loop

__version__ = "0.1.0"

__all__ = [
    "BaseTaskExecutor",
    "CancelSignal",
    "Category",
    "ChatRequest",
    "ChatResponse",
    "CheckpointLedger",
    "DistillTaskExecutor",
    "EndpointConfig",
    "EvalScore",
    "ExecutionReport",
    "JobState",
    "LlmClient",
    "LocalTaskExecutor",
    "ParallelExecutor",
    "TaskConfig",
    "UnifiedSample",
    "UsageLedger",
    "WebTaskExecutor",
    "categorize",
    "evaluate",
    "extract_json_payload",
    "make_executor",
    "mock_backend",
    "read_jsonl",
    "rewrite",
    "run_eval",
    "run_generate",
    "run_quality_loop",
    "run_train",
    "validate_config",
    "validate_sample",
    "write_jsonl",
]
