"""Trainer-ready export and external trainer invocation.

The actual SFT/GRPO optimization belongs to an external trainer; this
module owns the data contract (chat pairs + manifest, plus a reward spec
for GRPO) and supervises the trainer command, streaming its output to
the job log channel.
"""
from __future__ import annotations

import hashlib
import json
import logging
import shlex
import subprocess
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .config import EndpointConfig, dump_config
from .core import UnifiedSample
from .errors import SdgError
from . import prompts

logger = logging.getLogger(__name__)

TRAIN_FILE = "train.jsonl"
MANIFEST_FILE = "manifest.json"
REWARD_SPEC_FILE = "reward_spec.json"
LOG_TAIL_LINES = 50


class EmptyDataset(SdgError):
    pass


class SpawnFailure(SdgError):
    pass


class NonZeroExit(SdgError):
    def __init__(self, code: int, log_tail: list[str]):
        self.code = code
        self.log_tail = log_tail
        super().__init__(f"trainer exited with status {code}")


@dataclass
class TrainExport:
    format: str
    path: str
    method: str
    count: int
    sha256: str


def export_for_training(
    learnable: list[UnifiedSample],
    method: str,
    out_dir: str | Path,
    judge: EndpointConfig | None = None,
) -> TrainExport:
    """Write chat-pair JSONL plus manifest (and a GRPO reward spec).

    One record per learnable sample, losslessly mapping input -> prompt
    and output -> response; images ride along when present.
    """
    if method not in ("sft", "grpo"):
        raise ValueError(f"unknown training method {method!r}")
    if not learnable:
        raise EmptyDataset("cannot export an empty learnable set")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data_path = out / TRAIN_FILE
    with open(data_path, "w", encoding="utf-8") as fh:
        for sample in learnable:
            record = {"prompt": sample.input, "response": sample.output}
            if sample.image is not None:
                record["image"] = sample.image
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    digest = hashlib.sha256(data_path.read_bytes()).hexdigest()
    manifest = {"method": method, "count": len(learnable), "sha256": digest}
    (out / MANIFEST_FILE).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if method == "grpo":
        reward_spec = {
            "method": "grpo",
            "judge": dump_config(judge) if judge is not None else None,
            "rubric": prompts.load_template("geval_answer_correctness"),
        }
        (out / REWARD_SPEC_FILE).write_text(
            json.dumps(reward_spec, indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
    return TrainExport(
        format="chat_pairs",
        path=str(data_path),
        method=method,
        count=len(learnable),
        sha256=digest,
    )


def invoke_trainer(
    export: TrainExport,
    trainer_cmd_template: str,
    *,
    config_path: str | None = None,
    env: dict[str, str] | None = None,
    log_sink: Callable[[str], None] | None = None,
) -> int:
    """Launch the external trainer with `{data}` (and `{config}`) filled in.

    Stdout/stderr lines stream to `log_sink` as they arrive. Returns 0 on
    success, raises NonZeroExit (with the log tail) otherwise.
    """
    if "{data}" not in trainer_cmd_template:
        raise ValueError("trainer command template must contain a {data} placeholder")
    command = trainer_cmd_template.replace("{data}", export.path)
    if "{config}" in command:
        command = command.replace("{config}", config_path or "")
    argv = shlex.split(command)
    if not argv:
        raise SpawnFailure("trainer command is empty after substitution")
    tail: deque[str] = deque(maxlen=LOG_TAIL_LINES)
    try:
        proc = subprocess.Popen(
            argv,
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
            text=True,
            env=env,
        )
    except OSError as err:
        raise SpawnFailure(f"could not launch trainer {argv[0]!r}: {err}") from err
    assert proc.stdout is not None
    for line in proc.stdout:
        line = line.rstrip("\n")
        tail.append(line)
        if log_sink is not None:
            log_sink(line)
        else:
            logger.info("[trainer] %s", line)
    code = proc.wait()
    if code != 0:
        raise NonZeroExit(code, list(tail))
    return 0
