"""Prompt template loading and rendering.

Templates are plain text files with `{name}` placeholders, shipped in
`sdg/templates/` and overridable per task (the synthesis prompt only)
via `task.prompt_template`. Values that a downstream parser needs to
recover (references, candidates, rewrite pairs) are rendered as JSON
string literals so they stay single-line and unambiguous.
"""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Any

# First lines of the default templates; the mock backend keys on these.
MARK_KEYWORDS = "Task: extract search keywords."
MARK_GENERATE_LOCAL = "Task: synthesize grounded training examples."
MARK_GENERATE_DISTILL = "Task: synthesize training examples from patterns."
MARK_FIELD_SELECTION = "Task: select dataset fields."
MARK_DATASET_SCORING = "Task: score a candidate dataset."
MARK_PATTERNS = "Task: extract generation patterns."
MARK_JUDGE_CORRECTNESS = "Task: judge answer correctness."
MARK_REWRITE_HARDEN = "Task: rewrite to increase difficulty."
MARK_REWRITE_SIMPLIFY = "Task: rewrite to decrease difficulty."
MARK_REWRITE_VALIDATE = "Task: validate a rewritten sample."
MARK_TRANSLATE = "Task: translate sample."
MARK_GEVAL_CORRECTNESS = "Task: grade answer correctness."
MARK_GEVAL_FORMAT = "Task: grade format compliance."
MARK_GEVAL_PAIRWISE = "Task: compare two candidate answers."

FORMAT_CONSTRAINTS = (
    'Each example is a JSON object with exactly two string fields: '
    '"input" (the instruction or question) and "output" (the reference answer). '
    "Both must be non-empty."
)


class _SafeMap(dict):
    """Leave unknown placeholders intact instead of raising KeyError."""

    def __missing__(self, key: str) -> str:
        return "{" + key + "}"


def load_template(name: str) -> str:
    return resources.files("sdg.templates").joinpath(f"{name}.txt").read_text("utf-8")


def render(template: str, **values: Any) -> str:
    return template.format_map(_SafeMap(values))


def _quoted(text: str) -> str:
    return json.dumps(text, ensure_ascii=False)


def render_examples(examples: list[dict[str, Any]]) -> str:
    if not examples:
        return ""
    lines = ["Reference examples:"]
    lines += [json.dumps(ex, ensure_ascii=False) for ex in examples]
    return "\n".join(lines) + "\n"


def render_passages(passages: list[tuple[str, str]]) -> str:
    """`passages` is a list of (passage_id, text)."""
    return "\n".join(f"[{pid}] {text}" for pid, text in passages)


def keyword_extraction(instruction: str, domain: str) -> str:
    return render(load_template("keyword_extraction"), instruction=instruction, domain=domain)


def local_generation(
    instruction: str,
    passages: list[tuple[str, str]],
    examples: list[dict[str, Any]],
    batch_size: int,
    batch_index: int,
    template: str | None = None,
) -> str:
    return render(
        template or load_template("generate_local"),
        instruction=instruction,
        passages=render_passages(passages),
        examples=render_examples(examples),
        format=FORMAT_CONSTRAINTS,
        batch_size=batch_size,
        batch_index=batch_index,
    )


def distill_generation(
    instruction: str,
    patterns: list[str],
    examples: list[dict[str, Any]],
    batch_size: int,
    batch_index: int,
    template: str | None = None,
) -> str:
    return render(
        template or load_template("generate_distill"),
        instruction=instruction,
        patterns="\n".join(f"- {p}" for p in patterns),
        examples=render_examples(examples),
        format=FORMAT_CONSTRAINTS,
        batch_size=batch_size,
        batch_index=batch_index,
    )


def field_selection(
    instruction: str, dataset_id: str, columns: list[str], rows: list[dict[str, Any]]
) -> str:
    return render(
        load_template("field_selection"),
        instruction=instruction,
        dataset_id=dataset_id,
        columns=json.dumps(columns, ensure_ascii=False),
        rows="\n".join(json.dumps(r, ensure_ascii=False) for r in rows),
    )


def dataset_scoring(instruction: str, dataset_id: str, rows: list[dict[str, Any]]) -> str:
    return render(
        load_template("dataset_scoring"),
        instruction=instruction,
        dataset_id=dataset_id,
        rows="\n".join(json.dumps(r, ensure_ascii=False) for r in rows),
    )


def pattern_extraction(instruction: str, examples: list[dict[str, Any]]) -> str:
    return render(
        load_template("pattern_extraction"),
        instruction=instruction,
        examples=render_examples(examples),
    )


def judge_correctness(question: str, reference: str, candidate: str) -> str:
    return render(
        load_template("judge_correctness"),
        question=_quoted(question),
        reference=_quoted(reference),
        candidate=_quoted(candidate),
    )


def rewrite(direction: str, instruction: str, input_text: str, output_text: str) -> str:
    name = "rewrite_harden" if direction == "harden" else "rewrite_simplify"
    return render(
        load_template(name),
        instruction=instruction,
        input=_quoted(input_text),
        output=_quoted(output_text),
    )


def rewrite_validate(instruction: str, input_text: str, output_text: str) -> str:
    return render(
        load_template("rewrite_validate"),
        instruction=instruction,
        input=_quoted(input_text),
        output=_quoted(output_text),
    )


def translate(language: str, input_text: str, output_text: str) -> str:
    payload = json.dumps(
        {"input": input_text, "output": output_text}, ensure_ascii=False
    )
    return render(load_template("translate"), language=language, payload=payload)


def geval(metric: str, question: str, reference: str, candidate: str, candidate_b: str | None = None) -> str:
    names = {
        "answer_correctness": "geval_answer_correctness",
        "format_compliance": "geval_format_compliance",
        "pairwise_preference": "geval_pairwise",
    }
    values = {
        "question": _quoted(question),
        "reference": _quoted(reference),
        "candidate": _quoted(candidate),
    }
    if candidate_b is not None:
        values["candidate_b"] = _quoted(candidate_b)
    return render(load_template(names[metric]), **values)


def load_custom_template(path: str | Path) -> str:
    return Path(path).read_text(encoding="utf-8")
