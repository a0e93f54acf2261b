from __future__ import annotations

import json

import pytest

from sdg.config import validate_config
from sdg.core import read_jsonl
from sdg.pipeline import generate_steps, run_generate

from conftest import local_config_doc


def composed_config(tmp_path, corpus_dir, out_name="out"):
    out = tmp_path / out_name
    doc = local_config_doc(corpus_dir, out, n=20)
    doc["quality"] = {
        "enabled": True,
        "judge": {"base_url": "mock://judge", "model": "m"},
        "base_model": {"base_url": "mock://base", "model": "m"},
        "max_rewrite_rounds": 1,
    }
    doc["translate"] = {"enabled": True, "target_language": "ar"}
    return validate_config(doc), out


def script_alternating_base_model(mock):
    """Even-indexed generated samples are always solved, odd never."""

    def respond(request, match):
        tag, idx = match.group(1), int(match.group(2))
        if idx % 2 == 0:
            return f"Reference answer {tag}-{idx}"
        return "not even close"

    mock.add_rule(r"^Synthetic question ([0-9a-f]+)-(\d+):", respond)


class TestGeneratePipelineComposition:
    def test_steps_list_reflects_enabled_stages(self, tmp_path, corpus_dir):
        config, _out = composed_config(tmp_path, corpus_dir)
        assert generate_steps(config) == [
            "task_parsing",
            "prepare",
            "construct_constraints",
            "data_acquisition",
            "structure_process",
            "quality_control",
            "translate",
            "write_output",
        ]

    def test_quality_and_translate_compose(self, tmp_path, corpus_dir, mock_env):
        script_alternating_base_model(mock_env)
        config, out = composed_config(tmp_path, corpus_dir)
        result = run_generate(config)

        report = result.quality_report
        assert report is not None
        counts = report.counts
        assert sum(counts.values()) == 20
        assert counts["learnable"] == 0  # verdicts are deterministic all-or-nothing
        assert counts["solved"] + counts["unsolved"] == 20
        assert report.rewrites_applied == 20  # every sample got a validated rewrite

        # empty learnable set still writes a (zero-line) dataset
        assert result.samples == []
        assert (out / "data.jsonl").read_text(encoding="utf-8") == ""
        assert result.usage["calls"] > 0

        # inspection artifacts land beside the dataset
        quality_report = json.loads((out / "quality_report.json").read_text())
        assert quality_report["counts"] == counts
        solved = read_jsonl(out / "solved.jsonl")
        unsolved = read_jsonl(out / "unsolved.jsonl")
        assert len(solved) == counts["solved"]
        assert len(unsolved) == counts["unsolved"]
        # rewrites were applied, so persisted subsets carry history
        assert all("rewrite_history" in s.metadata for s in solved + unsolved)

    def test_translate_applies_to_learnable_output(self, tmp_path, corpus_dir, mock_env):
        # no quality loop: translation hits all n produced samples
        out = tmp_path / "out_t"
        doc = local_config_doc(corpus_dir, out, n=10)
        doc["translate"] = {"enabled": True, "target_language": "ar"}
        result = run_generate(validate_config(doc))
        assert len(result.samples) == 10
        assert all(s.metadata["language"] == "ar" for s in result.samples)
        assert all(s.input.startswith("[ar] ") for s in result.samples)
        on_disk = read_jsonl(out / "data.jsonl")
        assert [s.to_dict() for s in on_disk] == [s.to_dict() for s in result.samples]

    def test_produced_never_exceeds_requested(self, tmp_path, corpus_dir, mock_env):
        config, _out = composed_config(tmp_path, corpus_dir, out_name="out2")
        script_alternating_base_model(mock_env)
        result = run_generate(config)
        assert len(result.samples) <= config.task.num_samples
