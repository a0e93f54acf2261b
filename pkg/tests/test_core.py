from __future__ import annotations

import json

import pytest
from hypothesis import given, strategies as st

from sdg.core import (
    BadSourceError,
    EmptyInputError,
    EmptyOutputError,
    DanglingImageRefError,
    MalformedLineError,
    SchemaViolationError,
    UnifiedSample,
    dedup_key,
    legal_transition,
    read_jsonl,
    validate_sample,
    write_jsonl,
)

from conftest import make_sample


class TestValidateSample:
    def test_trims_whitespace(self):
        sample = UnifiedSample(
            input=" Q ", output="A", metadata={"source": "local", "task_id": "t1"}
        )
        cleaned = validate_sample(sample)
        assert cleaned.input == "Q"
        assert cleaned.output == "A"

    def test_empty_output_rejected(self):
        sample = UnifiedSample(input="Q", output="", metadata={"source": "local", "task_id": "t"})
        with pytest.raises(EmptyOutputError):
            validate_sample(sample)

    def test_whitespace_only_input_rejected(self):
        sample = UnifiedSample(input="  \t", output="A", metadata={"source": "local"})
        with pytest.raises(EmptyInputError):
            validate_sample(sample)

    def test_bad_source_rejected(self):
        sample = UnifiedSample(input="Q", output="A", metadata={"source": "hub"})
        with pytest.raises(BadSourceError):
            validate_sample(sample)

    def test_metadata_keys_canonically_ordered(self):
        sample = UnifiedSample(
            input="Q", output="A", metadata={"task_id": "t", "source": "web", "dataset_id": "d"}
        )
        cleaned = validate_sample(sample)
        assert list(cleaned.metadata) == ["dataset_id", "source", "task_id"]

    def test_image_must_be_declared_on_multimodal_runs(self):
        sample = make_sample().__class__(
            input="Q", output="A", image="img/unknown.png",
            metadata={"source": "local", "task_id": "t"},
        )
        with pytest.raises(DanglingImageRefError):
            validate_sample(sample, allowed_images={"img/cat.png"})
        # without a declared set the image passes through untouched
        assert validate_sample(sample).image == "img/unknown.png"


class TestJsonl:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("", encoding="utf-8")
        assert read_jsonl(path) == []

    def test_round_trip_is_byte_identical(self, tmp_path):
        samples = [
            make_sample("Q1", "A1"),
            make_sample("Q2", "A2", source="web", dataset_id="d1"),
            UnifiedSample(
                input="Q3",
                output="A3",
                image="img/x.png",
                audio="a/x.wav",
                metadata={"source": "distill", "task_id": "t"},
            ),
        ]
        first = tmp_path / "one.jsonl"
        second = tmp_path / "two.jsonl"
        write_jsonl(first, samples)
        write_jsonl(second, read_jsonl(first))
        assert first.read_bytes() == second.read_bytes()

    def test_missing_output_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        lines = [
            json.dumps({"input": "Q", "output": "A", "metadata": {"source": "local", "task_id": "t"}}),
            json.dumps({"input": "Q2", "metadata": {"source": "local", "task_id": "t"}}),
        ]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(SchemaViolationError) as exc:
            read_jsonl(path)
        assert exc.value.line_no == 2

    def test_malformed_json_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"input": "Q"\n', encoding="utf-8")
        with pytest.raises(MalformedLineError) as exc:
            read_jsonl(path)
        assert exc.value.line_no == 1

    def test_unknown_top_level_key_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        record = {
            "input": "Q",
            "output": "A",
            "metadata": {"source": "local", "task_id": "t"},
            "surprise": 1,
        }
        path.write_text(json.dumps(record) + "\n", encoding="utf-8")
        with pytest.raises(SchemaViolationError) as exc:
            read_jsonl(path)
        assert exc.value.line_no == 1

    def test_optional_fields_omitted_not_null(self, tmp_path):
        path = tmp_path / "out.jsonl"
        write_jsonl(path, [make_sample()])
        record = json.loads(path.read_text(encoding="utf-8"))
        assert "image" not in record and "audio" not in record
        assert list(record) == ["input", "output", "metadata"]


_meta_values = st.one_of(st.text(max_size=8), st.integers(), st.booleans())


@given(
    st.lists(
        st.builds(
            UnifiedSample,
            input=st.text(min_size=1, max_size=30).filter(lambda s: s.strip()),
            output=st.text(min_size=1, max_size=30).filter(lambda s: s.strip()),
            image=st.none() | st.just("img/i.png"),
            audio=st.none() | st.just("a/a.wav"),
            metadata=st.fixed_dictionaries(
                {"source": st.sampled_from(["local", "web", "distill"]), "task_id": st.just("t")},
                optional={"language": st.just("en"), "extra": _meta_values},
            ),
        ),
        max_size=12,
    )
)
def test_round_trip_identity_property(tmp_path_factory, samples):
    path = tmp_path_factory.mktemp("rt") / "data.jsonl"
    normalized = [validate_sample(s) for s in samples]
    write_jsonl(path, normalized)
    assert read_jsonl(path) == normalized


def test_dedup_key_collapses_case_and_whitespace():
    assert dedup_key("What is X?") == dedup_key("what  is x?")
    assert dedup_key("a b") != dedup_key("ab")


@pytest.mark.parametrize(
    "current,new,ok",
    [
        ("pending", "running", True),
        ("running", "completed", True),
        ("running", "cancelled", True),
        ("completed", "running", False),
        ("failed", "completed", False),
        ("pending", "completed", False),
        ("running", "running", False),
    ],
)
def test_phase_transitions(current, new, ok):
    assert legal_transition(current, new) is ok
