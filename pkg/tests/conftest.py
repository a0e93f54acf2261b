from __future__ import annotations

import json
from pathlib import Path

import pytest

from sdg.config import EndpointConfig
from sdg.core import UnifiedSample
from sdg.llm import mock_backend

_acceptance_results: dict[int, tuple[str, bool]] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(num, desc): acceptance criterion this test implements"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None and report.when == "call":
        num, desc = marker.args
        previous_ok = _acceptance_results.get(num, (desc, True))[1]
        _acceptance_results[num] = (desc, previous_ok and report.passed)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_acceptance_results):
        desc, ok = _acceptance_results[num]
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {num:>2} [{status}] {desc}")


@pytest.fixture(autouse=True)
def clean_mock_rules():
    mock_backend().reset()
    yield
    mock_backend().reset()


@pytest.fixture
def mock_env(monkeypatch):
    monkeypatch.setenv("SDG_MOCK_LLM", "1")
    return mock_backend()


def make_sample(
    input_text: str = "What is a QRS complex?",
    output_text: str = "The ventricular depolarization wave on an ECG.",
    source: str = "local",
    **metadata,
) -> UnifiedSample:
    meta = {"source": source, "task_id": "t0", **metadata}
    return UnifiedSample(input=input_text, output=output_text, metadata=meta)


def make_endpoint(name: str = "generator", **overrides) -> EndpointConfig:
    values = {"base_url": f"mock://{name}", "model": "mock"}
    values.update(overrides)
    return EndpointConfig(**values)


@pytest.fixture
def corpus_dir(tmp_path: Path) -> Path:
    root = tmp_path / "corpus"
    root.mkdir()
    (root / "cardiology.txt").write_text(
        "The cardiology ward treats arrhythmia and heart failure. "
        "An electrocardiogram records cardiac electrical activity. "
        "Beta blockers reduce heart rate and blood pressure.",
        encoding="utf-8",
    )
    (root / "pharmacology.md").write_text(
        "Pharmacology studies drug interactions. Beta blockers and statins "
        "are commonly prescribed. Dosage depends on renal function.",
        encoding="utf-8",
    )
    (root / "notes.txt").write_text(
        "Exam questions should cover cardiology topics such as murmurs, "
        "ischemia, infarction, and electrocardiogram interpretation.",
        encoding="utf-8",
    )
    return root


def local_config_doc(corpus: Path, out: Path, n: int = 10, **extra) -> dict:
    doc = {
        "task": {
            "path": "local",
            "instruction": "Write cardiology exam questions about electrocardiogram findings",
            "domain": "cardiology",
            "num_samples": n,
        },
        "source": {"local": {"corpus_dir": str(corpus)}},
        "generator": {"base_url": "mock://generator", "model": "mock"},
        "output": {"dir": str(out)},
        "parallel": {"n_workers": 4, "checkpoint_dir": str(out / "checkpoints")},
    }
    doc.update(extra)
    return doc


def write_hub_fixtures(root: Path, datasets: list[dict], keywords: list[str]) -> Path:
    """Build a fixture dir: every keyword search returns `datasets` metadata."""
    root.mkdir(parents=True, exist_ok=True)
    search_body = [
        {
            "id": d["id"],
            "downloads": d.get("downloads", 0),
            "description": d.get("description", ""),
        }
        for d in datasets
    ]
    for keyword in keywords:
        slug = _slug(keyword)
        (root / f"search__{slug}.json").write_text(
            json.dumps({"status": 200, "body": search_body}), encoding="utf-8"
        )
    for d in datasets:
        rows = d.get("rows", [])
        body = {
            "features": [{"name": c} for c in d.get("columns", [])],
            "rows": [{"row_idx": i, "row": r} for i, r in enumerate(rows)],
        }
        (root / f"rows__{_slug(d['id'])}.json").write_text(
            json.dumps({"status": d.get("rows_status", 200), "body": body}),
            encoding="utf-8",
        )
    return root


def _slug(text: str) -> str:
    import re

    return re.sub(r"[^A-Za-z0-9]+", "_", text).strip("_").lower()
