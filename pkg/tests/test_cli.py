from __future__ import annotations

import json
import os
import signal
import subprocess
import sys
import time
from pathlib import Path

import pytest
import yaml

from conftest import local_config_doc, make_sample
from sdg.core import write_jsonl

CLI = [sys.executable, "-m", "sdg.cli"]


def run_cli(*args, env_extra=None, cwd=None):
    env = dict(os.environ, SDG_MOCK_LLM="1")
    env.update(env_extra or {})
    return subprocess.run(
        CLI + list(args), capture_output=True, text=True, env=env, cwd=cwd, timeout=120
    )


def write_yaml(path: Path, doc: dict) -> Path:
    path.write_text(yaml.safe_dump(doc), encoding="utf-8")
    return path


@pytest.fixture
def generate_config(tmp_path, corpus_dir):
    out = tmp_path / "out"
    return write_yaml(tmp_path / "gen.yaml", local_config_doc(corpus_dir, out, n=10)), out


class TestGenerate:
    def test_valid_config_exits_zero_and_writes_n_lines(self, generate_config):
        config_path, out = generate_config
        proc = run_cli("generate", str(config_path))
        assert proc.returncode == 0, proc.stderr
        data = (out / "data.jsonl").read_text(encoding="utf-8")
        assert len(data.splitlines()) == 10
        assert "wrote 10 samples" in proc.stdout

    def test_malformed_config_exits_one_without_output_dir(self, tmp_path):
        out = tmp_path / "never"
        doc = {
            "task": {"path": "web", "instruction": "x", "num_samples": 3},
            "output": {"dir": str(out)},
        }
        config_path = write_yaml(tmp_path / "bad.yaml", doc)
        proc = run_cli("generate", str(config_path))
        assert proc.returncode == 1
        assert "source.web" in proc.stderr
        assert not out.exists()

    def test_missing_config_file_exits_one(self, tmp_path):
        proc = run_cli("generate", str(tmp_path / "nope.yaml"))
        assert proc.returncode == 1

    def test_runtime_failure_exits_two(self, tmp_path):
        out = tmp_path / "out"
        doc = local_config_doc(tmp_path / "missing_corpus", out, n=5)
        config_path = write_yaml(tmp_path / "gen.yaml", doc)
        proc = run_cli("generate", str(config_path))
        assert proc.returncode == 2
        assert "prepare" in proc.stderr

    def test_sigint_checkpoint_resume_identical_output(self, tmp_path, corpus_dir):
        out = tmp_path / "out"
        doc = local_config_doc(corpus_dir, out, n=40)
        config_path = write_yaml(tmp_path / "gen.yaml", doc)
        env = dict(os.environ, SDG_MOCK_LLM="1", SDG_MOCK_LATENCY_S="0.25")
        proc = subprocess.Popen(
            CLI + ["generate", str(config_path)],
            env=env,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
        )
        ledger_dir = out / "checkpoints"
        deadline = time.monotonic() + 60
        interrupted = False
        while time.monotonic() < deadline:
            if proc.poll() is not None:
                break
            if any(ledger_dir.glob("*.ledger.jsonl")):
                time.sleep(0.3)  # let a few batches land, then interrupt
                proc.send_signal(signal.SIGINT)
                interrupted = True
                break
            time.sleep(0.05)
        proc.wait(timeout=60)
        assert interrupted, "run finished before the interrupt fired"
        assert proc.returncode != 0
        assert not (out / "data.jsonl").exists()

        resumed = run_cli("generate", str(config_path))
        assert resumed.returncode == 0, resumed.stderr
        interrupted_output = (out / "data.jsonl").read_bytes()

        control_out = tmp_path / "control"
        control_doc = local_config_doc(corpus_dir, control_out, n=40)
        control_path = write_yaml(tmp_path / "control.yaml", control_doc)
        control = run_cli("generate", str(control_path))
        assert control.returncode == 0, control.stderr
        assert interrupted_output == (control_out / "data.jsonl").read_bytes()


class TestTrainEval:
    def _dataset(self, tmp_path) -> Path:
        path = tmp_path / "learnable.jsonl"
        write_jsonl(path, [make_sample(f"Q{i}", f"A{i}") for i in range(4)])
        return path

    def test_train_with_noop_trainer_exits_zero(self, tmp_path):
        doc = {
            "data": str(self._dataset(tmp_path)),
            "method": "sft",
            "out_dir": str(tmp_path / "exp"),
            "trainer_cmd": "true {data}",
        }
        proc = run_cli("train", str(write_yaml(tmp_path / "train.yaml", doc)))
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "exp" / "train.jsonl").exists()
        assert (tmp_path / "exp" / "manifest.json").exists()

    def test_train_missing_dataset_exits_one(self, tmp_path):
        doc = {
            "data": str(tmp_path / "absent.jsonl"),
            "trainer_cmd": "true {data}",
        }
        proc = run_cli("train", str(write_yaml(tmp_path / "train.yaml", doc)))
        assert proc.returncode == 1

    def test_trainer_nonzero_exit_maps_to_two(self, tmp_path):
        doc = {
            "data": str(self._dataset(tmp_path)),
            "trainer_cmd": "sh -c 'exit 3' {data}",
            "out_dir": str(tmp_path / "exp"),
        }
        proc = run_cli("train", str(write_yaml(tmp_path / "train.yaml", doc)))
        assert proc.returncode == 2
        assert "3" in proc.stderr

    def test_eval_writes_three_metric_blocks(self, tmp_path):
        doc = {
            "model": {"base_url": "mock://model", "model": "m"},
            "model_b": {"base_url": "mock://model-b", "model": "m"},
            "judge": {"base_url": "mock://judge", "model": "m"},
            "dataset": str(self._dataset(tmp_path)),
            "metrics": ["answer_correctness", "format_compliance", "pairwise_preference"],
            "out_dir": str(tmp_path / "evalout"),
        }
        proc = run_cli("eval", str(write_yaml(tmp_path / "eval.yaml", doc)))
        assert proc.returncode == 0, proc.stderr
        report = json.loads((tmp_path / "evalout" / "eval_report.json").read_text())
        metrics = {m["metric"] for m in report["metrics"]}
        assert metrics == {"answer_correctness", "format_compliance", "pairwise_preference"}
        for block in report["metrics"]:
            assert 0.0 <= block["aggregate"] <= 1.0
            assert len(block["per_item"]) == 4

    def test_eval_missing_dataset_exits_one(self, tmp_path):
        doc = {
            "model": {"base_url": "mock://model", "model": "m"},
            "judge": {"base_url": "mock://judge", "model": "m"},
            "dataset": str(tmp_path / "absent.jsonl"),
        }
        proc = run_cli("eval", str(write_yaml(tmp_path / "eval.yaml", doc)))
        assert proc.returncode == 1

    def test_pairwise_without_model_b_exits_one(self, tmp_path):
        doc = {
            "model": {"base_url": "mock://model", "model": "m"},
            "judge": {"base_url": "mock://judge", "model": "m"},
            "dataset": str(self._dataset(tmp_path)),
            "metrics": ["pairwise_preference"],
        }
        proc = run_cli("eval", str(write_yaml(tmp_path / "eval.yaml", doc)))
        assert proc.returncode == 1
