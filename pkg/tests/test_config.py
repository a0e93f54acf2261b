from __future__ import annotations

import pytest

from sdg.config import (
    ConfigError,
    dump_config,
    load_config_document,
    validate_config,
)

from conftest import local_config_doc


def minimal_local(tmp_path):
    corpus = tmp_path / "corpus"
    corpus.mkdir(exist_ok=True)
    (corpus / "doc.txt").write_text("some corpus text", encoding="utf-8")
    return {
        "task": {"path": "local", "instruction": "Make questions", "num_samples": 10},
        "source": {"local": {"corpus_dir": str(corpus)}},
    }


class TestDefaults:
    def test_minimal_local_config_gets_documented_defaults(self, tmp_path):
        cfg = validate_config(minimal_local(tmp_path))
        assert cfg.task.language == "en"
        assert cfg.task.seed == 42
        assert cfg.source.local.top_k == 4
        assert cfg.parallel.n_workers == 10
        assert cfg.parallel.retry_limit == 2
        assert cfg.quality.attempts_k == 4
        assert cfg.quality.threshold_solved == 0.8
        assert cfg.quality.threshold_unsolved == 0.2
        assert cfg.quality.max_rewrite_rounds == 1
        assert cfg.generator.temperature == 0.8

    def test_web_defaults(self, tmp_path):
        doc = {
            "task": {"path": "web", "instruction": "mine data", "num_samples": 5},
            "source": {"web": {}},
        }
        cfg = validate_config(doc)
        assert cfg.source.web.preview_rows == 25
        assert cfg.source.web.max_candidate_datasets == 5
        assert cfg.source.web.hub_token_env == "HF_TOKEN"

    def test_validation_is_idempotent(self, tmp_path):
        cfg = validate_config(minimal_local(tmp_path))
        again = validate_config(dump_config(cfg))
        assert dump_config(again) == dump_config(cfg)

    def test_judge_temperature_defaults_to_zero(self, tmp_path):
        doc = minimal_local(tmp_path)
        doc["quality"] = {
            "enabled": True,
            "judge": {"base_url": "mock://judge", "model": "m"},
            "base_model": {"base_url": "mock://base", "model": "m"},
        }
        cfg = validate_config(doc)
        assert cfg.quality.judge.temperature == 0.0
        assert cfg.quality.base_model.temperature == 0.7


class TestViolations:
    def test_thresholds_out_of_order(self, tmp_path):
        doc = minimal_local(tmp_path)
        doc["quality"] = {"threshold_solved": 0.2, "threshold_unsolved": 0.8}
        with pytest.raises(ConfigError) as exc:
            validate_config(doc)
        assert "cross_field" in exc.value.codes()

    def test_web_path_without_web_block(self):
        doc = {"task": {"path": "web", "instruction": "x", "num_samples": 1}}
        with pytest.raises(ConfigError) as exc:
            validate_config(doc)
        issues = exc.value.issues
        assert any(i.code == "missing_field" and i.loc == "source.web" for i in issues)

    def test_unknown_path(self):
        doc = {"task": {"path": "scrape", "instruction": "x", "num_samples": 1}}
        with pytest.raises(ConfigError) as exc:
            validate_config(doc)
        assert "unknown_path" in exc.value.codes()

    def test_unknown_keys_fail_fast(self, tmp_path):
        doc = minimal_local(tmp_path)
        doc["task"]["surprise"] = 1
        with pytest.raises(ConfigError) as exc:
            validate_config(doc)
        assert "unknown_key" in exc.value.codes()

    def test_all_violations_reported_together(self, tmp_path):
        doc = minimal_local(tmp_path)
        doc["quality"] = {"threshold_solved": 0.1, "threshold_unsolved": 0.9}
        doc["task"]["language"] = "english"
        doc["translate"] = {"enabled": True}
        with pytest.raises(ConfigError) as exc:
            validate_config(doc)
        locs = {i.loc for i in exc.value.issues}
        assert {"quality", "task.language", "translate.target_language"} <= locs

    def test_missing_num_samples_is_missing_field(self, tmp_path):
        doc = minimal_local(tmp_path)
        del doc["task"]["num_samples"]
        with pytest.raises(ConfigError) as exc:
            validate_config(doc)
        assert "missing_field" in exc.value.codes()

    def test_non_positive_num_samples(self, tmp_path):
        doc = minimal_local(tmp_path)
        doc["task"]["num_samples"] = 0
        with pytest.raises(ConfigError):
            validate_config(doc)

    def test_relative_base_url_rejected(self, tmp_path):
        doc = minimal_local(tmp_path)
        doc["generator"] = {"base_url": "not-a-url", "model": "m"}
        with pytest.raises(ConfigError):
            validate_config(doc)

    def test_multimodal_requires_non_empty_dir(self, tmp_path):
        doc = minimal_local(tmp_path)
        empty = tmp_path / "imgs"
        empty.mkdir()
        doc["multimodal"] = {"enabled": True, "seed_images_dir": str(empty)}
        with pytest.raises(ConfigError) as exc:
            validate_config(doc)
        assert any("non-empty" in i.message for i in exc.value.issues)

    def test_quality_enabled_requires_endpoints(self, tmp_path):
        doc = minimal_local(tmp_path)
        doc["quality"] = {"enabled": True}
        with pytest.raises(ConfigError) as exc:
            validate_config(doc)
        locs = {i.loc for i in exc.value.issues}
        assert {"quality.judge", "quality.base_model"} <= locs


class TestDocumentLoading:
    def test_yaml_and_json_equivalent(self, tmp_path, corpus_dir):
        out = tmp_path / "out"
        doc = local_config_doc(corpus_dir, out)
        yaml_path = tmp_path / "c.yaml"
        json_path = tmp_path / "c.json"
        import json as json_mod

        import yaml as yaml_mod

        yaml_path.write_text(yaml_mod.safe_dump(doc), encoding="utf-8")
        json_path.write_text(json_mod.dumps(doc), encoding="utf-8")
        from_yaml = validate_config(load_config_document(yaml_path))
        from_json = validate_config(load_config_document(json_path))
        assert dump_config(from_yaml) == dump_config(from_json)
