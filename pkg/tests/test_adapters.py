from __future__ import annotations

import json

import pytest

from sdg.adapters import NoUsableImages, SeedImageSet, project_batches, translate

from conftest import make_endpoint, make_sample

GENERATOR = make_endpoint("generator")


@pytest.fixture
def images_dir(tmp_path):
    root = tmp_path / "imgs"
    root.mkdir()
    for name in ("a.png", "b.jpg", "c.jpeg"):
        (root / name).write_bytes(b"\x89PNG fake image bytes")
    (root / "notes.txt").write_text("not an image", encoding="utf-8")
    return root


class TestSeedImages:
    def test_load_orders_and_filters(self, images_dir):
        images = SeedImageSet.load(images_dir)
        names = [img.uri.rsplit("/", 1)[-1] for img in images.images]
        assert names == ["a.png", "b.jpg", "c.jpeg"]

    def test_round_robin_assignment(self, images_dir):
        images = SeedImageSet.load(images_dir)
        uris = [img.uri for img in images.images]
        assert project_batches(images, 5) == [uris[0], uris[1], uris[2], uris[0], uris[1]]

    def test_cursor_take_advances(self, images_dir):
        images = SeedImageSet.load(images_dir)
        first, second = images.take(), images.take()
        assert first != second
        assert images.cursor == 2

    def test_captions_sidecar(self, images_dir):
        (images_dir / "captions.jsonl").write_text(
            json.dumps({"uri": "a.png", "caption": "an ECG trace"}) + "\n",
            encoding="utf-8",
        )
        images = SeedImageSet.load(images_dir)
        assert images.images[0].caption == "an ECG trace"
        assert images.images[1].caption is None

    def test_empty_dir_rejected(self, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        with pytest.raises(NoUsableImages):
            SeedImageSet.load(empty)


class TestTranslate:
    def test_empty_list(self, mock_env):
        assert translate([], "ar", GENERATOR) == []

    def test_scripted_mapping_replaces_source_text(self, mock_env):
        mock_env.add_rule(
            r"Task: translate sample",
            json.dumps({"input": "مرحبا", "output": "وداعا"}, ensure_ascii=False),
        )
        sample = make_sample("hello", "goodbye", language="en")
        out = translate([sample], "ar", GENERATOR)
        assert out[0].input == "مرحبا"
        assert out[0].output == "وداعا"
        assert out[0].metadata["language"] == "ar"
        assert "hello" not in out[0].input

    def test_default_mock_translation_updates_language(self, mock_env):
        samples = [make_sample(f"line {i}", f"answer {i}", language="en") for i in range(6)]
        out = translate(samples, "ar", GENERATOR, n_workers=3)
        assert len(out) == len(samples)
        assert all(s.metadata["language"] == "ar" for s in out)
        assert [s.input for s in out] == [f"[ar] line {i}" for i in range(6)]

    def test_placeholder_drop_retries_then_falls_back(self, mock_env):
        calls = []

        def drop_placeholder(request, match):
            calls.append(1)
            return json.dumps({"input": "translated without token", "output": "ok"})

        mock_env.add_rule(r"Task: translate sample", drop_placeholder)
        sample = make_sample("report generated on {{date}}", "the date is {{date}}")
        out = translate([sample], "ar", GENERATOR)
        assert len(calls) == 2  # one retry
        assert out[0].input == sample.input
        assert out[0].metadata["translation_failed"] is True

    def test_placeholders_preserved_passes(self, mock_env):
        mock_env.add_rule(
            r"Task: translate sample",
            json.dumps({"input": "تقرير {{date}}", "output": "التاريخ {{date}}"}, ensure_ascii=False),
        )
        sample = make_sample("report {{date}}", "date {{date}}")
        out = translate([sample], "ar", GENERATOR)
        assert "{{date}}" in out[0].input
        assert out[0].metadata.get("translation_failed") is None

    def test_preserves_order_metadata_and_media_fields(self, mock_env):
        from dataclasses import replace

        samples = [
            replace(
                make_sample(f"q {i}", f"a {i}", language="en", dataset_id="d1"),
                image="img/x.png",
                audio="au/x.wav",
            )
            for i in range(4)
        ]
        out = translate(samples, "fr", GENERATOR)
        assert [s.image for s in out] == ["img/x.png"] * 4
        assert [s.audio for s in out] == ["au/x.wav"] * 4
        for before, after in zip(samples, out):
            assert set(before.metadata) <= set(after.metadata)
            assert after.metadata["dataset_id"] == "d1"

    def test_same_language_sample_skipped(self, mock_env):
        sample = make_sample("bonjour", "salut", language="fr")
        out = translate([sample], "fr", GENERATOR)
        assert out[0] == sample
