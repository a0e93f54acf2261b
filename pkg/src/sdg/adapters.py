"""Optional transforms: seed-image projection and multilingual translation.

Both are off by default and activated from config. Images are paired to
generation batches round-robin; translation runs after the quality loop
and never drops a sample, falling back to the original (flagged) when
the translator misbehaves.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path

from .config import EndpointConfig
from .core import UnifiedSample
from .errors import SdgError
from .llm import ChatRequest, JsonExtractError, GatewayError, LlmClient, extract_json_payload
from .parallel import CancelSignal, ParallelExecutor
from . import prompts

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg"}
PLACEHOLDER_RE = re.compile(r"\{\{.*?\}\}")


class NoUsableImages(SdgError):
    pass


@dataclass(frozen=True)
class SeedImage:
    uri: str
    caption: str | None = None


class SeedImageSet:
    """Seed images for multimodal cold start, handed out round-robin."""

    def __init__(self, images: list[SeedImage]):
        if not images:
            raise NoUsableImages("seed image set is empty")
        self.images = images
        self.cursor = 0

    @classmethod
    def load(cls, images_dir: str | Path) -> "SeedImageSet":
        """Load png/jpg files plus optional captions.jsonl sidecar.

        Unreadable images are skipped with a warning; it is an error only
        if nothing usable remains.
        """
        root = Path(images_dir)
        captions: dict[str, str] = {}
        sidecar = root / "captions.jsonl"
        if sidecar.exists():
            for line in sidecar.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    captions[rec["uri"]] = rec.get("caption", "")
                except (json.JSONDecodeError, KeyError, TypeError):
                    logger.warning("ignoring malformed caption line in %s", sidecar)
        images: list[SeedImage] = []
        for path in sorted(root.iterdir()):
            if path.suffix.lower() not in IMAGE_EXTENSIONS:
                continue
            try:
                with open(path, "rb") as fh:
                    fh.read(16)
            except OSError as err:
                logger.warning("skipping unreadable image %s: %s", path.name, err)
                continue
            uri = str(path)
            images.append(SeedImage(uri=uri, caption=captions.get(path.name) or captions.get(uri)))
        if not images:
            raise NoUsableImages(f"no readable png/jpg images under {images_dir!r}")
        return cls(images)

    def assign(self, batch_index: int) -> SeedImage:
        """Deterministic round-robin pairing of batches to images."""
        return self.images[batch_index % len(self.images)]

    def take(self) -> SeedImage:
        image = self.images[self.cursor % len(self.images)]
        self.cursor += 1
        return image

    def uris(self) -> set[str]:
        return {img.uri for img in self.images}


def project_batches(images: SeedImageSet, n_batches: int) -> list[str]:
    """Image uri per generation batch, `[i0, i1, i2, i0, ...]`."""
    return [images.assign(i).uri for i in range(n_batches)]


def _placeholders(text: str) -> list[str]:
    return sorted(PLACEHOLDER_RE.findall(text))


def translate(
    samples: list[UnifiedSample],
    target_language: str,
    generator: EndpointConfig,
    *,
    llm: LlmClient | None = None,
    n_workers: int = 10,
    retry_limit: int = 2,
    cancel: CancelSignal | None = None,
) -> list[UnifiedSample]:
    """Translate input/output of every sample into `target_language`.

    Preserves list length and order, image/audio fields, and all metadata
    keys except `language`. Placeholder tokens of the form `{{...}}` must
    survive byte-exact; a violating translation is retried once and then
    the original sample is kept with a `translation_failed` flag.
    """
    if not samples:
        return []
    client = llm or LlmClient()

    def translate_one(sample: UnifiedSample) -> UnifiedSample:
        if sample.metadata.get("language") == target_language:
            return sample
        request = ChatRequest.user(
            prompts.translate(target_language, sample.input, sample.output),
            temperature=generator.resolved_temperature(0.8),
            max_tokens=generator.max_tokens,
            response_hint="json_object",
        )
        for _ in range(2):  # one retry on placeholder violation
            try:
                response = client.complete(generator, request, retry_limit=retry_limit)
                payload = extract_json_payload(response.content)
                new_in, new_out = payload.get("input"), payload.get("output")
            except (GatewayError, JsonExtractError, AttributeError):
                continue
            if not isinstance(new_in, str) or not isinstance(new_out, str):
                continue
            if not new_in.strip() or not new_out.strip():
                continue
            if _placeholders(sample.input) != _placeholders(new_in):
                continue
            if _placeholders(sample.output) != _placeholders(new_out):
                continue
            return replace(
                sample.with_metadata(language=target_language),
                input=new_in,
                output=new_out,
            )
        return sample.with_metadata(translation_failed=True)

    pool = ParallelExecutor(n_workers)
    results, _ = pool.execute(samples, translate_one, cancel=cancel)
    # translate_one never raises, but keep the fallback airtight anyway
    return [r if r is not None else samples[i].with_metadata(translation_failed=True)
            for i, r in enumerate(results)]
