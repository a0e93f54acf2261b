"""Dataset-hub search and preview for the web synthesis path.

Follows the HuggingFace public REST shape (`/api/datasets` for search,
`/rows` for previews) behind a small transport interface so another hub
can be swapped in. Setting `SDG_HUB_FIXTURES` to a directory replays
recorded responses byte-deterministically, which is how all offline
tests and CI runs work.
"""
from __future__ import annotations

import json
import logging
import os
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

import httpx

from .errors import SdgError

logger = logging.getLogger(__name__)

DEFAULT_HUB_URL = "https://huggingface.co"
DEFAULT_SPLIT = "train"
MAX_INFLIGHT = 4


class HubError(SdgError):
    pass


class HubAuthError(HubError):
    pass


class HubTransportError(HubError):
    pass


class DatasetGated(HubError):
    pass


class SplitNotFound(HubError):
    pass


class NoCandidates(HubError):
    pass


@dataclass
class DatasetCandidate:
    dataset_id: str
    description: str = ""
    downloads: int = 0
    columns: list[str] = field(default_factory=list)
    preview: list[dict[str, str]] = field(default_factory=list)


class Transport(Protocol):
    def get(self, path: str, params: dict[str, Any]) -> tuple[int, Any]: ...


class HttpTransport:
    """Real hub access; at most MAX_INFLIGHT requests in flight."""

    def __init__(self, base_url: str = DEFAULT_HUB_URL, token: str = ""):
        self.base_url = base_url.rstrip("/")
        self.token = token
        self._client = httpx.Client(timeout=30.0)
        self._gate = threading.Semaphore(MAX_INFLIGHT)

    def get(self, path: str, params: dict[str, Any]) -> tuple[int, Any]:
        headers = {"Authorization": f"Bearer {self.token}"} if self.token else {}
        with self._gate:
            try:
                resp = self._client.get(self.base_url + path, params=params, headers=headers)
            except httpx.HTTPError as err:
                raise HubTransportError(str(err)) from err
        try:
            body = resp.json()
        except ValueError:
            body = resp.text
        return resp.status_code, body


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", text).strip("_").lower()


class FixtureTransport:
    """Replays recorded responses from a fixture directory.

    Fixture files are JSON envelopes `{"status": int, "body": ...}` named
    `search__<slug(query)>.json` and `rows__<slug(dataset_id)>.json`.
    """

    def __init__(self, fixtures_dir: str | Path):
        self.root = Path(fixtures_dir)
        if not self.root.is_dir():
            raise HubTransportError(f"fixture directory {fixtures_dir!r} does not exist")

    def get(self, path: str, params: dict[str, Any]) -> tuple[int, Any]:
        if path == "/api/datasets":
            name = f"search__{_slug(str(params.get('search', '')))}.json"
        elif path == "/rows":
            name = f"rows__{_slug(str(params.get('dataset', '')))}.json"
        else:
            raise HubTransportError(f"no fixture mapping for path {path!r}")
        target = self.root / name
        if not target.exists():
            raise HubTransportError(f"missing fixture {name} in {self.root}")
        envelope = json.loads(target.read_text(encoding="utf-8"))
        return int(envelope.get("status", 200)), envelope.get("body")


def default_transport(token: str = "") -> Transport:
    fixtures = os.environ.get("SDG_HUB_FIXTURES", "")
    if fixtures:
        return FixtureTransport(fixtures)
    return HttpTransport(token=token)


def _flatten(value: Any) -> str:
    if isinstance(value, str):
        return value
    return json.dumps(value, ensure_ascii=False)


class HubClient:
    """Stateless hub facade; safe for concurrent use."""

    def __init__(self, transport: Transport | None = None, token: str = ""):
        self.transport = transport or default_transport(token)

    def search_datasets(self, keywords: list[str], limit: int) -> list[DatasetCandidate]:
        """One search per keyword, merged by id, most-downloaded first."""
        if not keywords:
            raise ValueError("keywords must be non-empty")
        if limit < 1:
            raise ValueError("limit must be >= 1")
        merged: dict[str, DatasetCandidate] = {}
        for keyword in keywords:
            status, body = self.transport.get(
                "/api/datasets", {"search": keyword, "limit": limit, "full": "true"}
            )
            if status in (401, 403):
                raise HubAuthError(f"dataset search returned {status}")
            if status != 200:
                raise HubTransportError(f"dataset search returned {status}")
            for item in body or []:
                dataset_id = item.get("id")
                if not dataset_id or dataset_id in merged:
                    continue
                merged[dataset_id] = DatasetCandidate(
                    dataset_id=dataset_id,
                    description=item.get("description") or "",
                    downloads=int(item.get("downloads") or 0),
                )
        if not merged:
            raise NoCandidates(f"no datasets found for keywords {keywords!r}")
        ranked = sorted(merged.values(), key=lambda c: (-c.downloads, c.dataset_id))
        return ranked[:limit]

    def fetch_preview(self, candidate: DatasetCandidate, rows: int, split: str = DEFAULT_SPLIT) -> DatasetCandidate:
        """Fill `columns` and `preview` with the first rows of the split."""
        if rows < 1:
            raise ValueError("rows must be >= 1")
        status, body = self.transport.get(
            "/rows",
            {
                "dataset": candidate.dataset_id,
                "config": "default",
                "split": split,
                "offset": 0,
                "length": rows,
            },
        )
        if status in (401, 403):
            raise DatasetGated(
                f"dataset {candidate.dataset_id!r} is gated; set the hub token env var"
            )
        if status == 404:
            raise SplitNotFound(f"dataset {candidate.dataset_id!r} has no split {split!r}")
        if status != 200:
            raise HubTransportError(f"rows endpoint returned {status}")
        features = body.get("features") or []
        columns = [f.get("name") for f in features if f.get("name")]
        preview: list[dict[str, str]] = []
        for row_item in (body.get("rows") or [])[:rows]:
            row = row_item.get("row") or {}
            preview.append({k: _flatten(v) for k, v in row.items()})
            if not columns:
                columns = list(row.keys())
        candidate.columns = columns
        candidate.preview = preview
        return candidate
