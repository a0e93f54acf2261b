"""Local corpus ingestion, chunking, and BM25 ranking.

Scoring follows the Robertson/Zaragoza form:

    score(q, d) = sum over query terms t of
        IDF(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))
    IDF(t) = ln((N - df + 0.5) / (df + 0.5) + 1)

Ties are broken by ascending passage id so rankings are reproducible
across runs and worker counts. The retriever interface is pluggable but
BM25 is the only implementation shipped.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from .errors import SdgError

logger = logging.getLogger(__name__)

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_CHUNK_SIZE = 300
DEFAULT_OVERLAP = 50
MIN_TAIL_TOKENS = 20

TEXT_EXTENSIONS = {".txt", ".md"}

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


class EmptyCorpus(SdgError):
    pass


class EmptyQueryAfterTokenization(SdgError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumeric runs, drop empties."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Passage:
    passage_id: str  # "<doc path>#<chunk ordinal>"
    text: str
    doc_path: str


def chunk_tokens(tokens: list[str], chunk_size: int, overlap: int) -> list[tuple[int, int]]:
    """(start, end) windows over a token list.

    Windows start at multiples of (chunk_size - overlap). A final window
    shorter than MIN_TAIL_TOKENS is merged into the previous one instead
    of standing alone.
    """
    if chunk_size <= overlap:
        raise ValueError("chunk_size must exceed overlap")
    n = len(tokens)
    if n == 0:
        return []
    step = chunk_size - overlap
    spans: list[tuple[int, int]] = []
    start = 0
    while start < n:
        spans.append((start, min(start + chunk_size, n)))
        if start + chunk_size >= n:
            break
        start += step
    if len(spans) > 1 and spans[-1][1] - spans[-1][0] < MIN_TAIL_TOKENS:
        last = spans.pop()
        prev = spans.pop()
        spans.append((prev[0], last[1]))
    return spans


def ingest_corpus(
    corpus_dir: str | Path,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    overlap: int = DEFAULT_OVERLAP,
) -> list[Passage]:
    """Deterministically chunk every .txt/.md file under `corpus_dir`.

    Files are visited in sorted relative-path order; other extensions are
    skipped with a warning. Chunk boundaries are whitespace-token windows.
    """
    root = Path(corpus_dir)
    if not root.is_dir():
        raise EmptyCorpus(f"corpus directory {corpus_dir!r} does not exist")
    passages: list[Passage] = []
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        rel = path.relative_to(root).as_posix()
        if path.suffix.lower() not in TEXT_EXTENSIONS:
            logger.warning("skipping non-text file %s", rel)
            continue
        try:
            text = path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as err:
            logger.warning("skipping unreadable file %s: %s", rel, err)
            continue
        tokens = text.split()
        for ordinal, (start, end) in enumerate(chunk_tokens(tokens, chunk_size, overlap)):
            passages.append(
                Passage(
                    passage_id=f"{rel}#{ordinal}",
                    text=" ".join(tokens[start:end]),
                    doc_path=rel,
                )
            )
    if not passages:
        raise EmptyCorpus(f"no text passages found under {corpus_dir!r}")
    return passages


@dataclass
class Bm25Index:
    """Immutable after build; concurrent searches are safe."""

    postings: dict[str, list[tuple[str, int]]]  # term -> [(passage_id, tf)]
    doc_lengths: dict[str, int]
    avg_doc_len: float
    n_docs: int
    k1: float
    b: float
    passages: dict[str, Passage] = field(default_factory=dict)

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log((self.n_docs - df + 0.5) / (df + 0.5) + 1.0)


def build_index(
    passages: list[Passage], k1: float = DEFAULT_K1, b: float = DEFAULT_B
) -> Bm25Index:
    if not passages:
        raise EmptyCorpus("cannot index an empty passage list")
    postings: dict[str, list[tuple[str, int]]] = {}
    doc_lengths: dict[str, int] = {}
    by_id: dict[str, Passage] = {}
    for passage in passages:
        if passage.passage_id in by_id:
            raise ValueError(f"duplicate passage_id {passage.passage_id!r}")
        by_id[passage.passage_id] = passage
        tokens = tokenize(passage.text)
        doc_lengths[passage.passage_id] = len(tokens)
        counts: dict[str, int] = {}
        for token in tokens:
            counts[token] = counts.get(token, 0) + 1
        for term, tf in counts.items():
            postings.setdefault(term, []).append((passage.passage_id, tf))
    n = len(passages)
    avg = sum(doc_lengths.values()) / n
    return Bm25Index(
        postings=postings,
        doc_lengths=doc_lengths,
        avg_doc_len=avg,
        n_docs=n,
        k1=k1,
        b=b,
        passages=by_id,
    )


def search(index: Bm25Index, query: str, top_k: int) -> list[tuple[Passage, float]]:
    """Rank passages for `query`, best first.

    Returns at most `top_k` passages with strictly positive score; ties
    are broken by ascending passage id.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    terms = tokenize(query)
    if not terms:
        raise EmptyQueryAfterTokenization(f"query {query!r} has no searchable tokens")
    scores: dict[str, float] = {}
    for term in terms:
        hits = index.postings.get(term)
        if not hits:
            continue
        idf = index.idf(term)
        for passage_id, tf in hits:
            dl = index.doc_lengths[passage_id]
            norm = tf + index.k1 * (1.0 - index.b + index.b * dl / index.avg_doc_len)
            scores[passage_id] = scores.get(passage_id, 0.0) + idf * tf * (index.k1 + 1.0) / norm
    ranked = sorted(
        ((pid, s) for pid, s in scores.items() if s > 0.0),
        key=lambda kv: (-kv[1], kv[0]),
    )
    return [(index.passages[pid], s) for pid, s in ranked[:top_k]]


class Retriever(Protocol):
    """Pluggable retrieval interface; BM25 is the shipped implementation."""

    def search(self, query: str, top_k: int) -> list[tuple[Passage, float]]: ...


@dataclass
class Bm25Retriever:
    index: Bm25Index

    def search(self, query: str, top_k: int) -> list[tuple[Passage, float]]:
        return search(self.index, query, top_k)


CACHE_VERSION = 1


def corpus_content_hash(corpus_dir: str | Path) -> str:
    """Hash of every text file's path and bytes; invalidates stale caches."""
    root = Path(corpus_dir)
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        if path.suffix.lower() not in TEXT_EXTENSIONS:
            continue
        digest.update(path.relative_to(root).as_posix().encode("utf-8"))
        digest.update(b"\0")
        digest.update(path.read_bytes())
        digest.update(b"\0")
    return digest.hexdigest()


def load_or_build_index(
    corpus_dir: str | Path,
    cache_path: str | Path | None = None,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    overlap: int = DEFAULT_OVERLAP,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> Bm25Index:
    """Build the index, reusing an on-disk cache when content matches."""
    content_hash = corpus_content_hash(corpus_dir)
    params = {"chunk_size": chunk_size, "overlap": overlap, "k1": k1, "b": b}
    if cache_path is not None:
        cache = Path(cache_path)
        if cache.exists():
            try:
                blob = json.loads(cache.read_text(encoding="utf-8"))
                if (
                    blob.get("version") == CACHE_VERSION
                    and blob.get("content_hash") == content_hash
                    and blob.get("params") == params
                ):
                    return _index_from_blob(blob)
                logger.info("index cache at %s is stale; rebuilding", cache)
            except (json.JSONDecodeError, KeyError, TypeError) as err:
                logger.warning("ignoring unreadable index cache %s: %s", cache, err)
    passages = ingest_corpus(corpus_dir, chunk_size=chunk_size, overlap=overlap)
    index = build_index(passages, k1=k1, b=b)
    if cache_path is not None:
        cache = Path(cache_path)
        cache.parent.mkdir(parents=True, exist_ok=True)
        cache.write_text(
            json.dumps(
                {
                    "version": CACHE_VERSION,
                    "content_hash": content_hash,
                    "params": params,
                    "passages": [
                        {"passage_id": p.passage_id, "text": p.text, "doc_path": p.doc_path}
                        for p in passages
                    ],
                },
                ensure_ascii=False,
            ),
            encoding="utf-8",
        )
    return index


def _index_from_blob(blob: dict) -> Bm25Index:
    passages = [
        Passage(passage_id=p["passage_id"], text=p["text"], doc_path=p["doc_path"])
        for p in blob["passages"]
    ]
    params = blob["params"]
    return build_index(passages, k1=params["k1"], b=params["b"])
