"""Single gateway for every chat-completion call in the pipeline.

All endpoints (generator, teacher, judge, base model) speak the
OpenAI-compatible `/chat/completions` schema. Setting `SDG_MOCK_LLM=1`,
or pointing an endpoint at a `mock://` base URL, routes calls to a
deterministic in-process backend so the whole pipeline runs offline.
"""
from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass, replace
from typing import Any, Callable

import httpx

from . import prompts
from .config import DEFAULT_RETRY_LIMIT, EndpointConfig
from .errors import SdgError


class GatewayError(SdgError):
    pass


class AuthError(GatewayError):
    """Credential problem; never retried."""


class TransportError(GatewayError):
    """Network/server failure that survived the retry budget."""


class _FatalTransport(TransportError):
    """Non-transient HTTP failure (4xx other than 429); not retried."""


class ResponseFormatError(GatewayError):
    """A JSON response hint could not be satisfied even after one repair."""


class JsonExtractError(SdgError):
    pass


class NoJsonFound(JsonExtractError):
    pass


class UnbalancedJson(JsonExtractError):
    pass


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    content: str
    image: str | None = None


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.8
    max_tokens: int = 1024
    response_hint: str = "free_text"  # free_text | json_object | json_lines

    @classmethod
    def user(cls, content: str, *, image: str | None = None, **kwargs: Any) -> "ChatRequest":
        return cls(messages=(ChatMessage("user", content, image=image),), **kwargs)

    def text(self) -> str:
        return "\n".join(m.content for m in self.messages)


@dataclass(frozen=True)
class ChatResponse:
    content: str
    tokens_prompt: int
    tokens_completion: int
    latency_s: float


class UsageLedger:
    """Per-endpoint cumulative call and token counters. Thread-safe."""

    def __init__(self, observer: Callable[[int, int], None] | None = None):
        self._lock = threading.Lock()
        self._per: dict[str, dict[str, int]] = {}
        self._observer = observer

    def _bucket(self, key: str) -> dict[str, int]:
        return self._per.setdefault(
            key, {"calls": 0, "tokens_prompt": 0, "tokens_completion": 0, "failures": 0}
        )

    def record_success(self, key: str, tokens_prompt: int, tokens_completion: int) -> None:
        with self._lock:
            bucket = self._bucket(key)
            bucket["calls"] += 1
            bucket["tokens_prompt"] += tokens_prompt
            bucket["tokens_completion"] += tokens_completion
        if self._observer is not None:
            self._observer(tokens_prompt, tokens_completion)

    def record_failure(self, key: str) -> None:
        with self._lock:
            self._bucket(key)["failures"] += 1

    def snapshot(self) -> dict[str, dict[str, int]]:
        with self._lock:
            return {k: dict(v) for k, v in self._per.items()}

    def totals(self) -> dict[str, int]:
        snap = self.snapshot()
        out = {"calls": 0, "tokens_prompt": 0, "tokens_completion": 0, "failures": 0}
        for bucket in snap.values():
            for key in out:
                out[key] += bucket[key]
        return out


_DECODER = json.JSONDecoder()


def extract_json_payload(content: str) -> Any:
    """Return the first balanced JSON value (object or array) in `content`.

    Code fences and any surrounding prose are ignored; scanning starts at
    each `{` or `[` until one position parses.
    """
    starts = [i for i, ch in enumerate(content) if ch in "[{"]
    if not starts:
        raise NoJsonFound("no JSON object or array found")
    for i in starts:
        try:
            value, _ = _DECODER.raw_decode(content, i)
            return value
        except ValueError:
            continue
    raise UnbalancedJson("found JSON opener but no balanced value parses")


def _hash_int(text: str) -> int:
    return int(hashlib.sha256(text.encode("utf-8")).hexdigest()[:8], 16)


def _whitespace_tokens(text: str) -> int:
    return len(text.split())


def _quoted_line(text: str, label: str) -> str | None:
    m = re.search(rf"^{re.escape(label)}: (\".*\")$", text, re.M)
    if m is None:
        return None
    try:
        return json.loads(m.group(1))
    except json.JSONDecodeError:
        return None


def _plain_line(text: str, label: str) -> str:
    m = re.search(rf"^{re.escape(label)}: (.*)$", text, re.M)
    return m.group(1).strip() if m else ""


def _norm(text: str) -> str:
    return " ".join(text.casefold().split())


def _mock_keywords(text: str, h: int) -> str:
    base = _plain_line(text, "Instruction") + " " + _plain_line(text, "Domain")
    seen: list[str] = []
    for word in re.findall(r"[^\W\d_]{4,}", base.lower()):
        if word not in seen:
            seen.append(word)
    words = seen[:10]
    n = 0
    while len(words) < 5:
        words.append(f"topic{(h + n) % 97}")
        n += 1
    return json.dumps(words)


def _mock_generate(text: str, h: int) -> str:
    m = re.search(r"Produce (\d+) new", text)
    batch = int(m.group(1)) if m else 5
    tag = f"{h:08x}"
    items = [
        {
            "input": f"Synthetic question {tag}-{i}: explain aspect {i} of the covered material.",
            "output": f"Reference answer {tag}-{i}: aspect {i} is described by the source constraints.",
        }
        for i in range(batch)
    ]
    return json.dumps(items)


_INPUT_COLUMN_HINTS = ("question", "instruction", "prompt", "input", "query", "text", "q")
_OUTPUT_COLUMN_HINTS = ("answer", "output", "response", "completion", "label", "a")


def _pick_column(columns: list[str], hints: tuple[str, ...], taken: str | None = None) -> str:
    pool = [c for c in columns if c != taken]
    for hint in hints:
        for col in pool:
            if col.lower() == hint:
                return col
    for hint in hints:
        for col in pool:
            if hint in col.lower():
                return col
    return pool[0] if pool else (columns[0] if columns else "")


def _mock_field_selection(text: str, h: int) -> str:
    m = re.search(r"^Columns: (\[.*\])$", text, re.M)
    columns = json.loads(m.group(1)) if m else []
    col_in = _pick_column(columns, _INPUT_COLUMN_HINTS)
    col_out = _pick_column(columns, _OUTPUT_COLUMN_HINTS, taken=col_in)
    return json.dumps({"input": col_in, "output": col_out})


def _mock_dataset_score(text: str, h: int) -> str:
    return json.dumps({"task_consistency": 5 + h % 5, "quality": 5 + (h // 7) % 5})


def _mock_patterns(text: str, h: int) -> str:
    count = 3 + h % 4
    tag = f"{h:08x}"
    return json.dumps(
        [f"Keep answers grounded and self-contained (guide {tag}-{i})." for i in range(count)]
    )


def _mock_judge_correctness(text: str, h: int) -> str:
    reference = _quoted_line(text, "Reference answer") or ""
    candidate = _quoted_line(text, "Candidate answer") or ""
    ref, cand = _norm(reference), _norm(candidate)
    ok = bool(ref) and (ref == cand or ref in cand or cand in ref)
    return "CORRECT" if ok else "INCORRECT"


def _mock_rewrite(kind: str) -> Callable[[str, int], str]:
    def responder(text: str, h: int) -> str:
        original_in = _quoted_line(text, "Input") or ""
        original_out = _quoted_line(text, "Output") or ""
        return json.dumps(
            {
                "input": f"{original_in} [{kind} variant {h:08x}]",
                "output": f"{original_out} [revised for {kind} variant]",
            },
            ensure_ascii=False,
        )

    return responder


def _mock_translate(text: str, h: int) -> str:
    lang = _plain_line(text, "Target language") or "xx"
    try:
        payload = extract_json_payload(text)
    except JsonExtractError:
        payload = {"input": "", "output": ""}
    return json.dumps(
        {
            "input": f"[{lang}] {payload.get('input', '')}",
            "output": f"[{lang}] {payload.get('output', '')}",
        },
        ensure_ascii=False,
    )


def _mock_geval_correctness(text: str, h: int) -> str:
    reference = _quoted_line(text, "Reference") or ""
    candidate = _quoted_line(text, "Candidate") or ""
    score = 5 if _norm(reference) == _norm(candidate) else 2
    return f"The candidate was compared against the reference.\n<score>{score}</score>"


def _mock_geval_format(text: str, h: int) -> str:
    return f"Structure was checked against the request.\n<score>{3 + h % 3}</score>"


def _mock_geval_pairwise(text: str, h: int) -> str:
    reference = _norm(_quoted_line(text, "Reference") or "")
    cand_a = _norm(_quoted_line(text, "Candidate A") or "")
    cand_b = _norm(_quoted_line(text, "Candidate B") or "")
    if cand_a == reference and cand_b != reference:
        verdict = "A"
    elif cand_b == reference and cand_a != reference:
        verdict = "B"
    else:
        verdict = "TIE"
    return f"Both candidates were weighed against the reference.\n<winner>{verdict}</winner>"


_DEFAULT_RESPONDERS: list[tuple[str, Callable[[str, int], str]]] = [
    (prompts.MARK_KEYWORDS, _mock_keywords),
    (prompts.MARK_GENERATE_LOCAL, _mock_generate),
    (prompts.MARK_GENERATE_DISTILL, _mock_generate),
    (prompts.MARK_FIELD_SELECTION, _mock_field_selection),
    (prompts.MARK_DATASET_SCORING, _mock_dataset_score),
    (prompts.MARK_PATTERNS, _mock_patterns),
    (prompts.MARK_JUDGE_CORRECTNESS, _mock_judge_correctness),
    (prompts.MARK_REWRITE_HARDEN, _mock_rewrite("harder")),
    (prompts.MARK_REWRITE_SIMPLIFY, _mock_rewrite("simpler")),
    (prompts.MARK_REWRITE_VALIDATE, lambda text, h: "VALID"),
    (prompts.MARK_TRANSLATE, _mock_translate),
    (prompts.MARK_GEVAL_CORRECTNESS, _mock_geval_correctness),
    (prompts.MARK_GEVAL_FORMAT, _mock_geval_format),
    (prompts.MARK_GEVAL_PAIRWISE, _mock_geval_pairwise),
]


@dataclass
class MockRule:
    pattern: re.Pattern
    respond: str | Callable[[ChatRequest, re.Match], str]


class MockBackend:
    """Deterministic offline backend.

    Responses are pure functions of the request text: scripted rules are
    consulted first (insertion order), then responders that understand the
    default pipeline prompts, then `ping -> pong`, then plain echo of the
    last user message.
    """

    def __init__(self) -> None:
        self._rules: list[MockRule] = []

    def add_rule(self, pattern: str, respond: str | Callable[[ChatRequest, re.Match], str]) -> None:
        self._rules.append(MockRule(re.compile(pattern, re.S), respond))

    def reset(self) -> None:
        self._rules.clear()

    def respond(self, request: ChatRequest) -> str:
        latency = os.environ.get("SDG_MOCK_LATENCY_S", "")
        if latency:
            try:
                time.sleep(float(latency))
            except ValueError:
                pass
        text = request.text()
        for rule in self._rules:
            m = rule.pattern.search(text)
            if m is not None:
                if callable(rule.respond):
                    return rule.respond(request, m)
                return rule.respond
        h = _hash_int(text)
        for marker, responder in _DEFAULT_RESPONDERS:
            if text.startswith(marker) or f"\n{marker}" in text:
                return responder(text, h)
        last_user = next(
            (m.content for m in reversed(request.messages) if m.role == "user"), ""
        )
        if last_user.strip() == "ping":
            return "pong"
        return last_user


_GLOBAL_MOCK = MockBackend()


def mock_backend() -> MockBackend:
    """Process-global mock instance, scriptable from tests."""
    return _GLOBAL_MOCK


def mock_forced() -> bool:
    return os.environ.get("SDG_MOCK_LLM", "") == "1"


def _uses_mock(endpoint: EndpointConfig) -> bool:
    return mock_forced() or endpoint.base_url.startswith("mock://")


_RETRYABLE_STATUS = {429, 500, 502, 503, 504}


class LlmClient:
    """Issues chat completions with retries, repair, and token accounting.

    Safe for concurrent use from worker threads; the ledger is the only
    shared mutable state and its updates are atomic.
    """

    def __init__(
        self,
        ledger: UsageLedger | None = None,
        mock: MockBackend | None = None,
        transport: httpx.BaseTransport | None = None,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self.ledger = ledger or UsageLedger()
        self._mock = mock
        self._transport = transport
        self._sleep = sleeper
        self._http: httpx.Client | None = None
        self._http_lock = threading.Lock()

    def _client(self) -> httpx.Client:
        with self._http_lock:
            if self._http is None:
                self._http = httpx.Client(transport=self._transport)
            return self._http

    def close(self) -> None:
        if self._http is not None:
            self._http.close()

    def complete(
        self,
        endpoint: EndpointConfig,
        request: ChatRequest,
        retry_limit: int = DEFAULT_RETRY_LIMIT,
    ) -> ChatResponse:
        """One chat completion against `endpoint`.

        Transient transport failures (429/5xx/timeouts) are retried with
        exponential backoff up to `retry_limit` extra attempts. When the
        request carries a JSON response hint and the reply does not parse,
        one repair round re-prompts the endpoint with the parse error.
        """
        if not request.messages:
            raise ValueError("request has no messages")
        if request.messages[-1].role != "user":
            raise ValueError("last message must have role 'user'")

        response = self._complete_once(endpoint, request, retry_limit)
        if request.response_hint in ("json_object", "json_lines"):
            try:
                extract_json_payload(response.content)
            except JsonExtractError as err:
                repair = replace(
                    request,
                    messages=request.messages
                    + (
                        ChatMessage("assistant", response.content),
                        ChatMessage(
                            "user",
                            f"Your previous reply could not be parsed as JSON ({err}). "
                            "Respond again with only the corrected JSON.",
                        ),
                    ),
                )
                response = self._complete_once(endpoint, repair, retry_limit)
                try:
                    extract_json_payload(response.content)
                except JsonExtractError as second:
                    raise ResponseFormatError(
                        f"unparseable {request.response_hint} response after repair: {second}"
                    ) from second
        return response

    def _complete_once(
        self, endpoint: EndpointConfig, request: ChatRequest, retry_limit: int
    ) -> ChatResponse:
        key = f"{endpoint.base_url}|{endpoint.model}"
        start = time.monotonic()
        if _uses_mock(endpoint):
            backend = self._mock or _GLOBAL_MOCK
            content = backend.respond(request)
            response = ChatResponse(
                content=content,
                tokens_prompt=sum(_whitespace_tokens(m.content) for m in request.messages),
                tokens_completion=_whitespace_tokens(content),
                latency_s=time.monotonic() - start,
            )
            self.ledger.record_success(key, response.tokens_prompt, response.tokens_completion)
            return response

        last_error: Exception | None = None
        for attempt in range(retry_limit + 1):
            if attempt:
                self._sleep(min(0.2 * 2 ** (attempt - 1), 2.0))
            try:
                response = self._post(endpoint, request, start)
                self.ledger.record_success(key, response.tokens_prompt, response.tokens_completion)
                return response
            except (AuthError, _FatalTransport):
                self.ledger.record_failure(key)
                raise
            except TransportError as err:
                self.ledger.record_failure(key)
                last_error = err
        raise TransportError(
            f"{endpoint.base_url} failed after {retry_limit + 1} attempts: {last_error}"
        )

    def _post(self, endpoint: EndpointConfig, request: ChatRequest, start: float) -> ChatResponse:
        url = endpoint.base_url.rstrip("/") + "/chat/completions"
        headers = {}
        key = endpoint.api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {
            "model": endpoint.model,
            "messages": [_wire_message(m) for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        try:
            resp = self._client().post(
                url, json=payload, headers=headers, timeout=endpoint.timeout_s
            )
        except httpx.HTTPError as err:
            raise TransportError(str(err)) from err
        if resp.status_code in (401, 403):
            raise AuthError(f"{url} returned {resp.status_code}")
        if resp.status_code in _RETRYABLE_STATUS:
            raise TransportError(f"{url} returned {resp.status_code}")
        if resp.status_code >= 400:
            raise _FatalTransport(f"{url} returned {resp.status_code}")
        try:
            data = resp.json()
            content = data["choices"][0]["message"]["content"]
        except (ValueError, LookupError, TypeError) as err:
            raise TransportError(f"malformed completion payload: {err}") from err
        usage = data.get("usage") or {}
        return ChatResponse(
            content=content,
            tokens_prompt=int(usage.get("prompt_tokens", sum(_whitespace_tokens(m.content) for m in request.messages))),
            tokens_completion=int(usage.get("completion_tokens", _whitespace_tokens(content))),
            latency_s=time.monotonic() - start,
        )


def _wire_message(message: ChatMessage) -> dict[str, Any]:
    if message.image is None:
        return {"role": message.role, "content": message.content}
    return {
        "role": message.role,
        "content": [
            {"type": "text", "text": message.content},
            {"type": "image_url", "image_url": {"url": message.image}},
        ],
    }
