from __future__ import annotations

import json

import httpx
import pytest
from hypothesis import given, strategies as st

from sdg.llm import (
    AuthError,
    ChatMessage,
    ChatRequest,
    LlmClient,
    NoJsonFound,
    ResponseFormatError,
    TransportError,
    UnbalancedJson,
    UsageLedger,
    extract_json_payload,
)

from conftest import make_endpoint


def brute_force_first_json(text: str):
    """Oracle: shortest parseable slice starting at the earliest opener."""
    for i, ch in enumerate(text):
        if ch not in "[{":
            continue
        for j in range(i + 1, len(text) + 1):
            try:
                return json.loads(text[i : j])
            except ValueError:
                continue
    return None


class TestExtractJson:
    def test_strips_code_fences(self):
        assert extract_json_payload('```json\n{"a": 1}\n```') == {"a": 1}

    def test_embedded_array_matches_scan_oracle(self):
        text = "prefix text [1,2,3] suffix"
        assert extract_json_payload(text) == brute_force_first_json(text) == [1, 2, 3]

    def test_no_json_found(self):
        with pytest.raises(NoJsonFound):
            extract_json_payload("no braces here")

    def test_unbalanced(self):
        with pytest.raises(UnbalancedJson):
            extract_json_payload('{"a": [1, 2')

    def test_skips_unbalanced_prefix_finds_later_value(self):
        assert extract_json_payload('{oops then [4, 5]') == [4, 5]

    @given(
        value=st.recursive(
            st.none() | st.booleans() | st.integers() | st.text(max_size=6),
            lambda children: st.lists(children, max_size=3)
            | st.dictionaries(st.text(max_size=4), children, max_size=3),
            max_leaves=8,
        ).filter(lambda v: isinstance(v, (list, dict))),
        prefix=st.text(
            alphabet=st.characters(blacklist_characters="[{", blacklist_categories=("Cs",)),
            max_size=20,
        ),
        suffix=st.text(
            alphabet=st.characters(blacklist_categories=("Cs",)), max_size=20
        ),
    )
    def test_left_inverse_of_serialization(self, value, prefix, suffix):
        text = prefix + json.dumps(value, ensure_ascii=False) + " " + suffix
        assert extract_json_payload(text) == value


class TestMockBackend:
    def test_ping_pong_and_whitespace_token_counts(self, mock_env):
        client = LlmClient()
        response = client.complete(make_endpoint(), ChatRequest.user("ping"))
        assert response.content == "pong"
        assert response.tokens_prompt == 1
        assert response.tokens_completion == 1

    def test_echo_fallback(self, mock_env):
        client = LlmClient()
        response = client.complete(make_endpoint(), ChatRequest.user("hello there world"))
        assert response.content == "hello there world"
        assert response.tokens_prompt == 3

    def test_scripted_rules_take_priority(self, mock_env):
        mock_env.add_rule(r"colou?r", '{"answer": "blue"}')
        client = LlmClient()
        response = client.complete(make_endpoint(), ChatRequest.user("what color is the sky"))
        assert json.loads(response.content) == {"answer": "blue"}

    def test_mock_is_deterministic(self, mock_env):
        client = LlmClient()
        request = ChatRequest.user("Task: synthesize grounded training examples.\nProduce 5 new")
        first = client.complete(make_endpoint(), request)
        second = client.complete(make_endpoint(), request)
        assert first.content == second.content

    def test_mock_scheme_routes_without_env(self, monkeypatch):
        monkeypatch.delenv("SDG_MOCK_LLM", raising=False)
        client = LlmClient()
        response = client.complete(make_endpoint(), ChatRequest.user("ping"))
        assert response.content == "pong"


class TestComplete:
    def test_empty_messages_rejected(self, mock_env):
        with pytest.raises(ValueError):
            LlmClient().complete(make_endpoint(), ChatRequest(messages=()))

    def test_last_message_must_be_user(self, mock_env):
        request = ChatRequest(messages=(ChatMessage("assistant", "hi"),))
        with pytest.raises(ValueError):
            LlmClient().complete(make_endpoint(), request)

    def test_usage_ledger_totals_match_responses(self, mock_env):
        ledger = UsageLedger()
        client = LlmClient(ledger=ledger)
        endpoint = make_endpoint()
        r1 = client.complete(endpoint, ChatRequest.user("one two three"))
        r2 = client.complete(endpoint, ChatRequest.user("ping"))
        totals = ledger.totals()
        assert totals["calls"] == 2
        assert totals["tokens_prompt"] == r1.tokens_prompt + r2.tokens_prompt
        assert totals["tokens_completion"] == r1.tokens_completion + r2.tokens_completion
        assert totals["failures"] == 0

    def test_json_hint_repair_round(self, mock_env):
        mock_env.add_rule(r"could not be parsed as JSON", '{"fixed": true}')
        mock_env.add_rule(r"GIVE ME JSON", "sorry, no json here")
        client = LlmClient()
        response = client.complete(
            make_endpoint(),
            ChatRequest.user("GIVE ME JSON", response_hint="json_object"),
        )
        assert json.loads(response.content) == {"fixed": True}
        assert client.ledger.totals()["calls"] == 2

    def test_json_hint_fails_after_repair(self, mock_env):
        mock_env.add_rule(r".", "still not json")
        client = LlmClient()
        with pytest.raises(ResponseFormatError):
            client.complete(
                make_endpoint(),
                ChatRequest.user("anything", response_hint="json_object"),
            )


def _chat_payload(content: str) -> dict:
    return {
        "choices": [{"message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": 7, "completion_tokens": 3},
    }


class TestHttpTransport:
    def _client(self, handler, monkeypatch) -> LlmClient:
        monkeypatch.delenv("SDG_MOCK_LLM", raising=False)
        return LlmClient(transport=httpx.MockTransport(handler), sleeper=lambda s: None)

    def test_success_parses_usage(self, monkeypatch):
        def handler(request):
            assert request.url.path.endswith("/chat/completions")
            return httpx.Response(200, json=_chat_payload("fine"))

        client = self._client(handler, monkeypatch)
        response = client.complete(
            make_endpoint(base_url="http://api.test/v1"), ChatRequest.user("q")
        )
        assert response.content == "fine"
        assert (response.tokens_prompt, response.tokens_completion) == (7, 3)

    def test_no_retry_when_limit_zero(self, monkeypatch):
        calls = []

        def handler(request):
            calls.append(1)
            return httpx.Response(503)

        client = self._client(handler, monkeypatch)
        with pytest.raises(TransportError):
            client.complete(
                make_endpoint(base_url="http://down.test"), ChatRequest.user("q"), retry_limit=0
            )
        assert len(calls) == 1

    def test_retries_then_succeeds(self, monkeypatch):
        calls = []

        def handler(request):
            calls.append(1)
            if len(calls) < 3:
                return httpx.Response(429)
            return httpx.Response(200, json=_chat_payload("ok"))

        client = self._client(handler, monkeypatch)
        response = client.complete(
            make_endpoint(base_url="http://flaky.test"), ChatRequest.user("q"), retry_limit=2
        )
        assert response.content == "ok"
        assert len(calls) == 3
        assert client.ledger.totals()["failures"] == 2

    def test_auth_error_not_retried(self, monkeypatch):
        calls = []

        def handler(request):
            calls.append(1)
            return httpx.Response(401)

        client = self._client(handler, monkeypatch)
        with pytest.raises(AuthError):
            client.complete(
                make_endpoint(base_url="http://auth.test"), ChatRequest.user("q"), retry_limit=3
            )
        assert len(calls) == 1

    def test_bearer_header_from_env(self, monkeypatch):
        monkeypatch.setenv("TEST_API_KEY", "sekrit")
        seen = {}

        def handler(request):
            seen["auth"] = request.headers.get("authorization")
            return httpx.Response(200, json=_chat_payload("ok"))

        client = self._client(handler, monkeypatch)
        client.complete(
            make_endpoint(base_url="http://api.test", api_key_env="TEST_API_KEY"),
            ChatRequest.user("q"),
        )
        assert seen["auth"] == "Bearer sekrit"
