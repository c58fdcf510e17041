import asyncio
import json

import httpx
import numpy as np
import pytest

from spdrag.errors import ProviderError, SchemaError, TransportError, UnknownModelError
from spdrag.providers import (ChatRequest, CoverageJudge, FlakyBackend, MockChat, MockEmbedder, PricingTable,
                              RunTrace, ScriptedChat, TraceEntry, compute_cost, coverage_score, mock_providers,
                              parse_structured)
from spdrag.providers.http import CohereEmbedBackend, CohereRerankBackend, OpenAIChatBackend

from conftest import run


def req(user="What is the revenue?", schema=None, role="baseline", system="You answer questions."):
    return ChatRequest(system_prompt=system, user_content=user, model_role=role, response_schema=schema)


def test_mock_chat_deterministic():
    a = run(mock_providers(seed=3).chat(req(schema="write_todos", role="coordinator")))
    b = run(mock_providers(seed=3).chat(req(schema="write_todos", role="coordinator")))
    assert a.text == b.text and a.parsed == b.parsed
    assert a.parsed["subagent_todos"]


def test_mock_token_counts_are_whitespace_words(providers):
    r = req(user="one two three", system="alpha beta")
    resp = run(providers.chat(r))
    assert resp.input_tokens == 5
    assert resp.output_tokens == len(resp.text.split())
    [e] = providers.trace.entries
    assert (e.input_tokens, e.output_tokens, e.role, e.ok) == (5, resp.output_tokens, "baseline", True)


def test_schema_failure_reasks_once_then_errors():
    chat = ScriptedChat({"coordinator": ["not json", "still not json", json.dumps({"never": "reached"})]})
    p = mock_providers(chat=chat)
    with pytest.raises(SchemaError) as ei:
        run(p.chat(req(schema="write_todos", role="coordinator")))
    assert ei.value.raw == "still not json"
    assert len(chat.calls) == 2
    assert "could not be used" in chat.calls[1].user_content
    assert [e.ok for e in p.trace] == [False, False]


def test_schema_reask_recovers():
    good = {"subagent_todos": ["Extract X."], "synthesis_directive": "Merge. Keep."}
    p = mock_providers(chat=ScriptedChat({"coordinator": ["```json\n{oops", good]}))
    resp = run(p.chat(req(schema="write_todos", role="coordinator")))
    assert resp.parsed == good
    assert [e.ok for e in p.trace] == [False, True]


def test_parse_structured_tolerates_fences_and_prose():
    obj = parse_structured('Sure:\n```json\n{"score": 40}\n```', "judge_score")
    assert obj == {"score": 40}
    with pytest.raises(SchemaError):
        parse_structured('{"score": 140}', "judge_score")
    with pytest.raises(SchemaError):
        parse_structured('{"action": "finalize", "findings": "x", "reasoning": "r"}', "agent_action")


def test_transport_retries_logged_and_bounded():
    flaky = FlakyBackend(MockChat(), failures=2)
    p = mock_providers(chat=flaky)
    resp = run(p.chat(req()))
    assert resp.text
    assert [e.ok for e in p.trace] == [False, False, True]
    assert sum(e.input_tokens for e in p.trace if not e.ok) == 0

    p2 = mock_providers(chat=FlakyBackend(MockChat(), failures=3))
    with pytest.raises(ProviderError, match="3 attempts"):
        run(p2.chat(req()))
    assert len(p2.trace) == 3 and not any(e.ok for e in p2.trace)


def test_backoff_delays():
    delays = []

    async def sleep(d):
        delays.append(d)

    p = mock_providers(chat=FlakyBackend(MockChat(), failures=2), sleep=sleep)
    run(p.chat(req()))
    assert delays == [0.5, 1.0]


def test_empty_prompts_rejected(providers):
    with pytest.raises(ValueError):
        run(providers.chat(req(user="  ")))


def test_embed_contract():
    p = mock_providers(dimension=32)
    vs = run(p.embed(["same text", "same text", "other words"]))
    assert len(vs) == 3 and all(v.shape == (32,) for v in vs)
    np.testing.assert_array_equal(vs[0], vs[1])
    assert float(vs[0] @ vs[0]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        run(p.embed(["ok", ""]))
    with pytest.raises(ValueError):
        run(p.embed([]))


def test_embedder_seed_changes_vectors():
    a = MockEmbedder(16, seed=1).vector("hello world")
    b = MockEmbedder(16, seed=2).vector("hello world")
    assert not np.allclose(a, b)


def test_rerank_contract(providers):
    cands = [f"filler {i}" for i in range(15)]
    cands[7] = "alpha beta gamma"
    out = run(providers.rerank("alpha beta gamma", cands, 5))
    assert len(out) == 5
    assert out[0].original_position == 7 and out[0].relevance == 1.0
    assert all(0 <= r.original_position < 15 for r in out)
    assert [r.relevance for r in out] == sorted((r.relevance for r in out), reverse=True)
    [single] = run(providers.rerank("x", ["only one"], 5))
    assert single.original_position == 0 and 0.0 <= single.relevance <= 1.0
    with pytest.raises(ValueError):
        run(providers.rerank("x", [], 5))
    with pytest.raises(ValueError):
        run(providers.rerank("x", ["a"], 0))


@pytest.mark.parametrize("gold,pred,expected", [
    ("Acme revenue 417 million", "Acme had 417", 50),
    ("Paris, London and Rome", "London", 33),
    ("The answer is 12 apples", "12 apples", 66),
])
def test_coverage_judge_hand_computed(gold, pred, expected):
    assert coverage_score(gold, pred) == expected


def test_judge_extremes(providers):
    assert run(providers.judge("q?", "Acme 417", "Acme 417")) == 100
    assert run(providers.judge("q?", "Acme 417", "I don't know")) == 0
    with pytest.raises(ValueError):
        run(providers.judge("q?", "gold", ""))


def test_judge_via_chat_template():
    p = mock_providers(judge_backend=None)
    assert run(p.judge("q?", "Acme 417 million", "Acme reported 417")) == 66
    [e] = p.trace.entries
    assert e.role == "judge" and e.model == "gpt-5"


def test_compute_cost_examples():
    pricing = PricingTable({"m": (1e-6, 4e-6)})
    assert compute_cost(RunTrace(), pricing) == 0
    t = RunTrace([TraceEntry("chat", "coordinator", "m", 1000, 100, 1.0, 0.0, 1.0)])
    assert compute_cost(t, pricing) == pytest.approx(0.0014, abs=1e-15)
    with pytest.raises(UnknownModelError, match="nope"):
        compute_cost(RunTrace([TraceEntry("chat", "x", "nope", 1, 1, 0, 0, 0)]), pricing)
    with pytest.raises(ValueError):
        PricingTable({"m": (-1.0, 0.0)})


def test_trace_jsonl_roundtrip(tmp_path, providers):
    run(providers.chat(req()))
    run(providers.embed(["a b"]))
    providers.trace.write_jsonl(tmp_path / "t.jsonl")
    back = RunTrace.read_jsonl(tmp_path / "t.jsonl")
    assert back.entries == providers.trace.entries
    assert back.total_tokens == providers.trace.total_tokens


def test_in_flight_cap_respected():
    p = mock_providers(request_cap=3)

    async def many():
        await asyncio.gather(*(p.embed([f"text {i}"]) for i in range(40)))

    run(many())
    assert 1 < p.peak_in_flight <= 3
    assert len(p.trace) == 40


def test_role_model_binding():
    p = mock_providers(models={"subagent": "small-model"})
    resp = run(p.chat(req(role="subagent")))
    assert resp.model == "small-model"
    assert p.model_for("coordinator") == "gemini-2.5-pro"


# HTTP backends against an in-process transport --------------------------------

def test_openai_chat_payload_and_usage(monkeypatch):
    seen = {}

    def handler(request: httpx.Request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "{\"score\": 7}"}}],
                                         "usage": {"prompt_tokens": 11, "completion_tokens": 3}})

    monkeypatch.setenv("TEST_KEY", "secret")
    b = OpenAIChatBackend("https://chat.example/v1", api_key_env="TEST_KEY", transport=httpx.MockTransport(handler))
    out = run(b.complete("m1", req(schema="judge_score", role="judge"), {"type": "object"}))
    assert (out.text, out.input_tokens, out.output_tokens) == ('{"score": 7}', 11, 3)
    assert seen["url"] == "https://chat.example/v1/chat/completions"
    assert seen["auth"] == "Bearer secret"
    body = seen["body"]
    assert body["model"] == "m1" and body["temperature"] == 0.0
    assert body["messages"][0]["role"] == "system"
    assert body["response_format"]["type"] == "json_schema"


def test_http_status_mapping(monkeypatch):
    monkeypatch.setenv("K", "x")
    codes = iter([429, 503, 400])
    t = httpx.MockTransport(lambda r: httpx.Response(next(codes), text="no"))
    b = CohereRerankBackend("https://r.example", api_key_env="K", transport=t)
    with pytest.raises(TransportError):
        run(b.rerank("m", "q", ["a"], 1))
    with pytest.raises(TransportError):
        run(b.rerank("m", "q", ["a"], 1))
    with pytest.raises(ProviderError) as ei:
        run(b.rerank("m", "q", ["a"], 1))
    assert not isinstance(ei.value, TransportError)


def test_missing_api_key_env(monkeypatch):
    monkeypatch.delenv("ABSENT_KEY", raising=False)
    b = CohereEmbedBackend("https://e.example", api_key_env="ABSENT_KEY",
                           transport=httpx.MockTransport(lambda r: httpx.Response(200, json={})))
    with pytest.raises(ProviderError, match="ABSENT_KEY"):
        run(b.embed("m", ["a"]))


def test_cohere_embed_and_rerank_parse(monkeypatch):
    monkeypatch.setenv("K", "x")

    def handler(request):
        if request.url.path == "/v2/embed":
            body = json.loads(request.content)
            assert body["input_type"] == "search_query" and body["output_dimension"] == 4
            return httpx.Response(200, json={"embeddings": {"float": [[1, 0, 0, 0]]},
                                             "meta": {"billed_units": {"input_tokens": 2}}})
        return httpx.Response(200, json={"results": [{"index": 1, "relevance_score": 0.9},
                                                     {"index": 0, "relevance_score": 0.1}]})

    t = httpx.MockTransport(handler)
    e = run(CohereEmbedBackend("https://c.example", "K", dimension=4, transport=t).embed("m", ["q"], "query"))
    assert e.vectors == [[1, 0, 0, 0]] and e.input_tokens == 2
    r = run(CohereRerankBackend("https://c.example", "K", transport=t).rerank("m", "q", ["a", "b"], 2))
    assert r.results == [(1, 0.9), (0, 0.1)]
