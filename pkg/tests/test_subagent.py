import pytest

from spdrag.coordinator import TodoPlan
from spdrag.corpus import Chunk, Document, split_document
from spdrag.index import build_collection
from spdrag.prompts import BUDGET_LINE, FORCE_FINALIZE, QUERY_PREFIX, TASKS_HEADER
from spdrag.providers import FlakyBackend, MockChat, MockEmbedder, ScriptedChat, mock_providers
from spdrag.subagent import FALLBACK_RELEVANCE, execute_search, run_subagent, write_transcript

from conftest import run

PLAN = TodoPlan(("Extract the revenue figure.", "Extract the headcount."), "Merge. Keep numbers.")
DOC = Document("acme", "acme_report.md",
               "# Acme\n\nAcme revenue was 417 million.\n\nHeadcount reached 1200 staff.\n\nThe office moved.")


def setup(chat=None, **kw):
    p = mock_providers(chat=chat, **kw)
    col = run(build_collection(split_document(DOC, 8, 2), p, doc_id=DOC.id))
    return p, col


def search_action(q):
    return {"action": "search", "query": q, "reasoning": "need more"}


FINAL = {"action": "finalize", "findings": "1. Found: 417 million.\n2. Not found in this document.",
         "reasoning": "done", "relevance": 0.75}


def test_mock_agent_reports_every_task():
    p, col = setup()
    f = run(run_subagent("What were revenue and headcount?", DOC, PLAN, col, p))
    assert f.doc_id == "acme" and f.error is None
    assert f.searches_used == 2
    assert "417 million" in f.summary and "1200" in f.summary
    assert f.relevance == 1.0
    assert f.token_count == len(f.summary.split())


def test_prompt_layout():
    chat = ScriptedChat({"subagent": [search_action("revenue"), FINAL]})
    p, col = setup(chat)
    run(run_subagent("What was revenue?", DOC, PLAN, col, p))
    first, second = chat.calls
    assert "acme_report.md" in first.system_prompt
    assert first.user_content.startswith(QUERY_PREFIX + "What was revenue?")
    assert TASKS_HEADER in first.user_content and "2. Extract the headcount." in first.user_content
    assert BUDGET_LINE.format(used=0, limit=5) in first.user_content
    assert BUDGET_LINE.format(used=1, limit=5) in second.user_content
    assert "### Search 1: revenue" in second.user_content and "--- chunk acme#" in second.user_content


def test_search_then_finalize_uses_one_search():
    p, col = setup(ScriptedChat({"subagent": [search_action("revenue"), FINAL]}))
    f = run(run_subagent("q?", DOC, PLAN, col, p))
    assert f.searches_used == 1 and f.relevance == 0.75 and not f.forced
    assert [t["action"] for t in f.transcript] == ["search", "finalize"]


def test_twelve_searches_cut_at_five():
    def script(req):
        return FINAL if req.response_schema == "agent_finalize" else search_action(f"q{len(chat.calls)}")

    chat = ScriptedChat({"subagent": script})
    p, col = setup(chat)
    f = run(run_subagent("q?", DOC, PLAN, col, p))
    assert f.searches_used == 5 and f.forced
    assert len(chat.calls) == 6
    assert chat.calls[-1].response_schema == "agent_finalize"
    assert FORCE_FINALIZE in chat.calls[-1].user_content
    assert len(p.trace.select(kind="embed", role="subagent")) == 5


def test_forced_turn_failure_falls_back_to_evidence():
    chat = ScriptedChat({"subagent": [search_action(f"q{i}") for i in range(12)]})
    p, col = setup(chat)
    f = run(run_subagent("q?", DOC, PLAN, col, p, max_searches=5))
    assert f.searches_used == 5 and f.forced
    assert f.relevance == FALLBACK_RELEVANCE
    assert "--- chunk acme#" in f.summary
    assert len(chat.calls) <= 5 + 2


def test_invalid_action_escalates_to_forced_finalize():
    chat = ScriptedChat({"subagent": ["garbage", "garbage", FINAL]})
    p, col = setup(chat)
    f = run(run_subagent("q?", DOC, PLAN, col, p))
    assert f.searches_used == 0 and f.forced and f.summary == FINAL["findings"]


def test_provider_failure_degrades_to_error_findings():
    p, col = setup()
    p.embed_backend = FlakyBackend(MockEmbedder(64), failures=100, method="embed")
    f = run(run_subagent("revenue?", DOC, PLAN, col, p))
    assert f.error and "attempts" in f.error
    assert f.relevance == 0.0 and f.summary.startswith("[error:")


def test_collection_must_match_document():
    p, col = setup()
    other = Document("beta", "b.md", "text")
    with pytest.raises(ValueError):
        run(run_subagent("q?", other, PLAN, col, p))


def test_execute_search_uses_reranker_scores():
    p, col = setup()
    hits = run(execute_search("revenue 417", col, p, k=15, top_n=2))
    assert len(hits) == 2
    assert "417" in hits[0].chunk.text and hits[0].score == 1.0
    assert [e.kind for e in p.trace if e.role == "subagent"] == ["embed", "rerank"]
    with pytest.raises(ValueError):
        run(execute_search(" ", col, p))


def test_write_transcript(tmp_path):
    p, col = setup()
    f = run(run_subagent("revenue?", DOC, PLAN, col, p))
    write_transcript(f, tmp_path / "t.jsonl")
    lines = (tmp_path / "t.jsonl").read_text().splitlines()
    assert len(lines) == len(f.transcript) and '"finalize"' in lines[-1]
