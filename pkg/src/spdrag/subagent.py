"""Document-scoped retrieve-and-reason loop.

One agent per document. Each turn re-sends the full context (system prompt
with the file name, the query, the shared todos, all evidence retrieved so
far) and asks for exactly one structured action. Searches are capped; when
the cap is reached the agent gets a single finalize-only turn, and if that
fails too the retrieved evidence itself becomes the findings.

The same loop, pointed at the global index and without todos, is the
agentic baseline in :mod:`spdrag.evalharness`.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .coordinator import TodoPlan
from .corpus import Document
from .errors import ProviderError, SchemaError
from .index import Collection, ScoredChunk, search
from .prompts import (BUDGET_LINE, FORCE_FINALIZE, QUERY_PREFIX, format_chunk, format_evidence,
                      format_tasks, load_template, render)
from .providers import ChatRequest, Providers
from .tokens import TokenCounter, WhitespaceCounter

__all__ = ["AgentAction", "Findings", "AgentOutcome", "execute_search", "run_agent_loop", "run_subagent",
           "write_transcript", "FALLBACK_RELEVANCE"]

log = logging.getLogger(__name__)

FALLBACK_RELEVANCE = 0.5
NEXT_ACTION = ("Respond with exactly one JSON action object: either a search or a finalize. When you "
               "finalize, also set relevance to a number between 0 and 1 saying how relevant this "
               "document is to the query.")


@dataclass(frozen=True)
class AgentAction:
    action: str
    reasoning: str = ""
    query: str | None = None
    findings: str | None = None
    relevance: float | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "AgentAction":
        if d["action"] == "search":
            return cls("search", d.get("reasoning", ""), query=d["query"])
        rel = d.get("relevance")
        return cls("finalize", d.get("reasoning", ""), findings=d["findings"],
                   relevance=None if rel is None else float(rel))


@dataclass
class AgentOutcome:
    text: str
    relevance: float
    searches_used: int
    evidence: list[tuple[str, list[ScoredChunk]]]
    transcript: list[dict]
    forced: bool = False
    fallback: bool = False
    error: str | None = None


@dataclass
class Findings:
    doc_id: str
    summary: str
    relevance: float
    searches_used: int
    token_count: int
    error: str | None = None
    forced: bool = False
    transcript: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Findings":
        return cls(**d)


async def execute_search(search_query: str, collection: Collection, providers: Providers, k: int = 15,
                         top_n: int = 5, role: str = "subagent", tag: str = "") -> list[ScoredChunk]:
    """Embed the query, take the dense top-``k``, return the reranker's top ``top_n``."""
    if not search_query or not search_query.strip():
        raise ValueError("search query must be non-empty")
    [qvec] = await providers.embed([search_query], role=role, tag=tag, purpose="query")
    hits = search(collection, qvec, k)
    if not hits:
        return []
    ranked = await providers.rerank(search_query, [h.chunk.text for h in hits], top_n, role=role, tag=tag)
    return [ScoredChunk(hits[r.original_position].chunk, r.relevance) for r in ranked]


def _fallback_text(evidence) -> str:
    seen = {}
    for _, hits in evidence:
        for sc in hits:
            seen.setdefault(sc.chunk.chunk_id, sc)
    if not seen:
        return "Not found in this document."
    return "\n\n".join(format_chunk(cid, sc.chunk.text) for cid, sc in seen.items())


async def run_agent_loop(*, system_prompt: str, header: str, collection: Collection, providers: Providers,
                         max_searches: int, role: str, tag: str, k: int = 15, top_n: int = 5,
                         action_schema: str = "agent_action", finalize_schema: str = "agent_finalize",
                         instruction: str = NEXT_ACTION,
                         default_relevance: float | None = None) -> AgentOutcome:
    """Drive one search/finalize conversation.

    Hard provider failures end the loop early: the outcome then carries
    ``error`` and the evidence retrieved up to that point.
    """
    evidence: list[tuple[str, list[ScoredChunk]]] = []
    transcript: list[dict] = []
    searches = 0
    forced = False

    def user_content() -> str:
        return "\n\n".join([
            header,
            BUDGET_LINE.format(used=searches, limit=max_searches),
            format_evidence(evidence),
            FORCE_FINALIZE if forced else instruction,
        ])

    try:
        while True:
            forced = forced or searches >= max_searches
            req = ChatRequest(system_prompt=system_prompt, user_content=user_content(), model_role=role,
                              response_schema=finalize_schema if forced else action_schema, tag=tag)
            try:
                resp = await providers.chat(req)
            except SchemaError as exc:
                transcript.append({"turn": len(transcript) + 1, "action": "invalid", "error": str(exc)})
                if forced:
                    return AgentOutcome(_fallback_text(evidence), FALLBACK_RELEVANCE, searches, evidence,
                                        transcript, forced=True, fallback=True)
                forced = True
                continue
            action = AgentAction.from_dict(resp.parsed)
            if action.action == "finalize":
                transcript.append({"turn": len(transcript) + 1, "action": "finalize",
                                   "findings": action.findings, "relevance": action.relevance})
                rel = action.relevance if action.relevance is not None else default_relevance
                return AgentOutcome(action.findings, rel, searches, evidence, transcript, forced=forced)
            hits = await execute_search(action.query, collection, providers, k=k, top_n=top_n, role=role, tag=tag)
            if collection.doc_id is not None:
                stray = [h.chunk.chunk_id for h in hits if h.chunk.doc_id != collection.doc_id]
                if stray:
                    raise RuntimeError(f"isolation violated: {stray} retrieved for {collection.doc_id!r}")
            evidence.append((action.query, hits))
            searches += 1
            transcript.append({"turn": len(transcript) + 1, "action": "search", "query": action.query,
                               "retrieved": [h.chunk.chunk_id for h in hits]})
    except ProviderError as exc:
        transcript.append({"turn": len(transcript) + 1, "action": "error", "error": str(exc)})
        return AgentOutcome(_fallback_text(evidence), 0.0, searches, evidence, transcript,
                            forced=forced, fallback=True, error=str(exc))


_REPORT_LINE = re.compile(r"Found:|Not found in this document\.", re.I)


async def run_subagent(query: str, doc: Document, plan: TodoPlan, collection: Collection, providers: Providers,
                       *, max_searches: int = 5, k: int = 15, top_n: int = 5, template: str | None = None,
                       counter: TokenCounter | None = None) -> Findings:
    """Run the agent for ``doc`` and return its findings.

    Never raises on provider failure: the returned findings carry ``error``
    and whatever evidence had been gathered, so one bad document cannot sink
    the rest of the fan-out.
    """
    if collection.doc_id != doc.id:
        raise ValueError(f"collection {collection.doc_id!r} does not belong to document {doc.id!r}")
    counter = counter or WhitespaceCounter()
    system_prompt = render(template or load_template("subagent"), file_name=doc.name)
    header = f"{QUERY_PREFIX}{query.strip()}\n\n{format_tasks(plan.sub_agent_todos)}"
    out = await run_agent_loop(system_prompt=system_prompt, header=header, collection=collection,
                               providers=providers, max_searches=max_searches, role="subagent",
                               tag=doc.id, k=k, top_n=top_n)
    if out.error is not None:
        log.warning("sub-agent for %s failed: %s", doc.id, out.error)
        summary = f"[error: {out.error}]\n{out.text}"
        return Findings(doc.id, summary, 0.0, out.searches_used, counter.count(summary), error=out.error,
                        forced=out.forced, transcript=out.transcript)
    relevance = min(1.0, max(0.0, out.relevance if out.relevance is not None else FALLBACK_RELEVANCE))
    if len(_REPORT_LINE.findall(out.text)) < len(plan.sub_agent_todos) and not out.fallback:
        log.warning("findings for %s do not report on every todo", doc.id)
    return Findings(doc.id, out.text, relevance, out.searches_used, counter.count(out.text),
                    forced=out.forced, transcript=out.transcript)


def write_transcript(findings: Findings, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in findings.transcript:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
