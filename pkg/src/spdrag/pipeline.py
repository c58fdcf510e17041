"""One query end to end: plan, per-document fan-out, recursive synthesis.

The three layers run strictly in order. Every document gets its own agent
regardless of how relevant it turns out to be; the coordinator never sees
the documents and so cannot pick among them.
"""

from __future__ import annotations

import asyncio
import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

from .config import Config, build_counter, pricing_table
from .coordinator import TodoPlan, plan
from .corpus import Document, split_document
from .errors import PipelineError, PlanValidationError, ProviderError, SynthesisError
from .index import Collection, build_collection, merge_collections
from .prompts import load_template
from .providers import Providers, RunTrace, compute_cost
from .subagent import Findings, run_subagent
from .synthesis import SummarySet, SynthesisResult, recursive_synthesis
from .tokens import TokenCounter

__all__ = ["IndexedCorpus", "RunResult", "index_corpus", "arun_query", "run_query", "trace_metrics"]

log = logging.getLogger(__name__)


@dataclass
class IndexedCorpus:
    """Documents plus one private collection each. Shared read-only across runs."""

    documents: list[Document]
    collections: dict[str, Collection]
    _global: Collection | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.documents:
            raise ValueError("corpus must contain at least one document")
        missing = [d.id for d in self.documents if d.id not in self.collections]
        if missing:
            raise ValueError(f"documents without a collection: {missing}")

    def __len__(self) -> int:
        return len(self.documents)

    def global_collection(self) -> Collection:
        """All chunks of all documents in one collection (baselines only)."""
        if self._global is None:
            self._global = merge_collections([self.collections[d.id] for d in self.documents])
        return self._global


async def index_corpus(documents: Sequence[Document], providers: Providers, *, chunk_size: int = 1000,
                       chunk_overlap: int = 250, counter: TokenCounter | None = None) -> IndexedCorpus:
    documents = list(documents)
    collections = {}
    for doc in documents:
        chunks = split_document(doc, chunk_size, chunk_overlap, counter)
        collections[doc.id] = await build_collection(chunks, providers, doc_id=doc.id)
    return IndexedCorpus(documents, collections)


def trace_metrics(trace: RunTrace, pricing, latency: float) -> dict:
    return {
        "input_tokens": trace.input_tokens,
        "output_tokens": trace.output_tokens,
        "total_tokens": trace.total_tokens,
        "cost": compute_cost(trace, pricing),
        "latency_seconds": latency,
    }


@dataclass
class RunResult:
    answer: str
    findings: list[Findings]
    plan: TodoPlan
    trace: RunTrace
    metrics: dict
    synthesis: SynthesisResult | None = None

    def to_dict(self) -> dict:
        return {
            "answer": self.answer,
            "plan": self.plan.to_dict(),
            "findings": [f.to_dict() for f in self.findings],
            "synthesis": self.synthesis.to_dict() if self.synthesis else None,
            "metrics": self.metrics,
            "trace": [e.to_dict() for e in self.trace],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, ensure_ascii=False)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


async def arun_query(query: str, corpus: IndexedCorpus, providers: Providers, config: Config | None = None,
                     *, counter: TokenCounter | None = None) -> RunResult:
    """Answer ``query`` over ``corpus``.

    The run records into a fresh trace, so concurrent runs sharing one
    :class:`Providers` do not mix their accounting. Sub-agent failures
    degrade to error-marked findings; coordinator or synthesis failures
    raise :class:`PipelineError` with whatever was computed attached.
    """
    config = config or Config()
    counter = counter or build_counter(config)
    pricing = pricing_table(config)
    prompt_dir = config.paths.prompt_dir
    trace = RunTrace()
    p = providers.with_trace(trace)
    t0 = p.clock()

    try:
        todo_plan = await plan(query, p, template=load_template("coordinator", prompt_dir),
                               max_todos=config.limits.max_todos)
    except (ProviderError, PlanValidationError) as exc:
        raise PipelineError(f"coordinator failed: {exc}", partial={
            "stage": "coordinator", "query": query, "trace": [e.to_dict() for e in trace]}) from exc

    sub_template = load_template("subagent", prompt_dir)
    findings = list(await asyncio.gather(*(
        run_subagent(query, doc, todo_plan, corpus.collections[doc.id], p,
                     max_searches=config.limits.subagent_max_searches, k=config.retrieval.k,
                     top_n=config.retrieval.top_n, template=sub_template, counter=counter)
        for doc in corpus.documents)))
    failed = [f.doc_id for f in findings if f.error]
    if failed:
        log.warning("%d of %d sub-agents failed: %s", len(failed), len(findings), failed)

    summaries = SummarySet([_summary_item(f) for f in findings])
    try:
        synthesis = await recursive_synthesis(summaries, query, todo_plan.synthesis_directive, p,
                                              budget=config.synthesis.budget, counter=counter,
                                              singleton_synthesis=config.synthesis.singleton_synthesis,
                                              template=load_template("synthesis", prompt_dir))
    except SynthesisError as exc:
        raise PipelineError(f"synthesis failed: {exc}", partial={
            "stage": "synthesis", "query": query, "plan": todo_plan.to_dict(),
            "findings": [f.to_dict() for f in findings], "synthesis_state": exc.state,
            "trace": [e.to_dict() for e in trace]}) from exc

    latency = p.clock() - t0
    return RunResult(synthesis.answer, findings, todo_plan, trace, trace_metrics(trace, pricing, latency), synthesis)


def _summary_item(f: Findings):
    from .synthesis import SummaryItem

    return SummaryItem(f.doc_id, f.summary, f.token_count)


def run_query(query: str, corpus: IndexedCorpus, providers: Providers, config: Config | None = None,
              **kwargs) -> RunResult:
    """Blocking wrapper around :func:`arun_query`."""
    return asyncio.run(arun_query(query, corpus, providers, config, **kwargs))
