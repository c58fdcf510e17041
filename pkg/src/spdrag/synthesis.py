"""Recursive, similarity-ordered synthesis of findings into one answer.

Each iteration embeds the current summaries, clusters them with UPGMA on
cosine distance, cuts token-bounded batches from the dendrogram and
synthesizes every batch concurrently with the same prompt. The outputs are
the next iteration's summaries. When batching makes no progress the whole
level is forced into a single batch, so the loop always terminates.
"""

from __future__ import annotations

import asyncio
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .clustering import Batch, distance_matrix, group_by_tokens, matrix_digest, upgma
from .errors import ProviderError, SynthesisError
from .prompts import format_findings_batch, load_template, render
from .providers import ChatRequest, Providers
from .tokens import TokenCounter, WhitespaceCounter

__all__ = ["SummaryItem", "SummarySet", "IterationRecord", "SynthesisResult", "synthesize_batch",
           "recursive_synthesis", "DEFAULT_BUDGET"]

log = logging.getLogger(__name__)

DEFAULT_BUDGET = 750_000


@dataclass(frozen=True)
class SummaryItem:
    id: str
    text: str
    token_count: int


@dataclass
class SummarySet:
    items: list[SummaryItem]
    iteration: int = 0

    def __post_init__(self):
        if not self.items:
            raise ValueError("a summary set needs at least one summary")

    def __len__(self) -> int:
        return len(self.items)

    @property
    def total_tokens(self) -> int:
        return sum(i.token_count for i in self.items)

    @classmethod
    def from_texts(cls, texts: Sequence[tuple[str, str]], counter: TokenCounter, iteration: int = 0) -> "SummarySet":
        return cls([SummaryItem(sid, t, counter.count(t)) for sid, t in texts], iteration)


@dataclass
class IterationRecord:
    iteration: int
    ids: list[str]
    token_counts: list[int]
    distance_digest: str | None
    merges: list[dict]
    batches: list[dict]
    forced: bool
    output_tokens: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthesisResult:
    answer: str
    iterations: list[IterationRecord]

    @property
    def calls(self) -> int:
        return sum(len(r.batches) for r in self.iterations)

    def to_dict(self) -> dict:
        return {"answer": self.answer, "iterations": [r.to_dict() for r in self.iterations]}


async def synthesize_batch(items: Sequence[SummaryItem], query: str, directive: str, providers: Providers,
                           template: str | None = None, tag: str = "") -> str:
    """One synthesis call over ``items``; single-member batches still go through the prompt."""
    if not items:
        raise ValueError("cannot synthesize an empty batch")
    prompt = render(template or load_template("synthesis"), query=query, synthesis_directive=directive,
                    findings=format_findings_batch((i.id, i.text) for i in items))
    resp = await providers.chat(ChatRequest(system_prompt=prompt, user_content=query,
                                            model_role="synthesizer", tag=tag))
    if not resp.text.strip():
        raise ProviderError("synthesizer returned an empty response")
    return resp.text


async def recursive_synthesis(findings: SummarySet, query: str, directive: str, providers: Providers, *,
                              budget: int = DEFAULT_BUDGET, counter: TokenCounter | None = None,
                              singleton_synthesis: bool = True, template: str | None = None) -> SynthesisResult:
    """Reduce ``findings`` to one summary.

    With a single input summary the directive is still applied through one
    synthesis call unless ``singleton_synthesis`` is off, in which case the
    summary is returned untouched.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    counter = counter or WhitespaceCounter()
    items = list(findings.items)
    records: list[IterationRecord] = []
    t = findings.iteration
    try:
        if len(items) == 1:
            if not singleton_synthesis:
                return SynthesisResult(items[0].text, records)
            batch = Batch([0], items[0].token_count, oversize=items[0].token_count > budget,
                          member_ids=[items[0].id])
            out = await synthesize_batch(items, query, directive, providers, template, tag=f"t{t}:b0")
            records.append(IterationRecord(t, [items[0].id], [items[0].token_count], None, [],
                                           [batch.to_dict()], False, [counter.count(out)]))
            return SynthesisResult(out, records)
        while len(items) > 1:
            ids = [i.id for i in items]
            d = await distance_matrix([i.text for i in items], providers, tag=f"t{t}")
            tree = upgma(d, labels=ids)
            batches = group_by_tokens([i.token_count for i in items], tree, budget)
            forced = len(batches) >= len(items)
            if forced:
                log.info("iteration %d: batching made no progress; forcing one batch of %d", t, len(items))
                batches = [Batch(list(range(len(items))), sum(i.token_count for i in items),
                                 forced=True, member_ids=ids)]
            record = IterationRecord(t, ids, [i.token_count for i in items], matrix_digest(d),
                                     tree.to_dict()["merges"], [b.to_dict() for b in batches], forced)
            records.append(record)
            outs = await asyncio.gather(*(
                synthesize_batch([items[m] for m in b.members], query, directive, providers, template,
                                 tag=f"t{t}:b{j}")
                for j, b in enumerate(batches)))
            t += 1
            items = [SummaryItem(f"s{t}-{j}", o, counter.count(o)) for j, o in enumerate(outs)]
            record.output_tokens = [i.token_count for i in items]
        return SynthesisResult(items[0].text, records)
    except (ProviderError, ValueError) as exc:
        raise SynthesisError(f"synthesis aborted in iteration {t}: {exc}", state={
            "iteration": t,
            "summaries": [asdict(i) for i in items],
            "iterations": [r.to_dict() for r in records],
        }) from exc
