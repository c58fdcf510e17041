"""Deterministic offline providers.

Every mock is a pure function of ``(seed, request)``. Each call yields to the
event loop exactly once and never waits on anything else, so a
pipeline run on mocks under asyncio is reproducible bit for bit.

- :class:`MockChat` plays every role by reading the prompt layouts from
  :mod:`spdrag.prompts`: the coordinator emits one todo per query keyword,
  agents search once per task and finalize with the evidence sentences that
  share a keyword with each task, the synthesizer concatenates and tags its
  batch, baselines answer extractively.
- :class:`MockEmbedder` hashes each word to a seeded Gaussian vector and sums
  them, so cosine similarity tracks lexical overlap.
- :class:`MockReranker` scores the fraction of query keywords a candidate
  contains.
- :class:`CoverageJudge` scores the fraction of gold keywords the prediction
  contains.
"""

from __future__ import annotations

import asyncio
import hashlib
import json
import math
import re
from collections import Counter
from typing import Callable

import numpy as np

from ..errors import TransportError
from ..prompts import (BUDGET_LINE, FORCE_FINALIZE, QUERY_PREFIX, QUESTION_PREFIX, TASKS_HEADER)
from ..tokens import TokenCounter, WhitespaceCounter
from ..trace import TickClock
from .base import (ChatRequest, Providers, RawCompletion, RawEmbedding, RawJudge, RawRerank)

__all__ = ["MockChat", "ScriptedChat", "MockEmbedder", "MockReranker", "CoverageJudge",
           "FlakyBackend", "mock_providers", "content_tokens", "STOPWORDS"]

STOPWORDS = frozenset("""
a an the and or but if of to in on at by for with from into onto over under as is are was were be been
being do does did done have has had having it its this that these those there their them they he she his
her we our you your i me my what which who whom whose when where why how all any each every some such
no not nor only own same so than too very can will just should would could may might must shall also
about above after again against before below between both during further here more most other out per
then through until up while s t
extract mention mentions quote quoting exact numbers names dates fact facts relevant question document
documents report reported reports value values statement statements
""".split())

_WORD = re.compile(r"\w+")
_SENT = re.compile(r"(?<=[.!?])\s+|\n+")
_CHUNK_HEAD = re.compile(r"^--- chunk (\S+)(?: \(relevance [^)]*\))? ---$", re.M)
_FINDING_HEAD = re.compile(r"^=== finding (\S+) ===$", re.M)
_DOC_HEAD = re.compile(r"^=== document .* ===$", re.M)


def words(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def content_tokens(text: str) -> list[str]:
    """Lower-cased words minus stopwords, unique, in first-seen order."""
    return list(dict.fromkeys(w for w in words(text) if w not in STOPWORDS))


def _sentences(text: str) -> list[str]:
    return [s.strip() for s in _SENT.split(text) if s and s.strip()]


def _matching_sentences(texts, keys: set[str]) -> list[str]:
    out = []
    for t in texts:
        for s in _sentences(t):
            if keys & set(words(s)):
                out.append(s)
    return list(dict.fromkeys(out))


def _seed_int(*parts) -> int:
    h = hashlib.sha256("\x1f".join(map(str, parts)).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little")


# prompt parsing ------------------------------------------------------------

def _line_after(prefix: str, content: str) -> str:
    for line in content.splitlines():
        if line.startswith(prefix):
            return line[len(prefix):].strip()
    return ""


def _tasks(content: str) -> list[str]:
    if TASKS_HEADER not in content:
        return []
    block = content.split(TASKS_HEADER, 1)[1]
    out = []
    for line in block.splitlines()[1:]:
        m = re.match(r"^\d+\. (.*)$", line)
        if not m:
            break
        out.append(m.group(1).strip())
    return out


def _evidence(content: str) -> list[tuple[str, str]]:
    parts = _CHUNK_HEAD.split(content)
    # [before, id1, body1, id2, body2, ...]; bodies stop at the next search header
    out = []
    for cid, body in zip(parts[1::2], parts[2::2]):
        body = re.split(r"^### Search \d+: |^\(no passages returned\)$", body, flags=re.M)[0]
        body = body.split(FORCE_FINALIZE)[0]
        out.append((cid, body.strip()))
    return list(dict((cid, body) for cid, body in out).items())


def _budget(content: str) -> tuple[int, int | None]:
    pattern = re.escape(BUDGET_LINE).replace(r"\{used\}", r"(\d+)").replace(r"\{limit\}", r"(\d+)")
    m = re.search(pattern, content)
    if not m:
        return 0, None
    return int(m.group(1)), int(m.group(2))


class MockChat:
    """Rule-based chat model covering every pipeline role."""

    def __init__(self, seed: int = 0, counter: TokenCounter | None = None, max_todos: int = 12):
        self.seed = seed
        self.counter = counter or WhitespaceCounter()
        self.max_todos = max_todos
        self.calls: list[ChatRequest] = []

    async def complete(self, model: str, request: ChatRequest, schema: dict | None) -> RawCompletion:
        self.calls.append(request)
        await asyncio.sleep(0)  # yield once so concurrent agents interleave, deterministically
        text = self.respond(request)
        return RawCompletion(text, self.counter.count(request.system_prompt) + self.counter.count(request.user_content),
                             self.counter.count(text))

    def respond(self, req: ChatRequest) -> str:
        role, sid = req.model_role, req.response_schema
        if sid == "write_todos":
            return json.dumps(self._plan(req.user_content))
        if sid in ("agent_action", "agent_finalize", "baseline_action", "baseline_finalize"):
            return json.dumps(self._agent(req))
        if sid == "judge_score" or role == "judge":
            return json.dumps({"score": self._judge_from_prompt(req.system_prompt),
                               "rationale": "keyword coverage"})
        if role == "synthesizer":
            return self._synthesize(req.system_prompt)
        return self._answer(req.system_prompt, req.user_content)

    def _plan(self, query: str) -> dict:
        query = query.strip()
        keys = content_tokens(query)
        todos = [f"Extract every fact relevant to the question: {query}"]
        todos += [f"Extract all mentions of {k}, quoting exact numbers, names and dates." for k in keys]
        return {
            "subagent_todos": todos[: self.max_todos],
            "synthesis_directive": ("Merge the per-document findings into one answer to the question. "
                                    "Keep every exact figure and attribute it to its source document. "
                                    "Drop documents that report nothing relevant."),
        }

    def _agent(self, req: ChatRequest) -> dict:
        content = req.user_content
        finalize_only = req.response_schema.endswith("_finalize") or FORCE_FINALIZE in content
        question = _line_after(QUERY_PREFIX, content) or _line_after(QUESTION_PREFIX, content)
        tasks = _tasks(content)
        queries = tasks or [question] + content_tokens(question)
        searched = re.findall(r"^### Search \d+: (.*)$", content, re.M)
        used, limit = _budget(content)
        if not finalize_only and (limit is None or used < limit):
            pending = [q for q in queries if q and q not in searched]
            if pending:
                return {"action": "search", "query": pending[0],
                        "reasoning": f"looking for evidence on: {pending[0]}"}
        evidence = [body for _, body in _evidence(content)]
        if not tasks:
            hits = _matching_sentences(evidence, set(content_tokens(question)))
            answer = " ".join(hits) if hits else "I don't know."
            return {"action": "finalize", "findings": answer, "reasoning": f"{len(hits)} relevant sentences"}
        lines, found = [], 0
        for i, task in enumerate(tasks, 1):
            hits = _matching_sentences(evidence, set(content_tokens(task)))
            if hits:
                found += 1
                lines.append(f"{i}. Found: {' '.join(hits)}")
            else:
                lines.append(f"{i}. Not found in this document.")
        return {"action": "finalize", "findings": "\n".join(lines),
                "reasoning": f"{found} of {len(tasks)} tasks found",
                "relevance": round(found / len(tasks), 6)}

    def _synthesize(self, prompt: str) -> str:
        parts = _FINDING_HEAD.split(prompt)
        items = list(zip(parts[1::2], parts[2::2]))
        if items:
            # the final item body runs into the template's trailing rules section
            sid, body = items[-1]
            items[-1] = (sid, body.split("\n\nRules:")[0])
        seen: set[str] = set()
        out = []
        for sid, body in items:
            kept = []
            for line in body.strip().splitlines():
                line = line.strip()
                if not line or line.endswith("Not found in this document.") or line in seen:
                    continue
                seen.add(line)
                kept.append(line)
            out.append(f"[{sid}] " + " ".join(kept) if kept else f"[{sid}]")
        return "\n".join(out) or "[empty batch]"

    def _answer(self, system_prompt: str, user_content: str) -> str:
        question = _line_after(QUESTION_PREFIX, user_content) or user_content
        starts = [m.start() for m in (_DOC_HEAD.search(system_prompt), _CHUNK_HEAD.search(system_prompt)) if m]
        if not starts:
            return "I don't know."
        context = _DOC_HEAD.sub("", _CHUNK_HEAD.sub("", system_prompt[min(starts):]))
        hits = _matching_sentences([context], set(content_tokens(question)))
        return " ".join(hits) if hits else "I don't know."

    @staticmethod
    def _judge_from_prompt(prompt: str) -> int:
        gold = re.search(r"Gold answer:\n(.*?)\n\nPredicted answer:", prompt, re.S)
        pred = re.search(r"Predicted answer:\n(.*?)\n\nScore from", prompt, re.S)
        if not gold or not pred:
            return 0
        return coverage_score(gold.group(1), pred.group(1))


class ScriptedChat:
    """Replays fixed replies per role (or per ``(role, tag)``); the last reply repeats."""

    def __init__(self, scripts: dict, fallback=None, counter: TokenCounter | None = None):
        self.scripts = {k: list(v) if not callable(v) else v for k, v in scripts.items()}
        self.fallback = fallback
        self.counter = counter or WhitespaceCounter()
        self.calls: list[ChatRequest] = []
        self._pos: Counter = Counter()

    async def complete(self, model: str, request: ChatRequest, schema: dict | None) -> RawCompletion:
        self.calls.append(request)
        key = (request.model_role, request.tag)
        if key not in self.scripts:
            key = request.model_role
        if key not in self.scripts:
            if self.fallback is None:
                raise KeyError(f"no script for role {request.model_role!r}")
            return await self.fallback.complete(model, request, schema)
        script = self.scripts[key]
        if callable(script):
            reply = script(request)
        else:
            reply = script[min(self._pos[key], len(script) - 1)]
            self._pos[key] += 1
        text = reply if isinstance(reply, str) else json.dumps(reply)
        return RawCompletion(text, self.counter.count(request.system_prompt) + self.counter.count(request.user_content),
                             self.counter.count(text))


class MockEmbedder:
    def __init__(self, dimension: int = 64, seed: int = 0, counter: TokenCounter | None = None):
        self.dimension = dimension
        self.seed = seed
        self.counter = counter or WhitespaceCounter()
        self._cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        v = self._cache.get(token)
        if v is None:
            rng = np.random.default_rng(_seed_int("embed", self.seed, token))
            v = self._cache[token] = rng.standard_normal(self.dimension)
        return v

    def vector(self, text: str) -> np.ndarray:
        counts = Counter(w for w in words(text) if w not in STOPWORDS) or Counter(words(text))
        if not counts:
            counts = Counter({"\x00" + text: 1})
        acc = np.zeros(self.dimension)
        for tok in sorted(counts):
            acc += (1.0 + math.log(counts[tok])) * self._token_vector(tok)
        return acc / np.linalg.norm(acc)

    async def embed(self, model: str, texts: list[str], purpose: str = "document") -> RawEmbedding:
        await asyncio.sleep(0)
        return RawEmbedding([self.vector(t) for t in texts], sum(self.counter.count(t) for t in texts))


class MockReranker:
    def __init__(self, counter: TokenCounter | None = None):
        self.counter = counter or WhitespaceCounter()

    @staticmethod
    def relevance(query: str, candidate: str) -> float:
        q = set(content_tokens(query)) or set(words(query))
        if not q:
            return 0.0
        return len(q & set(words(candidate))) / len(q)

    async def rerank(self, model: str, query: str, candidates: list[str], top_n: int) -> RawRerank:
        await asyncio.sleep(0)
        scored = sorted(((i, self.relevance(query, c)) for i, c in enumerate(candidates)),
                        key=lambda t: (-t[1], t[0]))
        tokens = self.counter.count(query) + sum(self.counter.count(c) for c in candidates)
        return RawRerank(scored[:top_n], tokens)


def coverage_score(gold: str, predicted: str) -> int:
    """``floor(100 * covered / total)`` over the gold answer's keywords."""
    keys = content_tokens(gold)
    if not keys:
        return 100 if words(gold) == words(predicted) else 0
    have = set(words(predicted))
    covered = sum(1 for k in keys if k in have)
    return (100 * covered) // len(keys)


class CoverageJudge:
    def __init__(self, counter: TokenCounter | None = None):
        self.counter = counter or WhitespaceCounter()

    async def score(self, question: str, gold: str, predicted: str) -> RawJudge:
        await asyncio.sleep(0)
        tokens = sum(self.counter.count(t) for t in (question, gold, predicted))
        return RawJudge(coverage_score(gold, predicted), tokens, 1)


class FlakyBackend:
    """Wraps a backend and raises :class:`TransportError` on the first ``failures`` calls."""

    def __init__(self, inner, failures: int = 1, method: str = "complete"):
        self.inner = inner
        self.failures = failures
        self.method = method
        self.attempts = 0

    def __getattr__(self, name):
        target = getattr(self.inner, name)
        if name != self.method:
            return target

        async def wrapped(*args, **kwargs):
            self.attempts += 1
            if self.attempts <= self.failures:
                raise TransportError(f"injected failure {self.attempts}")
            return await target(*args, **kwargs)

        return wrapped


def mock_providers(seed: int = 0, dimension: int = 64, counter: TokenCounter | None = None,
                   chat=None, clock: Callable[[], float] | None = None, **kwargs) -> Providers:
    """A fully offline :class:`Providers` with a logical clock."""
    counter = counter or WhitespaceCounter()
    kwargs.setdefault("sleep", _no_sleep)
    kwargs.setdefault("judge_backend", CoverageJudge(counter=counter))  # None routes judging through chat
    return Providers(
        chat_backend=chat if chat is not None else MockChat(seed=seed, counter=counter),
        embed_backend=MockEmbedder(dimension=dimension, seed=seed, counter=counter),
        rerank_backend=MockReranker(counter=counter),
        dimension=dimension,
        clock=clock if clock is not None else TickClock(),
        **kwargs,
    )


async def _no_sleep(_delay: float) -> None:
    return None
