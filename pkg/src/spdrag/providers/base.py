"""Request/response types and the :class:`Providers` hub.

Backends only speak to a service and report token usage. The hub layers on
everything the pipeline relies on: role to model binding, the in-flight
request cap, bounded retries, structured-output validation with one re-ask,
and exactly one trace entry per service call.
"""

from __future__ import annotations

import asyncio
import contextlib
import threading
import weakref
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from ..errors import DimensionError, ProviderError, SchemaError, TransportError
from ..trace import RunTrace, TraceEntry, WallClock
from .schemas import get_schema, parse_structured

ROLES = ("coordinator", "subagent", "synthesizer", "judge", "baseline")

DEFAULT_MODELS = {
    "coordinator": "gemini-2.5-pro",
    "synthesizer": "gemini-2.5-pro",
    "baseline": "gemini-2.5-pro",
    "subagent": "gemini-2.5-flash",
    "judge": "gpt-5",
}
DEFAULT_EMBED_MODEL = "embed-v4.0"
DEFAULT_RERANK_MODEL = "rerank-v4.0-fast"

REASK = ("\n\nYour previous reply could not be used: {error}. "
         "Reply again with only a JSON object that satisfies the required schema.")


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_content: str
    model_role: str
    temperature: float = 0.0
    response_schema: str | None = None
    tag: str = ""


@dataclass(frozen=True)
class ChatResponse:
    text: str
    parsed: dict | None
    input_tokens: int
    output_tokens: int
    latency: float
    model: str = ""


@dataclass(frozen=True)
class RerankResult:
    original_position: int
    relevance: float


@dataclass(frozen=True)
class RawCompletion:
    text: str
    input_tokens: int
    output_tokens: int


@dataclass(frozen=True)
class RawEmbedding:
    vectors: list
    input_tokens: int


@dataclass(frozen=True)
class RawRerank:
    results: list[tuple[int, float]]
    input_tokens: int


@dataclass(frozen=True)
class RawJudge:
    score: int
    input_tokens: int = 0
    output_tokens: int = 0


class ChatBackend(Protocol):
    async def complete(self, model: str, request: ChatRequest, schema: dict | None) -> RawCompletion: ...


class EmbedBackend(Protocol):
    async def embed(self, model: str, texts: list[str], purpose: str) -> RawEmbedding: ...


class RerankBackend(Protocol):
    async def rerank(self, model: str, query: str, candidates: list[str], top_n: int) -> RawRerank: ...


class JudgeBackend(Protocol):
    async def score(self, question: str, gold: str, predicted: str) -> RawJudge: ...


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_delay: float = 0.5
    max_delay: float = 8.0

    def delay(self, attempt: int) -> float:
        return min(self.max_delay, self.base_delay * 2 ** (attempt - 1))


class _Limiter:
    """One semaphore per event loop, so a hub survives repeated ``asyncio.run``."""

    def __init__(self, cap: int):
        if cap < 1:
            raise ValueError("request cap must be >= 1")
        self.cap = cap
        self._sems: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()
        self._lock = threading.Lock()
        self.in_flight = 0
        self.peak = 0

    def _sem(self) -> asyncio.Semaphore:
        loop = asyncio.get_running_loop()
        with self._lock:
            sem = self._sems.get(loop)
            if sem is None:
                sem = self._sems[loop] = asyncio.Semaphore(self.cap)
            return sem

    @contextlib.asynccontextmanager
    async def slot(self):
        async with self._sem():
            with self._lock:
                self.in_flight += 1
                self.peak = max(self.peak, self.in_flight)
            try:
                yield
            finally:
                with self._lock:
                    self.in_flight -= 1


@dataclass
class Providers:
    """Shared, concurrency-safe facade over the model services."""

    chat_backend: ChatBackend
    embed_backend: EmbedBackend
    rerank_backend: RerankBackend
    judge_backend: JudgeBackend | None = None
    models: dict = field(default_factory=lambda: dict(DEFAULT_MODELS))
    embed_model: str = DEFAULT_EMBED_MODEL
    rerank_model: str = DEFAULT_RERANK_MODEL
    dimension: int | None = None
    trace: RunTrace = field(default_factory=RunTrace)
    clock: object = field(default_factory=WallClock)
    request_cap: int = 8
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    sleep: object = asyncio.sleep
    judge_template: str | None = None
    _limiter: _Limiter | None = None

    def __post_init__(self):
        if self._limiter is None:
            self._limiter = _Limiter(self.request_cap)
        for role in ROLES:
            self.models.setdefault(role, DEFAULT_MODELS[role])

    def with_trace(self, trace: RunTrace | None = None, clock=None) -> "Providers":
        """A view sharing backends and the request cap but writing to ``trace``."""
        return replace(self, trace=trace if trace is not None else RunTrace(),
                       clock=clock if clock is not None else self.clock, _limiter=self._limiter)

    def model_for(self, role: str) -> str:
        try:
            return self.models[role]
        except KeyError:
            raise ProviderError(f"no model bound to role {role!r}") from None

    @property
    def peak_in_flight(self) -> int:
        return self._limiter.peak

    def _record(self, kind, role, model, in_tok, out_tok, t0, t1, ok=True, error=None, tag=""):
        self.trace.append(TraceEntry(kind=kind, role=role, model=model, input_tokens=int(in_tok),
                                     output_tokens=int(out_tok), latency=t1 - t0, start=t0, end=t1,
                                     ok=ok, error=error, tag=tag))

    async def _attempt(self, kind: str, role: str, model: str, tag: str, thunk):
        """Run ``thunk`` under the cap with retries. Failed attempts are traced here."""
        attempts = self.retry.max_attempts
        for attempt in range(1, attempts + 1):
            async with self._limiter.slot():
                t0 = self.clock()
                try:
                    result = await thunk()
                except TransportError as exc:
                    t1 = self.clock()
                    self._record(kind, role, model, 0, 0, t0, t1, ok=False, error=f"transport: {exc}", tag=tag)
                    if attempt == attempts:
                        raise ProviderError(f"{kind} call to {model} failed after {attempts} attempts: {exc}") from exc
                except ProviderError as exc:
                    t1 = self.clock()
                    self._record(kind, role, model, 0, 0, t0, t1, ok=False, error=str(exc), tag=tag)
                    raise
                else:
                    return result, t0, self.clock()
            await self.sleep(self.retry.delay(attempt))
        raise AssertionError("unreachable")  # pragma: no cover

    async def chat(self, req: ChatRequest) -> ChatResponse:
        if not req.system_prompt.strip() or not req.user_content.strip():
            raise ValueError("chat prompts must be non-empty")
        model = self.model_for(req.model_role)
        schema = get_schema(req.response_schema) if req.response_schema else None
        current = req
        for ask in (1, 2):
            raw, t0, t1 = await self._attempt("chat", req.model_role, model, req.tag,
                                              lambda r=current: self.chat_backend.complete(model, r, schema))
            if schema is None:
                self._record("chat", req.model_role, model, raw.input_tokens, raw.output_tokens, t0, t1, tag=req.tag)
                return ChatResponse(raw.text, None, raw.input_tokens, raw.output_tokens, t1 - t0, model)
            try:
                parsed = parse_structured(raw.text, req.response_schema)
            except SchemaError as exc:
                self._record("chat", req.model_role, model, raw.input_tokens, raw.output_tokens, t0, t1,
                             ok=False, error=f"schema: {exc}", tag=req.tag)
                if ask == 2:
                    raise
                current = replace(req, user_content=req.user_content + REASK.format(error=exc))
                continue
            self._record("chat", req.model_role, model, raw.input_tokens, raw.output_tokens, t0, t1, tag=req.tag)
            return ChatResponse(raw.text, parsed, raw.input_tokens, raw.output_tokens, t1 - t0, model)
        raise AssertionError("unreachable")  # pragma: no cover

    async def embed(self, texts: Sequence[str], role: str = "ingest", tag: str = "",
                    purpose: str = "document") -> list[np.ndarray]:
        texts = list(texts)
        if not texts:
            raise ValueError("embed needs at least one text")
        for i, t in enumerate(texts):
            if not t or not t.strip():
                raise ValueError(f"cannot embed empty text at position {i}")
        model = self.embed_model
        raw, t0, t1 = await self._attempt("embed", role, model, tag,
                                          lambda: self.embed_backend.embed(model, texts, purpose))
        vectors = [np.asarray(v, dtype=np.float64) for v in raw.vectors]
        if len(vectors) != len(texts):
            self._record("embed", role, model, raw.input_tokens, 0, t0, t1, ok=False, error="count mismatch", tag=tag)
            raise ProviderError(f"embedder returned {len(vectors)} vectors for {len(texts)} texts")
        dims = {v.shape[0] for v in vectors}
        if len(dims) != 1 or (self.dimension is not None and dims != {self.dimension}):
            self._record("embed", role, model, raw.input_tokens, 0, t0, t1, ok=False, error="dimension", tag=tag)
            raise DimensionError(f"embedding dimensions {sorted(dims)}, expected {self.dimension}")
        self._record("embed", role, model, raw.input_tokens, 0, t0, t1, tag=tag)
        return vectors

    async def rerank(self, query: str, candidates: Sequence[str], top_n: int, role: str = "subagent",
                     tag: str = "") -> list[RerankResult]:
        candidates = list(candidates)
        if not candidates:
            raise ValueError("rerank needs at least one candidate")
        if top_n < 1:
            raise ValueError(f"top_n must be >= 1, got {top_n}")
        model = self.rerank_model
        raw, t0, t1 = await self._attempt("rerank", role, model, tag,
                                          lambda: self.rerank_backend.rerank(model, query, candidates, top_n))
        results = [RerankResult(int(p), float(r)) for p, r in raw.results]
        bad = [r for r in results if not 0 <= r.original_position < len(candidates)]
        if bad or len(results) > top_n:
            self._record("rerank", role, model, raw.input_tokens, 0, t0, t1, ok=False, error="invalid result", tag=tag)
            raise ProviderError(f"reranker returned invalid results {raw.results!r}")
        results.sort(key=lambda r: (-r.relevance, r.original_position))
        self._record("rerank", role, model, raw.input_tokens, 0, t0, t1, tag=tag)
        return results

    async def judge(self, question: str, gold: str, predicted: str, tag: str = "") -> int:
        if not (question.strip() and gold.strip() and predicted.strip()):
            raise ValueError("judge inputs must be non-empty")
        if self.judge_backend is not None:
            model = self.model_for("judge")
            raw, t0, t1 = await self._attempt("judge", "judge", model, tag,
                                              lambda: self.judge_backend.score(question, gold, predicted))
            self._record("judge", "judge", model, raw.input_tokens, raw.output_tokens, t0, t1, tag=tag)
            score = raw.score
        else:
            from ..prompts import load_template, render

            template = self.judge_template or load_template("judge")
            resp = await self.chat(ChatRequest(
                system_prompt=render(template, question=question, gold=gold, predicted=predicted),
                user_content="Grade the predicted answer now.",
                model_role="judge", response_schema="judge_score", tag=tag))
            score = resp.parsed["score"]
        if not isinstance(score, int) or not 0 <= score <= 100:
            raise ProviderError(f"judge returned out-of-range score {score!r}")
        return score
