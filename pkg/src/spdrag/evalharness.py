"""Benchmark protocol: dataset loading, baseline systems, judging, reports.

Four systems are available by name:

``spd_rag``       the full pipeline (:func:`spdrag.pipeline.arun_query`)
``full_context``  every document concatenated into one prompt
``normal_rag``    one global retrieval (top ``normal_rag_k``, reranked to
                  ``top_n``) and one answer call
``agentic_rag``   a single search/finalize agent over the global index

Every number in a report is derived from the per-run trace of the system
being measured. Judge calls go to a separate trace and are reported apart.
"""

from __future__ import annotations

import asyncio
import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Awaitable, Callable, Sequence

from .config import Config, build_counter, pricing_table
from .corpus import Document
from .errors import ProviderError, SpdRagError
from .pipeline import IndexedCorpus, arun_query, index_corpus, trace_metrics
from .prompts import QUESTION_PREFIX, format_chunk, format_documents, load_template, render
from .providers import ChatRequest, Providers, RunTrace, compute_cost
from .subagent import execute_search, run_agent_loop

__all__ = ["TASK_TYPES", "DOMAINS", "EvalInstance", "SystemRun", "InstanceResult", "SystemSummary", "EvalReport",
           "load_dataset", "load_loong", "run_full_context_baseline", "run_normal_rag", "run_agentic_rag",
           "run_spd_rag", "SYSTEMS", "resolve_systems", "evaluate", "aevaluate", "REPORT_SCHEMA"]

log = logging.getLogger(__name__)

TASK_TYPES = ("spotlight_locating", "comparison", "clustering", "chain_of_reasoning")
DOMAINS = ("paper", "financial")

BASELINE_INSTRUCTION = ("Respond with exactly one JSON action object: either a search or a finalize. "
                        "A finalize carries your complete answer to the question in findings.")


@dataclass
class EvalInstance:
    id: str
    question: str
    gold_answer: str
    documents: list[Document]
    task_type: str
    domain: str

    def __post_init__(self):
        if not self.documents:
            raise ValueError(f"instance {self.id!r} has no documents")
        if self.task_type not in TASK_TYPES:
            raise ValueError(f"instance {self.id!r}: task_type {self.task_type!r} not in {TASK_TYPES}")
        if self.domain not in DOMAINS:
            raise ValueError(f"instance {self.id!r}: domain {self.domain!r} not in {DOMAINS}")
        if not self.question.strip() or not self.gold_answer.strip():
            raise ValueError(f"instance {self.id!r}: question and gold_answer must be non-empty")

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "EvalInstance":
        docs = []
        for j, item in enumerate(d["documents"]):
            if "text" in item:
                text = item["text"]
            else:
                path = Path(item["path"])
                if not path.is_absolute() and base_dir is not None:
                    path = base_dir / path
                text = path.read_text(encoding="utf-8")
            doc_id = str(item.get("id", f"{d['id']}-d{j}"))
            docs.append(Document(doc_id, str(item.get("name", doc_id)), text, dict(item.get("metadata", {}))))
        return cls(str(d["id"]), d["question"], d["gold_answer"], docs, d["task_type"], d["domain"])

    def to_dict(self) -> dict:
        return {"id": self.id, "question": self.question, "gold_answer": self.gold_answer,
                "task_type": self.task_type, "domain": self.domain,
                "documents": [d.to_dict() for d in self.documents]}


def load_dataset(path: str | Path) -> tuple[list[EvalInstance], list[str]]:
    """Read a JSONL dataset. Malformed lines are reported, not fatal.

    Returns ``(instances, errors)``; each error names the line number.
    """
    path = Path(path)
    instances, errors = [], []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                inst = EvalInstance.from_dict(json.loads(line), base_dir=path.parent)
                if inst.id in seen:
                    raise ValueError(f"duplicate instance id {inst.id!r}")
            except (ValueError, KeyError, TypeError, OSError) as exc:
                errors.append(f"line {lineno}: {type(exc).__name__}: {exc}")
                continue
            seen.add(inst.id)
            instances.append(inst)
    return instances, errors


def _norm_label(s: str) -> str:
    return "_".join(str(s).lower().replace("-", " ").split())


def load_loong(path: str | Path, docs_dir: str | Path) -> tuple[list[EvalInstance], list[str]]:
    """Best-effort adapter for the public Loong release.

    Reads records with ``id``, ``question``, ``answer``, ``level`` (task
    type), ``type`` (domain) and ``doc`` (file names under ``docs_dir``,
    searched recursively). Records outside the supported task types and
    domains are reported and skipped.
    """
    docs_dir = Path(docs_dir)
    by_name: dict[str, Path] = {}
    for p in sorted(docs_dir.rglob("*")):
        if p.is_file():
            by_name.setdefault(p.name, p)
            by_name.setdefault(p.stem, p)
    instances, errors = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                docs = []
                for j, name in enumerate(rec["doc"]):
                    src = by_name.get(name) or by_name.get(Path(name).stem)
                    if src is None:
                        raise FileNotFoundError(f"document {name!r} not found under {docs_dir}")
                    docs.append(Document(f"{rec['id']}-d{j}", name, src.read_text(encoding="utf-8")))
                answer = rec["answer"]
                if not isinstance(answer, str):
                    answer = json.dumps(answer, ensure_ascii=False)
                question = rec["question"]
                if rec.get("instruction"):
                    question = f"{rec['instruction']}\n{question}"
                instances.append(EvalInstance(str(rec["id"]), question, answer, docs,
                                              _norm_label(rec["level"]), _norm_label(rec["type"])))
            except (ValueError, KeyError, TypeError, OSError) as exc:
                errors.append(f"line {lineno}: {type(exc).__name__}: {exc}")
    return instances, errors


# systems -------------------------------------------------------------------

@dataclass
class SystemRun:
    answer: str
    trace: RunTrace
    latency: float
    skipped: str | None = None
    error: str | None = None
    extra: dict = field(default_factory=dict)


@dataclass
class _Ctx:
    providers: Providers
    config: Config
    corpus: IndexedCorpus | None


async def _timed(providers: Providers, body: Callable[[Providers], Awaitable[tuple[str, dict]]]) -> SystemRun:
    trace = RunTrace()
    p = providers.with_trace(trace)
    t0 = p.clock()
    try:
        answer, extra = await body(p)
    except (SpdRagError, ValueError) as exc:
        return SystemRun("", trace, p.clock() - t0, error=f"{type(exc).__name__}: {exc}")
    return SystemRun(answer, trace, p.clock() - t0, extra=extra)


async def run_full_context_baseline(instance: EvalInstance, providers: Providers,
                                    config: Config | None = None) -> SystemRun:
    """One call with every document in the prompt, or skipped over the context cap."""
    config = config or Config()
    prompt = render(load_template("full_context", config.paths.prompt_dir),
                    documents=format_documents((d.name, d.text) for d in instance.documents))
    user = QUESTION_PREFIX + instance.question
    size = build_counter(config).count(prompt) + build_counter(config).count(user)
    if size > config.eval.context_cap:
        return SystemRun("", RunTrace(), 0.0, skipped=f"context overflow: {size} > {config.eval.context_cap} tokens")

    async def body(p):
        resp = await p.chat(ChatRequest(system_prompt=prompt, user_content=user, model_role="baseline",
                                        tag="full_context"))
        return resp.text, {}

    return await _timed(providers, body)


async def run_normal_rag(instance: EvalInstance, providers: Providers, config: Config | None = None,
                         corpus: IndexedCorpus | None = None) -> SystemRun:
    """Embed the question once, retrieve globally, rerank, answer once."""
    config = config or Config()
    if corpus is None:
        corpus = await _index(instance, providers, config)
    gc = corpus.global_collection()

    async def body(p):
        hits = await execute_search(instance.question, gc, p, k=config.retrieval.normal_rag_k,
                                    top_n=config.retrieval.top_n, role="baseline", tag="normal_rag")
        passages = "\n\n".join(format_chunk(h.chunk.chunk_id, h.chunk.text, h.score) for h in hits)
        prompt = render(load_template("normal_rag", config.paths.prompt_dir), passages=passages or "(none)")
        resp = await p.chat(ChatRequest(system_prompt=prompt, user_content=QUESTION_PREFIX + instance.question,
                                        model_role="baseline", tag="normal_rag"))
        return resp.text, {"retrieved": [h.chunk.chunk_id for h in hits]}

    return await _timed(providers, body)


async def run_agentic_rag(instance: EvalInstance, providers: Providers, config: Config | None = None,
                          corpus: IndexedCorpus | None = None) -> SystemRun:
    """The sub-agent loop pointed at the global index, capped at ``agentic_max_iters`` searches."""
    config = config or Config()
    if corpus is None:
        corpus = await _index(instance, providers, config)
    cap = config.limits.agentic_max_iters
    system_prompt = render(load_template("agentic_rag", config.paths.prompt_dir), max_searches=cap)

    async def body(p):
        out = await run_agent_loop(system_prompt=system_prompt, header=QUESTION_PREFIX + instance.question,
                                   collection=corpus.global_collection(), providers=p, max_searches=cap,
                                   role="baseline", tag="agentic_rag", k=config.retrieval.k,
                                   top_n=config.retrieval.top_n, action_schema="baseline_action",
                                   finalize_schema="baseline_finalize", instruction=BASELINE_INSTRUCTION)
        if out.error:
            raise ProviderError(out.error)
        return out.text, {"searches_used": out.searches_used, "forced": out.forced,
                          "transcript": out.transcript}

    return await _timed(providers, body)


async def run_spd_rag(instance: EvalInstance, providers: Providers, config: Config | None = None,
                      corpus: IndexedCorpus | None = None) -> SystemRun:
    config = config or Config()
    if corpus is None:
        corpus = await _index(instance, providers, config)
    p = providers.with_trace(RunTrace())
    t0 = p.clock()
    try:
        result = await arun_query(instance.question, corpus, p, config)
    except SpdRagError as exc:
        partial = RunTrace()
        from .trace import TraceEntry

        partial.extend(TraceEntry.from_dict(e) for e in getattr(exc, "partial", {}).get("trace", []))
        return SystemRun("", partial, p.clock() - t0, error=f"{type(exc).__name__}: {exc}")
    return SystemRun(result.answer, result.trace, result.metrics["latency_seconds"],
                     extra={"synthesis_calls": result.synthesis.calls if result.synthesis else 0})


SYSTEMS: dict[str, Callable] = {
    "spd_rag": run_spd_rag,
    "full_context": run_full_context_baseline,
    "normal_rag": run_normal_rag,
    "agentic_rag": run_agentic_rag,
}


def resolve_systems(names: Sequence[str]) -> list[str]:
    names = list(names)
    unknown = [n for n in names if n not in SYSTEMS]
    if unknown:
        raise ValueError(f"unknown system(s) {', '.join(unknown)}; valid: {', '.join(SYSTEMS)}")
    if not names:
        raise ValueError(f"no systems selected; valid: {', '.join(SYSTEMS)}")
    return list(dict.fromkeys(names))


async def _index(instance: EvalInstance, providers: Providers, config: Config) -> IndexedCorpus:
    # ingest happens before the query arrives and is not charged to any system
    return await index_corpus(instance.documents, providers.with_trace(RunTrace()),
                              chunk_size=config.chunking.chunk_size, chunk_overlap=config.chunking.chunk_overlap,
                              counter=build_counter(config))


# reporting -----------------------------------------------------------------

@dataclass
class InstanceResult:
    system: str
    instance_id: str
    task_type: str
    domain: str
    status: str                  # scored | unscored | skipped | failed
    score: int | None
    input_tokens: int = 0
    output_tokens: int = 0
    total_tokens: int = 0
    cost: float = 0.0
    latency: float = 0.0
    reason: str | None = None
    answer: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _mean(xs) -> float | None:
    xs = list(xs)
    return sum(xs) / len(xs) if xs else None


@dataclass
class SystemSummary:
    n: int
    n_scored: int
    n_unscored: int
    n_skipped: int
    n_failed: int
    avg_score: float | None
    perfect_rate: float | None
    avg_input_tokens: float | None
    avg_total_tokens: float | None
    avg_cost: float | None
    avg_latency: float | None
    score_per_dollar: float | None

    @classmethod
    def from_rows(cls, rows: Sequence[InstanceResult]) -> "SystemSummary":
        """Scores average over scored runs (failed runs score 0); cost and
        tokens average over every run that executed, i.e. all but skipped."""
        scored = [r for r in rows if r.score is not None]
        ran = [r for r in rows if r.status != "skipped"]
        avg = _mean(r.score for r in scored)
        pr = 100.0 * sum(1 for r in scored if r.score == 100) / len(scored) if scored else None
        avg_cost = _mean(r.cost for r in ran)
        spd = avg / avg_cost if avg is not None and avg_cost else None
        return cls(
            n=len(rows), n_scored=sum(r.status == "scored" for r in rows),
            n_unscored=sum(r.status == "unscored" for r in rows),
            n_skipped=sum(r.status == "skipped" for r in rows), n_failed=sum(r.status == "failed" for r in rows),
            avg_score=avg, perfect_rate=pr, avg_input_tokens=_mean(r.input_tokens for r in ran),
            avg_total_tokens=_mean(r.total_tokens for r in ran), avg_cost=avg_cost,
            avg_latency=_mean(r.latency for r in ran), score_per_dollar=spd)


def _breakdown(rows: Sequence[InstanceResult], key: str) -> dict:
    out: dict = {}
    for r in rows:
        out.setdefault(getattr(r, key), []).append(r)
    return {k: {"n": len(v), "avg_score": SystemSummary.from_rows(v).avg_score,
                "perfect_rate": SystemSummary.from_rows(v).perfect_rate} for k, v in sorted(out.items())}


@dataclass
class EvalReport:
    systems: list[str]
    rows: list[InstanceResult]
    judge_tokens: int = 0
    judge_cost: float = 0.0
    dataset_errors: list[str] = field(default_factory=list)

    def rows_for(self, system: str) -> list[InstanceResult]:
        return [r for r in self.rows if r.system == system]

    def summary(self, system: str) -> SystemSummary:
        return SystemSummary.from_rows(self.rows_for(system))

    def by_task_type(self, system: str) -> dict:
        return _breakdown(self.rows_for(system), "task_type")

    def by_domain(self, system: str) -> dict:
        return _breakdown(self.rows_for(system), "domain")

    def to_dict(self) -> dict:
        return {
            "format": "spdrag.eval_report", "version": 1,
            "systems": {s: {"summary": asdict(self.summary(s)), "by_task_type": self.by_task_type(s),
                            "by_domain": self.by_domain(s)} for s in self.systems},
            "judge": {"total_tokens": self.judge_tokens, "cost": self.judge_cost},
            "dataset_errors": list(self.dataset_errors),
            "instances": [r.to_dict() for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, ensure_ascii=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["system", "instance_id", "task_type", "domain", "status", "score", "input_tokens", "output_tokens",
                "total_tokens", "cost", "latency", "reason"]
        w = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow(r.to_dict())
        return buf.getvalue()

    def format_table(self) -> str:
        def f(x, spec):
            return "-" if x is None else format(x, spec)

        head = f"{'system':<14}{'n':>4}{'score':>8}{'PR%':>7}{'in tok':>11}{'tot tok':>11}{'cost':>10}" \
               f"{'latency':>9}{'score/$':>10}{'skip':>6}{'fail':>6}{'unsc':>6}"
        lines = [head, "-" * len(head)]
        for s in self.systems:
            m = self.summary(s)
            lines.append(f"{s:<14}{m.n:>4}{f(m.avg_score, '.1f'):>8}{f(m.perfect_rate, '.1f'):>7}"
                         f"{f(m.avg_input_tokens, '.0f'):>11}{f(m.avg_total_tokens, '.0f'):>11}"
                         f"{f(m.avg_cost, '.4f'):>10}{f(m.avg_latency, '.1f'):>9}{f(m.score_per_dollar, '.1f'):>10}"
                         f"{m.n_skipped:>6}{m.n_failed:>6}{m.n_unscored:>6}")
        for label, fn in (("task type", self.by_task_type), ("domain", self.by_domain)):
            keys = sorted({k for s in self.systems for k in fn(s)})
            lines += ["", f"avg score by {label}", f"{'system':<14}" + "".join(f"{k[:18]:>20}" for k in keys)]
            for s in self.systems:
                b = fn(s)
                lines.append(f"{s:<14}" + "".join(f"{f(b.get(k, {}).get('avg_score'), '.1f'):>20}" for k in keys))
        return "\n".join(lines)


_NUM = {"type": ["number", "null"]}
REPORT_SCHEMA = {
    "type": "object",
    "required": ["format", "version", "systems", "judge", "instances", "dataset_errors"],
    "properties": {
        "format": {"const": "spdrag.eval_report"},
        "version": {"const": 1},
        "systems": {"type": "object", "additionalProperties": {
            "type": "object", "required": ["summary", "by_task_type", "by_domain"],
            "properties": {
                "summary": {"type": "object", "required": [
                    "n", "avg_score", "perfect_rate", "avg_input_tokens", "avg_total_tokens", "avg_cost",
                    "avg_latency", "score_per_dollar"],
                    "properties": {"n": {"type": "integer"}, "avg_score": _NUM, "perfect_rate": _NUM,
                                   "avg_input_tokens": _NUM, "avg_total_tokens": _NUM, "avg_cost": _NUM,
                                   "avg_latency": _NUM, "score_per_dollar": _NUM}},
                "by_task_type": {"type": "object"},
                "by_domain": {"type": "object"},
            }}},
        "judge": {"type": "object", "required": ["total_tokens", "cost"]},
        "dataset_errors": {"type": "array", "items": {"type": "string"}},
        "instances": {"type": "array", "items": {
            "type": "object",
            "required": ["system", "instance_id", "task_type", "domain", "status", "score", "total_tokens", "cost"],
            "properties": {"status": {"enum": ["scored", "unscored", "skipped", "failed"]},
                           "score": {"type": ["integer", "null"], "minimum": 0, "maximum": 100}}}},
    },
}


async def _judge(providers: Providers, instance: EvalInstance, answer: str) -> int:
    if not answer.strip():
        return 0
    return await providers.judge(instance.question, instance.gold_answer, answer, tag=instance.id)


async def aevaluate(systems: Sequence[str], dataset: Sequence[EvalInstance], providers: Providers,
                    config: Config | None = None, *, parallelism: int | None = None) -> EvalReport:
    """Run every system on every instance and judge each answer once.

    Instances run concurrently up to ``parallelism``; within an instance the
    systems run one after another so their latencies do not overlap.
    """
    config = config or Config()
    systems = resolve_systems(systems)
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset is empty")
    pricing = pricing_table(config)
    judge_trace = RunTrace()
    judge_p = providers.with_trace(judge_trace)
    sem = asyncio.Semaphore(parallelism or config.eval.parallelism)

    async def one(instance: EvalInstance) -> list[InstanceResult]:
        async with sem:
            corpus = None
            if any(s != "full_context" for s in systems):
                corpus = await _index(instance, providers, config)
            rows = []
            for name in systems:
                if name == "full_context":
                    run = await run_full_context_baseline(instance, providers, config)
                else:
                    run = await SYSTEMS[name](instance, providers, config, corpus=corpus)
                rows.append(await _row(name, instance, run))
            return rows

    async def _row(name: str, instance: EvalInstance, run: SystemRun) -> InstanceResult:
        m = trace_metrics(run.trace, pricing, run.latency)
        base = dict(system=name, instance_id=instance.id, task_type=instance.task_type, domain=instance.domain,
                    input_tokens=m["input_tokens"], output_tokens=m["output_tokens"],
                    total_tokens=m["total_tokens"], cost=m["cost"], latency=m["latency_seconds"], answer=run.answer)
        if run.skipped:
            return InstanceResult(status="skipped", score=None, reason=run.skipped, **base)
        if run.error:
            log.warning("%s failed on %s: %s", name, instance.id, run.error)
            return InstanceResult(status="failed", score=0, reason=run.error, **base)
        try:
            score = await _judge(judge_p, instance, run.answer)
        except (ProviderError, ValueError) as exc:
            return InstanceResult(status="unscored", score=None, reason=f"judge: {exc}", **base)
        return InstanceResult(status="scored", score=score, **base)

    per_instance = await asyncio.gather(*(one(i) for i in dataset))
    rows = [r for rs in per_instance for r in rs]
    return EvalReport(systems, rows, judge_tokens=judge_trace.total_tokens,
                      judge_cost=compute_cost(judge_trace, pricing))


def evaluate(systems: Sequence[str], dataset: Sequence[EvalInstance], providers: Providers,
             config: Config | None = None, **kwargs) -> EvalReport:
    return asyncio.run(aevaluate(systems, dataset, providers, config, **kwargs))
