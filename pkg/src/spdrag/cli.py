"""``spdrag`` command line: ingest, query, eval, inspect-trace.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import asyncio
import hashlib
import json
import logging
import os
import re
import sys
from collections import defaultdict
from pathlib import Path

from .config import Config, build_counter, build_providers, load_config, parse_override, pricing_table
from .corpus import Document, load_documents, read_chunk_store, reassemble, split_document, write_chunk_store
from .errors import ConfigError, PipelineError, SpdRagError
from .index import Collection, build_collection
from .pipeline import IndexedCorpus, arun_query

__all__ = ["main", "build_parser", "ingest", "open_corpus", "MANIFEST", "UsageError"]

log = logging.getLogger("spdrag")

MANIFEST = "manifest.json"


class UsageError(Exception):
    """Bad invocation; exits with status 2."""


# flag dest -> config key; every flag has a config-file equivalent
_FLAG_KEYS = {
    "mock": "run.mock", "seed": "run.seed", "index_dir": "paths.index_dir", "prompt_dir": "paths.prompt_dir",
    "trace_out": "run.trace_out", "report_out": "run.report_out", "csv_out": "run.csv_out",
    "parallelism": "eval.parallelism", "budget": "synthesis.budget", "k": "retrieval.k", "top_n": "retrieval.top_n",
    "chunk_size": "chunking.chunk_size", "chunk_overlap": "chunking.chunk_overlap",
}


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="TOML config file (default: $SPDRAG_CONFIG)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value; repeatable")
    p.add_argument("--mock", action="store_const", const=True, default=None,
                   help="use the offline deterministic providers")
    p.add_argument("--seed", type=int, help="mock provider seed")
    p.add_argument("--index-dir", help="where ingested corpora live")
    p.add_argument("--prompt-dir", help="directory of prompt template overrides")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="spdrag", description="Sub-agent-per-document retrieval QA.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="chunk and index a corpus")
    p.add_argument("corpus", help="directory of .md/.txt files or a documents JSONL file")
    p.add_argument("--corpus-id", help="name to store the corpus under (default: the path's stem)")
    p.add_argument("--chunk-size", type=int)
    p.add_argument("--chunk-overlap", type=int)

    p = sub.add_parser("query", parents=[common], help="answer a question over an ingested corpus")
    p.add_argument("question")
    p.add_argument("--corpus-id", required=True)
    p.add_argument("--trace-out", help="write the call trace as JSONL")
    p.add_argument("--result-out", help="write the full run result as JSON")
    p.add_argument("--budget", type=int, help="synthesis token budget per batch")
    p.add_argument("--k", type=int, help="dense candidates per search")
    p.add_argument("--top-n", type=int, help="chunks kept after reranking")

    p = sub.add_parser("eval", parents=[common], help="benchmark systems on a dataset")
    p.add_argument("dataset", help="dataset JSONL (or a Loong file with --loong-docs)")
    p.add_argument("--systems", help="comma-separated system names (config: eval.systems)")
    p.add_argument("--loong-docs", help="document directory for a Loong-format dataset")
    p.add_argument("--report-out", help="write the report as JSON")
    p.add_argument("--csv-out", help="write per-instance scores as CSV")
    p.add_argument("--parallelism", type=int, help="instances evaluated concurrently")

    p = sub.add_parser("inspect-trace", parents=[common], help="summarize a JSONL trace")
    p.add_argument("trace")
    p.add_argument("--timeline", action="store_true", help="also list every call in start order")
    return parser


def resolve_config(args: argparse.Namespace) -> Config:
    overrides = {}
    for text in args.overrides:
        key, value = parse_override(text)
        overrides[key] = value
    for dest, key in _FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "systems", None):
        overrides["eval.systems"] = [s.strip() for s in args.systems.split(",") if s.strip()]
    return load_config(args.config, overrides)


# corpus store ----------------------------------------------------------------

def _safe_name(doc_id: str) -> str:
    stem = re.sub(r"[^A-Za-z0-9._-]+", "_", doc_id)[:60]
    return f"{stem}-{hashlib.sha1(doc_id.encode('utf-8')).hexdigest()[:8]}"


def _fingerprint(config: Config) -> dict:
    """Settings that change chunk boundaries or vectors; any change forces a rebuild."""
    p = config.providers
    return {
        "chunk_size": config.chunking.chunk_size, "chunk_overlap": config.chunking.chunk_overlap,
        "tokenizer": "whitespace" if config.run.mock else config.chunking.tokenizer,
        "embed_model": p.embed_model, "dimension": p.mock_dimension if config.run.mock else p.dimension,
        "mock": config.run.mock, "seed": config.run.seed if config.run.mock else None,
    }


def _doc_hash(doc: Document) -> str:
    h = hashlib.sha256()
    for part in (doc.id, doc.name, doc.text):
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def ingest(corpus_path: str | Path, corpus_id: str, config: Config, providers=None) -> dict:
    """Chunk and embed every changed document; returns a summary dict.

    Documents whose content hash and index settings are unchanged are
    skipped. Per-file failures are collected and the rest carry on.
    """
    root = Path(config.paths.index_dir) / corpus_id
    (root / "docs").mkdir(parents=True, exist_ok=True)
    errors: list[str] = []
    docs = load_documents(corpus_path, errors=errors)
    manifest_path = root / MANIFEST
    old = json.loads(manifest_path.read_text(encoding="utf-8")) if manifest_path.exists() else {}
    fp = _fingerprint(config)
    old_docs = old.get("documents", {}) if old.get("settings") == fp else {}
    providers = providers or build_providers(config)
    counter = build_counter(config)
    entries, built, skipped = {}, [], []

    async def run():
        for doc in docs:
            digest = _doc_hash(doc)
            prev = old_docs.get(doc.id)
            if prev and prev["sha256"] == digest and (root / prev["collection"]).exists() \
                    and (root / prev["chunks"]).exists():
                entries[doc.id] = prev
                skipped.append(doc.id)
                continue
            try:
                chunks = split_document(doc, config.chunking.chunk_size, config.chunking.chunk_overlap, counter)
                col = await build_collection(chunks, providers, doc_id=doc.id)
            except (SpdRagError, ValueError) as exc:
                errors.append(f"{doc.id}: {type(exc).__name__}: {exc}")
                continue
            name = _safe_name(doc.id)
            write_chunk_store(root / "docs" / f"{name}.chunks.jsonl", chunks)
            col.save(root / "docs" / f"{name}.collection.json")
            entries[doc.id] = {"name": doc.name, "sha256": digest, "metadata": doc.metadata,
                               "chunks": f"docs/{name}.chunks.jsonl", "collection": f"docs/{name}.collection.json",
                               "n_chunks": len(chunks)}
            built.append(doc.id)

    asyncio.run(run())
    for doc_id, prev in old.get("documents", {}).items():
        if doc_id not in entries:
            for key in ("chunks", "collection"):
                (root / prev[key]).unlink(missing_ok=True)
    manifest = {"format": "spdrag.corpus", "version": 1, "corpus_id": corpus_id, "settings": fp,
                "order": [d.id for d in docs if d.id in entries], "documents": entries}
    _atomic_write(manifest_path, json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False))
    return {"corpus_id": corpus_id, "path": str(root), "built": built, "skipped": skipped, "errors": errors,
            "embed_calls": len(providers.trace.select(kind="embed"))}


def open_corpus(corpus_id: str, config: Config) -> IndexedCorpus:
    root = Path(config.paths.index_dir) / corpus_id
    manifest_path = root / MANIFEST
    if not manifest_path.exists():
        raise UsageError(f"no ingested corpus {corpus_id!r} under {config.paths.index_dir}; "
                         f"run `spdrag ingest <corpus> --corpus-id {corpus_id}` first")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    fp = _fingerprint(config)
    if manifest["settings"]["mock"] != fp["mock"] or manifest["settings"]["dimension"] != fp["dimension"]:
        raise UsageError(f"corpus {corpus_id!r} was ingested with different embedding settings "
                         f"({manifest['settings']}); re-run `spdrag ingest` with the current config")
    docs, cols = [], {}
    for doc_id in manifest["order"]:
        e = manifest["documents"][doc_id]
        chunks = read_chunk_store(root / e["chunks"])
        docs.append(Document(doc_id, e["name"], reassemble(chunks), e.get("metadata", {})))
        cols[doc_id] = Collection.load(root / e["collection"], chunks)
    if not docs:
        raise UsageError(f"corpus {corpus_id!r} has no indexed documents")
    return IndexedCorpus(docs, cols)


# commands --------------------------------------------------------------------

def cmd_ingest(args, config: Config, out) -> int:
    corpus_id = args.corpus_id or Path(args.corpus).stem
    if not Path(args.corpus).exists():
        raise UsageError(f"corpus path not found: {args.corpus}")
    summary = ingest(args.corpus, corpus_id, config)
    print(f"corpus {corpus_id}: {len(summary['built'])} indexed, {len(summary['skipped'])} unchanged, "
          f"{len(summary['errors'])} failed -> {summary['path']}", file=out)
    for e in summary["errors"]:
        print(f"  error: {e}", file=out)
    if summary["errors"] and not (summary["built"] or summary["skipped"]):
        return 1
    return 0


def cmd_query(args, config: Config, out) -> int:
    corpus = open_corpus(args.corpus_id, config)
    providers = build_providers(config)
    try:
        result = asyncio.run(arun_query(args.question, corpus, providers, config))
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if config.run.trace_out:
            Path(config.run.trace_out).write_text(
                "".join(json.dumps(e, sort_keys=True) + "\n" for e in exc.partial.get("trace", [])), encoding="utf-8")
        return 1
    m = result.metrics
    print(result.answer, file=out)
    print(f"\n-- {len(result.findings)} documents, {result.synthesis.calls} synthesis calls, "
          f"tokens in {m['input_tokens']} / out {m['output_tokens']} / total {m['total_tokens']}, "
          f"cost ${m['cost']:.4f}, latency {m['latency_seconds']:.2f}s", file=out)
    if config.run.trace_out:
        result.trace.write_jsonl(config.run.trace_out)
    if args.result_out:
        Path(args.result_out).write_text(result.to_json(), encoding="utf-8")
    return 0


def cmd_eval(args, config: Config, out) -> int:
    from .evalharness import aevaluate, load_dataset, load_loong, resolve_systems

    try:
        systems = resolve_systems(config.eval.systems)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not Path(args.dataset).is_file():
        raise UsageError(f"dataset not found: {args.dataset}")
    if args.loong_docs:
        instances, errors = load_loong(args.dataset, args.loong_docs)
    else:
        instances, errors = load_dataset(args.dataset)
    for e in errors:
        print(f"skipped malformed instance: {e}", file=sys.stderr)
    if not instances:
        print("error: no usable instances in the dataset", file=sys.stderr)
        return 1
    providers = build_providers(config)
    report = asyncio.run(aevaluate(systems, instances, providers, config))
    report.dataset_errors = errors
    print(report.format_table(), file=out)
    if config.run.report_out:
        Path(config.run.report_out).write_text(report.to_json(), encoding="utf-8")
    if config.run.csv_out:
        Path(config.run.csv_out).write_text(report.to_csv(), encoding="utf-8")
    return 0


def cmd_inspect_trace(args, config: Config, out) -> int:
    from .trace import RunTrace, compute_cost

    path = Path(args.trace)
    if not path.is_file():
        raise UsageError(f"trace not found: {path}")
    trace = RunTrace.read_jsonl(path)
    pricing = pricing_table(config)
    groups = defaultdict(list)
    for e in trace:
        groups[(e.role, e.kind, e.model)].append(e)
    print(f"{'role':<12}{'kind':<8}{'model':<20}{'calls':>6}{'failed':>7}{'in tok':>10}{'out tok':>9}{'cost':>10}",
          file=out)
    for (role, kind, model), es in sorted(groups.items()):
        try:
            cost = f"{compute_cost(es, pricing):.4f}"
        except KeyError:
            cost = "?"
        print(f"{role:<12}{kind:<8}{model:<20}{len(es):>6}{sum(not e.ok for e in es):>7}"
              f"{sum(e.input_tokens for e in es):>10}{sum(e.output_tokens for e in es):>9}{cost:>10}", file=out)
    try:
        total_cost = f"${compute_cost(trace, pricing):.4f}"
    except KeyError as exc:
        total_cost = f"unknown ({exc})"
    span = (max(e.end for e in trace) - min(e.start for e in trace)) if len(trace) else 0.0
    print(f"\n{len(trace)} calls, {trace.input_tokens} input + {trace.output_tokens} output tokens, "
          f"cost {total_cost}, span {span:.2f}s", file=out)
    if args.timeline:
        for e in sorted(trace, key=lambda e: (e.start, e.end)):
            flag = "" if e.ok else f"  FAILED {e.error}"
            print(f"{e.start:>10.3f} {e.end:>10.3f}  {e.role:<12}{e.kind:<7}{e.tag}{flag}", file=out)
    return 0


COMMANDS = {"ingest": cmd_ingest, "query": cmd_query, "eval": cmd_eval, "inspect-trace": cmd_inspect_trace}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](args, config, out)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SpdRagError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
