"""Prompt templates and the text layouts that carry structured context.

Templates are plain text files with ``{name}`` placeholders. A directory
passed as ``prompt_dir`` overrides individual files by name.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

TEMPLATE_NAMES = ("coordinator", "subagent", "synthesis", "judge", "full_context", "normal_rag", "agentic_rag")

# markers shared by the prompt builders and the mock providers that read them
TASKS_HEADER = "Assigned tasks:"
EVIDENCE_HEADER = "Evidence retrieved so far:"
NO_EVIDENCE = "(none yet)"
BUDGET_LINE = "Searches used: {used} of {limit}"
FORCE_FINALIZE = "The search budget is exhausted. You must finalize now: respond with a finalize action."
QUESTION_PREFIX = "Question: "
QUERY_PREFIX = "User query: "


def load_template(name: str, prompt_dir: str | Path | None = None) -> str:
    if prompt_dir:
        override = Path(prompt_dir) / f"{name}.txt"
        if override.is_file():
            return override.read_text(encoding="utf-8")
    try:
        return resources.files(__name__).joinpath(f"{name}.txt").read_text(encoding="utf-8")
    except FileNotFoundError:
        raise KeyError(f"unknown prompt template {name!r}") from None


def render(template: str, **values) -> str:
    return template.format_map(values)


def format_tasks(todos: Sequence[str]) -> str:
    return TASKS_HEADER + "\n" + "\n".join(f"{i}. {t}" for i, t in enumerate(todos, 1))


def format_chunk(chunk_id: str, text: str, score: float | None = None) -> str:
    head = f"--- chunk {chunk_id}" + (f" (relevance {score:.3f})" if score is not None else "") + " ---"
    return f"{head}\n{text.strip()}"


def format_evidence(blocks: Sequence[tuple[str, Sequence]]) -> str:
    """``blocks`` is a list of ``(search_query, [ScoredChunk-like])``."""
    if not blocks:
        return f"{EVIDENCE_HEADER}\n{NO_EVIDENCE}"
    parts = [EVIDENCE_HEADER]
    for i, (query, chunks) in enumerate(blocks, 1):
        parts.append(f"### Search {i}: {query}")
        if not chunks:
            parts.append("(no passages returned)")
        for sc in chunks:
            parts.append(format_chunk(sc.chunk.chunk_id, sc.chunk.text, sc.score))
    return "\n".join(parts)


def format_findings_batch(items: Iterable[tuple[str, str]]) -> str:
    return "\n" + "\n\n".join(f"=== finding {sid} ===\n{text.strip()}" for sid, text in items)


def format_documents(docs: Iterable[tuple[str, str]]) -> str:
    return "\n\n".join(f"=== document {name} ===\n{text}" for name, text in docs)
