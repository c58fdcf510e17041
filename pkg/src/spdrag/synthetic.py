"""Seeded synthetic corpora and eval datasets for tests, demos and smoke runs."""

from __future__ import annotations

import random

from .corpus import Document
from .evalharness import DOMAINS, TASK_TYPES, EvalInstance

__all__ = ["filler_paragraph", "markdown_document", "synthetic_corpus", "company_documents", "coverage_dataset"]

_FILLER = ("the committee reviewed several operational matters during the period including facilities staffing "
           "logistics procurement training compliance audits outreach and planning for upcoming initiatives "
           "while noting that weather conditions and supplier schedules affected some timelines").split()

_SYLLABLES = ["zor", "vex", "qual", "lin", "mar", "tek", "dro", "pax", "ven", "tor", "kel", "bri", "sol", "nav",
              "ryn", "cor", "lum", "dex", "ost", "fen"]


def filler_paragraph(rng: random.Random, n_words: int) -> str:
    words = [rng.choice(_FILLER) for _ in range(n_words)]
    words[0] = words[0].capitalize()
    return " ".join(words) + "."


def _name(rng: random.Random, taken: set) -> str:
    while True:
        name = "".join(rng.choice(_SYLLABLES) for _ in range(3)).capitalize()
        if name not in taken:
            taken.add(name)
            return name


def markdown_document(rng: random.Random, doc_id: str, sections: int = 6) -> Document:
    """Headings, paragraphs, lists and the occasional code fence."""
    parts = [f"# Report {doc_id}\n"]
    for s in range(sections):
        parts.append(f"## Section {s + 1}\n")
        for _ in range(rng.randint(1, 4)):
            parts.append(filler_paragraph(rng, rng.randint(20, 180)) + "\n")
        if rng.random() < 0.4:
            parts.append("\n".join(f"- {filler_paragraph(rng, rng.randint(3, 12))}" for _ in range(rng.randint(2, 6)))
                         + "\n")
        if rng.random() < 0.2:
            parts.append("```\n" + "\n".join(" ".join(rng.choice(_FILLER) for _ in range(8)) for _ in range(5))
                         + "\n```\n")
    return Document(doc_id, f"{doc_id}.md", "\n".join(parts))


def synthetic_corpus(n_docs: int = 50, seed: int = 0) -> list[Document]:
    rng = random.Random(seed)
    docs = []
    for i in range(n_docs):
        if rng.random() < 0.7:
            docs.append(markdown_document(rng, f"doc{i:03d}", sections=rng.randint(1, 12)))
        else:  # structureless: one long run of words
            docs.append(Document(f"doc{i:03d}", f"doc{i:03d}.txt", filler_paragraph(rng, rng.randint(1, 3500))))
    return docs


def company_documents(rng: random.Random, n_docs: int, prefix: str, filler_words: int = 120):
    """One fact per document: a company and the revenue it reported.

    Returns ``(documents, facts)`` with ``facts`` as ``[(name, amount)]``.
    """
    taken: set = set()
    docs, facts = [], []
    for j in range(n_docs):
        name, amount = _name(rng, taken), rng.randint(100, 999)
        body = [f"# Annual filing of {name}\n", filler_paragraph(rng, filler_words),
                f"For the fiscal year the company {name} reported revenue of {amount} million.",
                filler_paragraph(rng, filler_words)]
        docs.append(Document(f"{prefix}-d{j}", f"{name.lower()}_filing.md", "\n\n".join(body)))
        facts.append((name, amount))
    return docs, facts


def coverage_dataset(n_instances: int = 6, docs_per_instance: int = 8, seed: int = 0) -> list[EvalInstance]:
    """Instances whose gold answer needs one fact from every document.

    With more documents than a single retrieval's rerank depth, one-shot
    global retrieval cannot see every fact while per-document agents can.
    """
    rng = random.Random(seed)
    out = []
    for i in range(n_instances):
        docs, facts = company_documents(rng, docs_per_instance, f"cov{i}")
        gold = "; ".join(f"{n} reported revenue of {a} million" for n, a in facts) + "."
        out.append(EvalInstance(f"cov{i}", "Which revenue did each company report for the fiscal year?", gold,
                                docs, TASK_TYPES[i % len(TASK_TYPES)], DOMAINS[i % len(DOMAINS)]))
    return out
