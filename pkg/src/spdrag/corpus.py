"""Documents, chunking and the on-disk chunk store.

Splitting is Markdown aware and recursive: a span that is over budget is cut
at the coarsest separator present (headings, code fences, rules, blank
lines, newlines, spaces, and finally single characters) and only the pieces
that are still too large descend to the next separator. The resulting atomic
units are then packed greedily into chunks; every chunk after the first
starts with the trailing units of its predecessor that fit within the overlap
budget.

Chunks are exact slices of the source (``text == source[start:end]``), which
makes reassembly lossless: drop ``prev.end - chunk.start`` leading characters
of every chunk after the first and concatenate.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import ConfigError, EmptyDocumentError
from .tokens import TokenCounter

__all__ = [
    "Document",
    "Chunk",
    "MARKDOWN_SEPARATORS",
    "split_document",
    "reassemble",
    "load_documents",
    "write_chunk_store",
    "read_chunk_store",
]

TEXT_SUFFIXES = (".md", ".markdown", ".txt", ".text")


@dataclass(frozen=True)
class Document:
    id: str
    name: str
    text: str
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"id": self.id, "name": self.name, "text": self.text, "metadata": dict(self.metadata)}

    @classmethod
    def from_dict(cls, d: dict) -> "Document":
        return cls(id=str(d["id"]), name=str(d.get("name") or d["id"]), text=d["text"],
                   metadata=dict(d.get("metadata") or {}))


@dataclass(frozen=True)
class Chunk:
    doc_id: str
    seq: int
    text: str
    token_count: int
    start: int = 0
    end: int = 0

    @property
    def chunk_id(self) -> str:
        return f"{self.doc_id}#{self.seq}"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Chunk":
        return cls(doc_id=str(d["doc_id"]), seq=int(d["seq"]), text=d["text"],
                   token_count=int(d["token_count"]), start=int(d.get("start", 0)),
                   end=int(d.get("end", 0)))


# (pattern, cut at end of match?). Coarse to fine; the empty pattern means
# "single characters".
MARKDOWN_SEPARATORS: tuple[tuple[str, bool], ...] = (
    (r"(?m)^#{1,6}[ \t]", False),          # ATX headings
    (r"(?m)^(?:```|~~~)", False),          # fenced code block delimiters
    (r"(?m)^(?:-{3,}|\*{3,}|_{3,})[ \t]*$", False),  # horizontal rules
    (r"\n[ \t]*\n\s*", True),              # blank lines
    (r"\n", True),
    (r" +", True),
    ("", False),
)


def _cut_points(text: str, start: int, end: int, pattern: str, at_end: bool) -> list[int]:
    rx = re.compile(pattern)
    cuts = []
    for m in rx.finditer(text, start, end):
        pos = m.end() if at_end else m.start()
        if start < pos < end and (not cuts or pos > cuts[-1]):
            cuts.append(pos)
    return cuts


class _Splitter:
    def __init__(self, text: str, chunk_size: int, chunk_overlap: int, counter: TokenCounter,
                 separators=MARKDOWN_SEPARATORS):
        self.text = text
        self.size = chunk_size
        self.overlap = chunk_overlap
        self.counter = counter
        self.separators = separators

    def count(self, start: int, end: int) -> int:
        return self.counter.count(self.text[start:end])

    def units(self, start: int, end: int, level: int = 0) -> list[tuple[int, int]]:
        if self.count(start, end) <= self.size:
            return [(start, end)]
        while level < len(self.separators):
            pattern, at_end = self.separators[level]
            if not pattern:
                return [(i, i + 1) for i in range(start, end)]
            cuts = _cut_points(self.text, start, end, pattern, at_end)
            if cuts:
                break
            level += 1
        else:  # pragma: no cover - separators always end with ""
            return [(start, end)]
        out: list[tuple[int, int]] = []
        bounds = [start, *cuts, end]
        for s, e in zip(bounds, bounds[1:]):
            if self.count(s, e) <= self.size:
                out.append((s, e))
            else:
                out.extend(self.units(s, e, level + 1))
        return out

    def _trim_start(self, units: list[tuple[int, int]], lo: int, hi: int, nxt_end: int) -> int:
        """Smallest window start index in [lo, hi] that satisfies the overlap contract."""

        def ok(i: int) -> bool:
            if i >= hi:
                return True
            s = units[i][0]
            return self.count(s, units[hi - 1][1]) <= self.overlap and self.count(s, nxt_end) <= self.size

        a, b = lo, hi
        while a < b:
            mid = (a + b) // 2
            if ok(mid):
                b = mid
            else:
                a = mid + 1
        # counters need not be perfectly monotone in span length
        while not ok(a):
            a += 1
        return a

    def spans(self) -> list[tuple[int, int]]:
        units = self.units(0, len(self.text))
        out: list[tuple[int, int]] = []
        w0 = 0  # window = units[w0:i]
        for i, (_, uend) in enumerate(units):
            if i > w0 and self.count(units[w0][0], uend) > self.size:
                out.append((units[w0][0], units[i - 1][1]))
                w0 = self._trim_start(units, w0 + 1, i, uend)
        out.append((units[w0][0], units[-1][1]))
        return out


def split_document(doc: Document, chunk_size: int = 1000, chunk_overlap: int = 250,
                   counter: TokenCounter | None = None) -> list[Chunk]:
    """Split ``doc`` into token-bounded, overlapping chunks.

    Raises :class:`EmptyDocumentError` for an empty text and
    :class:`ConfigError` when ``chunk_overlap >= chunk_size`` or
    ``chunk_size < 1``.
    """
    if counter is None:
        from .tokens import WhitespaceCounter

        counter = WhitespaceCounter()
    if chunk_size < 1:
        raise ConfigError(f"chunk_size must be >= 1, got {chunk_size}")
    if chunk_overlap < 0 or chunk_overlap >= chunk_size:
        raise ConfigError(f"chunk_overlap must be in [0, chunk_size), got {chunk_overlap} for size {chunk_size}")
    if not doc.text:
        raise EmptyDocumentError(doc.id)
    sp = _Splitter(doc.text, chunk_size, chunk_overlap, counter)
    chunks = []
    for seq, (s, e) in enumerate(sp.spans()):
        piece = doc.text[s:e]
        chunks.append(Chunk(doc.id, seq, piece, counter.count(piece), s, e))
    return chunks


def reassemble(chunks: Iterable[Chunk]) -> str:
    parts = []
    prev_end = None
    for c in chunks:
        if prev_end is None:
            parts.append(c.text)
        else:
            parts.append(c.text[prev_end - c.start:])
        prev_end = c.end
    return "".join(parts)


def _doc_id_for(path: Path, root: Path) -> str:
    rel = path.relative_to(root).with_suffix("")
    return re.sub(r"[^A-Za-z0-9._-]+", "_", rel.as_posix())


def load_documents(path: str | Path, errors: list | None = None) -> list[Document]:
    """Load a corpus from a directory of text/Markdown files or a JSONL file.

    When ``errors`` is a list, files that cannot be read or decoded are
    skipped and described there instead of raising.
    """
    p = Path(path)
    if p.is_dir():
        docs = []
        for f in sorted(q for q in p.rglob("*") if q.is_file() and q.suffix.lower() in TEXT_SUFFIXES):
            try:
                text = f.read_text(encoding="utf-8")
            except (OSError, UnicodeDecodeError) as exc:
                if errors is None:
                    raise
                errors.append(f"{f}: {type(exc).__name__}: {exc}")
                continue
            docs.append(Document(_doc_id_for(f, p), f.name, text, {"source": str(f)}))
    elif p.is_file():
        docs = [Document.from_dict(d) for d in _iter_jsonl(p)]
    else:
        raise FileNotFoundError(f"corpus not found: {p}")
    seen: set[str] = set()
    for d in docs:
        if d.id in seen:
            raise ValueError(f"duplicate document id {d.id!r} in {p}")
        seen.add(d.id)
    return docs


def _iter_jsonl(path: Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc


def write_chunk_store(path: str | Path, chunks: Iterable[Chunk]) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8") as fh:
        for c in chunks:
            fh.write(json.dumps(c.to_dict(), ensure_ascii=False) + "\n")


def read_chunk_store(path: str | Path) -> list[Chunk]:
    return [Chunk.from_dict(d) for d in _iter_jsonl(Path(path))]
