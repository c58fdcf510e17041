"""Exact cosine top-k search over in-memory embedding matrices.

A :class:`Collection` is immutable once built. Per-document collections carry
the owning ``doc_id``; the global collection used by the baselines has
``doc_id=None`` and is built by concatenating per-document ones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Chunk
from .errors import DimensionError, ProviderError, ZeroVectorError

__all__ = ["ScoredChunk", "Collection", "build_collection", "search", "merge_collections",
           "FORMAT_NAME", "FORMAT_VERSION"]

FORMAT_NAME = "spdrag.collection"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ScoredChunk:
    chunk: Chunk
    score: float


class Collection:
    def __init__(self, chunks: Sequence[Chunk], vectors, doc_id: str | None = None,
                 dimension: int | None = None):
        chunks = list(chunks)
        vectors = np.array(vectors, dtype=np.float64)
        if vectors.ndim != 2 and len(chunks) == 0:
            vectors = np.zeros((0, dimension or 0))
        if vectors.ndim != 2 or vectors.shape[0] != len(chunks):
            raise ValueError(f"need one vector per chunk, got {vectors.shape} for {len(chunks)} chunks")
        if dimension is not None and vectors.shape[1] != dimension:
            raise DimensionError(f"expected dimension {dimension}, got {vectors.shape[1]}")
        if doc_id is not None:
            for c in chunks:
                if c.doc_id != doc_id:
                    raise ValueError(f"chunk {c.chunk_id} does not belong to collection {doc_id!r}")
        norms = np.linalg.norm(vectors, axis=1)
        bad = np.flatnonzero(~(norms > 0))
        if bad.size:
            raise ZeroVectorError(f"zero-norm embedding at chunk position {int(bad[0])}")
        self.doc_id = doc_id
        self.chunks = chunks
        self.vectors = vectors
        self.vectors.setflags(write=False)
        self.norms = norms
        self.dimension = vectors.shape[1]
        self._unit = vectors / norms[:, None]
        order = sorted(range(len(chunks)), key=lambda i: (chunks[i].doc_id, chunks[i].seq))
        self._tiebreak = np.empty(len(chunks), dtype=np.int64)
        self._tiebreak[order] = np.arange(len(chunks))

    def __len__(self) -> int:
        return len(self.chunks)

    @property
    def ids(self) -> list[str]:
        return [c.chunk_id for c in self.chunks]

    def search(self, query, k: int) -> list[ScoredChunk]:
        return search(self, query, k)

    def save(self, path: str | Path) -> None:
        payload = {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "doc_id": self.doc_id,
            "dimension": self.dimension,
            "ids": self.ids,
            "vectors": self.vectors.tolist(),
        }
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, chunks: Sequence[Chunk]) -> "Collection":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != FORMAT_NAME:
            raise ValueError(f"{path}: not a collection file")
        if payload.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported collection version {payload.get('version')}")
        by_id = {c.chunk_id: c for c in chunks}
        try:
            ordered = [by_id[i] for i in payload["ids"]]
        except KeyError as exc:
            raise ValueError(f"{path}: chunk {exc.args[0]} missing from chunk store") from None
        vectors = np.asarray(payload["vectors"], dtype=np.float64).reshape(len(ordered), payload["dimension"])
        return cls(ordered, vectors, doc_id=payload["doc_id"], dimension=payload["dimension"])


def search(collection: Collection, query, k: int) -> list[ScoredChunk]:
    """Top-``k`` chunks by cosine similarity, ties broken by ``(doc_id, seq)``."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    q = np.asarray(query, dtype=np.float64).ravel()
    if len(collection) == 0:
        return []
    if q.shape[0] != collection.dimension:
        raise DimensionError(f"query has dimension {q.shape[0]}, collection has {collection.dimension}")
    qn = np.linalg.norm(q)
    if not qn > 0:
        raise ZeroVectorError("zero-norm query embedding")
    # row-wise reduction keeps identical rows bit-identical (no blocked BLAS paths)
    scores = (collection._unit * (q / qn)).sum(axis=1)
    order = np.lexsort((collection._tiebreak, -scores))[:k]
    return [ScoredChunk(collection.chunks[i], float(scores[i])) for i in order]


async def build_collection(chunks: Sequence[Chunk], embedder, doc_id: str | None = None,
                           batch_size: int = 96, dimension: int | None = None) -> Collection:
    """Embed ``chunks`` and wrap them in a :class:`Collection`.

    ``embedder`` is anything with an ``async embed(texts) -> list[vector]``
    method. For a per-document collection every chunk must share one doc_id;
    it is inferred when ``doc_id`` is not given.
    """
    chunks = list(chunks)
    if not chunks:
        raise ValueError("cannot build a collection from zero chunks")
    if doc_id is None:
        ids = {c.doc_id for c in chunks}
        if len(ids) != 1:
            raise ValueError(f"chunks span {len(ids)} documents; pass doc_id or use merge_collections")
        doc_id = chunks[0].doc_id
    vectors = []
    for start in range(0, len(chunks), batch_size):
        batch = chunks[start:start + batch_size]
        try:
            out = await embedder.embed([c.text for c in batch])
        except ProviderError as exc:
            raise ProviderError(f"embedding failed for chunks {start}..{start + len(batch) - 1} "
                                f"of {doc_id!r}: {exc}") from exc
        if len(out) != len(batch):
            raise ProviderError(f"embedder returned {len(out)} vectors for {len(batch)} texts")
        vectors.extend(np.asarray(v, dtype=np.float64) for v in out)
    dims = {v.shape[0] for v in vectors}
    if len(dims) != 1 or (dimension is not None and dims != {dimension}):
        raise DimensionError(f"embedding dimensions {sorted(dims)} do not match expected {dimension}")
    matrix = np.vstack(vectors)
    norms = np.linalg.norm(matrix, axis=1)
    bad = np.flatnonzero(~(norms > 0))
    if bad.size:
        raise ZeroVectorError(f"zero-norm embedding at chunk position {int(bad[0])} ({chunks[bad[0]].chunk_id})")
    return Collection(chunks, matrix, doc_id=doc_id)


def merge_collections(collections: Sequence[Collection]) -> Collection:
    """Concatenate per-document collections into one global collection."""
    collections = [c for c in collections if len(c)]
    if not collections:
        return Collection([], np.zeros((0, 0)))
    dims = {c.dimension for c in collections}
    if len(dims) != 1:
        raise DimensionError(f"cannot merge collections of dimensions {sorted(dims)}")
    chunks = [ch for c in collections for ch in c.chunks]
    return Collection(chunks, np.vstack([c.vectors for c in collections]), doc_id=None)
