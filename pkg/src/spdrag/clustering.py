"""Average-linkage (UPGMA) clustering of summaries and token-bounded batching.

Cluster ids follow the usual convention: leaves are ``0..n-1`` and merge
step ``k`` (0-based) creates cluster ``n + k``. Labels passed to
:func:`upgma` are carried along for display only.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

__all__ = ["Merge", "MergeTree", "Batch", "cosine_distance_matrix", "distance_matrix", "upgma",
           "group_by_tokens", "matrix_digest"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Merge:
    left: int
    right: int
    distance: float
    new_id: int
    size: int


@dataclass
class MergeTree:
    leaves: list
    merges: list[Merge]

    @property
    def n(self) -> int:
        return len(self.leaves)

    def members(self, cluster: int) -> list[int]:
        """Leaf indices under ``cluster`` (left subtree first)."""
        if cluster < self.n:
            return [cluster]
        m = self.merges[cluster - self.n]
        return self.members(m.left) + self.members(m.right)

    def cophenetic(self) -> np.ndarray:
        """Leaf-by-leaf merge height of the lowest common cluster."""
        out = np.zeros((self.n, self.n))
        for m in self.merges:
            a, b = self.members(m.left), self.members(m.right)
            out[np.ix_(a, b)] = m.distance
            out[np.ix_(b, a)] = m.distance
        return out

    def to_dict(self) -> dict:
        return {"leaves": list(self.leaves), "merges": [asdict(m) for m in self.merges]}


@dataclass
class Batch:
    members: list[int]           # leaf indices into the current summary list
    total_tokens: int
    oversize: bool = False
    forced: bool = False
    member_ids: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def cosine_distance_matrix(vectors) -> np.ndarray:
    """``1 - cos`` for every pair of rows, symmetric with a zero diagonal, clipped to [0, 2]."""
    v = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(v, axis=1)
    if np.any(~(norms > 0)):
        raise ValueError("zero-norm vector in distance matrix input")
    u = v / norms[:, None]
    d = 1.0 - u @ u.T
    d = (d + d.T) / 2.0
    np.clip(d, 0.0, 2.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


async def distance_matrix(texts: Sequence[str], providers, role: str = "synthesizer", tag: str = "") -> np.ndarray:
    if len(texts) < 2:
        raise ValueError("distance matrix needs at least 2 summaries")
    vectors = await providers.embed(list(texts), role=role, tag=tag, purpose="document")
    return cosine_distance_matrix(np.vstack(vectors))


def matrix_digest(d: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(np.round(d, 12)).tobytes()).hexdigest()[:16]


def upgma(d, labels: Sequence | None = None) -> MergeTree:
    """Agglomerate with unweighted average linkage.

    Each step merges the active pair with the smallest mean leaf-to-leaf
    distance; ties go to the pair with the smaller lower id, then the smaller
    upper id. Pairwise distance *sums* are carried between steps so that the
    average is always one division away from the raw distances.
    """
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError(f"distance matrix must be square, got shape {d.shape}")
    n = d.shape[0]
    if n < 2:
        raise ValueError("upgma needs at least 2 points")
    labels = list(labels) if labels is not None else list(range(n))
    total = 2 * n - 1
    sums = np.zeros((total, total))
    sums[:n, :n] = d
    size = np.zeros(total, dtype=np.int64)
    size[:n] = 1
    active = list(range(n))  # kept ascending: new ids are always the largest
    merges = []
    for step in range(n - 1):
        act = np.array(active)
        avg = sums[np.ix_(act, act)] / np.outer(size[act], size[act])
        avg[np.tril_indices(len(act))] = np.inf
        flat = int(np.argmin(avg))  # row-major: first hit has the smallest (lower, upper) pair
        i, j = divmod(flat, len(act))
        a, b = active[i], active[j]
        new = n + step
        size[new] = size[a] + size[b]
        rest = act[(act != a) & (act != b)]
        sums[rest, new] = sums[rest, a] + sums[rest, b]
        sums[new, rest] = sums[rest, new]
        merges.append(Merge(a, b, float(avg[i, j]), new, int(size[new])))
        active = [c for c in active if c != a and c != b] + [new]
    return MergeTree(labels, merges)


def group_by_tokens(token_counts: Sequence[int], tree: MergeTree, budget: int) -> list[Batch]:
    """Cut the dendrogram into batches of at most ``budget`` tokens.

    Merge steps are replayed in order. A step joins its two children into
    one batch only when both are still whole batches and their combined
    token count fits; otherwise the new cluster is sealed and so is every
    ancestor. The batches are the maximal whole clusters, i.e. the largest
    similarity-ordered subtrees that fit the budget. A lone summary larger
    than the budget stays a batch of its own, flagged ``oversize``.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    n = tree.n
    if len(token_counts) != n:
        raise ValueError(f"{len(token_counts)} token counts for a tree over {n} leaves")
    tokens = [int(t) for t in token_counts]
    whole = [True] * n + [False] * len(tree.merges)
    total = tokens + [0] * len(tree.merges)
    top = set(range(n))  # current maximal whole clusters
    for m in tree.merges:
        total[m.new_id] = total[m.left] + total[m.right]
        if whole[m.left] and whole[m.right] and total[m.new_id] <= budget:
            whole[m.new_id] = True
            top.discard(m.left)
            top.discard(m.right)
            top.add(m.new_id)
    batches = []
    for c in top:
        members = sorted(tree.members(c))
        oversize = total[c] > budget
        if oversize:
            log.warning("summary %s alone exceeds the token budget (%d > %d)", tree.leaves[members[0]],
                        total[c], budget)
        batches.append(Batch(members, total[c], oversize=oversize,
                             member_ids=[tree.leaves[i] for i in members]))
    batches.sort(key=lambda b: b.members[0])
    return batches
