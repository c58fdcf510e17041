"""Token counters.

Counting is injected everywhere through the :class:`TokenCounter` protocol so
that chunking, budgeting and cost accounting can run offline against the
whitespace counter, and against a byte-pair encoding in production.
"""

from __future__ import annotations

import os
from functools import lru_cache
from typing import Protocol, runtime_checkable

__all__ = [
    "TokenCounter",
    "WhitespaceCounter",
    "BPECounter",
    "count_tokens",
    "get_counter",
]


@runtime_checkable
class TokenCounter(Protocol):
    name: str

    def count(self, text: str) -> int: ...


class WhitespaceCounter:
    """Counts whitespace-separated words. Deterministic and dependency free."""

    name = "whitespace"

    def count(self, text: str) -> int:
        return len(text.split())

    def __repr__(self) -> str:
        return "WhitespaceCounter()"


class BPECounter:
    """Byte-pair encoding counter backed by ``tiktoken``.

    Parameters
    ----------
    encoding : str
        Encoding name, ``cl100k_base`` by default.
    bpe_file : str, optional
        Path to a local ``.tiktoken`` rank file. Without it the encoding is
        resolved through ``tiktoken.get_encoding`` (which needs either network
        access or a populated ``TIKTOKEN_CACHE_DIR``).
    """

    def __init__(self, encoding: str = "cl100k_base", bpe_file: str | os.PathLike | None = None):
        self.name = encoding
        self.bpe_file = str(bpe_file) if bpe_file else None
        self._enc = _load_encoding(encoding, self.bpe_file)

    def count(self, text: str) -> int:
        if not text:
            return 0
        return len(self._enc.encode(text, disallowed_special=()))

    def encode(self, text: str) -> list[int]:
        return self._enc.encode(text, disallowed_special=())

    def decode(self, ids: list[int]) -> str:
        return self._enc.decode(ids)

    def __repr__(self) -> str:
        return f"BPECounter({self.name!r})"


@lru_cache(maxsize=4)
def _load_encoding(encoding: str, bpe_file: str | None):
    import tiktoken

    if bpe_file is None:
        return tiktoken.get_encoding(encoding)

    from tiktoken.load import load_tiktoken_bpe

    if encoding != "cl100k_base":
        raise ValueError(f"local rank files are only wired for cl100k_base, not {encoding!r}")
    from tiktoken_ext.openai_public import ENDOFPROMPT, ENDOFTEXT, FIM_MIDDLE, FIM_PREFIX, FIM_SUFFIX

    ranks = load_tiktoken_bpe(bpe_file)
    return tiktoken.Encoding(
        name=encoding,
        pat_str=CL100K_PATTERN,
        mergeable_ranks=ranks,
        special_tokens={
            ENDOFTEXT: 100257,
            FIM_PREFIX: 100258,
            FIM_MIDDLE: 100259,
            FIM_SUFFIX: 100260,
            ENDOFPROMPT: 100276,
        },
    )


CL100K_PATTERN = (
    r"""'(?i:[sdmt]|ll|ve|re)|[^\r\n\p{L}\p{N}]?+\p{L}++|\p{N}{1,3}+| ?[^\s\p{L}\p{N}]++[\r\n]*+"""
    r"""|\s++$|\s*[\r\n]|\s+(?!\S)|\s"""
)


def count_tokens(text: str, counter: TokenCounter) -> int:
    return counter.count(text)


def get_counter(name: str = "cl100k_base", bpe_file: str | None = None) -> TokenCounter:
    """Resolve a counter by name: ``whitespace`` or a tiktoken encoding name."""
    if name == "whitespace":
        return WhitespaceCounter()
    return BPECounter(name, bpe_file=bpe_file)
