"""Per-call accounting: trace entries, pricing and clocks."""

from __future__ import annotations

import itertools
import json
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import UnknownModelError

__all__ = ["TraceEntry", "RunTrace", "PricingTable", "compute_cost", "WallClock", "TickClock"]


@dataclass(frozen=True)
class TraceEntry:
    kind: str            # chat | embed | rerank | judge
    role: str
    model: str
    input_tokens: int
    output_tokens: int
    latency: float
    start: float
    end: float
    ok: bool = True
    error: str | None = None
    tag: str = ""        # e.g. the document id a sub-agent call belongs to

    @property
    def total_tokens(self) -> int:
        return self.input_tokens + self.output_tokens

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TraceEntry":
        return cls(**d)


class RunTrace:
    """Append-only, thread-safe list of :class:`TraceEntry`."""

    def __init__(self, entries: Iterable[TraceEntry] = ()):
        self._entries: list[TraceEntry] = list(entries)
        self._lock = threading.Lock()

    def append(self, entry: TraceEntry) -> None:
        with self._lock:
            self._entries.append(entry)

    def extend(self, entries: Iterable[TraceEntry]) -> None:
        with self._lock:
            self._entries.extend(entries)

    @property
    def entries(self) -> list[TraceEntry]:
        with self._lock:
            return list(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[TraceEntry]:
        return iter(self.entries)

    def select(self, kind: str | None = None, role: str | None = None, tag: str | None = None,
               ok: bool | None = None) -> list[TraceEntry]:
        return [e for e in self.entries
                if (kind is None or e.kind == kind) and (role is None or e.role == role)
                and (tag is None or e.tag == tag) and (ok is None or e.ok == ok)]

    @property
    def input_tokens(self) -> int:
        return sum(e.input_tokens for e in self.entries)

    @property
    def output_tokens(self) -> int:
        return sum(e.output_tokens for e in self.entries)

    @property
    def total_tokens(self) -> int:
        return self.input_tokens + self.output_tokens

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_dict(), sort_keys=True) + "\n" for e in self.entries)

    def write_jsonl(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def read_jsonl(cls, path: str | Path) -> "RunTrace":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(TraceEntry.from_dict(json.loads(line)) for line in lines if line.strip())


@dataclass
class PricingTable:
    """Currency per token, keyed by model name: ``{model: (input, output)}``."""

    prices: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        for model, (pin, pout) in self.prices.items():
            if pin < 0 or pout < 0:
                raise ValueError(f"negative price for {model!r}")

    def price(self, model: str) -> tuple[float, float]:
        try:
            return self.prices[model]
        except KeyError:
            raise UnknownModelError(model) from None

    @classmethod
    def from_dict(cls, d: dict) -> "PricingTable":
        return cls({m: (float(v["input"]), float(v["output"])) for m, v in d.items()})

    def to_dict(self) -> dict:
        return {m: {"input": p[0], "output": p[1]} for m, p in self.prices.items()}


def compute_cost(trace: RunTrace | Iterable[TraceEntry], pricing: PricingTable) -> float:
    total = 0.0
    for e in trace:
        pin, pout = pricing.price(e.model)
        total += e.input_tokens * pin + e.output_tokens * pout
    return total


class WallClock:
    def __call__(self) -> float:
        return time.perf_counter()


class TickClock:
    """Logical clock: every reading advances by ``step``.

    Under asyncio with non-blocking mock providers, task interleaving is
    deterministic, so readings (and thus latencies) are reproducible.
    """

    def __init__(self, step: float = 1.0):
        self.step = step
        self._counter = itertools.count(1)
        self._lock = threading.Lock()

    def __call__(self) -> float:
        with self._lock:
            return next(self._counter) * self.step
