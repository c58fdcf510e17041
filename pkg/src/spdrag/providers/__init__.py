from .base import (DEFAULT_EMBED_MODEL, DEFAULT_MODELS, DEFAULT_RERANK_MODEL, ROLES, ChatRequest,
                   ChatResponse, Providers, RawCompletion, RawEmbedding, RawJudge, RawRerank,
                   RerankResult, RetryPolicy)
from .mock import (CoverageJudge, FlakyBackend, MockChat, MockEmbedder, MockReranker, ScriptedChat,
                   coverage_score, mock_providers)
from .schemas import SCHEMAS, parse_structured
from ..trace import PricingTable, RunTrace, TraceEntry, compute_cost

__all__ = [
    "ChatRequest", "ChatResponse", "RerankResult", "Providers", "RetryPolicy", "ROLES",
    "DEFAULT_MODELS", "DEFAULT_EMBED_MODEL", "DEFAULT_RERANK_MODEL",
    "RawCompletion", "RawEmbedding", "RawJudge", "RawRerank",
    "MockChat", "ScriptedChat", "MockEmbedder", "MockReranker", "CoverageJudge", "FlakyBackend",
    "coverage_score", "mock_providers", "SCHEMAS", "parse_structured",
    "PricingTable", "RunTrace", "TraceEntry", "compute_cost",
]
