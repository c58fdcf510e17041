"""HTTP backends for hosted model services.

Chat speaks the OpenAI-compatible ``/chat/completions`` protocol (Gemini
exposes one), embedding and rerank speak Cohere's v2 API. API keys are read
from the environment variable *named* in the configuration at call time.
Pass ``transport`` (an ``httpx.AsyncBaseTransport``) to stub the network.
"""

from __future__ import annotations

import os

import httpx

from ..errors import ProviderError, TransportError
from .base import ChatRequest, RawCompletion, RawEmbedding, RawRerank

__all__ = ["OpenAIChatBackend", "CohereEmbedBackend", "CohereRerankBackend"]

RETRYABLE_STATUS = {408, 409, 429, 500, 502, 503, 504}


class _HTTPBackend:
    def __init__(self, base_url: str, api_key_env: str | None = None, timeout: float = 120.0,
                 transport: httpx.AsyncBaseTransport | None = None):
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.transport = transport

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if not key:
                raise ProviderError(f"environment variable {self.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    async def _post(self, path: str, payload: dict) -> dict:
        headers = self._headers()
        try:
            async with httpx.AsyncClient(timeout=self.timeout, transport=self.transport) as client:
                resp = await client.post(self.base_url + path, json=payload, headers=headers)
        except httpx.TransportError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code in RETRYABLE_STATUS:
            raise TransportError(f"HTTP {resp.status_code} from {path}")
        if resp.status_code >= 400:
            raise ProviderError(f"HTTP {resp.status_code} from {path}: {resp.text[:500]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise TransportError(f"non-JSON body from {path}") from exc


class OpenAIChatBackend(_HTTPBackend):
    def __init__(self, base_url: str = "https://generativelanguage.googleapis.com/v1beta/openai",
                 api_key_env: str | None = "GEMINI_API_KEY", native_schema: bool = True, **kwargs):
        super().__init__(base_url, api_key_env, **kwargs)
        self.native_schema = native_schema

    def payload(self, model: str, request: ChatRequest, schema: dict | None) -> dict:
        body = {
            "model": model,
            "temperature": request.temperature,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_content},
            ],
        }
        if schema is not None:
            if self.native_schema:
                body["response_format"] = {"type": "json_schema",
                                           "json_schema": {"name": request.response_schema, "schema": schema}}
            else:
                body["response_format"] = {"type": "json_object"}
        return body

    async def complete(self, model: str, request: ChatRequest, schema: dict | None) -> RawCompletion:
        data = await self._post("/chat/completions", self.payload(model, request, schema))
        try:
            text = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed chat response: {data!r:.300}") from exc
        usage = data.get("usage") or {}
        return RawCompletion(text, int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0)))


class CohereEmbedBackend(_HTTPBackend):
    def __init__(self, base_url: str = "https://api.cohere.com", api_key_env: str | None = "COHERE_API_KEY",
                 dimension: int = 1536, **kwargs):
        super().__init__(base_url, api_key_env, **kwargs)
        self.dimension = dimension

    async def embed(self, model: str, texts: list[str], purpose: str = "document") -> RawEmbedding:
        data = await self._post("/v2/embed", {
            "model": model,
            "texts": texts,
            "input_type": "search_query" if purpose == "query" else "search_document",
            "embedding_types": ["float"],
            "output_dimension": self.dimension,
        })
        try:
            vectors = data["embeddings"]["float"]
        except (KeyError, TypeError) as exc:
            raise ProviderError(f"malformed embed response: {data!r:.300}") from exc
        billed = (data.get("meta") or {}).get("billed_units") or {}
        return RawEmbedding(vectors, int(billed.get("input_tokens", 0)))


class CohereRerankBackend(_HTTPBackend):
    def __init__(self, base_url: str = "https://api.cohere.com", api_key_env: str | None = "COHERE_API_KEY",
                 **kwargs):
        super().__init__(base_url, api_key_env, **kwargs)

    async def rerank(self, model: str, query: str, candidates: list[str], top_n: int) -> RawRerank:
        data = await self._post("/v2/rerank", {"model": model, "query": query, "documents": candidates,
                                               "top_n": top_n})
        try:
            results = [(int(r["index"]), float(r["relevance_score"])) for r in data["results"]]
        except (KeyError, TypeError) as exc:
            raise ProviderError(f"malformed rerank response: {data!r:.300}") from exc
        billed = (data.get("meta") or {}).get("billed_units") or {}
        return RawRerank(results, int(billed.get("input_tokens", 0) or billed.get("search_units", 0)))
