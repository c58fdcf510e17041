"""Run configuration: defaults, TOML loading, overrides and validation.

Precedence is command-line flag, then config file, then the built-in
default. A config file is named by ``--config`` or by the environment
variable ``SPDRAG_CONFIG``; that is the only environment variable read
implicitly. API keys are looked up under the variable names given in the
``[providers]`` section, and only when a real backend is built.
"""

from __future__ import annotations

import copy
import dataclasses
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .errors import ConfigError
from .providers.base import DEFAULT_EMBED_MODEL, DEFAULT_MODELS, DEFAULT_RERANK_MODEL

__all__ = ["Config", "ChunkingConfig", "RetrievalConfig", "SynthesisConfig", "LimitsConfig", "PathsConfig",
           "ProvidersConfig", "EvalConfig", "RunConfig", "load_config", "CONFIG_ENV", "DEFAULT_PRICING",
           "build_providers", "build_counter", "nest", "parse_override", "pricing_table"]

CONFIG_ENV = "SPDRAG_CONFIG"

# USD per token. Placeholders in the shape of public list prices; override in
# [providers.pricing] before quoting any cost figure.
DEFAULT_PRICING = {
    "gemini-2.5-pro": {"input": 1.25e-6, "output": 10e-6},
    "gemini-2.5-flash": {"input": 0.30e-6, "output": 2.5e-6},
    "gpt-5": {"input": 1.25e-6, "output": 10e-6},
    "embed-v4.0": {"input": 0.12e-6, "output": 0.0},
    "rerank-v4.0-fast": {"input": 0.0, "output": 0.0},
}


@dataclass
class ChunkingConfig:
    chunk_size: int = 1000
    chunk_overlap: int = 250
    tokenizer: str = "cl100k_base"
    bpe_file: str | None = None


@dataclass
class RetrievalConfig:
    k: int = 15
    top_n: int = 5
    normal_rag_k: int = 15


@dataclass
class SynthesisConfig:
    budget: int = 750_000
    singleton_synthesis: bool = True


@dataclass
class LimitsConfig:
    subagent_max_searches: int = 5
    agentic_max_iters: int = 10
    max_todos: int = 12


@dataclass
class PathsConfig:
    index_dir: str = ".spdrag/index"
    prompt_dir: str | None = None


@dataclass
class ProvidersConfig:
    chat_base_url: str = "https://generativelanguage.googleapis.com/v1beta/openai"
    chat_api_key_env: str = "GEMINI_API_KEY"
    judge_base_url: str = "https://api.openai.com/v1"
    judge_api_key_env: str = "OPENAI_API_KEY"
    embed_base_url: str = "https://api.cohere.com"
    embed_api_key_env: str = "COHERE_API_KEY"
    rerank_base_url: str = "https://api.cohere.com"
    rerank_api_key_env: str = "COHERE_API_KEY"
    models: dict = field(default_factory=lambda: dict(DEFAULT_MODELS))
    embed_model: str = DEFAULT_EMBED_MODEL
    rerank_model: str = DEFAULT_RERANK_MODEL
    dimension: int = 1536
    mock_dimension: int = 64
    request_cap: int = 8
    max_attempts: int = 3
    backoff_base: float = 0.5
    backoff_max: float = 8.0
    timeout: float = 120.0
    pricing: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_PRICING.items()})


@dataclass
class EvalConfig:
    systems: list = field(default_factory=lambda: ["spd_rag", "full_context", "normal_rag", "agentic_rag"])
    parallelism: int = 4
    context_cap: int = 1_000_000
    judge_template: str | None = None


@dataclass
class RunConfig:
    mock: bool = False
    seed: int = 0
    trace_out: str | None = None
    report_out: str | None = None
    csv_out: str | None = None


_SECTIONS = {
    "chunking": ChunkingConfig, "retrieval": RetrievalConfig, "synthesis": SynthesisConfig,
    "limits": LimitsConfig, "paths": PathsConfig, "providers": ProvidersConfig, "eval": EvalConfig,
    "run": RunConfig,
}


@dataclass
class Config:
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    limits: LimitsConfig = field(default_factory=LimitsConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    providers: ProvidersConfig = field(default_factory=ProvidersConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    run: RunConfig = field(default_factory=RunConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        cfg = cls()
        cfg.update(data)
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def update(self, data: dict) -> "Config":
        """Apply a nested mapping on top of the current values, then validate.

        All or nothing: on error the config is left as it was.
        """
        draft = copy.deepcopy(self)
        for section, values in data.items():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section [{section}]; known: {', '.join(_SECTIONS)}")
            if not isinstance(values, dict):
                raise ConfigError(f"[{section}] must be a table")
            target = getattr(draft, section)
            for key, value in values.items():
                self._set(section, target, key, value)
        draft.validate()
        for f in dataclasses.fields(self):
            setattr(self, f.name, getattr(draft, f.name))
        return self

    def set(self, dotted: str, value: Any) -> "Config":
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        return self.update({section: {key: value}})

    @staticmethod
    def _set(section: str, target, key: str, value) -> None:
        fields = {f.name: f for f in dataclasses.fields(target)}
        if key not in fields:
            raise ConfigError(f"unknown key {section}.{key}; known: {', '.join(fields)}")
        current = getattr(target, key)
        if isinstance(current, dict) and isinstance(value, dict):
            value = {**current, **value}
        elif isinstance(current, bool) and not isinstance(value, bool):
            raise ConfigError(f"{section}.{key} must be true or false, got {value!r}")
        elif isinstance(current, int) and not isinstance(current, bool):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{section}.{key} must be an integer, got {value!r}")
        elif isinstance(current, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{section}.{key} must be a number, got {value!r}")
            value = float(value)
        setattr(target, key, value)

    def validate(self) -> None:
        c, r = self.chunking, self.retrieval
        if c.chunk_size < 1:
            raise ConfigError(f"chunking.chunk_size must be >= 1, got {c.chunk_size}")
        if not 0 <= c.chunk_overlap < c.chunk_size:
            raise ConfigError(f"chunking.chunk_overlap must be in [0, chunk_size), got {c.chunk_overlap}")
        if r.k < 1 or r.top_n < 1 or r.normal_rag_k < 1:
            raise ConfigError("retrieval.k, retrieval.top_n and retrieval.normal_rag_k must be >= 1")
        if r.top_n > r.k:
            raise ConfigError(f"retrieval.top_n ({r.top_n}) must not exceed retrieval.k ({r.k})")
        if self.synthesis.budget < 1:
            raise ConfigError(f"synthesis.budget must be >= 1, got {self.synthesis.budget}")
        lim = self.limits
        if lim.subagent_max_searches < 1 or lim.agentic_max_iters < 1 or lim.max_todos < 1:
            raise ConfigError("limits values must be >= 1")
        p = self.providers
        if p.request_cap < 1 or p.max_attempts < 1:
            raise ConfigError("providers.request_cap and providers.max_attempts must be >= 1")
        for model, price in p.pricing.items():
            if not isinstance(price, dict) or set(price) != {"input", "output"}:
                raise ConfigError(f"providers.pricing.{model} needs exactly 'input' and 'output'")
            if min(price.values()) < 0:
                raise ConfigError(f"negative price for {model}")
        if self.eval.parallelism < 1:
            raise ConfigError("eval.parallelism must be >= 1")


def parse_override(text: str) -> tuple[str, Any]:
    """``section.key=value``; the value is read as a TOML literal, else kept as a string."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"--set expects section.key=value, got {text!r}")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key.strip(), value


def load_config(path: str | Path | None = None, overrides: dict | None = None,
                env: dict | None = None) -> Config:
    """Defaults, then the file (``path`` or ``$SPDRAG_CONFIG``), then ``overrides``.

    ``overrides`` maps dotted keys to values and stands for command-line flags.
    """
    env = os.environ if env is None else env
    path = path or env.get(CONFIG_ENV) or None
    cfg = Config()
    if path:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid TOML: {exc}") from None
        cfg.update(data)
    if overrides:
        cfg.update(nest(overrides))
    return cfg


def nest(dotted: dict) -> dict:
    """``{"a.b": 1}`` to ``{"a": {"b": 1}}`` so related keys are validated together."""
    out: dict = {}
    for key, value in dotted.items():
        section, _, name = key.partition(".")
        if not name:
            raise ConfigError(f"override {key!r} must look like section.key")
        out.setdefault(section, {})[name] = value
    return out


def build_counter(config: Config):
    """The token counter for chunking and accounting.

    Mock runs count whitespace words everywhere so that chunk sizes, budgets
    and trace token counts share one unit and no encoder file is needed.
    """
    from .tokens import WhitespaceCounter, get_counter

    if config.run.mock:
        return WhitespaceCounter()
    return get_counter(config.chunking.tokenizer, config.chunking.bpe_file)


def build_providers(config: Config, transport=None):
    """A :class:`~spdrag.providers.Providers` hub for ``config``.

    ``transport`` is handed to every HTTP backend (tests inject one that
    refuses to connect).
    """
    from .providers.base import Providers, RetryPolicy
    from .providers.mock import mock_providers
    from .trace import PricingTable

    p = config.providers
    retry = RetryPolicy(p.max_attempts, p.backoff_base, p.backoff_max)
    judge_template = None
    if config.eval.judge_template:
        judge_template = Path(config.eval.judge_template).read_text(encoding="utf-8")
    if config.run.mock:
        return mock_providers(seed=config.run.seed, dimension=p.mock_dimension, counter=build_counter(config),
                              models=dict(p.models), embed_model=p.embed_model, rerank_model=p.rerank_model,
                              request_cap=p.request_cap, retry=retry, judge_template=judge_template)
    from .providers.http import CohereEmbedBackend, CohereRerankBackend, OpenAIChatBackend

    def chat(url, key_env):
        return OpenAIChatBackend(base_url=url, api_key_env=key_env, timeout=p.timeout, transport=transport)

    chat_backend = chat(p.chat_base_url, p.chat_api_key_env)
    judge_chat = chat(p.judge_base_url, p.judge_api_key_env)
    providers = Providers(
        chat_backend=_RoleRouter(chat_backend, {"judge": judge_chat}),
        embed_backend=CohereEmbedBackend(base_url=p.embed_base_url, api_key_env=p.embed_api_key_env,
                                         dimension=p.dimension, timeout=p.timeout, transport=transport),
        rerank_backend=CohereRerankBackend(base_url=p.rerank_base_url, api_key_env=p.rerank_api_key_env,
                                           timeout=p.timeout, transport=transport),
        models=dict(p.models), embed_model=p.embed_model, rerank_model=p.rerank_model, dimension=p.dimension,
        request_cap=p.request_cap, retry=retry, judge_template=judge_template,
    )
    PricingTable.from_dict(p.pricing)  # fail fast on a malformed table
    return providers


class _RoleRouter:
    """Sends chat requests for some roles to a different backend."""

    def __init__(self, default, by_role: dict):
        self.default = default
        self.by_role = by_role

    async def complete(self, model, request, schema):
        backend = self.by_role.get(request.model_role, self.default)
        return await backend.complete(model, request, schema)


def pricing_table(config: Config):
    from .trace import PricingTable

    return PricingTable.from_dict(config.providers.pricing)
