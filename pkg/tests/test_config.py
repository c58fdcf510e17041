import pytest

from spdrag.config import CONFIG_ENV, Config, build_providers, load_config, nest, parse_override
from spdrag.errors import ConfigError
from spdrag.providers.base import Providers


def test_defaults():
    c = Config()
    assert (c.chunking.chunk_size, c.chunking.chunk_overlap) == (1000, 250)
    assert (c.retrieval.k, c.retrieval.top_n, c.retrieval.normal_rag_k) == (15, 5, 15)
    assert c.synthesis.budget == 750_000 and c.synthesis.singleton_synthesis is True
    assert (c.limits.subagent_max_searches, c.limits.agentic_max_iters) == (5, 10)
    assert c.providers.request_cap == 8 and c.providers.max_attempts == 3
    assert c.eval.parallelism == 4
    assert c.providers.models["subagent"] == "gemini-2.5-flash"


@pytest.mark.parametrize("data", [
    {"chunking": {"chunk_overlap": 1000}},
    {"chunking": {"chunk_size": 100, "chunk_overlap": 150}},
    {"retrieval": {"top_n": 16}},
    {"synthesis": {"budget": 0}},
    {"limits": {"subagent_max_searches": 0}},
    {"providers": {"pricing": {"m": {"input": -1.0, "output": 0.0}}}},
    {"nonsense": {"x": 1}},
    {"retrieval": {"depth": 3}},
    {"retrieval": {"k": "fifteen"}},
    {"synthesis": {"singleton_synthesis": "yes"}},
])
def test_validation_rejects(data):
    c = Config()
    with pytest.raises(ConfigError):
        c.update(data)
    assert c == Config()  # failed updates leave no trace


def test_related_keys_validated_together():
    c = Config().update({"chunking": {"chunk_size": 6, "chunk_overlap": 0}})
    assert c.chunking.chunk_size == 6


def test_precedence_flag_over_file_over_default(tmp_path):
    f = tmp_path / "c.toml"
    f.write_text("[retrieval]\nk = 20\ntop_n = 4\n[synthesis]\nbudget = 1234\n", encoding="utf-8")
    c = load_config(f, env={})
    assert (c.retrieval.k, c.retrieval.top_n, c.synthesis.budget) == (20, 4, 1234)
    assert c.chunking.chunk_size == 1000
    c = load_config(f, {"retrieval.k": 30}, env={})
    assert (c.retrieval.k, c.retrieval.top_n) == (30, 4)


def test_config_path_from_environment(tmp_path):
    f = tmp_path / "env.toml"
    f.write_text("[run]\nseed = 9\n", encoding="utf-8")
    assert load_config(env={CONFIG_ENV: str(f)}).run.seed == 9
    assert load_config(env={}).run.seed == 0


def test_bad_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.toml", env={})
    f = tmp_path / "bad.toml"
    f.write_text("[retrieval\nk=", encoding="utf-8")
    with pytest.raises(ConfigError, match="TOML"):
        load_config(f, env={})


def test_parse_override():
    assert parse_override("retrieval.k=7") == ("retrieval.k", 7)
    assert parse_override("run.mock=true") == ("run.mock", True)
    assert parse_override("paths.index_dir=/tmp/x") == ("paths.index_dir", "/tmp/x")
    assert parse_override('eval.systems=["spd_rag"]') == ("eval.systems", ["spd_rag"])
    with pytest.raises(ConfigError):
        parse_override("no-equals")
    assert nest({"a.b": 1, "a.c": 2}) == {"a": {"b": 1, "c": 2}}


def test_pricing_merges_with_defaults():
    c = Config().update({"providers": {"pricing": {"my-model": {"input": 1e-6, "output": 2e-6}}}})
    assert "my-model" in c.providers.pricing and "gpt-5" in c.providers.pricing


def test_build_providers_mock_and_real():
    c = Config().update({"run": {"mock": True, "seed": 3}, "providers": {"request_cap": 2}})
    p = build_providers(c)
    assert isinstance(p, Providers) and p.request_cap == 2 and p.dimension == 64
    real = build_providers(Config())
    assert real.dimension == 1536 and real.models["judge"] == "gpt-5"
