import asyncio
import glob
import os

import pytest

from spdrag.providers import mock_providers
from spdrag.tokens import WhitespaceCounter


def _find_cl100k():
    env = os.environ.get("SPDRAG_CL100K_FILE")
    if env and os.path.isfile(env):
        return env
    for pattern in ("/usr/local/lib/python3*/dist-packages/marimo/_lsp/copilot/cl100k_base.tiktoken",
                    "/usr/lib/python3*/site-packages/marimo/_lsp/copilot/cl100k_base.tiktoken",
                    os.path.expanduser("~/.cache/tiktoken/*")):
        for path in glob.glob(pattern):
            if os.path.isfile(path) and os.path.getsize(path) > 1_000_000:
                return path
    return None


CL100K_FILE = _find_cl100k()


@pytest.fixture(scope="session")
def cl100k_file():
    if CL100K_FILE is None:
        pytest.skip("no local cl100k_base rank file")
    return CL100K_FILE


@pytest.fixture
def providers():
    return mock_providers(seed=0)


@pytest.fixture
def counter():
    return WhitespaceCounter()


def run(coro):
    return asyncio.run(coro)
