"""Index a handful of generated filings and answer one cross-document question.

Runs fully offline with the deterministic mock providers, whose "answers" are
mechanical echoes of the retrieved text rather than prose:

    python3 demos/quickstart.py
"""

import random

import asyncio

from spdrag import Config, index_corpus, run_query
from spdrag.providers import mock_providers
from spdrag.synthetic import company_documents

docs, facts = company_documents(random.Random(0), 5, "demo")
providers = mock_providers(seed=0)
config = Config()
config.update({"run": {"mock": True}})

corpus = asyncio.run(index_corpus(docs, providers, chunk_size=60, chunk_overlap=15))
print(f"indexed {len(corpus)} documents, {sum(len(c) for c in corpus.collections.values())} chunks")

result = run_query("Which revenue did each company report for the fiscal year?", corpus, providers, config)

print("\nplan:")
for todo in result.plan.sub_agent_todos:
    print("  -", todo)
print("  synthesis:", result.plan.synthesis_directive)

print("\nper-document findings:")
for f in result.findings:
    flag = " (forced)" if f.forced else ""
    print(f"  {f.doc_id}: {f.searches_used} searches{flag}, relevance {f.relevance:.2f}, {f.token_count} tokens")

print("\nsynthesis iterations:", [len(it.ids) for it in result.synthesis.iterations])
print("\nanswer:\n ", result.answer.replace("\n", "\n  "))
print("\nground truth:", "; ".join(f"{n} {a}" for n, a in facts))
m = result.metrics
print(f"\ntokens in/out {m['input_tokens']}/{m['output_tokens']}, cost ${m['cost']:.6f} (placeholder prices)")
