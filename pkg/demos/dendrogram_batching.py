"""How summaries are grouped for one synthesis iteration.

Builds the average-linkage tree over a few summary embeddings, prints it, and
shows which subtrees become batches under two token budgets.

    python3 demos/dendrogram_batching.py
"""

import asyncio

from spdrag.clustering import distance_matrix, group_by_tokens, upgma
from spdrag.providers import mock_providers

summaries = {
    "orchard-a": ("apple orchard harvest yield rose in autumn", 300_000),
    "orchard-b": ("apple orchard harvest yield fell in spring", 300_000),
    "mill-a": ("steel mill furnace output and capacity", 300_000),
    "mill-b": ("steel mill furnace capacity expansion", 300_000),
    "port": ("harbor shipping volumes and steel exports", 120_000),
}
ids = list(summaries)
texts = [summaries[i][0] for i in ids]
tokens = [summaries[i][1] for i in ids]

d = asyncio.run(distance_matrix(texts, mock_providers()))
tree = upgma(d, labels=ids)


def show(node, depth=0):
    pad = "  " * depth
    if node < tree.n:
        print(f"{pad}{ids[node]} ({tokens[node]:,} tokens)")
        return
    m = tree.merges[node - tree.n]
    print(f"{pad}+ height {m.distance:.3f}")
    show(m.left, depth + 1)
    show(m.right, depth + 1)


show(2 * tree.n - 2)
for budget in (500_000, 750_000, 2_000_000):
    batches = group_by_tokens(tokens, tree, budget)
    print(f"\nbudget {budget:,}:")
    for b in batches:
        print(f"  {b.member_ids}  {sum(tokens[i] for i in b.members):,} tokens")
