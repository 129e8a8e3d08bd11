"""Seeded citation-style graphs for tests and benchmarks when real data is absent."""

from __future__ import annotations

import numpy as np

from .graph import AttributedGraph


def community_graph(n=2000, d=500, communities=7, avg_degree=4.0, homophily=0.85,
                    words_per_node=18, topic_words=60, topic_share=0.7, seed=0):
    """Planted-partition graph with bag-of-words features.

    Nodes get a community uniformly at random. Edges are sampled so the mean
    degree is ``avg_degree`` and a ``homophily`` fraction of them stays inside
    a community. Each community owns ``topic_words`` vocabulary entries;
    every node switches on ``words_per_node`` binary features, a
    ``topic_share`` of them from its community's topic and the rest from the
    whole vocabulary.
    """
    rng = np.random.default_rng(seed)
    comm = rng.integers(communities, size=n)
    members = [np.flatnonzero(comm == c) for c in range(communities)]
    n_edges = int(round(avg_degree * n / 2))
    n_in = int(round(homophily * n_edges))
    pairs = set()
    while len(pairs) < n_edges:
        if len(pairs) < n_in:
            i = int(rng.integers(n))
            group = members[comm[i]]
            j = int(group[rng.integers(group.size)])
        else:
            i, j = (int(v) for v in rng.integers(n, size=2))
        if i != j:
            pairs.add((min(i, j), max(i, j)))
    edges = np.array(sorted(pairs), dtype=np.int64)

    topics = [rng.choice(d, size=topic_words, replace=False) for _ in range(communities)]
    x = np.zeros((n, d))
    n_topic = int(round(topic_share * words_per_node))
    for i in range(n):
        on = rng.choice(topics[comm[i]], size=n_topic, replace=False)
        rest = rng.choice(d, size=words_per_node - n_topic, replace=False)
        x[i, on] = 1.0
        x[i, rest] = 1.0
    return AttributedGraph.from_edges(n, edges, x), comm


def random_graph(n, d, p=0.1, seed=0):
    """Small Erdos-Renyi graph with Gaussian features, for unit tests."""
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p
    return AttributedGraph.from_edges(n, np.stack([iu[keep], ju[keep]], 1),
                                      rng.normal(size=(n, d)))
