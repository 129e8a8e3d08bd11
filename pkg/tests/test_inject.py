import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metagad.errors import ConfigError, DomainError
from metagad.graph import split_nodes
from metagad.inject import (
    InjectionManifest,
    InjectionPlan,
    LabelState,
    contamination_ratio,
    cr_injection_pairs,
    inject,
    inject_contextual,
    inject_structural,
    make_label_state,
    replay,
    split_budget,
)
from metagad.synthetic import community_graph, random_graph


def _edge_set(g):
    return {tuple(e) for e in g.edges.tolist()}


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(0, 4), st.integers(0, 2**31))
def test_structural_groups_become_cliques(m, n_cliques, seed):
    g = random_graph(30, 2, p=0.05, seed=seed % 1000)
    h, ids = inject_structural(g, m, n_cliques, seed)
    assert ids.size == m * n_cliques == np.unique(ids).size
    edges = _edge_set(h)
    for c in range(n_cliques):
        group = sorted(ids[c * m:(c + 1) * m].tolist())
        for a in range(m):
            for b in range(a + 1, m):
                assert (group[a], group[b]) in edges
    # nothing else changes
    assert _edge_set(g) <= edges
    assert np.array_equal(g.features, h.features)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 10), st.integers(1, 29), st.integers(0, 2**31))
def test_contextual_source_attains_max_distance(count, k, seed):
    g = random_graph(30, 4, seed=seed % 1000)
    h, targets, sources = inject_contextual(g, count, k, seed)
    assert np.unique(targets).size == count
    assert not np.any(targets == sources)
    # replay the candidate draws and check the chosen source is a maximiser
    rng = np.random.default_rng(seed)
    rng.choice(np.arange(30), size=count, replace=False)
    for i, src in zip(targets, sources):
        cand = rng.choice(29, size=k, replace=False)
        cand = cand + (cand >= i)
        dist = np.linalg.norm(g.features[cand] - g.features[i], axis=1)
        assert src in cand
        assert dist[cand == src][0] == dist.max()
        assert np.array_equal(h.features[i], g.features[src])


def test_default_plan_injects_150_on_cora_sized_graph():
    g, _ = community_graph(n=2708, d=60, topic_words=10, words_per_node=6, seed=1)
    h, man = inject(g, InjectionPlan(seed=5))
    assert len(man.structural_ids) == 75 and len(man.contextual_ids) == 75
    assert man.anomalies.size == 150
    assert not set(man.structural_ids) & set(man.contextual_ids)
    assert h.m == g.m + len(_edge_set(h) - _edge_set(g))


def test_zero_plan_is_identity(small_graph):
    h, man = inject(small_graph, InjectionPlan(n_cliques=0, contextual_count=0))
    assert h is small_graph
    assert man.anomalies.size == 0


def test_replay_is_bitwise(small_graph, tmp_path):
    h, man = inject(small_graph, InjectionPlan(m=4, n_cliques=2, k=10, seed=3))
    man.save(tmp_path / "m.json")
    again = replay(small_graph, InjectionManifest.load(tmp_path / "m.json"))
    assert np.array_equal(h.edges, again.edges)
    assert h.features.tobytes() == again.features.tobytes()
    h2, man2 = inject(small_graph, InjectionPlan(m=4, n_cliques=2, k=10, seed=3))
    assert man2 == man and np.array_equal(h2.edges, h.edges)


def test_plan_validation(small_graph):
    with pytest.raises(ConfigError):
        inject(small_graph, InjectionPlan(m=1, n_cliques=2))
    with pytest.raises(ConfigError):
        inject(small_graph, InjectionPlan(m=15, n_cliques=3))
    with pytest.raises(ConfigError):
        inject(small_graph, InjectionPlan(m=2, n_cliques=1, k=40))


def test_label_state_pu_mode():
    split = split_nodes(200, seed=0)
    gt = np.arange(0, 200, 10)
    ls = make_label_state(gt, split, 5, seed=1)
    assert ls.labeled.size == 5
    assert set(ls.labeled) <= set(gt) & set(split.train)
    assert np.array_equal(np.union1d(ls.labeled, ls.unlabeled), split.train)
    assert ls.val_labeled.size == 0


def test_label_state_reserve_and_round_trip(tmp_path):
    split = split_nodes(300, seed=2)
    gt = np.arange(0, 300, 6)
    ls = make_label_state(gt, split, 4, seed=1, val_mode="reserve", val_shots=2)
    assert ls.val_labeled.size == 2 and set(ls.val_labeled) <= set(split.val)
    ls.save(tmp_path / "l.json")
    back = LabelState.load(tmp_path / "l.json")
    assert np.array_equal(back.positives, ls.positives)
    assert np.array_equal(back.unlabeled, ls.unlabeled)


def test_too_many_shots():
    split = split_nodes(100, seed=0)
    with pytest.raises(ConfigError):
        make_label_state([1, 2], split, 5, seed=0)


def test_split_budget():
    assert split_budget(10, 0.3) == (7, 3)
    assert split_budget(1, 0.3) == (1, 0)
    assert split_budget(3, 0.5) == (1, 2)
    assert split_budget(10, 0.0) == (10, 0)


def test_contamination_ratio():
    split = split_nodes(100, seed=0)
    train_anom = split.train[:6]
    ls = make_label_state(train_anom, split, 2, seed=0)
    assert contamination_ratio(ls) == 4 / (split.train.size - 2)
    ls0 = make_label_state(train_anom, split, 6, seed=0)
    assert contamination_ratio(ls0) == 0.0


def test_contamination_ratio_undefined():
    split = split_nodes(10, seed=0)
    with pytest.raises(DomainError):
        contamination_ratio(make_label_state(split.train, split, split.train.size, seed=0))


def test_cr_pairs():
    pairs = cr_injection_pairs(2708, [0, 0.05, 0.10, 0.15, 0.20])
    assert pairs[0] == (13, 1)
    totals = [2 * m * n for m, n in (pairs[c] for c in (0.05, 0.10, 0.15, 0.20))]
    assert totals == sorted(totals)
    # expected unlabeled contamination lands near the target
    for cr in (0.05, 0.10, 0.15, 0.20):
        m, n = pairs[cr]
        expect = (0.8 * 2 * m * n - 10) / (2166 - 10)
        assert abs(expect - cr) < 0.01
