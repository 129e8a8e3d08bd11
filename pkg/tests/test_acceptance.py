"""Acceptance suite: one test per criterion, each logging a PASS/FAIL line.

The learning criteria (C6 to C8) run the full pipeline on the seeded
synthetic fixture (2000 nodes, 500 features, default injection recipe) and
take roughly 20 minutes together on one CPU.
"""

import time

import numpy as np
import pytest

from metagad.graph import split_nodes
from metagad.inject import (
    InjectionManifest,
    InjectionPlan,
    inject,
    inject_contextual,
    inject_structural,
    make_label_state,
    replay,
)
from metagad.meta import PUData, hypergradient, objective, train_finetuning, train_metagad
from metagad.meta import MetaConfig
from metagad.metrics import auc_pr, auc_roc, imbalance_ratio
from metagad.nn import ParamSet
from metagad.pipeline import config_from_dict
from metagad.sweep import run_sweep, summarize
from metagad.synthetic import community_graph, random_graph

from gradcheck import CHECKS
from oracles import SinToy, ap_rank_walk, auc_pairs, rel_error
from test_meta import _overfit_instance

SEEDS = range(5)


@pytest.fixture(scope="module")
def fixture_base():
    return config_from_dict({"data": {"synthetic": {}}})


@pytest.fixture(scope="module")
def prepared_cache():
    # C6 and C7 share injection + pretraining per seed
    return {}


def _means(rows):
    out = {}
    for s in summarize(rows):
        assert s["failed"] == 0, f"failed runs at {s['grid_value']}"
        out[s["grid_value"]] = s["auc_roc_mean"]
    return out


def _fmt(means):
    return ", ".join(f"{k}={v:.4f}" for k, v in means.items())


def test_c1_gradient_correctness(record):
    rng = np.random.default_rng(100)
    t0 = time.perf_counter()
    worst = {name: max(fn(rng) for _ in range(100)) for name, fn in CHECKS.items()}
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and elapsed < 60
    detail = ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
    assert record("C1", ok, f"gradient rel err < 1e-4 over 100 instances/op ({detail}; "
                            f"{elapsed:.1f}s)")


def test_c2_hypergradient_oracle(record):
    rng = np.random.default_rng(200)
    worst_match, ratios = 0.0, []
    for _ in range(25):
        dim = int(rng.integers(1, 4))
        toy = SinToy(rng.normal(size=dim), rng.normal(size=dim))
        theta, phi = ParamSet(t=rng.normal(size=dim)), ParamSet(p=rng.normal(size=dim))
        alpha = float(rng.uniform(0.1, 0.8))
        exact = toy.exact(theta, phi, alpha)
        g, _ = hypergradient(theta, phi, toy.train_fn, toy.val_fn, alpha, 1e-4)
        worst_match = max(worst_match, rel_error(g["p"], exact))
        errs = [np.linalg.norm(hypergradient(theta, phi, toy.train_fn, toy.val_fn, alpha,
                                             eps)[0]["p"] - exact) for eps in (0.2, 0.1)]
        ratios.append(errs[0] / errs[1])
    ok = worst_match < 1e-6 and all(3.5 <= r <= 4.5 for r in ratios)
    assert record("C2", ok, f"hypergradient rel err {worst_match:.1e}; halving-step error "
                            f"ratio in [{min(ratios):.3f}, {max(ratios):.3f}]")


def test_c3_metric_oracles(record):
    rng = np.random.default_rng(300)
    bad = 0
    for i in range(1000):
        n = int(rng.integers(2, 201))
        heavy_ties = i % 2 == 0
        s = (rng.integers(0, 3, size=n) if heavy_ties else rng.normal(size=n)).astype(float)
        y = rng.random(n) < rng.uniform(0.05, 0.5)
        y[0], y[-1] = True, False
        sl, yl = s.tolist(), y.tolist()
        roc_ok = auc_roc(s, y) == float(auc_pairs(sl, yl))
        pr = auc_pr(s, y)
        pr_ok = pr == ap_rank_walk(sl, yl, exact=False) and \
            abs(pr - float(ap_rank_walk(sl, yl))) <= 1e-15 * pr
        bad += not (roc_ok and pr_ok)
    assert record("C3", bad == 0, f"AUC-ROC / AUC-PR vs brute force: {1000 - bad}/1000 agree")


def test_c4_injection_exactness(record, tmp_path):
    rng = np.random.default_rng(400)
    failures = []
    for _ in range(40):
        seed = int(rng.integers(1 << 31))
        g = random_graph(60, 5, p=0.05, seed=seed % 997)
        m, n_cliques = int(rng.integers(2, 7)), int(rng.integers(1, 5))
        h, ids = inject_structural(g, m, n_cliques, seed)
        edges = {tuple(e) for e in h.edges.tolist()}
        if ids.size != m * n_cliques or np.unique(ids).size != ids.size:
            failures.append("count")
        for c in range(n_cliques):
            grp = sorted(ids[c * m:(c + 1) * m].tolist())
            if any((a, b) not in edges for i, a in enumerate(grp) for b in grp[i + 1:]):
                failures.append("clique")

        count, k = int(rng.integers(1, 12)), int(rng.integers(1, 59))
        h, targets, sources = inject_contextual(g, count, k, seed)
        draw = np.random.default_rng(seed)
        draw.choice(np.arange(g.n), size=count, replace=False)
        for i, src in zip(targets, sources):
            cand = draw.choice(g.n - 1, size=k, replace=False)
            cand = cand + (cand >= i)
            dist = np.linalg.norm(g.features[cand] - g.features[i], axis=1)
            if src not in cand or dist[cand == src][0] != dist.max():
                failures.append("context")

        h, man = inject(g, InjectionPlan(m=3, n_cliques=2, k=k, seed=seed))
        path = tmp_path / "manifest.json"
        man.save(path)
        again = replay(g, InjectionManifest.load(path))
        if not (np.array_equal(h.edges, again.edges)
                and h.features.tobytes() == again.features.tobytes()):
            failures.append("replay")
    assert record("C4", not failures, f"cliques complete, max-distance sources, bitwise "
                                      f"replay over 40 graphs ({len(failures)} violations)")


def _ir(n, seed=0):
    g, _ = community_graph(n=n, d=40, topic_words=8, words_per_node=5, seed=seed)
    _, man = inject(g, InjectionPlan(seed=seed))
    split = split_nodes(n, (0.8, 0.1, 0.1), seed)
    return imbalance_ratio(make_label_state(man.anomalies, split, 10, seed, "pu"))


@pytest.mark.parametrize("name, n, target", [("cora", 2708, 216), ("citeseer", 3327, 235)])
def test_c5_imbalance_ratio(record, name, n, target):
    ir = _ir(n)
    ok = abs(ir - target) <= 1
    assert record(f"C5[{name}]", ok, f"IR at n={n}, 80% train, 10-shot = {ir:.1f} "
                                     f"(target {target} +/- 1)")


def test_c6_ablation_ordering(record, fixture_base, prepared_cache):
    t0 = time.perf_counter()
    rows = run_sweep("mode", ["meta", "finetune", "no_ran"], fixture_base, SEEDS,
                     cache=prepared_cache)
    elapsed = time.perf_counter() - t0
    mean = _means(rows)
    ok = mean["meta"] > mean["finetune"] and mean["meta"] > mean["no_ran"] and elapsed < 900
    assert record("C6", ok, f"mean AUC-ROC over 5 seeds: {_fmt(mean)} ({elapsed:.0f}s)")


def test_c7_few_shot_monotonicity(record, fixture_base, prepared_cache):
    rows = run_sweep("few_shot", [1, 3, 5, 10], fixture_base, SEEDS, cache=prepared_cache)
    mean = _means(rows)
    ok = mean[10] >= mean[1] - 0.01
    assert record("C7", ok, f"meta mean AUC-ROC by shots: {_fmt(mean)}")


def test_c8_contamination_robustness(record, fixture_base):
    grid = [0.0, 0.05, 0.10, 0.15, 0.20]
    mean = _means(run_sweep("contamination", grid, fixture_base, SEEDS))
    gap = abs(mean[0.20] - mean[0.05])
    ok = gap <= 0.08 and mean[0.0] == max(mean.values())
    assert record("C8", ok, f"meta mean AUC-ROC by CR: {_fmt(mean)}; |CR20 - CR5| = {gap:.4f}")


def test_c9_bilevel_preference(record):
    z, ls = _overfit_instance()
    cfg = MetaConfig(alpha=1.0, beta=1.0, max_steps=300, patience=300, h_ran=8, h_det=8)
    val = PUData.from_nodes(z, ls.split.val, ls.positives)
    meta = train_metagad(z, ls, cfg)
    fine = train_finetuning(z, ls, cfg)
    lm = objective(meta.theta, meta.phi, val)[0]
    lf = objective(fine.theta, fine.phi, val)[0]
    assert record("C9", lm <= lf, f"validation loss meta={lm:.4f} <= finetune={lf:.4f}")
