"""Synthetic anomaly injection and few-shot label bookkeeping.

Structural anomalies are groups of ``m`` nodes turned into cliques;
contextual anomalies get the attribute row of the farthest of ``k``
randomly drawn nodes.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError
from .graph import AttributedGraph, NodeSplit
from .seeding import derive_seed


@dataclass(frozen=True)
class InjectionPlan:
    m: int = 15
    n_cliques: int = 5
    contextual_count: int | None = None  # None: same as m * n_cliques
    k: int = 50
    seed: int = 0

    @property
    def structural_count(self):
        return self.m * self.n_cliques

    @property
    def n_contextual(self):
        return self.structural_count if self.contextual_count is None else self.contextual_count

    def validate(self, n):
        if self.n_cliques < 0 or self.n_contextual < 0:
            raise ConfigError("anomaly counts must be non-negative")
        if self.n_cliques > 0 and self.m < 2:
            raise ConfigError(f"clique size m must be >= 2, got {self.m}")
        if self.structural_count + self.n_contextual > n:
            raise ConfigError(
                f"plan needs {self.structural_count + self.n_contextual} anomalies "
                f"but the graph has {n} nodes")
        if self.n_contextual > 0 and not 1 <= self.k < n:
            raise ConfigError(f"candidate pool k must satisfy 1 <= k < n, got k={self.k}")


@dataclass
class InjectionManifest:
    seed: int
    m: int
    n_cliques: int
    k: int
    structural_ids: list
    contextual_ids: list
    contextual_sources: list = field(default_factory=list)

    @property
    def anomalies(self):
        return np.array(sorted(self.structural_ids + self.contextual_ids), dtype=np.int64)

    def to_dict(self):
        return asdict(self)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path):
        return cls(**json.loads(Path(path).read_text()))


def inject_structural(g: AttributedGraph, m, n_cliques, seed, exclude=()):
    """Connect ``n_cliques`` disjoint random groups of ``m`` nodes into cliques.

    Returns the new graph and the anomaly ids, group by group in sampling
    order (ids ``[i*m:(i+1)*m]`` form clique ``i``).
    """
    if n_cliques == 0:
        return g, np.empty(0, dtype=np.int64)
    if m < 2:
        raise ConfigError(f"clique size m must be >= 2, got {m}")
    pool = np.setdiff1d(np.arange(g.n), np.asarray(exclude, dtype=np.int64))
    if m * n_cliques > pool.size:
        raise ConfigError(f"need {m * n_cliques} nodes for cliques, only {pool.size} available")
    rng = np.random.default_rng(seed)
    ids = rng.choice(pool, size=m * n_cliques, replace=False)
    return _apply_cliques(g, ids, m), ids.astype(np.int64)


def _apply_cliques(g, ids, m):
    new = []
    for c in range(len(ids) // m):
        group = ids[c * m:(c + 1) * m]
        iu, ju = np.triu_indices(m, 1)
        new.append(np.stack([group[iu], group[ju]], axis=1))
    if not new:
        return g
    return g.with_extra_edges(np.vstack(new))


def inject_contextual(g: AttributedGraph, count, k, seed, exclude=()):
    """Overwrite the features of ``count`` random nodes with distant rows.

    For each target ``i`` we draw ``k`` distinct nodes other than ``i`` and
    copy the original attributes of the one with the largest Euclidean
    distance to ``x_i`` (first index wins on ties).

    Returns ``(graph, target_ids, source_ids)``.
    """
    if count == 0:
        empty = np.empty(0, dtype=np.int64)
        return g, empty, empty
    if not 1 <= k < g.n:
        raise ConfigError(f"candidate pool k must satisfy 1 <= k < n, got k={k}, n={g.n}")
    pool = np.setdiff1d(np.arange(g.n), np.asarray(exclude, dtype=np.int64))
    if count > pool.size:
        raise ConfigError(f"need {count} contextual targets, only {pool.size} available")
    rng = np.random.default_rng(seed)
    targets = rng.choice(pool, size=count, replace=False).astype(np.int64)
    x0 = g.features
    sources = np.empty(count, dtype=np.int64)
    for t, i in enumerate(targets):
        cand = rng.choice(g.n - 1, size=k, replace=False)
        cand = cand + (cand >= i)  # skip i itself
        dist = np.linalg.norm(x0[cand] - x0[i], axis=1)
        sources[t] = cand[int(np.argmax(dist))]
    x = x0.copy()
    x[targets] = x0[sources]
    return g.with_features(x), targets, sources


def inject(g: AttributedGraph, plan: InjectionPlan):
    """Structural then contextual injection with disjoint targets."""
    plan.validate(g.n)
    g1, s_ids = inject_structural(g, plan.m, plan.n_cliques, derive_seed(plan.seed, "structural"))
    g2, c_ids, c_src = inject_contextual(g1, plan.n_contextual, plan.k,
                                         derive_seed(plan.seed, "contextual"), exclude=s_ids)
    manifest = InjectionManifest(plan.seed, plan.m, plan.n_cliques, plan.k,
                                 s_ids.tolist(), c_ids.tolist(), c_src.tolist())
    return g2, manifest


def replay(g: AttributedGraph, manifest: InjectionManifest):
    """Re-apply a recorded injection without touching any RNG."""
    s_ids = np.asarray(manifest.structural_ids, dtype=np.int64)
    out = _apply_cliques(g, s_ids, manifest.m) if s_ids.size else g
    if manifest.contextual_ids:
        x = g.features.copy()
        x[manifest.contextual_ids] = g.features[manifest.contextual_sources]
        out = out.with_features(x)
    return out


# ------------------------------------------------------------------ label state

@dataclass(frozen=True)
class LabelState:
    """Ground truth plus the few-shot positive/unlabeled partition.

    ``labeled`` are the shot-budget anomalies from the training split and
    ``unlabeled`` every other training node. ``val_labeled`` optionally marks
    validation-split anomalies whose labels drive the validation loss.
    """

    ground_truth: np.ndarray
    labeled: np.ndarray
    unlabeled: np.ndarray
    split: NodeSplit
    shot_count: int
    val_labeled: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self):
        for name in ("ground_truth", "labeled", "unlabeled", "val_labeled"):
            arr = np.unique(np.asarray(getattr(self, name), dtype=np.int64))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if np.setdiff1d(self.labeled, self.ground_truth).size:
            raise DomainError("labeled nodes must be ground-truth anomalies")
        if np.intersect1d(self.labeled, self.unlabeled).size:
            raise DomainError("labeled and unlabeled sets overlap")
        if self.labeled.size != self.shot_count:
            raise DomainError("shot_count disagrees with the labeled set")

    @property
    def positives(self):
        """All nodes with a positive PU label (training and validation)."""
        return np.union1d(self.labeled, self.val_labeled)

    def to_dict(self):
        return {
            "ground_truth": self.ground_truth.tolist(),
            "labeled": self.labeled.tolist(),
            "val_labeled": self.val_labeled.tolist(),
            "shot_count": self.shot_count,
            "split": self.split.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        split = NodeSplit.from_dict(d["split"])
        labeled = np.array(d["labeled"], dtype=np.int64)
        return cls(np.array(d["ground_truth"], dtype=np.int64), labeled,
                   np.setdiff1d(split.train, labeled), split, int(d["shot_count"]),
                   np.array(d.get("val_labeled", []), dtype=np.int64))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


VAL_MODES = ("pu", "reserve", "ground_truth")


def make_label_state(ground_truth, split: NodeSplit, shot_count, seed, val_mode="pu",
                     val_shots=0) -> LabelState:
    """Sample ``shot_count`` labeled anomalies from the training split.

    ``val_mode`` chooses which validation nodes count as positive:

    * ``"pu"``: none beyond ``labeled`` (which lives in the training split);
    * ``"reserve"``: ``val_shots`` anomalies sampled from the validation split;
    * ``"ground_truth"``: every validation anomaly (leaks labels).
    """
    gt = np.unique(np.asarray(ground_truth, dtype=np.int64))
    train_anom = np.intersect1d(gt, split.train)
    if shot_count < 0 or shot_count > train_anom.size:
        raise ConfigError(
            f"cannot label {shot_count} anomalies: training split holds {train_anom.size}")
    rng = np.random.default_rng(seed)
    labeled = rng.choice(train_anom, size=shot_count, replace=False) if shot_count else []
    labeled = np.asarray(labeled, dtype=np.int64)
    val_anom = np.intersect1d(gt, split.val)
    if val_mode == "pu":
        val_labeled = np.empty(0, dtype=np.int64)
    elif val_mode == "reserve":
        if val_shots > val_anom.size:
            raise ConfigError(
                f"cannot reserve {val_shots} labels: validation split holds {val_anom.size}")
        val_labeled = rng.choice(val_anom, size=val_shots, replace=False) if val_shots else []
    elif val_mode == "ground_truth":
        val_labeled = val_anom
    else:
        raise ConfigError(f"unknown val_mode {val_mode!r}; expected one of {VAL_MODES}")
    return LabelState(gt, labeled, np.setdiff1d(split.train, labeled), split,
                      int(shot_count), np.asarray(val_labeled, dtype=np.int64))


def split_budget(shots, val_share):
    """Split a label budget into (training shots, validation shots).

    Validation gets ``round(val_share * shots)`` but never the last
    training label.
    """
    if shots < 0 or not 0 <= val_share < 1:
        raise ConfigError("shots must be >= 0 and val_share in [0, 1)")
    val = min(int(math.floor(val_share * shots + 0.5)), max(shots - 1, 0))
    return shots - val, val


def contamination_ratio(ls: LabelState) -> float:
    if ls.unlabeled.size == 0:
        raise DomainError("contamination ratio undefined: no unlabeled nodes")
    return np.intersect1d(ls.unlabeled, ls.ground_truth).size / ls.unlabeled.size


def cr_injection_pairs(n_nodes, cr_values, shots=10, train_ratio=0.8, max_cliques=12,
                       min_cliques=2):
    """Pick ``(m, n_cliques)`` so that injection hits each target CR.

    With ``2 * m * n_cliques`` anomalies, roughly ``train_ratio`` of them land
    in the training split and ``shots`` of those get labeled, so the target
    fixes ``m * n_cliques``. Clique counts are spread linearly from
    ``min_cliques`` to ``max_cliques`` across the positive CR values; CR=0
    uses a single 13-clique and is meant to be run with every training
    anomaly labeled.
    """
    n_train = math.floor(train_ratio * n_nodes)
    positive = sorted(c for c in cr_values if c > 0)
    out = {}
    for cr in cr_values:
        if cr <= 0:
            out[cr] = (13, 1)
            continue
        frac = 0.0 if len(positive) == 1 else positive.index(cr) / (len(positive) - 1)
        n_cliques = int(round(min_cliques + frac * (max_cliques - min_cliques)))
        unlabeled_anom = cr * (n_train - shots)
        total = (unlabeled_anom + shots) / train_ratio
        m = max(2, int(round(total / (2 * n_cliques))))
        out[cr] = (m, n_cliques)
    return out
