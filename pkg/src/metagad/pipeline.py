"""Run configuration and the inject -> pretrain -> label -> train -> eval chain."""

from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError
from .graph import AttributedGraph, load_graph, load_label_file, normalize_adjacency, split_nodes
from .inject import (
    InjectionManifest,
    InjectionPlan,
    LabelState,
    contamination_ratio,
    inject,
    make_label_state,
    split_budget,
)
from .meta import MetaConfig, TrainResult, train
from .metrics import MetricReport, config_fingerprint, evaluate
from .nn import Activation
from .pretrain import EmbeddingMatrix, PretrainConfig, pretrain_encoder
from .seeding import derive_seed
from .synthetic import community_graph

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DataConfig:
    edges: str | None = None
    features: str | None = None
    labels: str | None = None  # organic anomalies, one id per line
    synthetic: dict | None = None  # kwargs for synthetic.community_graph

    def validate(self):
        if self.synthetic is None and (self.edges is None or self.features is None):
            raise ConfigError("data needs either 'edges' + 'features' paths or a 'synthetic' block")
        for name in ("edges", "features", "labels"):
            path = getattr(self, name)
            if path is not None and not Path(path).exists():
                raise ConfigError(f"data.{name}: file {path} does not exist")


@dataclass(frozen=True)
class InjectConfig:
    enabled: bool = True
    m: int = 15
    n_cliques: int = 5
    contextual_count: int | None = None
    k: int = 50

    def plan(self, seed):
        return InjectionPlan(self.m, self.n_cliques, self.contextual_count, self.k, seed)


@dataclass(frozen=True)
class LabelConfig:
    shots: int = 10
    val_mode: str = "reserve"
    val_share: float = 0.3
    split: tuple = (0.8, 0.1, 0.1)
    all_train_anomalies: bool = False  # label every training anomaly (CR = 0)

    def budget(self):
        """``(training shots, validation shots)`` for this configuration."""
        if self.val_mode == "reserve":
            return split_budget(self.shots, self.val_share)
        return self.shots, 0


@dataclass(frozen=True)
class SweepConfig:
    kind: str = "few_shot"
    grid: tuple = (1, 3, 5, 10)
    seeds: tuple = (0, 1, 2, 3, 4)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    mode: str = "meta"
    pretrain_on: str = "injected"
    data: DataConfig = field(default_factory=DataConfig)
    inject: InjectConfig = field(default_factory=InjectConfig)
    labels: LabelConfig = field(default_factory=LabelConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    eval_all_unlabeled: bool = False

    def to_dict(self):
        return asdict(self)

    def fingerprint(self):
        return config_fingerprint(self.to_dict())

    def with_updates(self, **sections):
        """Return a copy with nested sections partially replaced.

        ``cfg.with_updates(labels={"shots": 3}, seed=4)``
        """
        kw = {}
        for key, value in sections.items():
            current = getattr(self, key)
            if isinstance(value, dict) and hasattr(current, "__dataclass_fields__"):
                kw[key] = replace(current, **value)
            else:
                kw[key] = value
        return replace(self, **kw)


_SECTIONS = {"data": DataConfig, "inject": InjectConfig, "labels": LabelConfig,
             "pretrain": PretrainConfig, "meta": MetaConfig, "sweep": SweepConfig}


def _build(cls, values, where):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(unknown)}")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from None


def config_from_dict(doc) -> RunConfig:
    doc = copy.deepcopy(doc)
    top = {}
    for key, value in doc.items():
        if key in _SECTIONS:
            if key == "data" and isinstance(value.get("synthetic"), dict):
                value["synthetic"] = dict(value["synthetic"])
            top[key] = _build(_SECTIONS[key], value or {}, key)
        else:
            top[key] = value
    cfg = _build(RunConfig, top, "top level")
    if cfg.mode not in ("meta", "finetune", "no_ran"):
        raise ConfigError(f"mode must be meta, finetune or no_ran, got {cfg.mode!r}")
    if cfg.pretrain_on not in ("injected", "clean"):
        raise ConfigError("pretrain_on must be 'injected' or 'clean'")
    return cfg


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    base = Path(path).resolve().parent
    data = doc.get("data", {})
    for key in ("edges", "features", "labels"):
        if data.get(key) and not Path(data[key]).is_absolute():
            data[key] = str(base / data[key])
    return config_from_dict(doc)


def manifest(stage, cfg: RunConfig, **extra):
    return {
        "stage": stage,
        "tool": "metagad",
        "version": __version__,
        "seed": cfg.seed,
        "config_hash": cfg.fingerprint(),
        "config": cfg.to_dict(),
        **extra,
    }


# -------------------------------------------------------------------- stages

def load_base_graph(cfg: RunConfig):
    """The graph before injection and any organic anomaly ids."""
    cfg.data.validate()
    if cfg.data.synthetic is not None:
        kw = dict(cfg.data.synthetic)
        kw.setdefault("seed", derive_seed(cfg.seed, "graph"))
        g, _ = community_graph(**kw)
    else:
        g = load_graph(cfg.data.edges, cfg.data.features)
    organic = (load_label_file(cfg.data.labels, g.n) if cfg.data.labels
               else np.empty(0, dtype=np.int64))
    return g, organic


def inject_anomalies(cfg: RunConfig, g: AttributedGraph):
    if not cfg.inject.enabled:
        return g, None
    return inject(g, cfg.inject.plan(derive_seed(cfg.seed, "inject")))


def pretrain(cfg: RunConfig, g: AttributedGraph) -> EmbeddingMatrix:
    pcfg = replace(cfg.pretrain, seed=derive_seed(cfg.seed, "pretrain") % 2**32)
    return pretrain_encoder(g, normalize_adjacency(g), pcfg)


def build_labels(cfg: RunConfig, ground_truth, n) -> LabelState:
    split = split_nodes(n, cfg.labels.split, derive_seed(cfg.seed, "split"))
    train_shots, val_shots = cfg.labels.budget()
    if cfg.labels.all_train_anomalies:
        train_shots = np.intersect1d(ground_truth, split.train).size
    if cfg.labels.val_mode == "reserve":
        val_shots = min(val_shots, np.intersect1d(ground_truth, split.val).size)
    return make_label_state(ground_truth, split, train_shots, derive_seed(cfg.seed, "labels"),
                            cfg.labels.val_mode, val_shots)


def train_model(cfg: RunConfig, z, labels: LabelState) -> TrainResult:
    mcfg = replace(cfg.meta, seed=derive_seed(cfg.seed, "train") % 2**32)
    return train(cfg.mode, z, labels, mcfg)


def eval_nodes(labels: LabelState, all_unlabeled=False):
    if all_unlabeled:
        return np.setdiff1d(np.arange(labels.split.n), labels.positives), "all_unlabeled"
    return labels.split.test, "test"


def evaluate_model(cfg: RunConfig, result: TrainResult, z, labels: LabelState) -> MetricReport:
    nodes, subset = eval_nodes(labels, cfg.eval_all_unlabeled)
    scores = result.scores(np.asarray(z), Activation(cfg.meta.activation))
    return evaluate(scores, labels.ground_truth, nodes, cfg.seed, cfg.fingerprint(), subset)


@dataclass
class Prepared:
    """Graph-level artefacts shared by runs that differ only in labels/training."""

    graph: AttributedGraph
    ground_truth: np.ndarray
    manifest: InjectionManifest | None
    embedding: EmbeddingMatrix


def prepare(cfg: RunConfig, base=None) -> Prepared:
    base_graph, organic = base if base is not None else load_base_graph(cfg)
    g, man = inject_anomalies(cfg, base_graph)
    gt = organic if man is None else np.union1d(organic, man.anomalies)
    emb = pretrain(cfg, g if cfg.pretrain_on == "injected" else base_graph)
    return Prepared(g, gt, man, emb)


@dataclass
class RunOutcome:
    report: MetricReport
    result: TrainResult
    labels: LabelState
    contamination: float
    wall_time_s: float


def run_once(cfg: RunConfig, prepared: Prepared | None = None) -> RunOutcome:
    t0 = time.perf_counter()
    prepared = prepare(cfg) if prepared is None else prepared
    labels = build_labels(cfg, prepared.ground_truth, prepared.graph.n)
    result = train_model(cfg, prepared.embedding.z, labels)
    report = evaluate_model(cfg, result, prepared.embedding.z, labels)
    return RunOutcome(report, result, labels, contamination_ratio(labels),
                      time.perf_counter() - t0)
