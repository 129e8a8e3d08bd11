"""Grid sweeps over shots, cost weight, contamination ratio or training mode."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, MetaGADError
from .inject import cr_injection_pairs
from .metrics import config_fingerprint
from .pipeline import RunConfig, load_base_graph, prepare, run_once

log = logging.getLogger(__name__)

KINDS = ("few_shot", "cost_weight", "contamination", "mode")
ROW_FIELDS = ("kind", "grid_value", "seed", "auc_roc", "auc_pr", "wall_time_s", "contamination",
              "status", "error")
SUMMARY_FIELDS = ("kind", "grid_value", "runs", "failed", "auc_roc_mean", "auc_roc_std",
                  "auc_pr_mean", "auc_pr_std")


@dataclass
class SweepRow:
    kind: str
    grid_value: object
    seed: int
    auc_roc: float = math.nan
    auc_pr: float = math.nan
    wall_time_s: float = 0.0
    contamination: float = math.nan
    status: str = "ok"
    error: str = ""

    def as_list(self):
        return [getattr(self, f) for f in ROW_FIELDS]


def _check_grid(kind, grid):
    if kind not in KINDS:
        raise ConfigError(f"sweep kind must be one of {KINDS}, got {kind!r}")
    if not grid:
        raise ConfigError("sweep grid is empty")
    for v in grid:
        if kind == "few_shot" and (int(v) != v or v < 1):
            raise ConfigError(f"few_shot grid values must be integers >= 1, got {v}")
        if kind == "cost_weight" and not v > 0:
            raise ConfigError(f"cost_weight grid values must be > 0, got {v}")
        if kind == "contamination" and not 0 <= v < 1:
            raise ConfigError(f"contamination grid values are fractions in [0, 1), got {v}")
        if kind == "mode" and v not in ("meta", "finetune", "no_ran"):
            raise ConfigError(f"mode grid values must be meta, finetune or no_ran, got {v!r}")


def point_config(base: RunConfig, kind, value, seed, cr_pairs=None) -> RunConfig:
    """The run configuration for one (grid value, seed) cell."""
    cfg = base.with_updates(seed=seed)
    if kind == "few_shot":
        return cfg.with_updates(labels={"shots": int(value)})
    if kind == "cost_weight":
        return cfg.with_updates(meta={"cost_weight": float(value)})
    if kind == "mode":
        return cfg.with_updates(mode=value)
    m, n_cliques = cr_pairs[value]
    # contextual count follows the structural count (the default recipe)
    cfg = cfg.with_updates(inject={"enabled": True, "m": m, "n_cliques": n_cliques,
                                   "contextual_count": None})
    return cfg.with_updates(labels={"all_train_anomalies": value == 0})


def _prepare_key(cfg: RunConfig):
    d = cfg.to_dict()
    return config_fingerprint([d["seed"], d["inject"], d["pretrain"], d["pretrain_on"], d["data"]])


def run_sweep(kind, grid, base: RunConfig, seeds=(0, 1, 2, 3, 4), progress=None, cache=None):
    """One train + eval per (grid value, seed); failures become rows.

    Graph preparation (injection and pretraining) is cached across grid
    values that share it, so a few-shot sweep pretrains once per seed.
    Pass the same ``cache`` dict to several sweeps to share it between them.
    Rows come back ordered by (grid value, seed).
    """
    grid = list(grid)
    _check_grid(kind, grid)
    cr_pairs = None
    base_graphs = {}
    if kind == "contamination":
        n = _base_for(base, base.seed, base_graphs)[0].n
        cr_pairs = cr_injection_pairs(n, grid, shots=base.labels.budget()[0],
                                      train_ratio=base.labels.split[0])
    cache = {} if cache is None else cache
    rows = []
    for value in grid:
        for seed in seeds:
            t0 = time.perf_counter()
            row = SweepRow(kind, value, int(seed))
            try:
                cfg = point_config(base, kind, value, int(seed), cr_pairs)
                key = _prepare_key(cfg)
                if key not in cache:
                    cache[key] = prepare(cfg, _base_for(cfg, cfg.seed, base_graphs))
                out = run_once(cfg, cache[key])
                row.auc_roc, row.auc_pr = out.report.auc_roc, out.report.auc_pr
                row.contamination = out.contamination
            except (MetaGADError, ValueError, FloatingPointError) as exc:
                row.status, row.error = "failed", f"{type(exc).__name__}: {exc}"
                log.warning("sweep %s=%s seed=%s failed: %s", kind, value, seed, row.error)
            row.wall_time_s = time.perf_counter() - t0
            rows.append(row)
            if progress:
                progress(row)
    return rows


def _base_for(cfg: RunConfig, seed, memo):
    # synthetic graphs depend on the seed, file-backed graphs do not
    key = seed if cfg.data.synthetic is not None else None
    if key not in memo:
        memo[key] = load_base_graph(cfg.with_updates(seed=seed))
    return memo[key]


def summarize(rows):
    """Mean and population std per grid value over the successful seeds."""
    out = []
    order = []
    groups = {}
    for r in rows:
        if r.grid_value not in groups:
            order.append(r.grid_value)
            groups[r.grid_value] = []
        groups[r.grid_value].append(r)
    for value in order:
        group = groups[value]
        ok = [r for r in group if r.status == "ok"]
        roc = np.array([r.auc_roc for r in ok])
        pr = np.array([r.auc_pr for r in ok])
        stat = (lambda a, f: float(f(a)) if a.size else math.nan)
        out.append({
            "kind": group[0].kind, "grid_value": value, "runs": len(ok),
            "failed": len(group) - len(ok),
            "auc_roc_mean": stat(roc, np.mean), "auc_roc_std": stat(roc, np.std),
            "auc_pr_mean": stat(pr, np.mean), "auc_pr_std": stat(pr, np.std),
        })
    return out


def write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ROW_FIELDS)
        for r in rows:
            w.writerow(r.as_list())


def write_summary(path, summary):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        w.writeheader()
        w.writerows(summary)
