"""``metagad`` command line: inject, pretrain, train, eval and sweep.

Every command works in one output directory. A command whose inputs are
missing there runs the earlier stages first, so ``metagad eval`` on an
empty directory does the whole chain. Layout::

    graph/edges.csv  graph/features.csv  anomalies.txt  injection.json
    embedding.csv    pretrain_loss.csv   labels.json
    checkpoint_<mode>.json   history_<mode>.csv   report_<mode>.json
    manifest_<stage>.json    sweep_<kind>.csv     sweep_<kind>_summary.csv

Exit codes: 0 success, 2 configuration error, 3 numeric divergence,
4 file or format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, GraphFormatError, MetaGADError
from .graph import load_graph, load_label_file, save_graph
from .inject import LabelState, contamination_ratio, cr_injection_pairs
from .meta import TrainResult, save_history
from .metrics import imbalance_ratio
from .nn import load_params, save_params
from .pipeline import (
    DataConfig,
    RunConfig,
    build_labels,
    evaluate_model,
    inject_anomalies,
    load_base_graph,
    load_config,
    manifest,
    pretrain,
    train_model,
)
from .pretrain import load_embedding, save_embedding, save_loss_trace
from .sweep import run_sweep, summarize, write_rows, write_summary

log = logging.getLogger("metagad")


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1, default=str) + "\n")


def effective_config(args) -> RunConfig:
    """Config file (or the synthetic fixture) with command-line overrides applied."""
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = RunConfig(data=DataConfig(synthetic={}))
    if args.seed is not None:
        cfg = cfg.with_updates(seed=args.seed)
    if getattr(args, "mode", None):
        cfg = cfg.with_updates(mode=args.mode)
    if args.shots is not None:
        cfg = cfg.with_updates(labels={"shots": args.shots})
    if args.cost_weight is not None:
        cfg = cfg.with_updates(meta={"cost_weight": args.cost_weight})
    if args.cr is not None:
        cfg = _apply_cr(cfg, args.cr)
    return cfg


def _apply_cr(cfg: RunConfig, percent):
    if not 0 <= percent < 100:
        raise ConfigError(f"--cr is a percentage in [0, 100), got {percent}")
    cr = percent / 100.0
    n = load_base_graph(cfg)[0].n
    m, n_cliques = cr_injection_pairs(n, [cr], shots=cfg.labels.budget()[0],
                                      train_ratio=cfg.labels.split[0])[cr]
    cfg = cfg.with_updates(inject={"enabled": True, "m": m, "n_cliques": n_cliques,
                                   "contextual_count": None})
    return cfg.with_updates(labels={"all_train_anomalies": cr == 0})


class RunDir:
    """Paths inside one output directory and the stage chaining between them."""

    def __init__(self, root, cfg: RunConfig):
        self.root = Path(root)
        self.cfg = cfg
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, name):
        return self.root / name

    # -- inject
    def graph(self):
        edges, feats = self.path("graph/edges.csv"), self.path("graph/features.csv")
        if not (edges.exists() and feats.exists()):
            self.inject()
        return load_graph(edges, feats)

    def ground_truth(self, n):
        p = self.path("anomalies.txt")
        if not p.exists():
            self.inject()
        return load_label_file(p, n)

    def inject(self):
        cfg = self.cfg
        base, organic = load_base_graph(cfg)
        g, man = inject_anomalies(cfg, base)
        self.path("graph").mkdir(exist_ok=True)
        save_graph(g, self.path("graph/edges.csv"), self.path("graph/features.csv"))
        gt = organic if man is None else np.union1d(organic, man.anomalies)
        np.savetxt(self.path("anomalies.txt"), gt, fmt="%d")
        if man is not None:
            man.save(self.path("injection.json"))
        extra = {"anomalies": int(gt.size), "graph": g.stats()}
        if cfg.pretrain_on == "clean":
            self.path("graph_clean").mkdir(exist_ok=True)
            save_graph(base, self.path("graph_clean/edges.csv"),
                       self.path("graph_clean/features.csv"))
        _write_json(self.path("manifest_inject.json"), manifest("inject", cfg, **extra))
        log.info("injected %d anomalies into %d nodes", gt.size, g.n)
        return g, gt

    # -- pretrain
    def embedding(self, n):
        p = self.path("embedding.csv")
        if not p.exists():
            self.pretrain()
        return load_embedding(p, expected_n=n, expected_dim=self.cfg.pretrain.embedding_dim)

    def pretrain(self):
        g = self.graph()
        if self.cfg.pretrain_on == "clean":
            g = load_graph(self.path("graph_clean/edges.csv"), self.path("graph_clean/features.csv"))
        emb = pretrain(self.cfg, g)
        save_embedding(self.path("embedding.csv"), emb)
        save_loss_trace(self.path("pretrain_loss.csv"), emb.loss_trace)
        final = emb.loss_trace[-1] if emb.loss_trace else None
        _write_json(self.path("manifest_pretrain.json"),
                    manifest("pretrain", self.cfg, shape=list(emb.shape), final_loss=final))
        log.info("pretrained %s embedding, final loss %s", emb.shape, final)
        return emb

    # -- labels / train
    def labels(self, n, rebuild=False):
        # train rebuilds so --shots and --seed take effect; eval reuses train's labels
        p = self.path("labels.json")
        if p.exists() and not rebuild:
            return LabelState.load(p)
        ls = build_labels(self.cfg, self.ground_truth(n), n)
        ls.save(p)
        return ls

    def checkpoint_path(self, mode):
        return self.path(f"checkpoint_{mode}.json")

    def train(self, mode):
        cfg = self.cfg.with_updates(mode=mode)
        g = self.graph()
        emb = self.embedding(g.n)
        ls = self.labels(g.n, rebuild=True)
        result = train_model(cfg, emb.z, ls)
        params = result.theta if result.phi is None else result.theta.merge(result.phi)
        meta = {"mode": mode, "best_step": result.best_step, "steps": len(result.history),
                "config_hash": cfg.fingerprint()}
        save_params(self.checkpoint_path(mode), params, meta)
        save_history(self.path(f"history_{mode}.csv"), result.history)
        _write_json(self.path(f"manifest_train_{mode}.json"), manifest(
            "train", cfg, steps=len(result.history), best_step=result.best_step,
            imbalance_ratio=imbalance_ratio(ls), contamination=contamination_ratio(ls)))
        log.info("%s: %d steps, best at %s", mode, len(result.history), result.best_step)
        return result

    def load_result(self, mode, checkpoint=None):
        path = Path(checkpoint) if checkpoint else self.checkpoint_path(mode)
        if not path.exists():
            if checkpoint:
                raise FileNotFoundError(f"checkpoint {path} not found")
            self.train(mode)
        params, meta = load_params(path)
        theta, phi = params.select("det."), params.select("ran.")
        return TrainResult(theta, phi if len(phi) else None, [], meta.get("best_step"),
                           meta.get("mode", mode))

    def evaluate(self, mode, checkpoint=None):
        result = self.load_result(mode, checkpoint)
        g = self.graph()
        emb = self.embedding(g.n)
        ls = self.labels(g.n)
        report = evaluate_model(self.cfg.with_updates(mode=result.mode), result, emb.z, ls)
        report.save(self.path(f"report_{result.mode}.json"))
        _write_json(self.path(f"manifest_eval_{result.mode}.json"),
                    manifest("eval", self.cfg, report=report.to_dict()))
        return report


# ------------------------------------------------------------------ commands

def cmd_inject(args, cfg):
    g, gt = RunDir(args.out, cfg).inject()
    print(f"{g.n} nodes, {g.m} edges, {gt.size} anomalies -> {args.out}")


def cmd_pretrain(args, cfg):
    emb = RunDir(args.out, cfg).pretrain()
    print(f"embedding {emb.shape[0]}x{emb.shape[1]} -> {Path(args.out) / 'embedding.csv'}")


def cmd_train(args, cfg):
    result = RunDir(args.out, cfg).train(cfg.mode)
    print(f"{cfg.mode}: {len(result.history)} steps, best step {result.best_step}")


def cmd_eval(args, cfg):
    report = RunDir(args.out, cfg).evaluate(cfg.mode, args.checkpoint)
    print(json.dumps(report.to_dict(), indent=1))


def cmd_sweep(args, cfg):
    kind = args.kind or cfg.sweep.kind
    grid = args.grid if args.grid else cfg.sweep.grid
    if kind == "contamination" and args.grid:
        grid = [v / 100.0 for v in grid]
    if kind == "mode" and args.grid:
        raise ConfigError("give mode grids in the config file")
    seeds = cfg.sweep.seeds if args.seed is None else (args.seed,)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(row):
        log.info("%s=%s seed=%d auc_roc=%.4f (%s)", row.kind, row.grid_value, row.seed,
                 row.auc_roc, row.status)

    rows = run_sweep(kind, grid, cfg, seeds, progress)
    summary = summarize(rows)
    write_rows(out / f"sweep_{kind}.csv", rows)
    write_summary(out / f"sweep_{kind}_summary.csv", summary)
    _write_json(out / f"manifest_sweep_{kind}.json",
                manifest("sweep", cfg, kind=kind, grid=list(grid), seeds=list(seeds)))
    for s in summary:
        print(f"{kind}={s['grid_value']}: auc_roc {s['auc_roc_mean']:.4f} +- "
              f"{s['auc_roc_std']:.4f}, auc_pr {s['auc_pr_mean']:.4f} +- {s['auc_pr_std']:.4f}"
              f" ({s['runs']} ok, {s['failed']} failed)")


COMMANDS = {"inject": cmd_inject, "pretrain": cmd_pretrain, "train": cmd_train,
            "eval": cmd_eval, "sweep": cmd_sweep}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--out", default="run", help="output directory (default: ./run)")
    common.add_argument("--shots", type=int, help="labeled anomalies")
    common.add_argument("--cost-weight", type=float, help="weight on the positive loss term")
    common.add_argument("--cr", type=float,
                        help="target contamination ratio in percent; re-plans the injection")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="metagad", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"metagad {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("inject", parents=[common], help="inject anomalies and write the graph")
    sub.add_parser("pretrain", parents=[common], help="pretrain the encoder, write embeddings")
    for name, helptext in (("train", "train a detector"), ("eval", "score the test split")):
        sp = sub.add_parser(name, parents=[common], help=helptext)
        sp.add_argument("--mode", choices=("meta", "finetune", "no_ran"))
        if name == "eval":
            sp.add_argument("--checkpoint", help="checkpoint to score (default: the run's own)")
    sp = sub.add_parser("sweep", parents=[common], help="run a grid over seeds")
    sp.add_argument("--kind", choices=("few_shot", "cost_weight", "contamination", "mode"))
    sp.add_argument("--grid", type=float, nargs="+",
                    help="grid values (contamination in percent)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = effective_config(args)
        if args.command == "sweep" and args.kind == "few_shot" and args.grid:
            args.grid = [int(v) for v in args.grid]
        COMMANDS[args.command](args, cfg)
    except (GraphFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except MetaGADError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except json.JSONDecodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
