"""Command-line driver.

Subcommands: convert, train-gcn, gen-patch, attack-eval, baseline, sweep.
Every run is reproducible from a JSON config plus a seed; explicit flags
override config values, and GUAP_SEED supplies the default seed. Progress
goes to stderr, machine-readable results only to files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import attack, data, evaluate, gcn
from .config import AttackHyper, TrainConfig
from .errors import GuapError

log = logging.getLogger("guap.cli")


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except GuapError as err:
        log.error("%s", err)
        return 1
    except OSError as err:
        log.error("i/o failure: %s", err)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="guap",
        description="Universal adversarial patching of graphs",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(required=True, metavar="command")

    p = sub.add_parser("convert", help="convert a public distribution to the tsv layout")
    p.add_argument("--format", required=True, choices=("cora", "citeseer", "polblogs"))
    p.add_argument("--src", required=True, help="directory (or file) of the raw distribution")
    p.add_argument("--dst", required=True, help="output dataset directory")
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("train-gcn", help="train the victim model")
    _common_args(p)
    p.add_argument("--out", required=True, help="model output path")
    p.add_argument("--hidden", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("gen-patch", help="run the patch optimization")
    _common_args(p)
    _hyper_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="artifact output path")
    p.set_defaults(func=_cmd_gen_patch)

    p = sub.add_parser("attack-eval", help="evaluate a patch artifact")
    _common_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--artifact", required=True)
    p.add_argument("--out", required=True, help="report output path")
    p.add_argument("--regen-features", action="store_true",
                   help="resample patch features with --seed before evaluating")
    p.add_argument("--retrain", action="store_true",
                   help="retrain the victim with --seed before evaluating")
    p.set_defaults(func=_cmd_attack_eval)

    p = sub.add_parser("baseline", help="evaluate an untrained-patch baseline")
    _common_args(p)
    _hyper_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--kind", required=True, choices=("no-edges", "random"))
    p.add_argument("--prob", type=float, help="Bernoulli edge probability")
    p.add_argument("--calibrate-to", help="artifact whose edge count sets the budget")
    p.add_argument("--out", required=True, help="report output path")
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("sweep", help="patch-size / radius / sampling sweeps")
    _common_args(p)
    _hyper_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--axis", required=True, choices=evaluate.SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", help="comma-separated seeds (default: the run seed)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=_cmd_sweep)
    return parser


def _common_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file with defaults for this run")
    p.add_argument("--data", help="dataset directory (nodes.tsv / edges.tsv / features.txt)")
    p.add_argument("--dataset-name", help="name used for validation and report echo")
    p.add_argument("--seed", type=int, help="run seed (fallback: GUAP_SEED, then 0)")


def _hyper_args(p: argparse.ArgumentParser):
    p.add_argument("--patch-frac", type=float, help="patch size as fraction of n")
    p.add_argument("--m", type=int, help="explicit patch node count")
    p.add_argument("--radius", type=float, help="L2 projection radius")
    p.add_argument("--sample-rate", type=float, help="training-set sampling rate")
    p.add_argument("--max-epoch", type=int)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--no-clip", action="store_true", help="disable the [0,1] clamp")


def _load_config(args) -> dict:
    if getattr(args, "config", None):
        with open(args.config) as fh:
            return json.load(fh)
    return {}


def _resolve_seed(args, cfg: dict) -> int:
    if args.seed is not None:
        return args.seed
    if "seed" in cfg:
        return int(cfg["seed"])
    return int(os.environ.get("GUAP_SEED", "0"))


def _load_graph(args, cfg: dict):
    dataset_cfg = cfg.get("dataset", {})
    root = args.data or dataset_cfg.get("root")
    if not root:
        raise GuapError("no dataset directory: pass --data or set dataset.root in the config")
    name = args.dataset_name or dataset_cfg.get("name") or Path(root).name
    desc = data.descriptor_for(name, root)
    g = data.load_dataset(desc)
    log.info("loaded %s: %d nodes, %d edges, %d classes, train/test %d/%d",
             name, g.n, g.undirected_edge_count(), g.num_classes,
             g.train_nodes().size, g.test_nodes().size)
    return g, name


def _train_config(args, cfg: dict, seed: int) -> TrainConfig:
    merged = dict(cfg.get("train", {}))
    for key, flag in (("hidden", "hidden"), ("learning_rate", "lr"), ("epochs", "epochs")):
        value = getattr(args, flag, None)
        if value is not None:
            merged[key] = value
    merged.setdefault("seed", seed)
    return TrainConfig(**merged)


def _attack_hyper(args, cfg: dict) -> AttackHyper:
    merged = dict(cfg.get("attack", {}))
    for key, flag in (("patch_fraction", "patch_frac"), ("m", "m"),
                      ("radius", "radius"), ("sample_rate", "sample_rate"),
                      ("max_epoch", "max_epoch"), ("max_iter", "max_iter")):
        value = getattr(args, flag, None)
        if value is not None:
            merged[key] = value
    if getattr(args, "no_clip", False):
        merged["clip"] = False
    if merged.get("m") is not None:
        merged["patch_fraction"] = None
    return AttackHyper(**merged)


def _cmd_convert(args) -> int:
    g = data.convert_dataset(args.format, args.src, args.dst, split_seed=args.split_seed)
    log.info("converted %s -> %s: %d nodes (LCC), %d edges, %d classes",
             args.src, args.dst, g.n, g.undirected_edge_count(), g.num_classes)
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    seed = _resolve_seed(args, cfg)
    g, _ = _load_graph(args, cfg)
    train_cfg = _train_config(args, cfg, seed)
    params = gcn.train(g, train_cfg)
    z = gcn.forward(g, g.features, params)
    pred = gcn.predict_labels(z)
    test = g.test_nodes()
    log.info("test accuracy %.4f", (pred[test] == g.labels[test]).mean())
    data.save_model(params, args.out, train_cfg)
    log.info("model written to %s", args.out)
    return 0


def _cmd_gen_patch(args) -> int:
    cfg = _load_config(args)
    seed = _resolve_seed(args, cfg)
    g, name = _load_graph(args, cfg)
    params = data.load_model(args.model)
    hyper = _attack_hyper(args, cfg)
    artifact = attack.guap(g, params, hyper, seed=seed)
    artifact.dataset = name
    data.save_patch(artifact, args.out)
    log.info("artifact written to %s (best epoch %d, train ASR %.4f)",
             args.out, artifact.best_epoch, max(artifact.asr_trace, default=0.0))
    return 0


def _cmd_attack_eval(args) -> int:
    cfg = _load_config(args)
    seed = _resolve_seed(args, cfg)
    g, _ = _load_graph(args, cfg)
    params = data.load_model(args.model)
    artifact = data.load_patch(args.artifact)
    if args.regen_features:
        report = evaluate.regenerate_features_eval(artifact, g, params, seed)
    elif args.retrain:
        train_cfg = _train_config(args, cfg, seed)
        report = evaluate.transfer_retrain_check(artifact, g, train_cfg, seed)
    else:
        report = evaluate.evaluate_patch(artifact, g, params)
    data.write_report(report, args.out)
    log.info("report written to %s (test ASR %.4f, delta acc %+.4f)",
             args.out, report.asr_test, report.delta_acc)
    return 0


def _cmd_baseline(args) -> int:
    cfg = _load_config(args)
    seed = _resolve_seed(args, cfg)
    g, _ = _load_graph(args, cfg)
    params = data.load_model(args.model)
    hyper = _attack_hyper(args, cfg)
    m = hyper.resolve_m(g.n)
    if args.kind == "no-edges":
        report = evaluate.baseline_no_edges(g, params, m, seed, hyper)
    else:
        if (args.prob is None) == (args.calibrate_to is None):
            raise GuapError("random baseline needs exactly one of --prob / --calibrate-to")
        if args.calibrate_to:
            budget = evaluate.patch_edge_count(data.load_patch(args.calibrate_to))
            report = evaluate.baseline_random_edges(
                g, params, m, edge_budget=budget, seed=seed, hyper=hyper)
        else:
            report = evaluate.baseline_random_edges(
                g, params, m, edge_prob=args.prob, seed=seed, hyper=hyper)
    data.write_report(report, args.out)
    log.info("report written to %s (test ASR %.4f, delta acc %+.4f)",
             args.out, report.asr_test, report.delta_acc)
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_config(args)
    seed = _resolve_seed(args, cfg)
    g, _ = _load_graph(args, cfg)
    params = data.load_model(args.model)
    hyper = _attack_hyper(args, cfg)
    values = [float(v) for v in args.values.split(",") if v]
    seeds = ([int(s) for s in args.seeds.split(",") if s]
             if args.seeds else [seed])
    points = evaluate.sweep(g, params, hyper, args.axis, values, seeds,
                            workers=args.workers)
    evaluate.sweep_to_csv(points, args.out)
    log.info("sweep table written to %s (%d rows)", args.out, len(points))
    return 0


if __name__ == "__main__":
    sys.exit(main())
