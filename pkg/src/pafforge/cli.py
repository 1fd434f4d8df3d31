"""pafforge command line: catalog inspection, cost estimation, CT,
training, scheduling, baselines, and report conversion.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .catalog import composite_from_dict, composite_to_dict, load_catalog
from .config import config_hash, load_config
from .cost import estimate_cost
from .ct import CtDataset, collect_ct_dataset, split_ct, tune_coefficients
from .datasets import load_dataset, train_val_split
from .errors import ConfigError, PafForgeError
from .nn import Checkpoint, build_model, evaluate, pretrain
from .paf import build_plan, eval_composite, relu_paf
from .report import emit_report, read_report, report_to_csv_rows
from .scheduler import run_baseline, run_framework

__all__ = ["main"]


def _print_plan(paf):
    plan = build_plan(paf)
    print(f"{paf.name}: stage degrees {list(paf.stage_degrees)}, "
          f"product degree {paf.product_degree}")
    print(f"  depth per stage: {list(plan.depth_per_stage)}")
    print(f"  total depth:     {plan.total_depth}")
    print(f"  nonscalar mults: {plan.nonscalar_mults}")
    print(f"  scalar mults:    {plan.scalar_mults}")
    print("  level trace:")
    for level, labels in plan.level_trace:
        print(f"    {level}: {', '.join(labels)}")


def _cmd_catalog(args):
    catalog = load_catalog(args.file)
    if args.action == "list":
        for paf in catalog:
            plan = build_plan(paf)
            rows = len(paf.per_layer)
            print(f"{paf.name:12s} stages {str(list(paf.stage_degrees)):14s} "
                  f"depth {plan.total_depth}  mults {plan.nonscalar_mults}  "
                  f"per-layer rows {rows}")
        return 0
    paf = catalog.get(args.paf)
    print(f"name: {paf.name}")
    print(f"stage names: {list(paf.stage_names)}")
    layer = args.layer
    for i, stage in enumerate(paf.stages_for(layer)):
        sym = paf.coeff_symbols[i]
        terms = ", ".join(
            f"{sym}{2 * k + 1}={c!r}" for k, c in enumerate(stage.coefficients)
        )
        print(f"  stage {i} ({paf.stage_names[i]}): {terms}")
    return 0


def _cmd_depth(args):
    catalog = load_catalog(args.file)
    _print_plan(catalog.get(args.paf))
    return 0


def _cmd_eval(args):
    catalog = load_catalog(args.file)
    paf = catalog.get(args.paf)
    s = eval_composite(paf, args.x, args.layer)
    r = relu_paf(paf, args.x, args.layer)
    print(f"{paf.name}(x={args.x}) sign approx = {s!r}")
    print(f"relu_paf = {r!r}")
    return 0


def _cmd_cost(args):
    est = estimate_cost(args.paf, load_catalog(args.file),
                        calibration=True if args.calibrate else False)
    print(f"{est.paf_name}: depth {est.total_depth}, "
          f"nonscalar mults {est.nonscalar_mults}, scalar mults {est.scalar_mults}")
    if est.latency_proxy_ms is not None:
        print(f"calibrated latency proxy: {est.latency_proxy_ms:.2f} ms")
        print(f"calibration residuals (ms): "
              f"{[round(r, 2) for r in est.calibration_residuals_ms]}")
    return 0


def _load_experiment(args):
    cfg = load_config(args.config)
    X, y = load_dataset(cfg.dataset)
    datasets = train_val_split(
        X, y, val_fraction=float(cfg.dataset.get("val_fraction", 0.2)),
        seed=cfg.seed,
    )
    model = build_model(cfg.model, seed=cfg.seed, auto_dropout=cfg.auto_dropout)
    if getattr(args, "checkpoint", None):
        model.load_state_dict(Checkpoint.load(args.checkpoint).state)
    return cfg, model, datasets


def _cmd_train(args):
    cfg, model, datasets = _load_experiment(args)
    acc, curve = pretrain(model, datasets, cfg.train, seed=cfg.seed)
    out = args.out or "pretrained.json"
    Checkpoint(model.state_dict(), epoch=len(curve), val_acc=acc).save(out)
    print(f"pretrained for {len(curve)} epochs; best val acc {acc:.4f}")
    print(f"checkpoint written to {out}")
    return 0


def _cmd_ct(args):
    cfg, model, datasets = _load_experiment(args)
    if args.action == "collect":
        ds = collect_ct_dataset(model, datasets[0][0], seed=cfg.seed,
                                max_samples=args.max_samples)
        ds.save(args.out)
        sizes = [l.inputs.size for l in ds.layers]
        print(f"collected {len(ds.layers)} layers, samples per layer {sizes}")
        print(f"CT dataset written to {args.out}")
        return 0
    ctds = CtDataset.load(args.ct_data)
    catalog = load_catalog()
    paf = catalog.get(cfg.paf)
    train, val = split_ct(ctds, cfg.ct.split_ratio, seed=cfg.seed)
    layers = [args.layer] if args.layer is not None else range(len(ctds.layers))
    for ordinal in layers:
        paf, curve = tune_coefficients(paf, ordinal, train.layer(ordinal),
                                       val.layer(ordinal), cfg.ct)
        print(f"layer {ordinal}: best val loss {min(curve):.3e}")
    Path(args.out).write_text(json.dumps(composite_to_dict(paf), indent=1))
    print(f"tuned coefficients written to {args.out}")
    return 0


def _cmd_schedule(args):
    cfg, model, datasets = _load_experiment(args)
    if not getattr(args, "checkpoint", None):
        acc, _ = pretrain(model, datasets, cfg.train, seed=cfg.seed)
        print(f"pretrained base model: val acc {acc:.4f}")
    paf = load_catalog().get(cfg.paf)
    if args.tuned:
        paf = composite_from_dict(json.loads(Path(args.tuned).read_text()))

    resume_state = None
    progress_path = args.progress or (cfg.output + ".progress")
    if args.resume:
        resume_state = json.loads(Path(progress_path).read_text())
        print(f"resuming from {progress_path}")

    def on_progress(state):
        Path(progress_path).write_text(json.dumps(state))

    report = run_framework(
        model, paf, datasets, cfg.train, toggles=cfg.toggles, ct_cfg=cfg.ct,
        seed=cfg.seed, config_hash=config_hash(cfg), resume=resume_state,
        on_progress=on_progress,
    )
    emit_report(report, cfg.output)
    Checkpoint(model.state_dict(), val_acc=report.final_val_acc).save(
        cfg.output + ".model.json"
    )
    print(f"steps: {len(report.steps)}  total epochs: {report.total_epochs}")
    print(f"best val acc {report.global_best_acc:.4f}; "
          f"final static-scale val acc {report.final_val_acc:.4f}")
    print(f"report written to {cfg.output}")
    return 0


def _cmd_baseline(args):
    cfg, model, datasets = _load_experiment(args)
    if not getattr(args, "checkpoint", None):
        acc, _ = pretrain(model, datasets, cfg.train, seed=cfg.seed)
        print(f"pretrained base model: val acc {acc:.4f}")
    budget = args.budget or cfg.epoch_budget
    if budget is None:
        raise ConfigError("baseline needs an epoch budget "
                          "(config epoch_budget or --budget)")
    paf = load_catalog().get(cfg.paf)
    report = run_baseline(model, paf, datasets, cfg.train, int(budget),
                          seed=cfg.seed, config_hash=config_hash(cfg))
    emit_report(report, cfg.output)
    print(f"baseline consumed {report.total_epochs} epochs; "
          f"best val acc {report.global_best_acc:.4f}; "
          f"final val acc {report.final_val_acc:.4f}")
    print(f"report written to {cfg.output}")
    return 0


def _cmd_report(args):
    report = read_report(args.infile)
    if args.format == "json":
        emit_report(report, args.out, fmt="json")
    elif args.format == "csv":
        emit_report(report, args.out, fmt="csv")
    else:
        raise ConfigError(f"unknown format {args.format!r} (use json or csv)")
    print(f"wrote {args.out}")
    return 0


def _build_parser():
    p = argparse.ArgumentParser(prog="pafforge", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("catalog", help="list or inspect catalog PAFs")
    c.add_argument("action", choices=["list", "show"])
    c.add_argument("paf", nargs="?")
    c.add_argument("--layer", type=int, default=None)
    c.add_argument("--file", default=None, help="alternate catalog JSON")
    c.set_defaults(fn=_cmd_catalog)

    d = sub.add_parser("depth", help="multiplication depth and level trace")
    d.add_argument("paf")
    d.add_argument("--file", default=None)
    d.set_defaults(fn=_cmd_depth)

    e = sub.add_parser("eval", help="evaluate a PAF and its ReLU reconstruction")
    e.add_argument("paf")
    e.add_argument("--x", type=float, required=True)
    e.add_argument("--layer", type=int, default=None)
    e.add_argument("--file", default=None)
    e.set_defaults(fn=_cmd_eval)

    co = sub.add_parser("cost", help="FHE cost estimate")
    co.add_argument("paf")
    co.add_argument("--calibrate", action="store_true",
                    help="fit the latency proxy to the shipped measurements")
    co.add_argument("--file", default=None)
    co.set_defaults(fn=_cmd_cost)

    ct = sub.add_parser("ct", help="coefficient-tuning dataset and tuning")
    ct.add_argument("action", choices=["collect", "tune"])
    ct.add_argument("--config", required=True)
    ct.add_argument("--checkpoint", default=None)
    ct.add_argument("--ct-data", dest="ct_data", default=None)
    ct.add_argument("--layer", type=int, default=None)
    ct.add_argument("--max-samples", type=int, default=16384)
    ct.add_argument("--out", required=True)
    ct.set_defaults(fn=_cmd_ct)

    t = sub.add_parser("train", help="pretrain a model from a config")
    t.add_argument("--config", required=True)
    t.add_argument("--checkpoint", default=None)
    t.add_argument("--out", default=None)
    t.set_defaults(fn=_cmd_train)

    s = sub.add_parser("schedule", help="run the full recovery pipeline")
    s.add_argument("--config", required=True)
    s.add_argument("--checkpoint", default=None,
                   help="pretrained model checkpoint (skips pretraining)")
    s.add_argument("--tuned", default=None,
                   help="pre-tuned coefficients JSON from `ct tune`")
    s.add_argument("--resume", action="store_true",
                   help="continue from the last completed training group")
    s.add_argument("--progress", default=None,
                   help="progress file path (default: <output>.progress)")
    s.set_defaults(fn=_cmd_schedule)

    b = sub.add_parser("baseline", help="network-wise replacement baseline")
    b.add_argument("--config", required=True)
    b.add_argument("--checkpoint", default=None)
    b.add_argument("--budget", type=int, default=None,
                   help="epoch budget (defaults to config epoch_budget)")
    b.set_defaults(fn=_cmd_baseline)

    r = sub.add_parser("report", help="convert reports between formats")
    r.add_argument("action", choices=["convert"])
    r.add_argument("--in", dest="infile", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--format", default="csv")
    r.set_defaults(fn=_cmd_report)

    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "catalog" and args.action == "show" and not args.paf:
        print("catalog show requires a PAF name", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except PafForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
