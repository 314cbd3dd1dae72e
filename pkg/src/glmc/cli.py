"""Command line: build-data, train, finetune, evaluate, report.

Exit codes: 0 success, 2 bad arguments or configuration (the offending key path
is printed), 1 any runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import statistics
import sys

import numpy as np
import yaml

from . import longtail_data as ltd
from .config import ConfigError, DataConfig, ExperimentConfig, from_dict, load_config
from .evaluation import EvalReport, evaluate
from .maxnorm import MaxNormConfig, finetune_classifier
from .models import load_checkpoint, save_checkpoint
from .pipeline import Normalization
from .trainer import prepare_data, train, train_baseline_ce

log = logging.getLogger("glmc")


def _delimited(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x):
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else f"{x:.4f}"


def cmd_build_data(args):
    overrides = [f"data.source={args.source}", f"data.imbalance_factor={args.imbalance_factor}",
                 f"data.seed={args.seed}"]
    if args.data_root:
        overrides.append(f"data.root={args.data_root}")
    if args.max_count:
        overrides.append(f"data.max_count={args.max_count}")
    cfg = load_config(args.config, overrides + list(args.set or []))
    train_set, _ = prepare_data(cfg)
    ltd.write_manifest(args.out, train_set)
    table = train_set.table
    rows = [{"class": c, "count": int(n), "frequency": f"{f:.6f}"}
            for c, (n, f) in enumerate(zip(table.counts, table.frequencies))]
    sys.stdout.write(_delimited(rows, ["class", "count", "frequency"]))
    print(f"# imbalance_factor={ltd.imbalance_factor(table):g} total={int(table.counts.sum())} "
          f"manifest={os.path.join(args.out, ltd.MANIFEST_NAME)}")
    return 0


def cmd_train(args):
    cfg = load_config(args.config, args.set or [])
    if args.baseline:
        cfg.train.method = "ce"
    out = args.out or os.path.join(cfg.run.out_dir, cfg.run.name)
    fit = train_baseline_ce if cfg.train.method == "ce" else train
    result = fit(cfg, run_dir=out)
    _render_run(out, result.epochs, result.report)
    r = result.report
    if r is not None:
        print(f"top1={r.top1_overall:.4f} many={_fmt(r.top1_many)} medium={_fmt(r.top1_medium)} "
              f"few={_fmt(r.top1_few)} run_dir={out}")
    return 0


def _render_run(out, epoch_rows, report):
    from .plotting import plot_confusion, plot_training_curves
    if epoch_rows:
        plot_training_curves(epoch_rows, os.path.join(out, "curves.png"))
    if report is not None:
        plot_confusion(report.confusion, os.path.join(out, "confusion.png"),
                       groups=report.group_assignment)


def _config_from_payload(payload) -> ExperimentConfig:
    return from_dict(payload["config"])


def cmd_finetune(args):
    net, payload = load_checkpoint(args.checkpoint)
    cfg = _config_from_payload(payload)
    ft = cfg.finetune
    delta = args.delta if args.delta == "auto" else float(args.delta)
    ft = MaxNormConfig(delta=delta, epochs=ft.epochs if args.epochs is None else args.epochs,
                       lr=args.lr if args.lr is not None else ft.lr,
                       freeze_encoder=ft.freeze_encoder, project_every=ft.project_every,
                       weight_decay=ft.weight_decay, momentum=ft.momentum,
                       batch_size=ft.batch_size)
    cfg.finetune = ft
    train_set, test_set = prepare_data(cfg)
    normalize = Normalization(**payload["normalization"])
    head_mode = payload.get("head_mode", cfg.model.head_mode)
    finetune_classifier(net, train_set, ft, cfg.rebalance, normalize, head_mode,
                        stage1_lr=cfg.train.lr, seed=cfg.train.seed or 0,
                        augment=cfg.train.augment)
    out = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out, exist_ok=True)
    extra = {k: v for k, v in payload.items()
             if k not in ("format_version", "network_spec", "state_dict", "epoch")}
    extra["config"] = cfg.to_dict()
    save_checkpoint(os.path.join(out, "checkpoint_finetuned.pt"), net, payload["epoch"], **extra)
    report = evaluate(net, test_set, train_set.table, normalize, head_mode)
    report.save(os.path.join(out, "eval_report_finetuned.json"))
    print(f"top1={report.top1_overall:.4f} many={_fmt(report.top1_many)} "
          f"medium={_fmt(report.top1_medium)} few={_fmt(report.top1_few)}")
    return 0


def cmd_evaluate(args):
    net, payload = load_checkpoint(args.checkpoint)
    cfg = _config_from_payload(payload)
    if args.data:
        cfg.data = DataConfig(**{**vars(cfg.data), "manifest": args.data})
    train_set, test_set = prepare_data(cfg)
    normalize = Normalization(**payload["normalization"])
    head_mode = args.head or payload.get("head_mode", cfg.model.head_mode)
    report = evaluate(net, test_set, train_set.table, normalize, head_mode)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    report.save(args.out)
    from .plotting import plot_confusion
    plot_confusion(report.confusion, os.path.splitext(args.out)[0] + "_confusion.png",
                   groups=report.group_assignment)
    row = {"top1": _fmt(report.top1_overall), "many": _fmt(report.top1_many),
           "medium": _fmt(report.top1_medium), "few": _fmt(report.top1_few)}
    sys.stdout.write(_delimited([row], list(row)))
    return 0


def collect_runs(run_dirs):
    rows = []
    for d in run_dirs:
        rep_path = os.path.join(d, "eval_report.json")
        cfg_path = os.path.join(d, "config.yaml")
        if not (os.path.exists(rep_path) and os.path.exists(cfg_path)):
            raise FileNotFoundError(f"{d} lacks eval_report.json or config.yaml")
        with open(cfg_path) as f:
            cfg = yaml.safe_load(f)
        with open(rep_path) as f:
            rep = EvalReport.from_dict(json.load(f))
        rows.append({
            "run": os.path.basename(os.path.normpath(d)), "method": cfg["train"]["method"],
            "gamma": float(cfg["rebalance"]["gamma"]),
            "reweight_k": float(cfg["rebalance"]["reweight_k"]),
            "resample_k": float(cfg["sampler"]["resample_k"]), "seed": cfg["run"]["seed"],
            "top1": rep.top1_overall, "many": rep.top1_many, "medium": rep.top1_medium,
            "few": rep.top1_few,
        })
    return rows


def gamma_table(rows):
    out = []
    for g in sorted({r["gamma"] for r in rows if r["method"] == "glmc"}):
        accs = [r["top1"] for r in rows if r["method"] == "glmc" and r["gamma"] == g]
        out.append({"gamma": g, "runs": len(accs), "median_top1": statistics.median(accs),
                    "top1": accs})
    return out


def k_grid(rows):
    glmc = [r for r in rows if r["method"] == "glmc"]
    rw = sorted({r["reweight_k"] for r in glmc})
    rs = sorted({r["resample_k"] for r in glmc})
    grid = np.full((len(rs), len(rw)), np.nan)
    for i, a in enumerate(rs):
        for j, b in enumerate(rw):
            accs = [r["top1"] for r in glmc if r["resample_k"] == a and r["reweight_k"] == b]
            if accs:
                grid[i, j] = statistics.median(accs)
    return grid, rw, rs


def cmd_report(args):
    from .plotting import plot_gamma_sweep, plot_k_grid
    rows = collect_runs(args.runs)
    os.makedirs(args.out, exist_ok=True)
    cols = ["run", "method", "gamma", "reweight_k", "resample_k", "seed", "top1", "many",
            "medium", "few"]
    with open(os.path.join(args.out, "runs.csv"), "w") as f:
        f.write(_delimited(rows, cols))
    gt = gamma_table(rows)
    gcols = ["gamma", "runs", "median_top1"]
    text = _delimited([{**g, "median_top1": f"{g['median_top1']:.4f}"} for g in gt], gcols)
    with open(os.path.join(args.out, "gamma_sweep.csv"), "w") as f:
        f.write(text)
    if gt:
        plot_gamma_sweep(gt, os.path.join(args.out, "gamma_sweep.png"))
    grid, rw, rs = k_grid(rows)
    if grid.size > 1:
        grid_rows = [{"resample_k": a, **{f"reweight_k={b:g}": _fmt(grid[i, j])
                                          for j, b in enumerate(rw)}} for i, a in enumerate(rs)]
        with open(os.path.join(args.out, "k_grid.csv"), "w") as f:
            f.write(_delimited(grid_rows, ["resample_k"] + [f"reweight_k={b:g}" for b in rw]))
        plot_k_grid(grid, rw, rs, os.path.join(args.out, "k_grid.png"))
    sys.stdout.write(text)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="glmc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-data", help="build a long-tailed subset and write its manifest")
    b.add_argument("--source", default="synthetic",
                   choices=["cifar10", "cifar100", "npz", "synthetic"])
    b.add_argument("--data-root", help="dataset root or .npz path (default $GLMC_DATA_ROOT)")
    b.add_argument("--imbalance-factor", type=float, default=100.0)
    b.add_argument("--max-count", type=int)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--config")
    b.add_argument("--set", action="append", metavar="KEY=VALUE")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build_data)

    t = sub.add_parser("train", help="run one-stage training")
    t.add_argument("--config")
    t.add_argument("--out")
    t.add_argument("--set", action="append", metavar="KEY=VALUE")
    t.add_argument("--baseline", action="store_true", help="plain cross-entropy baseline")
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("finetune", help="stage-2 MaxNorm classifier finetuning")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--delta", default="auto")
    f.add_argument("--epochs", type=int)
    f.add_argument("--lr", type=float)
    f.add_argument("--out")
    f.set_defaults(func=cmd_finetune)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint on the balanced test split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", help="directory written by build-data")
    e.add_argument("--head", choices=["longtail", "balanced"])
    e.add_argument("--out", default="report.json")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="gamma sweep and k-grid tables/figures from run dirs")
    r.add_argument("--runs", nargs="+", required=True)
    r.add_argument("--out", default="report")
    r.set_defaults(func=cmd_report)
    return p


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
