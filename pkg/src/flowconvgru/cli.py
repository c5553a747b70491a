"""Command line pipelines: synth -> ingest -> train -> eval / analyze / sweep.

Every command prints its fully resolved configuration (defaults filled in,
seed included) before doing work, so any run can be replayed from its log.
Values resolve as: command-line flag, then FCGRU_* environment variable
(seed and threads only), then the --config JSON file, then the built-in
default. Exit code 0 means all requested outputs were written; failures
print a one-line diagnostic to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import warnings
from dataclasses import replace

from .analysis import (
    compute_churns,
    evaluate_ha,
    evaluate_model,
    filter_high_churn,
    hourly_aggregate,
    layer_sweep,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .dataio import Dataset, load_dataset, save_dataset
from .ingest import GridSpec, aggregate_trips, build_dataset, fit_scaler, read_trips, split_intervals, write_trips
from .model import VARIANTS, ModelSpec
from .synth import SynthConfig, generate
from .train import TrainConfig, train, write_loss_log

DEFAULTS = {
    "history_T": 6,
    "layers": 3,
    "hidden": 64,
    "diffusion_steps": 2,
    "kernel_size": 3,
    "variant": "full",
    "epochs": 100,
    "batch_size": 8,
    "lr": 2e-4,
    "seed": 0,
    "clip_norm": None,
    "train_frac": 0.7,
    "val_frac": 0.1,
    "emd_threshold": 0.005,
    "jaccard_threshold": 0.1,
    "threads": 0,
}


def _load_config(path):
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("config file must hold a JSON object")
    return cfg


def _resolve(args, cfg, key, cast, flag=None, env=None):
    """flag > environment > config file > default."""
    flag = key if flag is None else flag
    value = getattr(args, flag, None)
    if value is not None:
        return value
    if env:
        raw = os.environ.get(env)
        if raw:
            return cast(raw)
    if cfg.get(key) is not None:
        return cast(cfg[key])
    return DEFAULTS[key]


def _resolve_run(args, cfg):
    """All shared knobs for dataset-consuming commands."""
    clip = getattr(args, "clip_norm", None)
    if clip is None and cfg.get("clip_norm") is not None:
        clip = float(cfg["clip_norm"])
    return {
        "history": _resolve(args, cfg, "history_T", int, flag="history"),
        "layers": _resolve(args, cfg, "layers", int),
        "hidden": _resolve(args, cfg, "hidden", int),
        "diffusion_steps": _resolve(args, cfg, "diffusion_steps", int),
        "kernel_size": _resolve(args, cfg, "kernel_size", int),
        "variant": _resolve(args, cfg, "variant", str),
        "epochs": _resolve(args, cfg, "epochs", int),
        "batch_size": _resolve(args, cfg, "batch_size", int),
        "lr": _resolve(args, cfg, "lr", float),
        "seed": _resolve(args, cfg, "seed", int, env="FCGRU_SEED"),
        "clip_norm": clip,
        "train_frac": _resolve(args, cfg, "train_frac", float),
        "val_frac": _resolve(args, cfg, "val_frac", float),
        "emd_threshold": _resolve(args, cfg, "emd_threshold", float),
        "jaccard_threshold": _resolve(args, cfg, "jaccard_threshold", float),
        "threads": _resolve(args, cfg, "threads", int, env="FCGRU_THREADS"),
    }


def _print_config(command, resolved):
    print(f"{command} config: {json.dumps(resolved, sort_keys=True)}")


def _split_datasets(data: Dataset, history, train_frac, val_frac):
    tr, va, te = split_intervals(data.n_intervals, train_frac, val_frac)

    def segment(sl):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return build_dataset(
                data.volumes[sl], data.flows[sl.start : sl.stop], history, first_interval=sl.start + 1
            )

    return segment(tr), segment(va), segment(te), (tr, va, te)


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def _write_metrics(path, rows):
    """rows: (method, variant, EvalReport)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "variant", "rmse", "mae", "n"])
        for method, variant, report in rows:
            writer.writerow([method, variant, _fmt(report.rmse), _fmt(report.mae), report.n])


def _spec_for(data: Dataset, r, variant=None) -> ModelSpec:
    return ModelSpec(
        m=data.grid.m,
        k=data.grid.k,
        layers=r["layers"],
        hidden=r["hidden"],
        diffusion_steps=r["diffusion_steps"],
        history=r["history"],
        variant=variant or r["variant"],
        kernel_size=r["kernel_size"],
    )


def _train_config(r) -> TrainConfig:
    return TrainConfig(
        epochs=r["epochs"],
        batch_size=r["batch_size"],
        lr=r["lr"],
        seed=r["seed"],
        clip_norm=r["clip_norm"],
    )


def _train_one(data, r, variant, split):
    train_ds, val_ds, _, (tr, _, _) = split
    scaler = fit_scaler(data.volumes[tr], data.flows[tr.start : tr.stop])
    spec = _spec_for(data, r, variant)
    val = val_ds.scaled(scaler) if len(val_ds) else None
    ckpt, log = train(train_ds.scaled(scaler), spec, _train_config(r), val, scaler)
    ckpt.extra["splits"] = {"train_frac": r["train_frac"], "val_frac": r["val_frac"]}
    return ckpt, log, scaler


def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    if not cfg:
        raise ValueError("synth requires --config with grid and hub settings")
    seed = _resolve(args, cfg, "seed", int, env="FCGRU_SEED")
    scfg = SynthConfig.from_config_dict({**cfg, "seed": seed})
    if args.days is not None:
        scfg = replace(scfg, days=args.days)
    _print_config("synth", {**scfg.to_config_dict(), "out": args.out})
    trips, _ = generate(scfg)
    write_trips(args.out, trips)
    print(f"wrote {len(trips)} trips over {scfg.n_intervals} intervals to {args.out}")
    return 0


def cmd_ingest(args) -> int:
    cfg = _load_config(args.config)
    grid = GridSpec.from_dict(cfg)
    n_intervals = None
    if cfg.get("n_intervals") is not None:
        n_intervals = int(cfg["n_intervals"])
    elif cfg.get("days") is not None:
        n_intervals = int(cfg["days"]) * (86400 // grid.interval_seconds)
    _print_config(
        "ingest",
        {**grid.to_dict(), "n_intervals": n_intervals, "trips": args.trips, "out": args.out},
    )
    trips, malformed = read_trips(args.trips)
    volumes, flows, rejected = aggregate_trips(trips, grid, n_intervals)
    save_dataset(args.out, Dataset(grid=grid, volumes=volumes, flows=flows, rejected=rejected))
    print(
        f"wrote {volumes.shape[0]} intervals to {args.out} "
        f"({len(trips) - rejected} trips kept, {rejected} rejected, {malformed} malformed rows)"
    )
    if volumes.shape[0] == 0:
        print("warning: dataset has zero intervals")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    r = _resolve_run(args, cfg)
    if r["variant"] == "ha":
        raise ValueError("variant ha has no trainable parameters; use eval --variant ha")
    data = load_dataset(args.data)
    _print_config("train", {**r, "data": args.data, "out": args.out})
    split = _split_datasets(data, r["history"], r["train_frac"], r["val_frac"])
    ckpt, log, _ = _train_one(data, r, r["variant"], split)
    save_checkpoint(args.out, ckpt)
    loss_log = args.loss_log or args.out + ".loss.csv"
    write_loss_log(loss_log, log)
    first, last = log[0], log[-1]
    print(
        f"wrote checkpoint {args.out} (kept epoch {ckpt.epoch}); "
        f"train loss {first.train_loss:.6g} -> {last.train_loss:.6g}; loss log {loss_log}"
    )
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    data = load_dataset(args.data)
    if args.checkpoint is None:
        r = _resolve_run(args, cfg)
        variant = r["variant"]
        if variant != "ha":
            raise ValueError("eval without --checkpoint only supports --variant ha")
        _print_config("eval", {"variant": "ha", "history": r["history"],
                               "train_frac": r["train_frac"], "val_frac": r["val_frac"],
                               "data": args.data, "out": args.out})
        _, _, test_ds, _ = _split_datasets(data, r["history"], r["train_frac"], r["val_frac"])
        rows = [("ha", "ha", evaluate_ha(test_ds))]
    else:
        ckpt = load_checkpoint(args.checkpoint)
        stored = ckpt.extra.get("splits", {})
        merged = {**stored, **cfg}
        r = _resolve_run(args, merged)
        _print_config("eval", {"variant": ckpt.spec.variant, "history": ckpt.spec.history,
                               "train_frac": r["train_frac"], "val_frac": r["val_frac"],
                               "checkpoint": args.checkpoint, "data": args.data, "out": args.out})
        _, _, test_ds, _ = _split_datasets(data, ckpt.spec.history, r["train_frac"], r["val_frac"])
        report = evaluate_model(test_ds, ckpt.spec, ckpt.params, ckpt.scaler)
        rows = [("flowconvgru", ckpt.spec.variant, report)]
    _write_metrics(args.out, rows)
    for method, variant, report in rows:
        print(f"{method}/{variant}: rmse {_fmt(report.rmse)} mae {_fmt(report.mae)} n {report.n}")
    print(f"wrote {args.out}")
    return 0


def cmd_analyze(args) -> int:
    cfg = _load_config(args.config)
    data = load_dataset(args.data)
    ckpt = None
    if args.checkpoint is not None:
        ckpt = load_checkpoint(args.checkpoint)
        cfg = {**ckpt.extra.get("splits", {}), **cfg}
    r = _resolve_run(args, cfg)
    history = ckpt.spec.history if ckpt is not None else r["history"]
    os.makedirs(args.out, exist_ok=True)
    _print_config("analyze", {"history": history, "train_frac": r["train_frac"],
                              "val_frac": r["val_frac"], "emd_threshold": r["emd_threshold"],
                              "jaccard_threshold": r["jaccard_threshold"],
                              "checkpoint": args.checkpoint, "data": args.data, "out": args.out})

    churns = compute_churns(data.flows, data.grid, first_interval=1)
    churn_path = os.path.join(args.out, "churn.csv")
    with open(churn_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "hour", "jaccard", "emd"])
        for c in churns:
            writer.writerow([c.t, data.grid.hour_of(c.t), _fmt(c.jaccard), _fmt(c.emd)])

    hourly_path = os.path.join(args.out, "churn_hourly.csv")
    with open(hourly_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["hour", "jaccard", "emd", "n"])
        for h in hourly_aggregate(churns, data.grid):
            writer.writerow([h.hour, _fmt(h.jaccard), _fmt(h.emd), h.count])

    _, _, test_ds, _ = _split_datasets(data, history, r["train_frac"], r["val_frac"])
    filters = [
        ("none", 0.0, list(range(len(test_ds)))),
        ("emd", r["emd_threshold"], filter_high_churn(test_ds, churns, r["emd_threshold"], "emd").indices),
        ("jaccard", r["jaccard_threshold"], filter_high_churn(test_ds, churns, r["jaccard_threshold"], "jaccard").indices),
    ]
    table_path = os.path.join(args.out, "filtered_metrics.csv")
    with open(table_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filter", "threshold", "method", "variant", "rmse", "mae", "n"])
        for name, threshold, indices in filters:
            report = evaluate_ha(test_ds, indices)
            writer.writerow([name, _fmt(threshold), "ha", "ha", _fmt(report.rmse), _fmt(report.mae), report.n])
            if ckpt is not None:
                report = evaluate_model(test_ds, ckpt.spec, ckpt.params, ckpt.scaler, indices)
                writer.writerow(
                    [name, _fmt(threshold), "flowconvgru", ckpt.spec.variant,
                     _fmt(report.rmse), _fmt(report.mae), report.n]
                )
    print(f"wrote {churn_path}, {hourly_path}, {table_path}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    r = _resolve_run(args, cfg)
    layer_counts = [int(x) for x in args.layer_list.split(",") if x.strip()]
    if not layer_counts:
        raise ValueError("--layers must list at least one depth, e.g. 1,2,3")
    data = load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    _print_config("sweep", {**r, "layer_counts": layer_counts, "data": args.data, "out": args.out})
    train_ds, val_ds, test_ds, (tr, _, _) = _split_datasets(
        data, r["history"], r["train_frac"], r["val_frac"]
    )
    scaler = fit_scaler(data.volumes[tr], data.flows[tr.start : tr.stop])
    base_spec = _spec_for(data, r)
    results = layer_sweep(train_ds, val_ds, test_ds, base_spec, layer_counts, _train_config(r), scaler)
    sweep_path = os.path.join(args.out, "layer_sweep.csv")
    with open(sweep_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layers", "rmse", "mae"])
        for layers, report, ckpt in results:
            writer.writerow([layers, _fmt(report.rmse), _fmt(report.mae)])
            save_checkpoint(os.path.join(args.out, f"checkpoint_layers{layers}.fcg"), ckpt)
    print(f"wrote {sweep_path} and {len(results)} checkpoints")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args.config)
    r = _resolve_run(args, cfg)
    data = load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    _print_config("ablate", {**r, "data": args.data, "out": args.out})
    split = _split_datasets(data, r["history"], r["train_frac"], r["val_frac"])
    _, _, test_ds, _ = split
    rows = []
    for variant in ("full", "nc", "nf", "fc"):
        ckpt, log, scaler = _train_one(data, r, variant, split)
        save_checkpoint(os.path.join(args.out, f"checkpoint_{variant}.fcg"), ckpt)
        write_loss_log(os.path.join(args.out, f"loss_{variant}.csv"), log)
        report = evaluate_model(test_ds, ckpt.spec, ckpt.params, scaler)
        rows.append(("flowconvgru", variant, report))
        print(f"trained {variant}: test rmse {_fmt(report.rmse)}")
    rows.append(("ha", "ha", evaluate_ha(test_ds)))
    metrics_path = os.path.join(args.out, "metrics.csv")
    _write_metrics(metrics_path, rows)
    print(f"wrote {metrics_path}")
    return 0


def _add_common(p, *names):
    if "config" in names:
        p.add_argument("--config", help="JSON config file")
    if "seed" in names:
        p.add_argument("--seed", type=int, help="RNG seed (env FCGRU_SEED)")
    if "threads" in names:
        p.add_argument("--threads", type=int, help="thread budget, 0 = auto (env FCGRU_THREADS); informational, execution is deterministic single-threaded")
    if "model" in names:
        p.add_argument("--history", type=int, help="input window length T")
        p.add_argument("--layers", type=int, help="stacked recurrent layers")
        p.add_argument("--hidden", type=int, help="hidden channels per layer")
        p.add_argument("--diffusion-steps", type=int, help="walk steps K per direction")
        p.add_argument("--kernel-size", type=int, help="square conv kernel size")
    if "trainer" in names:
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--clip-norm", type=float, help="global gradient-norm clip")
    if "splits" in names:
        p.add_argument("--train-frac", type=float)
        p.add_argument("--val-frac", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowconvgru",
        description="Flow-aware traffic volume forecasting pipelines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic trip CSV")
    p.add_argument("--config", required=True, help="JSON config with grid and hub settings")
    p.add_argument("--out", required=True, help="trip CSV to write")
    p.add_argument("--days", type=int, help="override the configured day count")
    _add_common(p, "seed", "threads")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="aggregate a trip CSV into a dataset file")
    p.add_argument("--trips", required=True, help="trip CSV to read")
    p.add_argument("--config", required=True, help="JSON config with the grid definition")
    p.add_argument("--out", required=True, help="dataset file to write")
    _add_common(p, "threads")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model on a dataset file")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.add_argument("--variant", choices=VARIANTS, help="model variant")
    p.add_argument("--loss-log", help="per-epoch loss CSV (default: <out>.loss.csv)")
    _add_common(p, "config", "seed", "threads", "model", "trainer", "splits")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint (or the HA baseline) on the test split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", help="trained checkpoint; omit for --variant ha")
    p.add_argument("--variant", choices=VARIANTS + ("ha",), help="ha evaluates without a checkpoint")
    p.add_argument("--out", required=True, help="metrics CSV to write")
    p.add_argument("--history", type=int, help="input window length T (ha only)")
    _add_common(p, "config", "threads", "splits")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="flow churn, hourly aggregation, high-churn evaluation")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--checkpoint", help="include model rows in the filtered table")
    p.add_argument("--emd-threshold", type=float)
    p.add_argument("--jaccard-threshold", type=float)
    p.add_argument("--history", type=int)
    _add_common(p, "config", "threads", "splits")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="train and evaluate one model per layer count")
    p.add_argument("--data", required=True)
    p.add_argument("--layers", dest="layer_list", required=True, help="comma-separated depths, e.g. 1,2,3")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--variant", choices=VARIANTS)
    _add_common(p, "config", "seed", "threads", "trainer", "splits")
    p.add_argument("--history", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--diffusion-steps", type=int)
    p.add_argument("--kernel-size", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="train full/nc/nf/fc and evaluate all five methods")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p, "config", "seed", "threads", "model", "trainer", "splits")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, ArithmeticError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
