"""Command line: train, evaluate, ablate, sweep (plus stats and synth helpers).

    python -m graphcl_rec train --config run.ini
    python -m graphcl_rec evaluate --ckpt runs/run/final.ckpt --data data.txt --k 20
    python -m graphcl_rec ablate --config run.ini --parallel 2
    python -m graphcl_rec sweep --config run.ini --param tau_plus --values 0,1e-5,1e-4
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ConfigError, RunConfig, load_config, render_config
from .data import (DataError, block_dataset, dataset_stats, load_interactions, split_train_test,
                   write_interactions)
from .encoders import load_checkpoint, save_checkpoint
from .graph import build_graph
from .train import evaluate_model, fit

log = logging.getLogger("graphcl_rec")

HISTORY_FIELDS = ("epoch", "loss_total", "loss_gcl", "loss_dcl")
ABLATION_VARIANTS = ("BPR", "BPR+DROP", "BPR+GCL", "CL", "DCL", "DCL+GCL")
SWEEP_RANGES = {"tau_plus": (0.0, 1.0, False), "p": (0.0, 1.0, True), "beta": (0.0, 1.0, True)}


def load_split(cfg: RunConfig):
    d = cfg.data
    if not d.path.is_file():
        raise ConfigError("data.path", f"file not found: {d.path}")
    ds = load_interactions(d.path, d.min_user_interactions, d.min_item_interactions)
    return split_train_test(ds, d.train_fraction, d.split_seed)


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def run_training(cfg: RunConfig) -> dict:
    """Train one configuration and write history.csv, final.ckpt, config.resolved, log.jsonl."""
    out = cfg.run_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(render_config(cfg), encoding="utf-8")
    split = load_split(cfg)
    k = cfg.train.k
    with open(out / "log.jsonl", "w", encoding="utf-8") as logf:
        result = fit(cfg.train, split, on_epoch=lambda row: logf.write(json.dumps(row) + "\n"))
    with open(out / "history.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS + (f"recall@{k}", f"ndcg@{k}"))
        for row in result.history:
            w.writerow([_fmt(row["epoch"]), _fmt(row["loss_total"]), _fmt(row["loss_gcl"]),
                        _fmt(row["loss_main"]), _fmt(row["recall"]), _fmt(row["ndcg"])])
    model = result.model
    d = cfg.data
    model.meta.update(min_user_interactions=d.min_user_interactions,
                      min_item_interactions="" if d.min_item_interactions is None else d.min_item_interactions,
                      train_fraction=repr(d.train_fraction), split_seed=d.split_seed, k=k)
    save_checkpoint(model, out / "final.ckpt")
    return {"run": cfg.run_name, "recall": result.best_recall, "ndcg": result.best_ndcg,
            "best_epoch": result.best_epoch, "history": result.history}


def _run_many(cfgs: list[RunConfig], parallel: int) -> list[dict]:
    if parallel <= 1:
        return [run_training(c) for c in cfgs]
    with ProcessPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(run_training, cfgs))


def ablation_config(cfg: RunConfig, variant: str) -> RunConfig:
    """The base config changed into one of the ablation variants (shared seed)."""
    t = cfg.train
    drop = t.encoder.message_dropout or 0.2
    no_drop = dataclasses.replace(t.encoder, message_dropout=0.0)
    with_drop = dataclasses.replace(t.encoder, message_dropout=drop)
    settings = {
        "BPR": dict(main_loss="bpr", use_gcl=False, encoder=no_drop),
        "BPR+DROP": dict(main_loss="bpr", use_gcl=False, encoder=with_drop),
        "BPR+GCL": dict(main_loss="bpr", use_gcl=True, encoder=no_drop),
        "CL": dict(main_loss="dcl", use_gcl=False, encoder=no_drop,
                   loss=dataclasses.replace(t.loss, tau_plus=0.0)),
        "DCL": dict(main_loss="dcl", use_gcl=False, encoder=no_drop),
        "DCL+GCL": dict(main_loss="dcl", use_gcl=True, encoder=no_drop),
    }
    if variant not in settings:
        raise ValueError(f"unknown variant {variant!r}")
    name = variant.replace("+", "_")
    return dataclasses.replace(cfg, train=dataclasses.replace(t, **settings[variant]),
                               output_dir=cfg.run_dir / "ablate", run_name=name)


def sweep_config(cfg: RunConfig, param: str, value: float) -> RunConfig:
    t = cfg.train
    if param == "tau_plus":
        train = dataclasses.replace(t, loss=dataclasses.replace(t.loss, tau_plus=value))
    elif param == "beta":
        train = dataclasses.replace(t, loss=dataclasses.replace(t.loss, beta=value))
    elif param == "p":
        train = dataclasses.replace(t, edge_drop=value)
    else:
        raise ValueError(f"unknown sweep parameter {param!r}")
    return dataclasses.replace(cfg, train=train, output_dir=cfg.run_dir / f"sweep_{param}",
                               run_name=f"{param}={value!r}")


def check_sweep_values(param: str, values: list[float]) -> None:
    if param not in SWEEP_RANGES:
        raise ValueError(f"parameter must be one of {sorted(SWEEP_RANGES)}, got {param!r}")
    lo, hi, hi_ok = SWEEP_RANGES[param]
    for v in values:
        if not (lo <= v <= hi if hi_ok else lo <= v < hi):
            raise ValueError(f"{param}={v} outside [{lo}, {hi}{']' if hi_ok else ')'}")


def _write_table(path: Path, key: str, rows: list[tuple], k: int) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([key, f"recall@{k}", f"ndcg@{k}", "best_epoch"])
        for label, res in rows:
            w.writerow([label, _fmt(res["recall"]), _fmt(res["ndcg"]), res["best_epoch"]])


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.out:
        cfg = dataclasses.replace(cfg, output_dir=Path(args.out).resolve())
    res = run_training(cfg)
    print(json.dumps({k: v for k, v in res.items() if k != "history"}))
    return 0


def cmd_evaluate(args) -> int:
    model = load_checkpoint(args.ckpt)
    meta = model.meta
    min_items = meta.get("min_item_interactions", "")
    ds = load_interactions(args.data, int(meta.get("min_user_interactions", 1)),
                           None if min_items == "" else int(min_items))
    if (ds.num_users, ds.num_items) != (model.num_users, model.num_items):
        raise DataError(f"checkpoint has {model.num_users} users x {model.num_items} items, "
                        f"dataset has {ds.num_users} users x {ds.num_items} items")
    split = split_train_test(ds, float(meta.get("train_fraction", 0.8)), int(meta.get("split_seed", 0)))
    report = evaluate_model(model, build_graph(split.train), split, args.k)
    print(report.to_json())
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    cfgs = [ablation_config(cfg, v) for v in ABLATION_VARIANTS]
    results = _run_many(cfgs, args.parallel)
    path = cfg.run_dir / "ablation.csv"
    _write_table(path, "variant", list(zip(ABLATION_VARIANTS, results)), cfg.train.k)
    print(path.read_text(encoding="utf-8"), end="")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    values = sorted(float(v) for v in args.values.split(","))
    check_sweep_values(args.param, values)
    results = _run_many([sweep_config(cfg, args.param, v) for v in values], args.parallel)
    path = cfg.run_dir / f"sweep_{args.param}.csv"
    _write_table(path, args.param, [(repr(v), r) for v, r in zip(values, results)], cfg.train.k)
    print(path.read_text(encoding="utf-8"), end="")
    return 0


def cmd_stats(args) -> int:
    ds = load_interactions(args.data, args.min_interactions, args.min_item_interactions)
    st = dataset_stats(ds)
    print(st.to_json() if args.json else st.to_table())
    return 0


def cmd_synth(args) -> int:
    ds = block_dataset(args.users, args.items, args.blocks, args.per_user, seed=args.seed)
    write_interactions(args.out, ds)
    print(dataset_stats(ds).to_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphcl_rec", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train one configuration")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="override [output] dir")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="evaluate a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--k", type=int, default=20)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ablate", help="run the loss/perturbation ablation variants")
    s.add_argument("--config", required=True)
    s.add_argument("--parallel", type=int, default=1)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("sweep", help="sweep one hyperparameter")
    s.add_argument("--config", required=True)
    s.add_argument("--param", required=True, choices=sorted(SWEEP_RANGES))
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--parallel", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("stats", help="dataset statistics")
    s.add_argument("--data", required=True)
    s.add_argument("--min-interactions", type=int, default=1)
    s.add_argument("--min-item-interactions", type=int, default=None)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("synth", help="write a synthetic block-structured dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--users", type=int, default=300)
    s.add_argument("--items", type=int, default=400)
    s.add_argument("--blocks", type=int, default=20)
    s.add_argument("--per-user", type=int, default=30)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
