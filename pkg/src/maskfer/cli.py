"""Command-line entry point.

Subcommands: bench-gen, train, eval, ablate, sweep, gradcheck, dump-masks.
All randomness derives from a single --seed; every emitted report embeds the
fully resolved configuration and its hash.  Exit codes: 0 success, 1
validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .benchmark import BenchmarkSpec, make_provider, nearest_mean_oracle, write_benchmark
from .channels import split_channels
from .feature_store import read_feature_file
from .network import MaskNetwork
from .training import (
    TrainConfig,
    dump_masks,
    evaluate_cross_domain,
    report_to_json,
    run_ablation,
    train,
)
from .verification import check_full_gradient

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

_CONFIG_SECTIONS = {"train", "benchmark"}


def load_config(path):
    with open(path) as fh:
        raw = json.load(fh)
    unknown = set(raw) - _CONFIG_SECTIONS
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    train_cfg = TrainConfig.from_dict(raw.get("train", {}))
    bench_spec = BenchmarkSpec.from_dict(raw.get("benchmark", {}))
    return train_cfg, bench_spec


def load_domains(data_dir):
    data_dir = Path(data_dir)
    with open(data_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    datasets = [
        read_feature_file(data_dir / entry["path"], name=entry["name"])
        for entry in manifest["domains"]
    ]
    return manifest, datasets


def _apply_overrides(cfg: TrainConfig, args) -> TrainConfig:
    d = cfg.to_dict()
    if args.seed is not None:
        d["seed"] = args.seed
    # sweep passes comma-separated grids for these; leave those to cmd_sweep
    lam = getattr(args, "lambda_", None)
    if lam is not None and not isinstance(lam, str):
        d["sep_weight"] = lam
    beta = getattr(args, "beta", None)
    if beta is not None and not isinstance(beta, str):
        d["div_weight"] = beta
    if getattr(args, "drop_rate", None) is not None:
        d["drop_rate"] = args.drop_rate
    if getattr(args, "epochs", None) is not None:
        d["epochs"] = args.epochs
    if getattr(args, "batch_size", None) is not None:
        d["batch_size"] = args.batch_size
    if getattr(args, "no_mask", False):
        d["mask_on"] = d["sep_on"] = d["div_on"] = False
    if getattr(args, "no_sep", False):
        d["sep_on"] = False
    if getattr(args, "no_div", False):
        d["div_on"] = False
    return TrainConfig.from_dict(d)


def _add_common(p, with_ablation=True, grid=False):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default="out")
    p.add_argument("--data-dir", default=None, help="benchmark/domain directory")
    p.add_argument("--train-domain", default="source")
    weight_type = str if grid else float
    grid_hint = " (comma-separated list)" if grid else ""
    p.add_argument("--lambda", dest="lambda_", type=weight_type, default=None,
                   help="separation loss weight" + grid_hint)
    p.add_argument("--beta", type=weight_type, default=None,
                   help="diversity loss weight" + grid_hint)
    p.add_argument("--drop-rate", default=None, help="channel drop rate, e.g. 10/73")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    if with_ablation:
        p.add_argument("--no-mask", action="store_true")
        p.add_argument("--no-sep", action="store_true")
        p.add_argument("--no-div", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="maskfer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench-gen", help="generate the synthetic multi-domain benchmark")
    _add_common(p, with_ablation=False)

    p = sub.add_parser("train", help="train on one domain and evaluate on all")
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on all domains")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("ablate", help="run the four-variant ablation")
    _add_common(p, with_ablation=False)

    p = sub.add_parser("sweep", help="grid over --lambda and --beta value lists")
    _add_common(p, with_ablation=False, grid=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = sub.add_parser("dump-masks", help="write per-class mean sigmoid masks as CSV")
    _add_common(p, with_ablation=False)
    p.add_argument("--checkpoint", required=True)
    return parser


def _resolve(args):
    if args.config:
        train_cfg, bench_spec = load_config(args.config)
    else:
        train_cfg, bench_spec = TrainConfig(), BenchmarkSpec()
    if args.seed is not None:
        bench_spec = BenchmarkSpec.from_dict({**bench_spec.to_dict(), "seed": args.seed})
    train_cfg = _apply_overrides(train_cfg, args)
    return train_cfg, bench_spec


def _bench_data(args, bench_spec):
    out = Path(args.out_dir)
    data_dir = Path(args.data_dir) if args.data_dir else out / "benchmark"
    if not (data_dir / "manifest.json").exists():
        write_benchmark(bench_spec, data_dir)
    manifest, datasets = load_domains(data_dir)
    spec = BenchmarkSpec.from_dict(manifest["spec"])
    return datasets, make_provider(spec)


def _align_config(train_cfg, source):
    d = train_cfg.to_dict()
    d["feature_dim"] = source.feature_dim
    d["num_classes"] = source.num_classes
    d["input_dim"] = source.input_dim
    return TrainConfig.from_dict(d)


def cmd_bench_gen(args):
    _, bench_spec = _resolve(args)
    out = Path(args.out_dir)
    manifest, datasets = write_benchmark(bench_spec, out / "benchmark")
    oracle = nearest_mean_oracle(datasets[0], datasets)
    print(json.dumps({"manifest": manifest, "nearest_mean_oracle": oracle}, indent=2))
    return EXIT_OK


def cmd_train(args):
    train_cfg, bench_spec = _resolve(args)
    datasets, provider = _bench_data(args, bench_spec)
    source = next(ds for ds in datasets if ds.name == args.train_domain)
    train_cfg = _align_config(train_cfg, source)
    net, history = train(train_cfg, source, provider)
    report = evaluate_cross_domain(
        net, datasets, args.train_domain, provider=provider, config=train_cfg
    )
    report["loss_history"] = history["epochs"]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.json"
    report_path.write_text(report_to_json(report))
    net.save(out / "checkpoint.bin", config_hash=train_cfg.hash())
    print(report_to_json(report), end="")
    return EXIT_OK


def cmd_eval(args):
    train_cfg, bench_spec = _resolve(args)
    datasets, provider = _bench_data(args, bench_spec)
    net = MaskNetwork.load(args.checkpoint)
    report = evaluate_cross_domain(
        net, datasets, args.train_domain, provider=provider, config=train_cfg
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval_report.json").write_text(report_to_json(report))
    print(report_to_json(report), end="")
    return EXIT_OK


def cmd_ablate(args):
    train_cfg, bench_spec = _resolve(args)
    datasets, provider = _bench_data(args, bench_spec)
    source = next(ds for ds in datasets if ds.name == args.train_domain)
    train_cfg = _align_config(train_cfg, source)
    table = run_ablation(train_cfg, datasets, args.train_domain, provider=provider)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(json.dumps(table, sort_keys=True, indent=2))
    print(json.dumps(table, sort_keys=True, indent=2))
    return EXIT_OK


def _parse_grid(value, default):
    if value is None:
        return default
    return [float(v) for v in str(value).split(",")]


def cmd_sweep(args):
    train_cfg, bench_spec = _resolve(args)
    datasets, provider = _bench_data(args, bench_spec)
    source = next(ds for ds in datasets if ds.name == args.train_domain)
    lambdas = _parse_grid(args.lambda_, [0.5, 1.5, 5.0])
    betas = _parse_grid(args.beta, [1.0, 5.0, 10.0])
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for lam in lambdas:
        for beta in betas:
            cfg = _align_config(train_cfg, source)
            cfg = TrainConfig.from_dict(
                {**cfg.to_dict(), "sep_weight": lam, "div_weight": beta}
            )
            net, _ = train(cfg, source, provider)
            report = evaluate_cross_domain(
                net, datasets, args.train_domain, provider=provider, config=cfg
            )
            path = out / f"sweep_lambda{lam:g}_beta{beta:g}.json"
            path.write_text(report_to_json(report))
            reports.append(
                {"lambda": lam, "beta": beta,
                 "mean_unseen_accuracy": report["mean_unseen_accuracy"],
                 "path": path.name}
            )
    summary = {"grid": reports}
    (out / "sweep.json").write_text(json.dumps(summary, sort_keys=True, indent=2))
    print(json.dumps(summary, sort_keys=True, indent=2))
    return EXIT_OK


def cmd_gradcheck(args):
    worst = 0.0
    for i in range(args.cases):
        err = check_full_gradient(args.seed + i)
        worst = max(worst, err)
    print(f"max relative error over {args.cases} cases: {worst:.3e}")
    return EXIT_OK if worst <= args.tolerance else EXIT_RUNTIME


def cmd_dump_masks(args):
    train_cfg, bench_spec = _resolve(args)
    datasets, provider = _bench_data(args, bench_spec)
    source = next(ds for ds in datasets if ds.name == args.train_domain)
    net = MaskNetwork.load(args.checkpoint)
    partition = split_channels(
        source.feature_dim, source.num_classes, train_cfg.drop_rate
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_masks(
        net, source, partition,
        out / "masks.csv", out / "mask_stats.json", provider=provider,
    )
    print(f"wrote {out / 'masks.csv'}")
    return EXIT_OK


_COMMANDS = {
    "bench-gen": cmd_bench_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
    "dump-masks": cmd_dump_masks,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, StopIteration) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
