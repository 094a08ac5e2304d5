"""Command-line surface: train, ablate, report, prune.

Exit codes: 0 success, 2 usage/validation problems, 3 runtime and IO
failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .ablation import fold_and_prune, run_protocol_e1, run_protocol_e2, run_protocol_e3
from .checkpoint import fingerprint, load_checkpoint, save_checkpoint
from .datasets import gen_classification_dataset, gen_segmentation_dataset, load_cifar10
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DatasetFormatError,
    FingerprintMismatchError,
    NumericError,
    ReportError,
)
from .model import ResNetConfig, build_model
from .reporting import (
    REFERENCE_PATTERNS,
    read_reports,
    render_comparison,
    render_csv,
    render_svg,
    render_text,
    validate_svg,
    write_reports,
)
from .training import Hyperparams, evaluate, train

PROTOCOLS = {"e1": run_protocol_e1, "e2": run_protocol_e2, "e3": run_protocol_e3}


def _load_config_file(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as f:
            cfg = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
    if not isinstance(cfg, dict) or "model" not in cfg:
        raise ConfigError(f"config file {path} must contain a 'model' section")
    return cfg


def _make_datasets(spec: dict, seed_override: int | None = None):
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if seed_override is not None and kind != "cifar10":
        spec["seed"] = seed_override
    if kind == "synthetic-classify":
        return gen_classification_dataset(**spec)
    if kind == "synthetic-segment":
        return gen_segmentation_dataset(**spec)
    if kind == "cifar10":
        return load_cifar10(spec["path"])
    raise ConfigError(f"unknown dataset kind {kind!r}")


def _dataset_pair_from_config(cfg: dict, seed_override: int | None):
    ds = cfg.get("dataset")
    if not isinstance(ds, dict):
        raise ConfigError("config file needs a 'dataset' section")
    try:
        return _make_datasets(ds, seed_override)
    except TypeError as e:
        raise ConfigError(f"bad dataset parameters: {e}") from None


def cmd_train(args) -> int:
    cfg = _load_config_file(args.config)
    model_dict = dict(cfg["model"])
    hyper_dict = dict(cfg.get("hyper", {}))
    if args.seed is not None:
        model_dict["seed"] = args.seed
        hyper_dict["seed"] = args.seed
    model_dict.setdefault("seed", 0)
    try:
        config = ResNetConfig.from_dict(
            {"input_channels": 3, "num_classes": 10, "task": "classify", **model_dict}
        )
        hyper = Hyperparams(**hyper_dict)
    except TypeError as e:
        raise ConfigError(f"bad config: {e}") from None
    train_set, test_set = _dataset_pair_from_config(cfg, args.seed)

    model = build_model(config)
    model, history = train(model, train_set, test_set, hyper)
    save_checkpoint(model, args.out)

    history_path = args.history or args.out + ".history.json"
    payload = {
        "config": config.to_dict(),
        "dataset": train_set.descriptor,
        "final_metric": history[-1]["test_metric"],
        "history": history,
        "hyper": hyper.to_dict(),
    }
    with open(history_path, "w") as f:
        f.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    print(f"checkpoint: {args.out}")
    print(f"history: {history_path}")
    print(f"final {('accuracy' if config.task == 'classify' else 'dice')}: "
          f"{history[-1]['test_metric']:.4f}")
    return 0


def cmd_ablate(args) -> int:
    model = load_checkpoint(args.checkpoint)
    cfg = _load_config_file(args.config)
    _, test_set = _dataset_pair_from_config(cfg, args.seed)
    protos = ["e1", "e2", "e3"] if args.protocol == "all" else [args.protocol]
    reports = {}
    for proto in protos:
        reports[proto] = PROTOCOLS[proto](model, test_set, args.tau)
    write_reports(reports, args.out)
    print(render_text(reports), end="")
    print(f"report: {args.out}")
    return 0


def cmd_report(args) -> int:
    reports = read_reports(args.report_file)
    if args.compare:
        ref = REFERENCE_PATTERNS.get(args.compare)
        if ref is None:
            raise ReportError(
                f"unknown reference {args.compare!r}; "
                f"available: {sorted(REFERENCE_PATTERNS)}"
            )
        if ref.protocol not in reports:
            raise ReportError(
                f"reference {args.compare!r} compares against protocol "
                f"{ref.protocol!r}, absent from this report file"
            )
        out = render_comparison(reports[ref.protocol], args.compare)
    elif args.format == "text":
        out = render_text(reports)
    elif args.format == "csv":
        out = render_csv(reports)
    else:
        out = render_svg(reports)
        validate_svg(out)
    if args.out:
        with open(args.out, "w") as f:
            f.write(out)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(out)
    return 0


def cmd_prune(args) -> int:
    model = load_checkpoint(args.checkpoint)
    reports = read_reports(args.report)
    fp = fingerprint(model)
    for proto, rep in reports.items():
        if rep.fingerprint != fp:
            raise FingerprintMismatchError(
                f"report section {proto!r} was produced from a different model"
            )
    targets = set()
    for rep in reports.values():
        for r in rep.results:
            if r.trivial:
                targets.update(a for a in r.addresses if a.slot in ("conv1", "conv2"))

    before = model.parameter_count()
    pruned = fold_and_prune(model, targets) if targets else model.copy()
    after = pruned.parameter_count()
    save_checkpoint(pruned, args.out)
    print(f"folded {len(targets)} kernels; parameters {before} -> {after}")

    descriptor = next(iter(reports.values())).dataset
    if descriptor:
        _, test_set = _make_datasets(descriptor)
        metric = evaluate(pruned, test_set)
        print(f"pruned model metric: {metric:.4f}")
    print(f"checkpoint: {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="resablate",
        description="Train small residual networks, zero their kernels per "
        "sweep protocols, classify layer triviality, and fold trivial "
        "branches away.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a JSON config")
    t.add_argument("--config", required=True, help="JSON config file (model/hyper/dataset)")
    t.add_argument("--out", required=True, help="output checkpoint path")
    t.add_argument("--seed", type=int, default=None,
                   help="override model, hyper and dataset seeds")
    t.add_argument("--history", default=None,
                   help="history file path (default: <out>.history.json)")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="run zeroing protocols against a checkpoint")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--config", required=True,
                   help="JSON config file providing the dataset section")
    a.add_argument("--protocol", required=True, choices=["e1", "e2", "e3", "all"])
    a.add_argument("--tau", type=float, default=0.01,
                   help="max metric drop still classified trivial (default 0.01)")
    a.add_argument("--seed", type=int, default=None,
                   help="override the dataset seed")
    a.add_argument("--out", required=True, help="output report path")
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("report", help="render or compare a report file")
    r.add_argument("report_file")
    r.add_argument("--format", choices=["text", "csv", "svg"], default="text")
    r.add_argument("--compare", default=None,
                   help=f"reference pattern id, one of {sorted(REFERENCE_PATTERNS)}")
    r.add_argument("--out", default=None, help="output path (default: stdout)")
    r.set_defaults(func=cmd_report)

    pr = sub.add_parser("prune", help="fold trivial branches into constants")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--report", required=True,
                    help="report file produced from the same checkpoint")
    pr.add_argument("--out", required=True, help="pruned checkpoint path")
    pr.set_defaults(func=cmd_prune)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CheckpointError, DatasetFormatError, NumericError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (ConfigError, DataError, ReportError, FingerprintMismatchError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
