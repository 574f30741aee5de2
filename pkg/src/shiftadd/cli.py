"""Command-line entry points for the compression pipeline.

Subcommands mirror the pipeline stages; a JSON config file can set everything
and individual flags override it.  The dataset root for ``--dataset mnist``
comes from $SHIFTADD_DATA.  Exit codes: 0 success, 2 configuration error,
3 stage failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys

from .lcc import LccConfig
from .nncore import top1_accuracy
from .numerics import FixedPointConfig
from .pipeline import (
    CompressionReport,
    PipelineConfig,
    StageError,
    emit_report,
    load_checkpoint,
    resolve_dataset,
    run_pipeline,
    run_sweep,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with a full PipelineConfig; flags override")
    p.add_argument("--dataset", help="'synthetic', 'mnist' ($SHIFTADD_DATA), or an IDX directory")
    p.add_argument("--out", dest="out_dir", help="output directory for checkpoints and reports")
    p.add_argument("--seed", type=int)
    p.add_argument("--arch", help="comma-separated MLP sizes, e.g. 784,300,10")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--optimizer", choices=["sgd", "adam"])
    p.add_argument("--lam", help="comma-separated per-layer group-lasso weights")
    p.add_argument("--train-limit", type=int)
    p.add_argument("--test-limit", type=int)
    p.add_argument("--share", action="store_true", default=None)
    p.add_argument("--no-share", dest="share", action="store_false")
    p.add_argument("--share-layers", help="comma-separated layer indices")
    p.add_argument("--retrain-epochs", type=int)
    p.add_argument("--algorithm", choices=["fp", "fs"])
    p.add_argument("--s-terms", type=int)
    p.add_argument("--slice-width", type=int)
    p.add_argument("--sqnr-policy", choices=["match_baseline", "fixed_db", "fixed_factors"])
    p.add_argument("--target-db", type=float)
    p.add_argument("--max-factors", type=int)
    p.add_argument("--no-lcc", action="store_true")
    p.add_argument("--frac-bits", type=int)
    p.add_argument("--int-bits", type=int)


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    if args.config:
        with open(args.config) as fh:
            cfg = PipelineConfig.from_dict(json.load(fh))
    else:
        cfg = PipelineConfig()
    train_kw = {}
    for flag, field_name in [
        ("epochs", "epochs"),
        ("batch_size", "batch_size"),
        ("lr", "lr"),
        ("momentum", "momentum"),
        ("optimizer", "optimizer"),
    ]:
        v = getattr(args, flag, None)
        if v is not None:
            train_kw[field_name] = v
    if train_kw:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, **train_kw))
    if getattr(args, "arch", None):
        cfg = dataclasses.replace(cfg, arch=[int(v) for v in args.arch.split(",")])
    if getattr(args, "lam", None):
        cfg = dataclasses.replace(cfg, lam=tuple(float(v) for v in args.lam.split(",")))
    if getattr(args, "share_layers", None):
        cfg = dataclasses.replace(
            cfg, share_layers=tuple(int(v) for v in args.share_layers.split(","))
        )
    for flag in ("dataset", "out_dir", "seed", "train_limit", "test_limit", "retrain_epochs"):
        v = getattr(args, flag, None)
        if v is not None:
            cfg = dataclasses.replace(cfg, **{flag: v})
    if getattr(args, "share", None) is not None:
        cfg = dataclasses.replace(cfg, share=args.share)
    lcc_kw = {}
    for flag, field_name in [
        ("algorithm", "algorithm"),
        ("s_terms", "s_terms"),
        ("slice_width", "slice_width"),
        ("sqnr_policy", "policy"),
        ("target_db", "target_db"),
        ("max_factors", "max_factors"),
    ]:
        v = getattr(args, flag, None)
        if v is not None:
            lcc_kw[field_name] = v
    if getattr(args, "no_lcc", False):
        cfg = dataclasses.replace(cfg, lcc=None)
    elif lcc_kw:
        cfg = dataclasses.replace(cfg, lcc=dataclasses.replace(cfg.lcc or LccConfig(), **lcc_kw))
    if getattr(args, "frac_bits", None) is not None or getattr(args, "int_bits", None) is not None:
        fb = args.frac_bits if args.frac_bits is not None else cfg.baseline.frac_bits
        ib = args.int_bits if args.int_bits is not None else cfg.baseline.int_bits
        base = FixedPointConfig(frac_bits=fb, int_bits=ib)
        cfg = dataclasses.replace(cfg, baseline=base)
        if cfg.lcc is not None:
            cfg = dataclasses.replace(cfg, lcc=dataclasses.replace(cfg.lcc, baseline=base))
    return cfg


def _print_report(report: CompressionReport) -> None:
    for stage, acc in report.accuracy.items():
        print(f"accuracy[{stage}] = {acc:.4f}")
    for lr in report.layers:
        ratio = "inf" if math.isinf(lr.ratio) else f"{lr.ratio:.2f}"
        print(
            f"layer {lr.layer} ({lr.kind}): baseline {lr.baseline_adds} adds -> "
            f"{lr.compressed_adds} adds (ratio {ratio})"
        )
    total = "inf" if math.isinf(report.total_ratio) else f"{report.total_ratio:.2f}"
    print(
        f"total: {report.total_baseline_adds} -> {report.total_compressed_adds} adds, "
        f"compression ratio {total}"
    )


def _stage_overrides(name: str) -> dict:
    return {
        "train": {"lam": (), "share": False, "lcc": None},
        "prune": {"share": False, "lcc": None},
        "share": {"share": True, "lcc": None},
        "decompose": {},
        "pipeline": {},
    }[name]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="shiftadd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in [
        ("train", "train the unregularized model and save a checkpoint"),
        ("prune", "train with group-lasso regularization (requires --lam > 0)"),
        ("share", "prune, then cluster and retrain shared columns"),
        ("decompose", "full pipeline up to the factorization stage"),
        ("pipeline", "run every configured stage"),
    ]:
        p = sub.add_parser(name, help=desc)
        _add_common(p)
    p = sub.add_parser("sweep", help="independent runs over a list of regularization weights")
    _add_common(p)
    p.add_argument("--lam-values", required=True, help="comma-separated values, e.g. 0.01,0.02")
    p.add_argument("--sweep-layer", type=int, default=0)
    p = sub.add_parser("evaluate", help="top-1 accuracy of a saved checkpoint")
    _add_common(p)
    p.add_argument("checkpoint")
    p = sub.add_parser("report", help="re-emit a stored report JSON as CSV")
    p.add_argument("report_json")
    p.add_argument("--out", dest="out_dir", default=".")

    args = parser.parse_args(argv)
    try:
        if args.command == "report":
            with open(args.report_json) as fh:
                payload = json.load(fh)
            report = _report_from_dict(payload)
            for path in emit_report(report, args.out_dir):
                print(path)
            return EXIT_OK
        cfg = _config_from_args(args)
        if args.command == "evaluate":
            ckpt = load_checkpoint(args.checkpoint)
            train_set, test_set = resolve_dataset(cfg)
            if 0 in ckpt.retained:
                test_set = dataclasses.replace(test_set, x=test_set.x[:, ckpt.retained[0]])
            print(f"stage={ckpt.stage} top1={top1_accuracy(ckpt.model, test_set):.4f}")
            return EXIT_OK
        if args.command == "sweep":
            lam_values = [float(v) for v in args.lam_values.split(",")]
            results = run_sweep(cfg, lam_values, layer=args.sweep_layer)
            for lv, report in results:
                ratio = "inf" if math.isinf(report.total_ratio) else f"{report.total_ratio:.2f}"
                accs = ", ".join(f"{k}={v:.4f}" for k, v in report.accuracy.items())
                print(f"lam={lv:g}: ratio {ratio}; {accs}")
            return EXIT_OK
        cfg = dataclasses.replace(cfg, **_stage_overrides(args.command))
        if args.command == "prune" and not any(v > 0 for v in cfg.lam_tuple()):
            raise ValueError("prune requires at least one positive --lam entry")
        report = run_pipeline(cfg)
        _print_report(report)
        return EXIT_OK
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_STAGE
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


def _report_from_dict(payload: dict) -> CompressionReport:
    from .pipeline import LayerReport

    layers = []
    for ld in payload["layers"]:
        ld = dict(ld)
        ld["baseline_shape"] = tuple(ld["baseline_shape"])
        ld["pruned_shape"] = tuple(ld["pruned_shape"])
        for key in ("lcc_sqnr", "ratio"):
            if isinstance(ld.get(key), str):
                ld[key] = float(ld[key])
        layers.append(LayerReport(**ld))
    return CompressionReport(
        layers=layers,
        accuracy=payload["accuracy"],
        total_baseline_adds=payload["total_baseline_adds"],
        total_compressed_adds=payload["total_compressed_adds"],
        total_ratio=float(payload["total_ratio"]),
        ratio_overflow=payload["ratio_overflow"],
        config=payload.get("config", {}),
    )


if __name__ == "__main__":
    sys.exit(main())
