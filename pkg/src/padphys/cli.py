"""Command-line entry point: ``padphys {gen,train,calibrate,eval,report}``.

Configuration comes from an optional JSON file with the sections ``synth``,
``preprocess``, ``network`` and ``train`` plus a top-level ``seed``.
Precedence: command-line flags > ``PADPHYS_SEED`` (seed only) > file > defaults.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional

from .dataset import DataError, score_clips
from .manifest import ManifestError, load_manifest
from .metrics import MetricsError, classify_and_report, eer_threshold, format_table, read_report_csv
from .network import (
    ConfigMismatchError,
    NetworkConfig,
    NumericError,
    WeightsFormatError,
    atomic_write_text,
    load_weights,
    save_weights,
)
from .preprocess import BoxError, ClipFormatError, PreprocessConfig
from .synthdata import SynthConfig, generate
from .tensor import GradientError
from .training import TrainConfig, TrainingError, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _read_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file {path} not found")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc


def _section(cfg: dict, name: str, cls, overrides: dict):
    known = {f.name for f in fields(cls)}
    values = dict(cfg.get(name, {}))
    unknown = set(values) - known
    if unknown:
        raise UsageError(f"unknown {name} config keys: {sorted(unknown)}")
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {name} config: {exc}") from exc


def resolve_seed(cfg: dict, flag: Optional[int]) -> Optional[int]:
    if flag is not None:
        return flag
    env = os.environ.get("PADPHYS_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise UsageError(f"PADPHYS_SEED must be an integer, got {env!r}") from exc
    return cfg.get("seed")


def _require(path: Optional[str], what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} {path} does not exist")
    return p


def _preprocess_for(args, cfg: dict, weights=None) -> PreprocessConfig:
    base = dict(cfg.get("preprocess", {}))
    if weights is not None and "preprocess" not in cfg:
        for stage in reversed(weights.provenance):
            if "preprocess" in stage:
                base = dict(stage["preprocess"])
                break
    return _section({"preprocess": base}, "preprocess", PreprocessConfig,
                    {"ema_alpha": getattr(args, "ema_alpha", None)})


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    cfg = _read_config(args.config)
    seed = resolve_seed(cfg, args.seed)
    synth = _section(cfg, "synth", SynthConfig, {"seed": seed})
    out = args.out or cfg.get("out_dir")
    if out is None:
        raise UsageError("gen needs --out (or out_dir in the config file)")
    corpus = generate(synth, out)
    print(f"wrote {len(corpus.manifest.clips)} clips to {corpus.out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _read_config(args.config)
    if args.regime in ("frozen_transfer", "full_retrain") and not args.init_weights:
        raise UsageError(f"--regime {args.regime} requires --init-weights")
    if args.regime == "scratch" and args.init_weights:
        raise UsageError("--regime scratch does not take --init-weights")
    manifest = load_manifest(_require(args.manifest, "manifest"))
    init = load_weights(_require(args.init_weights, "init weights")) if args.init_weights else None
    seed = resolve_seed(cfg, args.seed)
    head = args.head or cfg.get("network", {}).get("head") or ("regression" if args.regime == "scratch" else "binary")
    net = _section(cfg, "network", NetworkConfig, {"head": head})
    tc = _section(cfg, "train", TrainConfig, {
        "regime": args.regime, "seed": seed, "epochs": args.epochs, "lr": args.lr,
        "pairs_per_clip": args.pairs_per_clip,
    })
    pre = _preprocess_for(args, cfg)
    weights, log = train(manifest, net, tc, init, pre)
    out = Path(args.out)
    save_weights(weights, out)
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".log.csv")
    atomic_write_text(log_path, log.to_csv())
    print(f"{tc.regime}: best epoch {log.best_epoch}, val loss {log.records[log.best_epoch].val_loss:.6f}; "
          f"weights -> {out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _read_config(args.config)
    manifest = load_manifest(_require(args.manifest, "manifest"))
    weights = load_weights(_require(args.weights, "weights"))
    pre = _preprocess_for(args, cfg, weights)
    scores = score_clips(manifest, weights, "val", pre)
    tau, eer = eer_threshold(scores)
    doc = {
        "threshold": tau,
        "eer": eer,
        "n_val": len(scores),
        "n_bonafide": sum(v.is_bonafide for v in scores),
        "n_attack": sum(not v.is_bonafide for v in scores),
    }
    atomic_write_text(args.out, json.dumps(doc, indent=2) + "\n")
    print(f"threshold {tau:.6f}, validation EER {100 * eer:.2f}% over {len(scores)} videos -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _read_config(args.config)
    manifest = load_manifest(_require(args.manifest, "manifest"))
    weights = load_weights(_require(args.weights, "weights"))
    thr = json.loads(_require(args.threshold, "threshold file").read_text())
    pre = _preprocess_for(args, cfg, weights)
    scores = score_clips(manifest, weights, "test", pre)
    report = classify_and_report(scores, float(thr["threshold"]))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "report.txt", report.to_table())
    atomic_write_text(out / "report.csv", report.to_csv())
    atomic_write_text(out / "roc.csv", report.roc_csv())
    atomic_write_text(out / "roc.svg", report.roc_svg())
    print(report.to_table(), end="")
    return EXIT_OK


def cmd_report(args) -> int:
    rows = read_report_csv(_require(args.csv, "report CSV").read_text())
    print(format_table(rows), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="padphys", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic corpus")
    g.add_argument("--config", help="JSON run config (uses its 'synth' section)")
    g.add_argument("--out", help="output directory (must not exist or be empty)")
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train under one of the three regimes")
    t.add_argument("--manifest", required=True)
    t.add_argument("--config")
    t.add_argument("--regime", required=True, choices=("scratch", "full_retrain", "frozen_transfer"))
    t.add_argument("--init-weights")
    t.add_argument("--head", choices=("regression", "binary"))
    t.add_argument("--out", required=True, help="weight file to write")
    t.add_argument("--log", help="train log CSV (default: <out>.log.csv)")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--pairs-per-clip", type=int)
    t.add_argument("--ema-alpha", type=float)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("calibrate", help="EER threshold on the validation split")
    c.add_argument("--manifest", required=True)
    c.add_argument("--weights", required=True)
    c.add_argument("--config")
    c.add_argument("--out", required=True, help="threshold JSON to write")
    c.add_argument("--ema-alpha", type=float)
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("eval", help="APCER/BPCER/ACER and ROC on the test split")
    e.add_argument("--manifest", required=True)
    e.add_argument("--weights", required=True)
    e.add_argument("--threshold", required=True)
    e.add_argument("--config")
    e.add_argument("--out-dir", required=True)
    e.add_argument("--ema-alpha", type=float)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="pretty-print a report CSV")
    r.add_argument("csv")
    r.set_defaults(func=cmd_report)
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"padphys {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, GradientError, FloatingPointError) as exc:
        print(f"padphys {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ManifestError, ClipFormatError, BoxError, WeightsFormatError, ConfigMismatchError,
            MetricsError, TrainingError, FileNotFoundError, FileExistsError) as exc:
        print(f"padphys {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
