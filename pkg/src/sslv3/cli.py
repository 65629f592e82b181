"""Command-line interface: ``sslv3 <subcommand> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or checkpoint
error, 3 numeric failure (non-finite loss, gradient check out of tolerance).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from .checkpoint import check_compatible, checkpoint_load, checkpoint_save
from .config import TrainConfig, format_config, load_config, parse_config
from .data import load_clips, save_synthetic, synth_generate
from .errors import CheckpointError, ContractError, DataError, NumericError, ParameterError, ShapeError
from .gradcheck import run_suite
from .metrics import METRIC_NAMES, MetricsReport, mean_report
from .model import init_model
from .train import evaluate, run_ablation, run_kfold, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
METRICS_HEADER = ("fold",) + METRIC_NAMES


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", type=Path, default=default, help="key=value configuration file")
    parser.add_argument("--seed", type=int, default=default, help="override the configured seed")
    parser.add_argument("--out-dir", type=Path, default=default, help="directory for outputs (default: .)")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", default=argparse.SUPPRESS if suppress else [],
                        help="override one configuration key (repeatable)")
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sslv3", description="Quality-aware self-supervised video classification.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        _global_flags(p, suppress=True)  # global flags are accepted after the subcommand as well
        return p

    p = add("synth", "generate a synthetic labelled clip dataset")
    p.add_argument("--n-subjects", type=int)
    p.add_argument("--clips-per-subject", type=int)

    p = add("train", "train one model on a dataset")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, help="output path (default: OUT_DIR/model.ckpt)")

    p = add("eval", "evaluate a checkpoint at the subject level")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)

    for name, help in (("kfold", "subject-disjoint K-fold cross-validation"),
                       ("ablate", "sweep every quality-head x loss-mode cell")):
        p = add(name, help)
        p.add_argument("--data", type=Path, help="dataset root (default: synthetic data from the config)")
        p.add_argument("--folds", type=int)
        p.add_argument("--max-folds", type=int, help="run only the first N folds")

    p = add("gradcheck", "finite-difference check of the full loss on tiny models")
    p.add_argument("--configs", type=int, default=20)
    p.add_argument("--entries", type=int, default=4, help="entries sampled per parameter")
    return parser


def _resolve_config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.set:
        cfg = parse_config("\n".join(args.set), cfg)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _dataset(args, cfg: TrainConfig):
    if getattr(args, "data", None) is not None:
        return load_clips(args.data, cfg.spec)
    return synth_generate(cfg.n_subjects, cfg.clips_per_subject, cfg.spec, (cfg.quality_lo, cfg.quality_hi), cfg.seed)


def _fmt(v) -> str:
    return "nan" if isinstance(v, float) and math.isnan(v) else repr(v)


def _write_metrics(path: Path, rows: list[tuple[str, MetricsReport]]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for fold, r in rows:
            w.writerow([fold, *(_fmt(v) for v in r.values())])


def _write_json(path: Path, obj) -> None:
    def clean(x):
        if isinstance(x, float) and not math.isfinite(x):
            return None
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, list):
            return [clean(v) for v in x]
        return x

    path.write_text(json.dumps(clean(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _cmd_synth(args, cfg, out: Path) -> int:
    n = args.n_subjects or cfg.n_subjects
    c = args.clips_per_subject or cfg.clips_per_subject
    ds = synth_generate(n, c, cfg.spec, (cfg.quality_lo, cfg.quality_hi), cfg.seed)
    save_synthetic(ds, out)
    print(f"wrote {len(ds)} clips from {n} subjects to {out}")
    return EXIT_OK


def _cmd_train(args, cfg, out: Path) -> int:
    ds = load_clips(args.data, cfg.spec)
    store, hist = train(cfg, ds, progress=lambda row: logging.info("epoch %(epoch)d loss %(loss).4f", row))
    ck = args.checkpoint or out / "model.ckpt"
    checkpoint_save(store, ck)
    (out / "history.csv").write_text(hist.to_csv(), encoding="utf-8")
    (out / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    print(f"checkpoint {ck}; final loss {hist.epochs[-1]['loss']:.6f}")
    return EXIT_OK


def _cmd_eval(args, cfg, out: Path) -> int:
    ds = load_clips(args.data, cfg.spec)
    store = checkpoint_load(args.checkpoint)
    check_compatible(store, init_model(cfg.model_config(), 0))
    report = evaluate(store, ds, cfg)
    _write_metrics(out / "metrics.csv", [("all", report)])
    _write_json(out / "summary.json", {"command": "eval", "metrics": report.as_dict()})
    print(" ".join(f"{k}={_fmt(getattr(report, k))}" for k in METRIC_NAMES))
    return EXIT_OK


def _cmd_kfold(args, cfg, out: Path) -> int:
    results = run_kfold(cfg, _dataset(args, cfg), args.folds, args.max_folds)
    _write_metrics(out / "metrics.csv", [(str(r.fold), r.test) for r in results])
    summary = {
        "command": "kfold",
        "folds": [{"fold": r.fold, "test": r.test.as_dict(), "train": r.train.as_dict(),
                   "test_subjects": r.test_subjects} for r in results],
        "mean": mean_report([r.test for r in results]),
    }
    _write_json(out / "summary.json", summary)
    print(" ".join(f"{k}={v:.4f}" for k, v in summary["mean"].items()))
    return EXIT_OK


def _cmd_ablate(args, cfg, out: Path) -> int:
    rows = run_ablation(cfg, _dataset(args, cfg), args.folds, args.max_folds)
    with (out / "ablation.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("vqa", "loss") + METRIC_NAMES)
        for r in rows:
            w.writerow([r["vqa"], r["loss"], *(_fmt(r[k]) for k in METRIC_NAMES)])
    _write_json(out / "summary.json", {"command": "ablate", "cells": rows})
    for r in rows:
        print(f"{r['vqa']:>9} {r['loss']:>7} acc={r['accuracy']:.4f}")
    return EXIT_OK


def _cmd_gradcheck(args, cfg, out: Path) -> int:
    res = run_suite(args.configs, cfg.seed, max_entries=args.entries)
    flagged = [(i, name) for i, rep in enumerate(res.reports) for name in rep.flagged]
    _write_json(out / "gradcheck.json", {"configs": args.configs, "seed": cfg.seed, "max_error": res.max_error,
                                         "flagged": [f"{i}:{n}" for i, n in flagged]})
    print(f"{args.configs} configurations, max relative error {res.max_error:.3e}, {len(flagged)} flagged")
    for i, name in flagged:
        print(f"  config {i}: {name} error {res.reports[i].errors[name]:.3e}", file=sys.stderr)
    return EXIT_OK if res.ok else EXIT_NUMERIC


COMMANDS = {"synth": _cmd_synth, "train": _cmd_train, "eval": _cmd_eval, "kfold": _cmd_kfold,
            "ablate": _cmd_ablate, "gradcheck": _cmd_gradcheck}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _resolve_config(args)
        out = args.out_dir or Path(".")
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, cfg, out)
    except (ParameterError, UsageError) as exc:
        print(f"sslv3: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, ShapeError, ContractError, OSError) as exc:
        print(f"sslv3: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"sslv3: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
