"""Command-line entry point: ``memto {synth,train,score,eval,analyze}``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric divergence.
``MEMTO_NUM_THREADS`` overrides the torch thread count (default 1, the
bit-reproducible reference mode).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config, save_config
from .data import ANOMALY_KINDS, DEFAULT_KINDS, DataError, SyntheticSpec, generate_synthetic, load_csv, save_csv
from .detection import CRITERIA, encode_series, evaluate, lsd, read_trace, score_series, write_trace
from .training import TrainingDivergence, continue_phase2, train_two_phase

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

# top-p% per benchmark, as used for thresholding
DATASET_P = {"SMD": 0.5, "MSL": 1.0, "PSM": 1.0, "SMAP": 1.0, "SWaT": 0.1}

log = logging.getLogger("memto")


class UsageError(Exception):
    pass


def _reference_mode() -> None:
    threads = int(os.environ.get("MEMTO_NUM_THREADS", "1"))
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)


def _echo(path: Path, command: str, args: argparse.Namespace) -> None:
    d = {k: v for k, v in vars(args).items() if k != "func"}
    d["command"] = command
    path.write_text(json.dumps(d, indent=2, sort_keys=True, default=str) + "\n")


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_synth(args) -> int:
    if not 0 < args.anomaly_ratio < 1:
        raise UsageError(f"--anomaly-ratio must lie in (0, 1), got {args.anomaly_ratio}")
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    spec = SyntheticSpec(
        T=args.T,
        n=args.n,
        test_T=args.test_T if args.test_T is not None else max(1, args.T // 2),
        noise_std=args.noise_std,
        anomaly_ratio=args.anomaly_ratio,
        anomaly_kinds=kinds,
        seed=args.seed,
    )
    try:
        spec.validate()
    except DataError as e:
        raise UsageError(str(e)) from None
    data = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(data.train, out / "train.csv")
    save_csv(data.test, out / "test.csv")
    _dump({"spec": spec.to_dict(), "events": data.events}, out / "synth_spec.json")
    _echo(out / "synth_args.json", "synth", args)
    print(f"wrote {out/'train.csv'} ({spec.T} rows) and {out/'test.csv'} ({spec.test_T} rows, {int(data.test.labels.sum())} anomalous)")
    return EXIT_OK


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    flat = cfg.to_flat()
    overrides = {
        "train_csv": args.train_csv,
        "out_dir": args.out,
        "M": args.memory_items,
        "dec_layers": args.dec_layers,
        "lambda": args.lambda_,
        "loss_mode": args.loss_mode,
        "max_epochs": args.max_epochs,
        "lr": args.lr,
        "patience": args.patience,
        "seed": args.seed,
        "C": args.C,
        "batch_size": args.batch_size,
        "L": args.L,
    }
    for k, v in overrides.items():
        if v is not None:
            flat[k] = v
    if args.skip_kmeans:
        flat["skip_kmeans"] = True
    return RunConfig.from_flat(flat)


def cmd_train(args) -> int:
    cfg = _run_config(args)
    if not cfg.train_csv:
        raise UsageError("no training data: set train_csv in the config or pass --train-csv")
    series = load_csv(cfg.train_csv, has_labels=False, header=cfg.header)
    cfg.model.n = series.n
    cfg.model.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")
    _echo(out / "train_args.json", "train", args)

    if args.resume_phase1:
        ckpt1 = load_checkpoint(args.resume_phase1)
        if asdict(ckpt1.model_config) != asdict(cfg.model):
            raise CheckpointError(
                f"phase-1 checkpoint config {asdict(ckpt1.model_config)} does not match {asdict(cfg.model)}"
            )
        ckpt, report, _ = continue_phase2(ckpt1, series, cfg.train, cfg.val_ratio)
    else:
        ckpt, report, _ = train_two_phase(
            series,
            cfg.model,
            cfg.train,
            cfg.val_ratio,
            on_phase1=lambda c: save_checkpoint(c, out / "phase1.memto"),
        )
    save_checkpoint(ckpt, out / "checkpoint.memto")
    _dump(report.to_dict(include_timings=False), out / "train_report.json")
    _dump(report.timings, out / "timings.json")
    for stage, secs in report.timings.items():
        print(f"{stage:>8}: {secs:8.2f} s")
    print(f"checkpoint: {out/'checkpoint.memto'} ({ckpt.phase})")
    return EXIT_OK


def _load_model(path):
    ckpt = load_checkpoint(path)
    return ckpt, ckpt.build_model()


def cmd_score(args) -> int:
    ckpt, model = _load_model(args.checkpoint)
    series = load_csv(args.data, has_labels=args.labels, header=args.header)
    if series.n != model.cfg.n:
        raise DataError(f"dimension mismatch: checkpoint expects n={model.cfg.n} channels, data has n={series.n}")
    trace = score_series(model, series, ckpt.norm_stats, args.batch_size, args.criterion)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trace(trace, out)
    _echo(out.with_name(out.stem + "_args.json"), "score", args)
    print(f"wrote {out} ({len(trace)} rows, criterion={args.criterion})")
    return EXIT_OK


def _p_values(args) -> list[float]:
    if args.p_sweep:
        return [float(v) for v in args.p_sweep.split(",") if v.strip()]
    if args.p is not None:
        return [args.p]
    if args.dataset:
        return [DATASET_P[args.dataset]]
    return [1.0]


def cmd_eval(args) -> int:
    test = read_trace(args.trace)
    labels = None
    if args.labels:
        labels = load_csv(args.labels, has_labels=True, header=args.header).labels
    elif test.labels is None:
        raise DataError(f"{args.trace} has no label column; pass --labels")
    pools = [read_trace(p).scores for p in args.pool]
    rows = []
    for p in _p_values(args):
        res = evaluate(test, pools, p, labels)
        rows.append(res.to_dict())
        print(f"p={p:g} threshold={res.threshold:.6g} P={res.precision:.4f} R={res.recall:.4f} F1={res.f1:.4f} tp={res.tp} fp={res.fp} fn={res.fn}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _dump({"trace": str(args.trace), "pool": [str(p) for p in args.pool], "rows": rows}, out)
    if args.out_trace:
        write_trace(test, args.out_trace)
    _echo(out.with_name(out.stem + "_args.json"), "eval", args)
    return EXIT_OK


def cmd_analyze_lsd(args) -> int:
    ckpt, model = _load_model(args.checkpoint)
    series = load_csv(args.data, has_labels=True, header=args.header)
    if series.n != model.cfg.n:
        raise DataError(f"dimension mismatch: checkpoint expects n={model.cfg.n} channels, data has n={series.n}")
    lab = series.labels.astype(bool)
    if not lab.any():
        raise DataError("no abnormal timestamps in the labeled data")
    if lab.all():
        raise DataError("no normal timestamps in the labeled data")
    q = encode_series(model, series, ckpt.norm_stats, args.batch_size)
    d = lsd(q, ckpt.memory)
    normal, abnormal = float(d[~lab].mean()), float(d[lab].mean())
    if abnormal == 0:
        raise DataError("mean abnormal LSD is zero")
    report = {
        "mean_lsd_normal": normal,
        "mean_lsd_abnormal": abnormal,
        "ratio": normal / abnormal,
        "n_normal": int((~lab).sum()),
        "n_abnormal": int(lab.sum()),
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _dump(report, out)
    _echo(out.with_name(out.stem + "_args.json"), "analyze", args)
    print(f"mean LSD normal={normal:.6g} abnormal={abnormal:.6g} ratio={report['ratio']:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="memto", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a labeled synthetic dataset")
    s.add_argument("--T", type=int, default=20000, help="train length")
    s.add_argument("--test-T", dest="test_T", type=int, default=None, help="test length (default T/2)")
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--noise-std", type=float, default=0.05)
    s.add_argument("--anomaly-ratio", type=float, default=0.01)
    s.add_argument("--kinds", default=",".join(DEFAULT_KINDS), help="comma-separated subset of " + ",".join(ANOMALY_KINDS))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="data/synth")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="two-phase training")
    t.add_argument("--config", help="flat JSON config file")
    t.add_argument("--train-csv")
    t.add_argument("--out")
    t.add_argument("--skip-kmeans", action="store_true", help="single phase with random memory")
    t.add_argument("--memory-items", type=int)
    t.add_argument("--dec-layers", type=int)
    t.add_argument("--lambda", dest="lambda_", type=float)
    t.add_argument("--loss-mode", choices=("both", "rec", "entr"))
    t.add_argument("--max-epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--patience", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--C", type=int)
    t.add_argument("--L", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--resume-phase1", help="phase-1 checkpoint to continue into phase 2")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("score", help="write a per-timestamp score trace")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--labels", action="store_true", help="data has a trailing label column")
    c.add_argument("--header", action="store_true")
    c.add_argument("--criterion", choices=CRITERIA, default="both")
    c.add_argument("--batch-size", type=int, default=32)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_score)

    e = sub.add_parser("eval", help="threshold, point-adjust and report P/R/F1")
    e.add_argument("--trace", required=True, help="test score trace")
    e.add_argument("--pool", action="append", required=True, help="train/val trace(s) for the threshold pool")
    e.add_argument("--labels", help="labeled CSV, if the trace has no label column")
    e.add_argument("--header", action="store_true")
    grp = e.add_mutually_exclusive_group()
    grp.add_argument("--p", type=float, help="top-p%% threshold")
    grp.add_argument("--p-sweep", help="comma-separated p values")
    grp.add_argument("--dataset", choices=sorted(DATASET_P), help="use the benchmark's p")
    e.add_argument("--out", required=True)
    e.add_argument("--out-trace", help="write the thresholded, adjusted trace here")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze", help="analyses of a trained model")
    asub = a.add_subparsers(dest="analysis", required=True)
    al = asub.add_parser("lsd", help="mean LSD of normal vs abnormal timestamps")
    al.add_argument("--checkpoint", required=True)
    al.add_argument("--data", required=True, help="labeled CSV")
    al.add_argument("--header", action="store_true")
    al.add_argument("--batch-size", type=int, default=32)
    al.add_argument("--out", required=True)
    al.set_defaults(func=cmd_analyze_lsd)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    _reference_mode()
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"memto: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, FileNotFoundError, ValueError) as e:
        print(f"memto: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDivergence, FloatingPointError) as e:
        print(f"memto: numeric divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
