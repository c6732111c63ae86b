"""``lfsal`` command line: ingest, split, train, predict, evaluate, bench, synth."""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .errors import LfsalError


def _load_index(path):
    from .data import DatasetIndex, ingest_dataset
    path = Path(path)
    return ingest_dataset(path) if path.is_dir() else DatasetIndex.read(path)


def cmd_ingest(args):
    index = _load_index(args.root)
    if args.out:
        index.write(args.out)
    print(f"entries = {len(index)}\nlayout = {index.layout_kind}")


def cmd_split(args):
    from .data import split_kfold
    index = _load_index(args.data)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for f, (tr, te) in enumerate(split_kfold(index, args.k, args.seed)):
        index.subset(tr).write(out / f"fold{f}_train.tsv")
        index.subset(te).write(out / f"fold{f}_test.tsv")
        print(f"fold {f}: train = {len(tr)} test = {len(te)}")


def cmd_train(args):
    from .training import TrainConfig, train
    overrides = {f.name: str(getattr(args, f.name)) for f in dataclasses.fields(TrainConfig)
                 if getattr(args, f.name, None) is not None}
    cfg = TrainConfig.from_file(args.config, overrides)
    res = train(cfg, _load_index(args.data), log_path=args.log, checkpoint_path=args.out,
                detector_only=args.detector_only)
    for epoch, stage, loss in res.log:
        print(f"epoch {epoch} stage {stage} loss {loss:.6f}")
    print(f"checkpoint = {args.out}")


def cmd_predict(args):
    from .training import predict
    sal = predict(args.checkpoint, args.input, args.out)
    print(f"wrote {args.out} ({sal.shape[0]}x{sal.shape[1]})")


def cmd_evaluate(args):
    from .training import evaluate
    mode = args.mode
    try:
        mode = float(mode)
    except ValueError:
        pass
    report = evaluate(args.checkpoint, _load_index(args.data), mode=mode, csv_path=args.out)
    for k, v in report.as_dict().items():
        print(f"{k} = {v}")


def cmd_bench(args):
    import numpy as np
    from .bench import bench
    dtype = np.float32 if args.float32 else None
    report = bench(args.checkpoint, args.runs, args.warmup, args.threads, args.profile, args.spatial, dtype=dtype)
    if args.out:
        report.write_kv(args.out)
    for k, v in report.as_dict().items():
        print(f"{k} = {v}")


def cmd_synth(args):
    from .data import SceneSpec, write_synth_dataset
    spec = SceneSpec(spatial=args.spatial)
    root = write_synth_dataset(args.out, args.n, args.seed, spec, args.layout)
    print(f"wrote {args.n} scenes to {root}")


def _add_train_flags(p):
    from .training import TrainConfig
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, dest=f.name, default=None, metavar=f.type.upper(),
                       help=f"override {f.name} (default {f.default})")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lfsal", description="Light-field saliency toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="pair lf/ and gt/ files into an index")
    p.add_argument("root")
    p.add_argument("--out", help="write the index as TSV")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("split", help="grouped k-fold split")
    p.add_argument("data", help="dataset root or index TSV")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("train", help="run the training schedule")
    p.add_argument("data", help="dataset root or index TSV")
    p.add_argument("--config", help="key = value file with TrainConfig fields")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="per-epoch loss CSV")
    p.add_argument("--detector-only", action="store_true", help="train the centre-view baseline")
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="saliency PNG for one light field")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="MLA PNG (with U/V sidecar) or view directory")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    p.add_argument("data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", default="adaptive", help="adaptive, sweep-max, or a fixed threshold")
    p.add_argument("--out", help="per-image metrics CSV")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("bench", help="time the full-size pipeline")
    p.add_argument("--checkpoint")
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--threads", type=int)
    p.add_argument("--profile", default="full", choices=["full", "toy", "micro"])
    p.add_argument("--spatial", type=int, default=512)
    p.add_argument("--float32", action="store_true", help="run in single precision")
    p.add_argument("--out", help="write the report as key = value text")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("synth", help="write a synthetic light-field dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spatial", type=int, default=32)
    p.add_argument("--layout", default="mla", choices=["mla", "sai-dir"])
    p.set_defaults(fn=cmd_synth)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except (LfsalError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
