"""Command-line entry point: ``legonet <subcommand> [options]``."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .data import Volume, load_case, load_volume, read_manifest, synth_tube_dataset, write_dataset
from .metrics import MetricsReport, agreement_matrix, case_metrics, format_agreement
from .model import (
    ModelConfig,
    analyze,
    build,
    desk_config,
    format_report,
    load_checkpoint,
    save_checkpoint,
)
from .optim import AdamW
from .ssl import SSLConfig, build_pretrain_model, pretrain_epoch, transfer_weights
from .train import TrainConfig, cosine_lr, cross_validate, evaluate, predict_mask, train


def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def blob_hash(data: bytes) -> str:
    """Git's blob object id for ``data``."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _hash_inputs(paths) -> dict[str, str]:
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in sorted(q for q in p.rglob("*") if q.is_file()):
                out[str(f)] = blob_hash(f.read_bytes())
        elif p.is_file():
            out[str(p)] = blob_hash(p.read_bytes())
    return out


def write_run_record(out_dir, command: str, argv: list[str], configs: dict, seed: int, inputs) -> Path:
    record = {
        "command": command,
        "argv": argv,
        "version": __version__,
        "seed": seed,
        "config": configs,
        "inputs": _hash_inputs(inputs),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    path = Path(out_dir) / f"run_record_{command}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _filter(cls, mapping: dict) -> dict:
    names = {f.name for f in fields(cls)}
    return {k: v for k, v in mapping.items() if k in names}


def _model_config(args, file_cfg: dict) -> ModelConfig:
    overrides = _filter(ModelConfig, file_cfg)
    version = args.version or overrides.pop("version", "V2")
    overrides.pop("version", None)
    base = desk_config(version, args.edge) if args.scale == "desk" else ModelConfig(version=version)
    return ModelConfig.from_mapping({**asdict(base), **overrides})


def _train_config(args, file_cfg: dict) -> TrainConfig:
    values = _filter(TrainConfig, file_cfg)
    for key in ("max_epochs", "seed", "batch_size", "patience", "folds", "lr"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if "patience" not in values and "max_epochs" in values:
        # an unset patience never exceeds a short run
        values["patience"] = min(int(values["max_epochs"]), TrainConfig.patience)
    return TrainConfig.from_mapping(values)


def _ssl_config(args, file_cfg: dict) -> SSLConfig:
    raw = _filter(SSLConfig, file_cfg)
    kw = {}
    for k, v in raw.items():
        if k == "grid":
            kw[k] = tuple(int(i) for i in str(v).split(","))
        elif k in ("mask_ratio", "fill_value"):
            kw[k] = float(v)
        else:
            kw[k] = int(v)
    if getattr(args, "seed", None) is not None:
        kw["seed"] = args.seed
    return SSLConfig(**kw)


def _load_cases(data_dir) -> tuple[list, list[str]]:
    records = read_manifest(Path(data_dir) / "manifest.csv")
    cases = []
    for r in records:
        image, mask = load_case(r)
        cases.append((image.data, mask.data))
    return cases, [r.case_id for r in records]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args, file_cfg) -> int:
    cases = synth_tube_dataset(args.n, args.edge, args.seed)
    records = write_dataset(args.out, cases)
    write_run_record(args.out, "synth", args.argv, {"n": args.n, "edge": args.edge}, args.seed, [])
    print(f"wrote {len(records)} cases to {args.out}")
    return 0


def cmd_pretrain(args, file_cfg) -> int:
    mcfg = _model_config(args, file_cfg)
    tcfg = _train_config(args, file_cfg)
    scfg = _ssl_config(args, file_cfg)
    cases, _ = _load_cases(args.data)
    volumes = [img for img, _ in cases]
    model = build_pretrain_model(mcfg, tcfg.seed)
    opt = AdamW(model.parameters(), tcfg.weight_decay, (tcfg.beta1, tcfg.beta2), tcfg.adam_eps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["epoch,lr,recon_mse"]
    for epoch in range(tcfg.max_epochs):
        lr = cosine_lr(epoch, tcfg)
        loss = pretrain_epoch(model, volumes, scfg, opt, lr, epoch)
        rows.append(f"{epoch},{lr!r},{loss!r}")
        print(rows[-1], flush=True)
    (out / "pretrain_log.csv").write_text("\n".join(rows) + "\n")
    digest = save_checkpoint(out / "pretrain.lgnc", model, phase="pretrain")
    write_run_record(out, "pretrain", args.argv,
                     {"model": asdict(mcfg), "train": asdict(tcfg), "ssl": asdict(scfg)}, tcfg.seed, [args.data])
    print(f"checkpoint {out / 'pretrain.lgnc'} sha256={digest}")
    return 0


def cmd_train(args, file_cfg) -> int:
    mcfg = _model_config(args, file_cfg)
    tcfg = _train_config(args, file_cfg)
    cases, ids = _load_cases(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = [args.data] + ([args.init] if args.init else [])

    def init(seed_offset: int):
        model = build(mcfg, tcfg.seed + seed_offset)
        if args.init:
            pretrained, _ = load_checkpoint(args.init)
            transfer_weights(pretrained, model)
        return model

    configs = {"model": asdict(mcfg), "train": asdict(tcfg)}
    if args.cv:
        result = cross_validate(cases, mcfg, tcfg, init=init,
                                on_epoch=lambda k, e: print(f"fold {k}: {e.row()}", flush=True))
        for k, rep in enumerate(result.fold_reports):
            rep.to_csv(out / f"fold{k}_metrics.csv")
        summary = result.summary()
        for key, (m, s) in summary.items():
            print(f"{key}: {m:.4f} +/- {s:.4f}")
        write_run_record(out, "train", args.argv, configs, tcfg.seed, inputs)
        return 0

    n_val = args.val if args.val else max(1, len(cases) // 5)
    if n_val >= len(cases):
        print("error: validation split leaves no training cases", file=sys.stderr)
        return 2
    model = init(0)
    result = train(model, cases[:-n_val], cases[-n_val:], tcfg, on_epoch=lambda e: print(e.row(), flush=True))
    (out / "train_log.csv").write_text(result.log_csv())
    digest = save_checkpoint(out / "best.lgnc", model, extra={"best_epoch": result.best_epoch})
    report = evaluate(model, cases[-n_val:], ids[-n_val:], tcfg.threshold)
    report.to_csv(out / "val_metrics.csv")
    write_run_record(out, "train", args.argv, configs, tcfg.seed, inputs)
    print(f"best val DSC {result.best_dsc:.4f} at epoch {result.best_epoch}; checkpoint sha256={digest}")
    return 0


def _mask_dir(directory) -> dict[str, Volume]:
    return {p.stem: load_volume(p) for p in sorted(Path(directory).glob("*.lgv"))}


def cmd_eval(args, file_cfg) -> int:
    report = MetricsReport()
    if args.pred and args.gt:
        preds, gts = _mask_dir(args.pred), _mask_dir(args.gt)
        shared = sorted(set(preds) & set(gts))
        if not shared:
            print("error: prediction and ground-truth directories share no case files", file=sys.stderr)
            return 2
        for cid in shared:
            report.add(cid, case_metrics(preds[cid].data, gts[cid].data, gts[cid].spacing))
        inputs = [args.pred, args.gt]
    elif args.checkpoint and args.data:
        model, _ = load_checkpoint(args.checkpoint)
        records = read_manifest(Path(args.data) / "manifest.csv")
        for r in records:
            image, mask = load_case(r)
            report.add(r.case_id, case_metrics(predict_mask(model, image.data), mask.data, mask.spacing))
        inputs = [args.checkpoint, args.data]
    else:
        print("error: eval needs --pred and --gt, or --checkpoint and --data", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.to_csv(out)
    for key, (m, s) in report.aggregate().items():
        print(f"{key}: {m:.4f} +/- {s:.4f}")
    write_run_record(out.parent, "eval", args.argv, {}, 0, inputs)
    return 0


def cmd_analyze(args, file_cfg) -> int:
    mcfg = _model_config(args, file_cfg)
    shape = (args.input,) * 3 if args.input else mcfg.input_shape
    t = time.perf_counter()
    report = analyze(mcfg, shape)
    print(format_report(report))
    print(f"analysis took {time.perf_counter() - t:.2f}s")
    return 0


def cmd_agreement(args, file_cfg) -> int:
    sets = {}
    for spec in args.rater:
        if "=" not in spec:
            print(f"error: --rater expects NAME=DIR, got {spec!r}", file=sys.stderr)
            return 2
        name, directory = spec.split("=", 1)
        sets[name] = {cid: v.data for cid, v in _mask_dir(directory).items()}
    if len(sets) < 2:
        print("error: agreement needs at least two raters", file=sys.stderr)
        return 2
    try:
        table = agreement_matrix(sets)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(format_agreement(table, list(sets)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="legonet", description="LegoNet volumetric segmentation kit")
    parser.add_argument("--config", help="flat key = value file with model/train/ssl settings")
    sub = parser.add_subparsers(dest="command", required=True)

    def model_args(p, scale_default="desk"):
        p.add_argument("--version", type=str, help="V1, V2 or V3")
        p.add_argument("--scale", choices=("desk", "full"), default=scale_default)
        p.add_argument("--edge", type=int, default=32, help="desk-scale input edge")

    p = sub.add_parser("synth", help="generate a synthetic tube dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--edge", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    for name, func in (("pretrain", cmd_pretrain), ("train", cmd_train)):
        p = sub.add_parser(name, help=f"{name} a model on a dataset directory")
        p.add_argument("--data", required=True, help="dataset directory containing manifest.csv")
        p.add_argument("--out", required=True)
        model_args(p)
        p.add_argument("--max-epochs", dest="max_epochs", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", type=float)
        if name == "train":
            p.add_argument("--patience", type=int)
            p.add_argument("--folds", type=int)
            p.add_argument("--cv", action="store_true", help="k-fold cross-validation")
            p.add_argument("--val", type=int, help="number of trailing cases held out")
            p.add_argument("--init", help="pretrained checkpoint to start from")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="write a per-case metrics CSV")
    p.add_argument("--pred", help="directory of predicted .lgv masks")
    p.add_argument("--gt", help="directory of ground-truth .lgv masks")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--out", default="metrics.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="parameter and FLOP table against reference values")
    model_args(p, scale_default="full")
    p.add_argument("--input", type=int, help="cubic input edge")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("agreement", help="pairwise DSC table between rater directories")
    p.add_argument("--rater", action="append", default=[], help="NAME=DIR, repeatable")
    p.set_defaults(func=cmd_agreement)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    try:
        file_cfg = read_config_file(args.config) if args.config else {}
        return args.func(args, file_cfg)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
