"""Command-line entry point: ``orbfp simulate | train | eval | decode | inspect``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from . import dataset as ds
from .config import ConfigError, load_model_config, load_scenario
from .errors import DataError, NumericalError, ParameterError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{what} not found: {p}")
    return p


def _out_path(args, default: str) -> Path:
    return Path(args.out) if args.out else Path(default)


# --- simulate --------------------------------------------------------------------


def cmd_simulate(args) -> int:
    from .emitter import ScenarioConfig, generate_scenario

    overrides = {} if args.seed is None else {"seed": args.seed}
    if args.config:
        cfg = load_scenario(args.config, overrides)
    else:
        cfg = ScenarioConfig(**overrides)
    out = _out_path(args, "scenario.orbd")
    snr = []

    def stream():
        for rec in generate_scenario(cfg):
            snr.append(rec.snr_db)
            yield rec

    count = ds.write(stream(), out)
    n_spoof = round(cfg.spoof_fraction * count)
    _write_manifest(
        out.with_name(out.name + ".json"),
        {"command": "simulate", "seed": cfg.seed, "config": cfg.to_dict(), "records": count, "sha256": _sha256(out)},
    )
    print(f"wrote {count} records to {out}")
    print(f"mean measured SNR {float(np.mean(snr)) if snr else float('nan'):.2f} dB, spoofed {n_spoof}")
    return EXIT_OK


# --- train -----------------------------------------------------------------------


def _split_records(records, seed: int):
    real = [r for r in records if not r.spoofed]
    sp = ds.split([r.sat_id for r in real], seed=seed)
    return real, sp


def cmd_train(args) -> int:
    from .nn.checkpoint import load as load_ckpt
    from .nn.model import EmbeddingModel, ModelConfig
    from .nn.trainer import TrainData, Trainer

    data_path = _require_file(args.data, "dataset")
    overrides = {} if args.seed is None else {"seed": args.seed}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    mcfg = load_model_config(args.config, overrides) if args.config else ModelConfig(**overrides)
    records = ds.read(data_path)
    real, sp = _split_records(records, mcfg.seed)
    if len({r.sat_id for r in real}) < 2 or sp.train.size < 2:
        raise DataError("dataset too small for a valid triplet batch (needs two transmitters)")
    train = TrainData.from_records([real[i] for i in sp.train])
    val = TrainData.from_records([real[i] for i in sp.validation])
    out = _out_path(args, "model.orbc")
    last = out.with_name(out.name + ".last")
    trainer = Trainer(EmbeddingModel(mcfg), train, val, log=lambda m: print(m, flush=True))
    if args.resume and last.is_file():
        trainer.restore(load_ckpt(last))
        print(f"resumed with {trainer.epoch} epoch(s) completed")
    meta = {"seed": mcfg.seed, "dataset_sha256": _sha256(data_path), "split_seed": mcfg.seed}
    result = trainer.fit(mcfg.epochs, out, last, meta)
    history = out.with_name(out.stem + ".history.csv")
    with open(history, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "val_auc"])
        for h in result.history:
            w.writerow([h.epoch, f"{h.loss:.6f}", f"{h.val_auc:.6f}"])
    _write_manifest(
        out.with_name(out.name + ".json"),
        {"command": "train", "seed": mcfg.seed, "config": mcfg.to_dict(), "best_val_auc": result.best_val_auc,
         "best_epoch": result.best_epoch, "checkpoint_sha256": _sha256(out)},
    )
    print(f"best validation AUC {result.best_val_auc:.4f} at epoch {result.best_epoch}; checkpoint {out}")
    return EXIT_OK


# --- eval ------------------------------------------------------------------------


def cmd_eval(args) -> int:
    from .evaluation.report import run_report
    from .nn.checkpoint import CheckpointError
    from .nn.checkpoint import load as load_ckpt

    data_path = _require_file(args.data, "dataset")
    ck_path = _require_file(args.checkpoint, "checkpoint")
    try:
        ck = load_ckpt(ck_path)
        model = ck.build_model()
    except (CheckpointError, ParameterError) as exc:
        raise ConfigError(f"checkpoint/config mismatch: {exc}") from exc
    records = ds.read(data_path)
    if records and records[0].samples.shape[0] != ck.config.input_len:
        raise ConfigError(
            f"checkpoint expects {ck.config.input_len} samples per packet, dataset has {records[0].samples.shape[0]}"
        )
    seed = ck.meta.get("seed", 0) if args.seed is None else args.seed
    if args.split != "all":
        real, sp = _split_records(records, ck.meta.get("split_seed", ck.config.seed))
        chosen = [real[i] for i in getattr(sp, args.split)]
        records = chosen + [r for r in records if r.spoofed]
    out = _out_path(args, "report")
    snapshot = {"checkpoint": str(ck_path), "checkpoint_sha256": _sha256(ck_path), "dataset": str(data_path),
                "dataset_sha256": _sha256(data_path), "split": args.split, "model": ck.config.to_dict()}
    manifest = run_report(records, model, out, seed=seed, snapshot=snapshot, figures=not args.no_figures)
    for name, s in manifest["summary"].items():
        print(f"{name:14s} AUC {s['auc']:.4f}  EER {s['eer']:.4f}")
    print(f"report written to {out}")
    return EXIT_OK


# --- decode ----------------------------------------------------------------------


def cmd_decode(args) -> int:
    from .receiver import decode_per, decode_records

    raw = _require_file(args.raw, "raw IQ file")
    sidecar = _require_file(args.sidecar, "sidecar")
    records = ds.import_raw(raw, sidecar)
    if not records:
        raise DataError("no packets in the raw file")
    results = decode_records(records, modulus=args.modulus)
    out_rows = []
    for r in results:
        p = r.outcome
        row = {"index": r.index, "status": r.status, "sat_id": "", "dcn": "", "mfc": "", "offset_hz": f"{r.offset_hz:.2f}"}
        if r.ok:
            row.update(sat_id=p.sat_id, dcn=p.dcn, mfc=p.mfc)
        out_rows.append(row)
        print(f"{row['index']:6d} {row['status']:9s} sat_id={row['sat_id']!s:>3} dcn={row['dcn']!s:>3} "
              f"mfc={row['mfc']!s:>3} offset={row['offset_hz']} Hz")
    per = decode_per(results)
    print(f"PER {per:.4f} ({sum(not r.ok for r in results)}/{len(results)} failed)")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(out_rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(out_rows)
    return EXIT_OK


# --- inspect ---------------------------------------------------------------------


def cmd_inspect(args) -> int:
    path = _require_file(args.data, "dataset")
    table = ds.read_table(path)
    n = table.shape[0]
    print(f"file            {path}")
    print(f"records         {n}")
    print(f"samples/record  {table.dtype['samples'].shape[0]}")
    if n == 0:
        return EXIT_OK
    counts = Counter(int(s) for s in table["sat_id"])
    print(f"satellites      {len(counts)}: " + ", ".join(f"{k}:{v}" for k, v in sorted(counts.items())))
    spoofed = int(np.count_nonzero(table["flags"] & ds.FLAG_SPOOFED))
    print(f"spoofed         {spoofed}")
    snr = table["snr_db"].astype(np.float64)
    print(f"snr_db          mean {snr.mean():.2f}  min {snr.min():.2f}  max {snr.max():.2f}")
    combos = Counter(zip(table["site_id"].tolist(), table["sdr_id"].tolist()))
    print("site/sdr        " + ", ".join(f"{a}/{b}:{c}" for (a, b), c in sorted(combos.items())))
    ts = table["timestamp_ns"]
    span_days = (int(ts.max()) - int(ts.min())) / 86_400e9
    print(f"time span       {span_days:.1f} days")
    return EXIT_OK


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def global_flags(default):
        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--seed", type=int, default=default, help="override the config seed")
        g.add_argument("--config", default=default, help="YAML config file")
        g.add_argument("--out", default=default, help="output file or directory")
        g.add_argument("--threads", type=int, default=default, help="BLAS thread limit")
        return g

    # flags may come before or after the subcommand; the subcommand copy must
    # not overwrite a value given before it, hence SUPPRESS there
    common = global_flags(argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="orbfp", description=__doc__.splitlines()[0], parents=[global_flags(None)])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic dataset")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", parents=[common], help="train the embedding network")
    p.add_argument("data")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--resume", action="store_true", help="continue from OUT.last if present")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="write evaluation reports")
    p.add_argument("data")
    p.add_argument("checkpoint")
    p.add_argument("--split", choices=("all", "train", "validation", "test"), default="all")
    p.add_argument("--no-figures", action="store_true", help="skip the PNG figures")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decode", parents=[common], help="decode raw IQ sync packets")
    p.add_argument("raw")
    p.add_argument("sidecar")
    p.add_argument("--modulus", type=int, choices=(255, 256), default=256)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("inspect", parents=[common], help="print dataset statistics")
    p.add_argument("data")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.threads is not None:
            from threadpoolctl import threadpool_limits

            threadpool_limits(args.threads)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
