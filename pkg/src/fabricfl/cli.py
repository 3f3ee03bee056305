"""Command-line entry point.

Subcommands: keygen, prepare, train, lake (list|erase|master), report.
Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
All randomness flows from --seed (or the config seed), fanned out into
per-stage sub-seeds, so every command is reproducible.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .encoding import FixedPointCodec
from .federated import ConfigError, SessionConfig, SessionError, run_session
from .lake import DataLake, MASTER_RULES
from .metrics import evaluate_scores
from .paillier import generate_keypair, load_public_key, save_keypair, save_public_key
from .seeding import derive_seed

LAKE_ENV_VAR = "FABRICFL_LAKE"


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fabricfl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate a Paillier keypair")
    p.add_argument("--bits", type=int, default=2048, help="modulus size in bits (even, >= 16)")
    p.add_argument("--out", required=True, help="directory for public.key and secret.key")
    p.set_defaults(handler=cmd_keygen)

    p = sub.add_parser("prepare", help="preprocess a PGM corpus into feature files")
    p.add_argument("--data", required=True, help="dataset root with tumor/ and notumor/ dirs")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--encrypt", action="store_true", help="cipher-map pixel intensities")
    p.add_argument("--key", help="public key file (required with --encrypt)")
    p.set_defaults(handler=cmd_prepare)

    p = sub.add_parser("train", help="run a federated session from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir", default="fabricfl-out")
    p.add_argument("--lake", help="override the lake path from the config")
    p.add_argument("--roc-csv", action="store_true", help="also write roc_points.csv")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("lake", help="inspect or administer a data lake")
    lake_sub = p.add_subparsers(dest="lake_command", required=True)

    q = lake_sub.add_parser("list", help="list catalogued entries")
    q.add_argument("--lake")
    q.add_argument("--family")
    q.add_argument("--client")
    q.add_argument("--round", type=int)
    q.set_defaults(handler=cmd_lake_list)

    q = lake_sub.add_parser("erase", help="erase every entry of a client")
    q.add_argument("--lake")
    q.add_argument("--client", required=True)
    q.set_defaults(handler=cmd_lake_erase)

    q = lake_sub.add_parser("master", help="select the master data set for a round")
    q.add_argument("--lake")
    q.add_argument("--round", type=int, required=True)
    q.add_argument("--rule", choices=MASTER_RULES, default="fedmax")
    q.set_defaults(handler=cmd_lake_master)

    p = sub.add_parser("report", help="evaluation report from a score,label CSV")
    p.add_argument("--scores", required=True, help="CSV with header score,label")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--roc-csv", action="store_true")
    p.set_defaults(handler=cmd_report)

    return parser


def cmd_keygen(args) -> int:
    if args.bits < 16 or args.bits % 2:
        raise UsageError(f"--bits must be an even integer >= 16, got {args.bits}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    keypair = generate_keypair(args.bits)
    save_public_key(keypair.public, out / "public.key")
    save_keypair(keypair, out / "secret.key")
    print(f"key_id: {keypair.public.key_id}")
    print(f"wrote {out / 'public.key'} and {out / 'secret.key'}")
    return 0


def cmd_prepare(args) -> int:
    if args.encrypt and not args.key:
        raise UsageError("--encrypt requires --key")
    paths = dataio.list_image_paths(args.data)
    if not paths:
        print(f"no PGM files found under {args.data}", file=sys.stderr)
        return 1
    session_seed = derive_seed(args.seed, "cipher-features")

    resized, manifest = [], []
    failures = 0
    for path in paths:
        try:
            img = dataio.load_pgm(path)
        except (dataio.PGMFormatError, ValueError, OSError) as exc:
            print(f"skipping {path}: {exc}", file=sys.stderr)
            failures += 1
            continue
        height, width = img.pixels.shape
        resized.append(dataio.resize_128(img))
        manifest.append({"path": str(path), "label": img.label, "width": width, "height": height})

    if args.encrypt:
        key = load_public_key(args.key)
        codec = FixedPointCodec.for_key(key)
        features, labels = dataio.cipher_map_images(resized, key, codec, session_seed)
    else:
        vectors = [dataio.normalize_flatten(img) for img in resized]
        features = np.array([fv.values for fv in vectors])
        labels = np.array([fv.label for fv in vectors])

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataio.save_feature_dir(out, features, labels)
    dataio.write_manifest(out / "manifest.csv", manifest)
    print(f"prepared {len(features)} samples into {out} ({failures} failures)")
    return 1 if failures else 0


def _resolve_lake_path(flag_value, config_value=None):
    return flag_value or config_value or os.environ.get(LAKE_ENV_VAR)


def cmd_train(args) -> int:
    config = SessionConfig.from_json_file(args.config)
    lake_path = _resolve_lake_path(args.lake, config.lake_path)
    lake = DataLake(lake_path) if lake_path else None
    result = run_session(config, lake=lake)

    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rounds_doc = [report.to_dict() for report in result.round_reports]
    (out / "round_reports.json").write_text(json.dumps(rounds_doc, sort_keys=True, indent=2) + "\n")

    X, y = dataio.load_feature_dir(config.dataset_path)
    eval_idx = result.test_indices if len(result.test_indices) else np.arange(len(y))
    scores = np.atleast_1d(result.model.forward(np.asarray(X, dtype=np.float64)[eval_idx]))
    report = evaluate_scores(scores, np.asarray(y)[eval_idx])
    (out / "final_report.json").write_text(report.to_json())
    if args.roc_csv:
        report.write_roc_csv(out / "roc_points.csv")

    print(f"rounds: {config.rounds}  aggregator: {config.aggregator}")
    print(f"final accuracy: {report.accuracy:.4f}  f1_macro: {report.f1_macro:.4f}")
    print(f"reports written to {out}")
    if lake is not None:
        print(f"lake entries: {len(lake.query())} under {lake.root}")
    return 0


def _open_lake(args) -> DataLake:
    path = _resolve_lake_path(args.lake)
    if not path:
        raise UsageError(f"no lake path: pass --lake or set {LAKE_ENV_VAR}")
    return DataLake(path)


_LIST_COLUMNS = ("entry_id", "model_family", "client_id", "round", "encrypted", "accuracy", "loss")


def cmd_lake_list(args) -> int:
    lake = _open_lake(args)
    entries = lake.query(model_family=args.family, client_id=args.client, round=args.round)
    print("\t".join(_LIST_COLUMNS))
    for e in entries:
        print(f"{e.entry_id}\t{e.model_family}\t{e.client_id}\t{e.round}"
              f"\t{e.encrypted}\t{e.accuracy:.4f}\t{e.loss:.4f}")
    return 0


def cmd_lake_erase(args) -> int:
    lake = _open_lake(args)
    report = lake.erase_client(args.client)
    print(f"erased {report.count} entries for {args.client}")
    for entry_id, reason in report.failed:
        print(f"pending removal: {entry_id}: {reason}", file=sys.stderr)
    return 0 if not report.failed else 1


def cmd_lake_master(args) -> int:
    lake = _open_lake(args)
    master = lake.select_master(args.round, args.rule)
    print(f"round {master.round} rule {master.selection_rule}")
    for entry_id in master.entry_ids:
        print(entry_id)
    return 0


def cmd_report(args) -> int:
    scores, labels = [], []
    with open(args.scores, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            scores.append(float(row["score"]))
            labels.append(int(row["label"]))
    report = evaluate_scores(np.array(scores), np.array(labels))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    if args.roc_csv:
        report.write_roc_csv(out / "roc_points.csv")
    print(f"accuracy: {report.accuracy:.4f}  f1_macro: {report.f1_macro:.4f}  auc: {report.auc:.4f}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SessionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (KeyboardInterrupt, SystemExit):
        raise
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
