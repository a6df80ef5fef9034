"""Command-line entry points: generate | train | eval | ablate | bench.

Configuration comes from an optional key = value file (``--config``);
any ``--dotted.key value`` (or ``--dotted.key=value``) flag overrides it.
Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Log verbosity is read from ``LGUR_LOG_LEVEL`` (default WARNING).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_model, save_model
from .config import ConfigError, RunConfig, parse_config_text
from .data import DataConfigError, generate_dataset, load_dataset, save_dataset
from .objectives import SamplingError
from .retrieval import build_index, evaluate, save_index
from .train import TrainingError, run_ablation, train, win_count

METRICS_VERSION = 1
ABLATION_VERSION = 1

log = logging.getLogger("lgur")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config assembly

def _parse_overrides(extra: list[str]) -> dict:
    out = {}
    i = 0
    while i < len(extra):
        arg = extra[i]
        if not arg.startswith("--"):
            raise UsageError(f"unexpected argument {arg!r}")
        key = arg[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"{key}: missing value")
            value = extra[i + 1]
            i += 1
        out[key.replace("-", "_") if "." not in key else key] = value
        i += 1
    return out


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if path:
        if not Path(path).is_file():
            raise UsageError(f"config file {path} does not exist")
        cfg = parse_config_text(Path(path).read_text())
    if overrides:
        cfg = cfg.replace(**overrides)
    return cfg.validate()


# ---------------------------------------------------------------------------
# structured outputs

class MetricsWriter:
    """Line-delimited JSON; the first line declares the format version."""

    def __init__(self, path=None, stream=None):
        self.fh = open(path, "w") if path else None
        self.stream = stream
        self.write({"format": "lgur-metrics", "format_version": METRICS_VERSION})

    def write(self, record: dict):
        line = json.dumps(record, sort_keys=True)
        if self.fh:
            self.fh.write(line + "\n")
            self.fh.flush()
        if self.stream:
            print(line, file=self.stream, flush=True)

    def close(self):
        if self.fh:
            self.fh.close()


def read_metrics(path) -> list[dict]:
    with open(path) as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("format") != "lgur-metrics":
        raise ValueError(f"{path}: not a metrics log")
    if lines[0].get("format_version") != METRICS_VERSION:
        raise ValueError(f"{path}: unsupported metrics format version {lines[0].get('format_version')}")
    return lines[1:]


_ABLATION_FIELDS = ["format_version", "config", "seed", "rank1", "rank5", "rank10", "best_epoch"]


def write_ablation_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=_ABLATION_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({"format_version": ABLATION_VERSION, **r})


def read_ablation_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        if int(r["format_version"]) != ABLATION_VERSION:
            raise ValueError(f"{path}: unsupported ablation format version {r['format_version']}")
    return [{"config": r["config"], "seed": int(r["seed"]), "rank1": float(r["rank1"]),
             "rank5": float(r["rank5"]), "rank10": float(r["rank10"]),
             "best_epoch": int(r["best_epoch"])} for r in rows]


# ---------------------------------------------------------------------------
# commands (also usable as library calls)

def cmd_generate(cfg: RunConfig, out_path):
    ds = generate_dataset(cfg.data)
    save_dataset(ds, out_path)
    return ds


def _dataset_for(cfg: RunConfig, data_path):
    if data_path:
        ds = load_dataset(data_path)
        if ds.config != cfg.data:
            log.info("using data settings stored in %s", data_path)
            cfg.data = ds.config
        return ds
    return generate_dataset(cfg.data)


def cmd_train(cfg: RunConfig, data_path, out_checkpoint, metrics_path=None, stream=None):
    """Seeded training; saves the best-by-Rank-1 checkpoint."""
    ds = _dataset_for(cfg, data_path)
    writer = MetricsWriter(metrics_path, stream)
    try:
        result = train(cfg, ds, on_record=writer.write)
        save_model(result.model, out_checkpoint)
        writer.write({"best": result.best_metrics})
    finally:
        writer.close()
    return result


def cmd_eval(checkpoint, data_path=None, split="test", index_out=None):
    model = load_model(checkpoint)
    ds = _dataset_for(model.cfg, data_path)
    if split == "test":
        ds = ds.split()[1]
    elif split == "train":
        ds = ds.split()[0]
    metrics = evaluate(model, ds)
    if index_out:
        save_index(build_index(model, ds.patches, ds.identities, ds.pair_ids), index_out)
    return metrics


def cmd_ablate(cfg: RunConfig, data_path, seeds, names=None, csv_path=None, stream=None):
    ds = _dataset_for(cfg, data_path)
    writer = MetricsWriter(None, stream)
    rows = run_ablation(cfg, ds, seeds, names, on_row=writer.write)
    if csv_path:
        write_ablation_csv(rows, csv_path)
    for better, worse in (("6_lgur", "0_baseline"), ("3_pgu_D", "D_unshared")):
        wins, total = win_count(rows, better, worse)
        if total:
            writer.write({"comparison": f"{better} > {worse}", "wins": wins, "seeds": total})
    return rows


def cmd_bench(cfg: RunConfig, M_list, N_list, repeats=3, stream=None):
    from .bench import run_bench
    from .model import LGUR

    need = max(max(M_list), max(N_list))
    data = cfg.data
    if data.n_ids * data.pairs_per_id < need:
        data = type(data)(**{**data.__dict__, "n_ids": -(-need // data.pairs_per_id)})
    ds = generate_dataset(data)
    writer = MetricsWriter(None, stream)
    writer.write({"note": "wall times are machine-specific; pass counts are exact"})
    return run_bench(LGUR(cfg), ds, M_list, N_list, repeats, on_row=lambda r: writer.write(r.as_dict()))


# ---------------------------------------------------------------------------
# argument parsing

def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lgur", description=__doc__.splitlines()[0], allow_abbrev=False,
                                epilog="Any --dotted.key VALUE flag overrides the config file.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", allow_abbrev=False, help="write a synthetic dataset file")
    g.add_argument("--config")
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", allow_abbrev=False, help="train and save the best checkpoint")
    t.add_argument("--config")
    t.add_argument("--data", help="dataset file (generated from the config if omitted)")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--metrics", help="JSON-lines metrics log path")

    e = sub.add_parser("eval", allow_abbrev=False, help="Rank-k of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data")
    e.add_argument("--split", choices=("test", "train", "all"), default="test")
    e.add_argument("--index-out", help="also persist the gallery index")

    a = sub.add_parser("ablate", allow_abbrev=False, help="train every ablation configuration per seed")
    a.add_argument("--config")
    a.add_argument("--data")
    a.add_argument("--seeds", type=_int_list, default=[0, 1, 2, 3, 4])
    a.add_argument("--configs", type=lambda s: s.split(","), default=None,
                   help="comma-separated preset names (default: all)")
    a.add_argument("--csv", help="write the result table as CSV")

    b = sub.add_parser("bench", allow_abbrev=False, help="attention-free vs pairwise cross-attention inference cost")
    b.add_argument("--config")
    b.add_argument("--M", type=_int_list, default=[10])
    b.add_argument("--N", type=_int_list, default=[50, 100, 200, 400])
    b.add_argument("--repeats", type=int, default=3)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("LGUR_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:  # argparse usage errors exit with 2
        return 0 if exc.code == 0 else 1
    out = sys.stdout
    try:
        overrides = _parse_overrides(extra)
        if args.command == "eval":
            if overrides:
                raise UsageError("eval takes its configuration from the checkpoint")
            print(json.dumps(cmd_eval(args.checkpoint, args.data, args.split, args.index_out),
                             sort_keys=True), file=out)
            return 0
        cfg = load_config(args.config, overrides)
        if args.command == "generate":
            ds = cmd_generate(cfg, args.out)
            print(json.dumps({"pairs": len(ds), "path": args.out}), file=out)
        elif args.command == "train":
            cmd_train(cfg, args.data, args.out, args.metrics, stream=out)
        elif args.command == "ablate":
            cmd_ablate(cfg, args.data, args.seeds, args.configs, args.csv, stream=out)
        elif args.command == "bench":
            cmd_bench(cfg, args.M, args.N, args.repeats, stream=out)
        return 0
    except (UsageError, ConfigError, DataConfigError, KeyError) as exc:
        print(f"lgur {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (TrainingError, SamplingError, CheckpointError, ValueError, OSError) as exc:
        print(f"lgur {args.command}: failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
