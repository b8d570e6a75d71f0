"""Command line front end: ``gff4d <subcommand> [--config PATH] [--set key=value] ...``.

Every run writes ``result.csv`` and ``result.json`` (plus any binary
artifacts) into ``<out>/<subcommand>-<config hash>/``. Files are first written
to a scratch directory that replaces the target only on success, so a failed
run leaves nothing behind. The exit status is 0 on success and the error
category code otherwise.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import shutil
import sys
from pathlib import Path

from . import __version__
from .config import ExperimentConfig, parse_config
from .errors import ConfigError, GFFError
from .experiments import DRIVERS, RELEVANT

log = logging.getLogger("gff4d")

JSON_KEYS = ("tool", "version", "subcommand", "config_hash", "seed", "config", "columns",
             "summary")


def _cell(v):
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _clean(obj):
    # JSON has no NaN or infinity
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item"):
        return _clean(obj.item())
    return obj


def render_csv(table, meta):
    buf = io.StringIO()
    for key in ("tool", "version", "subcommand", "config_hash", "seed"):
        buf.write(f"# {key}: {meta[key]}\n")
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def render_json(table, meta, cfg):
    config = cfg.to_dict()
    config.pop("out")
    doc = dict(meta)
    doc["config"] = config
    doc["columns"] = list(table.columns)
    doc["summary"] = table.summary
    doc = {k: doc[k] for k in JSON_KEYS}
    return json.dumps(_clean(doc), indent=2, ensure_ascii=False) + "\n"


def run(subcommand, cfg, threads=1):
    """Run one subcommand and write its files; returns the output directory."""
    if subcommand not in DRIVERS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    defaults = ExperimentConfig()
    for key, value in cfg.to_dict().items():
        if key not in RELEVANT[subcommand] and key != "out" and value != defaults.to_dict()[key]:
            log.warning("key %r is not used by %s", key, subcommand)
    digest = cfg.digest()
    target = Path(cfg.out) / f"{subcommand}-{digest[:12]}"
    scratch = target.with_name(target.name + ".partial")
    shutil.rmtree(scratch, ignore_errors=True)
    try:
        table = DRIVERS[subcommand](cfg, threads=threads)
        meta = {"tool": "gff4d", "version": __version__, "subcommand": subcommand,
                "config_hash": digest, "seed": cfg.seed}
        scratch.mkdir(parents=True)
        (scratch / "result.csv").write_bytes(render_csv(table, meta).encode("utf-8"))
        (scratch / "result.json").write_bytes(render_json(table, meta, cfg).encode("utf-8"))
        for name, blob in table.artifacts.items():
            (scratch / name).write_bytes(blob)
        if target.exists():
            shutil.rmtree(target)
        scratch.rename(target)
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
    return target


def build_parser():
    p = argparse.ArgumentParser(prog="gff4d", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=sorted(DRIVERS))
    p.add_argument("--config", type=Path, help="key = value configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one key (repeatable)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output root directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads for replica loops")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        extra = {}
        if args.seed is not None:
            extra["seed"] = args.seed
        if args.out is not None:
            extra["out"] = args.out
        cfg = parse_config(args.config, args.overrides, **extra)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        target = run(args.subcommand, cfg, args.threads)
    except GFFError as exc:
        print(f"gff4d: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"gff4d: {exc}", file=sys.stderr)
        return 3
    print(target)
    return 0


if __name__ == "__main__":
    sys.exit(main())
