"""Command-line entry point: ``vortexlab <command> --config <path> [--seed N] [--out DIR]``.

Exit codes: 0 success, 1 configuration or I/O error, 2 numerical failure,
3 statistical gate failed.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .config import COMMANDS, ConfigError, RunConfig, load_config
from .dynamics import NumericalFailure
from .experiments import ExperimentResult, Table, run_experiment

log = logging.getLogger("vortexlab")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_GATE = 0, 1, 2, 3


def _fmt(x):
    if isinstance(x, str):
        return x
    if isinstance(x, (bool,)):
        return str(int(x))
    if isinstance(x, int):
        return str(x)
    return format(float(x), ".17g")


def table_to_csv(tab: Table) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(tab.header)
    for row in tab.rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue().encode("utf-8")


def write_outputs(result: ExperimentResult, out_dir, cfg: RunConfig, duration_s: float) -> dict:
    """Write one CSV per table plus ``manifest.json``; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    try:
        outputs = []
        for name in sorted(result.tables):
            data = table_to_csv(result.tables[name])
            path = out / f"{name}.csv"
            path.write_bytes(data)
            written.append(path)
            outputs.append({"file": path.name, "sha256": hashlib.sha256(data).hexdigest()})
        manifest = {
            "command": cfg.command,
            "config": {k: cfg.values[k] for k in sorted(cfg.values)},
            "seed": cfg.seed,
            "version": __version__,
            "duration_s": round(duration_s, 3),
            "outputs": outputs,
            "gate_passed": result.passed,
        }
        path = out / "manifest.json"
        path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    except OSError:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    return manifest


def build_parser():
    p = argparse.ArgumentParser(prog="vortexlab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="key = value config file")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    p.add_argument("--out", default=None, help="output directory (overrides out_dir)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.command, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out or cfg["out_dir"])
    t0 = time.perf_counter()
    try:
        result = run_experiment(cfg)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        write_outputs(result, out_dir, cfg, time.perf_counter() - t0)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    log.info("%s finished; gate %s", cfg.command, result.passed)
    if result.passed is False:
        print(f"{cfg.command}: statistical gate failed", file=sys.stderr)
        return EXIT_GATE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
