"""Command line driver.

    wavemaps <experiment> [--config FILE] [--set key=value ...]
    wavemaps sweep --config FILE --param KEY --values v1,v2,...

Exit status: 0 on success, 1 on an invariant violation or failed run,
2 on a configuration error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from .config import EXPERIMENTS, ExperimentConfig, load_config, parse_assignments, split_assignment, validate
from .errors import ConfigError, WavemapsError
from .experiments import _fmt, run

log = logging.getLogger("wavemaps")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def build_config(experiment, config_path, sets) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if config_path:
        cfg = load_config(config_path, cfg)
    if experiment is not None:
        cfg = replace(cfg, experiment=experiment)
    pairs = [split_assignment(s, "--set: ") for s in sets or []]
    cfg = parse_assignments(pairs, cfg, "--set")
    return validate(cfg)


def sweep(base: ExperimentConfig, param: str, values_text: str):
    """Run ``base`` once per value of ``param``; returns (table path, rows, failed values).

    Run i writes into ``<output_dir>/<param>_<i>`` and uses seed base + i
    unless the seed itself is swept.  The aggregated table goes to
    ``<output_dir>/sweep_<param>.csv``.
    """
    values = [v.strip() for v in values_text.split(",") if v.strip()]
    if not values:
        raise ConfigError("field 'values': empty values list")
    if param in ("experiment", "output_dir"):
        raise ConfigError(f"field 'param': cannot sweep '{param}'")
    configs = []
    for i, v in enumerate(values):
        cfg = parse_assignments([(param, v)], base, "--values")
        cfg = replace(cfg, output_dir=os.path.join(base.output_dir, f"{param}_{i:03d}"))
        if param != "seed":
            cfg = replace(cfg, seed=base.seed + i)
        configs.append(validate(cfg))
    rows, failed, keys = [], [], []
    for v, cfg in zip(values, configs):
        try:
            res = run(cfg)
            summary, status = res.summary, "ok"
        except WavemapsError as exc:
            log.error("run %s=%s failed: %s", param, v, exc)
            summary, status = {}, "failed"
            failed.append(v)
        for k in summary:
            if k not in keys and k != param:
                keys.append(k)
        rows.append((v, status, summary))
    os.makedirs(base.output_dir, exist_ok=True)
    path = os.path.join(base.output_dir, f"sweep_{param}.csv")
    with open(path, "w", encoding="ascii") as fh:
        fh.write(base.header())
        fh.write(",".join([param, "status"] + keys) + "\n")
        for v, status, summary in rows:
            cells = [v, status] + [_fmt(summary[k]) if k in summary else "" for k in keys]
            fh.write(",".join(cells) + "\n")
    return path, rows, failed


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wavemaps", description="Wave maps control and stabilization experiments.")
    p.add_argument("command", choices=EXPERIMENTS + ("sweep",), help="experiment name or 'sweep'")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field")
    p.add_argument("--param", help="config field to sweep")
    p.add_argument("--values", help="comma separated values for --param")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "sweep":
            if not args.config:
                raise ConfigError("sweep needs --config")
            if not args.param or args.values is None:
                raise ConfigError("sweep needs --param and --values")
            base = build_config(None, args.config, args.set)
            path, rows, failed = sweep(base, args.param, args.values)
            print(path)
            if failed:
                print(f"failed values for {args.param}: {', '.join(failed)}", file=sys.stderr)
                return EXIT_FAILED
            return EXIT_OK
        cfg = build_config(args.command, args.config, args.set)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        res = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except WavemapsError as exc:
        print(f"{cfg.experiment} failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    for k, v in res.summary.items():
        print(f"{k}={_fmt(v)}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
