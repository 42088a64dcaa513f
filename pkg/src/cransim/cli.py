"""``cran-sim`` command line.

The log level is read from ``CRANSIM_LOG_LEVEL`` (default WARNING). The exit
status is 0 only when every metric of the run could be computed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .experiments import EXPERIMENTS, run_experiment
from .pipeline import MODES, run_scenario
from .scenario import ConfigError, load_scenario
from .transport import TransportError

log = logging.getLogger("cransim")

EXIT_OK = 0
EXIT_INCOMPLETE = 1
EXIT_USAGE = 2


def parse_set(items) -> dict:
    """``key=value`` pairs; values are parsed as JSON when possible."""
    out = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise argparse.ArgumentTypeError(f"--set expects key=value, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cran-sim", description="Cloud-RAN LPWAN localization simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario end to end")
    run.add_argument("--config", required=True, help="scenario JSON (bundled names also accepted)")
    run.add_argument("--mode", choices=[m for m in MODES], default="inproc")
    run.add_argument("--out", default="out", help="output directory")
    run.add_argument("--time-scale", type=float, default=0.0,
                     help="sockets mode: real seconds slept per virtual second between telegrams")
    run.add_argument("--port-base", type=int, default=None,
                     help="sockets mode: first station port (default: ephemeral)")

    exp = sub.add_parser("experiment", help="run a named experiment")
    exp.add_argument("name", help=f"one of: {', '.join(EXPERIMENTS)}")
    exp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override a scenario field (dotted path) or an experiment.* parameter")
    exp.add_argument("--config", default=None, help="base scenario (default: bundled ilmenau.json)")
    exp.add_argument("--out", default=None, help="output directory (default: out/<name>)")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CRANSIM_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_scenario(args.config)
            result = run_scenario(cfg, args.mode, args.out, time_scale=args.time_scale,
                                  port_base=args.port_base)
        else:
            if args.name not in EXPERIMENTS:
                print(f"cran-sim: unknown experiment {args.name!r}; choose from {', '.join(EXPERIMENTS)}",
                      file=sys.stderr)
                return EXIT_USAGE
            cfg = load_scenario(args.config) if args.config else None
            result = run_experiment(args.name, parse_set(args.set), config=cfg, out_dir=args.out)
    except (ConfigError, argparse.ArgumentTypeError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"cran-sim: configuration error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except TransportError as exc:
        print(f"cran-sim: transport error: {exc}", file=sys.stderr)
        return EXIT_INCOMPLETE
    print(json.dumps({"experiment": result.name, "config_hash": result.config_hash,
                      "out_dir": str(result.out_dir), "complete": result.ok}))
    return EXIT_OK if result.ok else EXIT_INCOMPLETE


if __name__ == "__main__":
    sys.exit(main())
