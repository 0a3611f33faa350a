"""Command-line entry point.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import runner, stats
from .config import PROFILES, SimulationConfig
from .errors import ConfigurationError

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _parse_set(items):
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def build_config(args):
    """Config from profile, optional file, ``--set`` overrides and ``--seed``."""
    if args.config:
        base = SimulationConfig.load(args.config)
        if args.profile:
            base = base.replace(**PROFILES[args.profile])
    else:
        base = SimulationConfig.for_profile(args.profile or "desk")
    overrides = _parse_set(args.set)
    if args.seed is not None:
        overrides["master_seed"] = str(args.seed)
    if overrides:
        # re-parse through the file format so --set values get the same typing
        base = SimulationConfig.from_text(_merge(base.to_text(), overrides))
    return base


def _merge(text, overrides):
    lines = []
    seen = set()
    for line in text.splitlines():
        key = line.split("=", 1)[0].strip()
        if "=" in line and key in overrides:
            lines.append(f"{key} = {overrides[key]}")
            seen.add(key)
        else:
            lines.append(line)
    unknown = set(overrides) - seen
    if unknown:
        raise ConfigurationError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    return "\n".join(lines) + "\n"


def _add_common(p):
    p.add_argument("--config", help="config file (flat key = value under [simulation])")
    p.add_argument("--profile", choices=sorted(PROFILES), help="resolution/size profile (default desk)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--out", help=f"output directory (default under ${runner.OUTPUT_ROOT_ENV} or ./runs)")


def make_parser():
    parser = argparse.ArgumentParser(prog="nelsontunnel",
                                     description="Tunneling-time distributions from Nelson sample paths.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="single simulation")
    _add_common(p)

    p = sub.add_parser("sweep", help="sweep barrier width, packet width or epsilon")
    p.add_argument("kind", choices=runner.SWEEP_KINDS)
    p.add_argument("values", nargs="*", type=float,
                   help="sweep values (epsilon defaults to the standard grid)")
    p.add_argument("--jobs", type=int, default=1, help="concurrent runs (width/packet sweeps)")
    _add_common(p)

    p = sub.add_parser("fit", help="refit a persisted tau list")
    p.add_argument("source", help="tau.txt or a run directory containing it")
    p.add_argument("--method", choices=("least_squares", "mle"), default="least_squares")
    p.add_argument("--bins", type=int, default=0)
    p.add_argument("--weighted", action="store_true")
    p.add_argument("--out", help="write the fit report here as JSON")

    p = sub.add_parser("plotdata", help="emit a figure data file from a run or sweep directory")
    p.add_argument("artifact")
    p.add_argument("figure", help=", ".join(runner.FIGURES))
    p.add_argument("--out")
    return parser


def _cmd_run(args):
    cfg = build_config(args)
    summary = runner.run_single(cfg, args.out)
    fit = summary.fit_least_squares
    print(f"transmitted {summary.n_transmitted} paths, weighted fraction "
          f"{summary.fractions['transmitted']:.4g} (PDE {summary.transmission_pde:.4g})")
    print(f"<tau> = {summary.mean:.4g}  dtau = {summary.deviation:.4g}  tau_WKB = {summary.tau_wkb:.4g}")
    if fit:
        print(f"least-squares Gamma fit: alpha = {fit['alpha']:.4g}  beta = {fit['beta']:.4g}")
    return EXIT_OK


def _cmd_sweep(args):
    cfg = build_config(args)
    values = args.values
    if not values:
        if args.kind != "epsilon":
            raise ConfigurationError(f"{args.kind} sweep needs values")
        values = runner.default_epsilons()
    rows = runner.run_sweep(args.kind, cfg, values, args.out, jobs=args.jobs)
    failed = [r for r in rows if r.error]
    for r in rows:
        status = f"FAILED {r.error}" if r.error else f"<tau>={r.mean:.4g} dtau={r.deviation:.4g}"
        print(f"{args.kind}={r.value:g}: {status}")
    return EXIT_RUNTIME if len(failed) == len(rows) else EXIT_OK


def _cmd_fit(args):
    src = Path(args.source)
    if src.is_dir():
        src = src / "tau.txt"
    if not src.exists():
        raise ConfigurationError(f"no tau list at {src}")
    times = np.loadtxt(src, ndmin=1)
    fit = stats.fit_gamma(times, args.method, args.bins or None, args.weighted)
    mean, dev = stats.moments(times)
    report = {"fit": fit.to_dict(), "mean": mean, "deviation": dev, "n": int(times.size),
              "bins": args.bins or stats.default_bins(times.size)}
    text = json.dumps(runner._clean(report), indent=2, sort_keys=True)
    if args.out:
        runner._atomic_write(args.out, text + "\n")
    print(text)
    return EXIT_OK


def _cmd_plotdata(args):
    print(runner.emit_plot_data(args.artifact, args.figure, args.out))
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "fit": _cmd_fit, "plotdata": _cmd_plotdata}


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - exit-code contract
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
