"""Command-line interface.

Exit codes: 0 success, 2 usage or unreadable input, 3 estimator error,
4 benchmark finished with failed rows.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .distributions import DistributionSpec, oracle
from .ensemble import DEFAULT_C, default_index_set, ensemble_estimate, solve_weights
from .errors import EstimatorError
from .harness import ConfigError, ExperimentSpec, run_experiment
from .metric_space import Metric, build_index, load_points
from .nnr import EstimatorConfig, GFunction, nnr_estimate

EXIT_OK, EXIT_USAGE, EXIT_ESTIMATOR, EXIT_PARTIAL = 0, 2, 3, 4
CONFIG_DIR = Path(__file__).with_name("configs")


class UsageError(Exception):
    pass


def fmt(x) -> str:
    """Shortest round-trip repr, without a trailing ``.0``."""
    r = repr(float(x))
    return r[:-2] if r.endswith(".0") else r


def _bounds(text):
    if text is None:
        return None
    try:
        cl, cu = (float(v) for v in text.split(","))
    except ValueError:
        raise UsageError("--bounds expects 'C_L,C_U'") from None
    return cl, cu


def _load_pair(args):
    try:
        x = load_points(args.x, args.header)
        y = load_points(args.y, args.header)
    except EstimatorError:
        raise
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read points: {exc}") from None
    return x, y


def _mode(args):
    if (args.alpha is None) == (args.g is None):
        raise UsageError("give exactly one of --alpha or --g")
    if args.alpha is not None:
        if args.alpha == 1:
            raise UsageError("alpha must differ from 1")
        if not args.alpha > 0:
            raise UsageError("alpha must be positive")
        return {"alpha": args.alpha}
    try:
        return {"g": GFunction.parse(args.g)}
    except EstimatorError as exc:
        raise UsageError(str(exc)) from None


def _metric(args):
    try:
        return Metric.parse(args.metric)
    except (EstimatorError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def cmd_estimate(args):
    mode = _mode(args)
    metric = _metric(args)
    if args.k == "auto":
        k = None
    else:
        try:
            k = int(args.k)
        except ValueError:
            raise UsageError("--k must be a positive integer or 'auto'") from None
        if k < 1:
            raise UsageError("--k must be a positive integer or 'auto'")
    x, y = _load_pair(args)
    if args.dim is not None and args.dim != x.shape[1]:
        raise UsageError(f"--dim {args.dim} does not match the data (d={x.shape[1]})")
    config = EstimatorConfig(k=k, bounds=_bounds(args.bounds), gamma=args.gamma,
                             metric=metric, **mode)
    index = build_index(x, y, metric)
    est = nnr_estimate(x, y, config, index)
    print(f"estimate={fmt(est.value)} raw={fmt(est.raw_value)} k={est.k} eta={fmt(est.eta)}")
    return EXIT_OK


def cmd_ensemble(args):
    mode = _mode(args)
    x, y = _load_pair(args)
    d = x.shape[1]
    L = args.L if args.L is not None else d + 2
    config = EstimatorConfig(bounds=_bounds(args.bounds), metric=_metric(args), **mode)
    ell = default_index_set(L, d, args.c)
    weights = solve_weights(ell, d)
    est = ensemble_estimate(x, y, ell, weights, config)
    ks = ",".join(str(k) for k, _ in est.components)
    ws = ",".join(fmt(v) for v in weights.w)
    print(f"estimate={fmt(est.value)} raw={fmt(est.raw_value)} L={L} c={fmt(args.c)} "
          f"ks={ks} weights={ws} eta={fmt(est.eta)}")
    return EXIT_OK


def _resolve_config(name):
    p = Path(name)
    if p.exists():
        return p
    bundled = CONFIG_DIR / p.name
    if bundled.exists():
        return bundled
    raise UsageError(f"config {name!r} not found (bundled: "
                     f"{', '.join(sorted(c.name for c in CONFIG_DIR.glob('*.json')))})")


def cmd_bench(args):
    try:
        spec = ExperimentSpec.from_json(_resolve_config(args.config))
        if args.trials is not None:
            spec.trials = args.trials
            if spec.trials < 1:
                raise ConfigError("--trials must be >= 1")
    except (ConfigError, OSError) as exc:
        raise UsageError(f"bad config: {exc}") from None
    threads = args.threads if args.threads else (os.cpu_count() or 1)
    try:
        records, _, paths = run_experiment(spec, args.out, threads, args.timing, args.svg)
    except ConfigError as exc:
        raise UsageError(f"bad config: {exc}") from None
    failed = [r for r in records if r.failed]
    for p in paths:
        print(f"wrote {p}", file=sys.stderr)
    if failed:
        reasons = sorted({r.error for r in failed})
        print(f"{len(failed)} of {len(records)} rows failed: {'; '.join(reasons[:5])}",
              file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_oracle(args):
    try:
        with open(args.config) as fh:
            data = json.load(fh)
        s1 = DistributionSpec.from_dict(data["spec1"], args.dim)
        s2 = DistributionSpec.from_dict(data["spec2"], args.dim)
        div = data["divergence"]
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"bad oracle config: {exc}") from None
    o = data.get("oracle", {})
    if div.get("kind") == "renyi":
        val = oracle(s1, s2, alpha=div["alpha"], box=o.get("box"),
                     resolution=int(o.get("resolution", 64)))
    else:
        val = oracle(s1, s2, g=div.get("g"), box=o.get("box"),
                     resolution=int(o.get("resolution", 64)))
    extra = ""
    if val.method == "quadrature":
        extra = f" resolution={val.resolution} delta={fmt(val.delta)}"
    print(f"truth={fmt(val.value)} method={val.method} divergence={val.divergence}{extra}")
    return EXIT_OK


def _add_pair_args(p):
    p.add_argument("--x", required=True, help="CSV of X points (samples of f1)")
    p.add_argument("--y", required=True, help="CSV of Y points (samples of f2)")
    p.add_argument("--header", action="store_true", help="skip the first CSV row")
    p.add_argument("--alpha", type=float, help="Renyi order (alpha > 0, alpha != 1)")
    p.add_argument("--g", help="f-divergence generator: kl, tv, hellinger, alpha:<a>")
    p.add_argument("--metric", default="euclidean",
                   help="euclidean, manhattan, chebyshev or minkowski:<p>")
    p.add_argument("--bounds", help="density bounds 'C_L,C_U' enabling the upper clamp")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nnrdiv", description="Nearest-neighbour-ratio divergence estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="single-k NNR estimate from two CSV files")
    _add_pair_args(p)
    p.add_argument("--k", default="auto", help="neighbourhood size or 'auto'")
    p.add_argument("--gamma", type=float, default=1.0, help="Holder exponent for --k auto")
    p.add_argument("--dim-auto", action="store_true",
                   help="take d from the data for --k auto (the default)")
    p.add_argument("--dim", type=int, help="expected dimension (checked against the data)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("ensemble", help="weighted ensemble NNR estimate")
    _add_pair_args(p)
    p.add_argument("--L", type=int, help="number of index values (default d + 2)")
    p.add_argument("--c", type=float, default=DEFAULT_C, help="largest index value")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("bench", help="run a Monte-Carlo benchmark config")
    p.add_argument("--config", required=True,
                   help="JSON config path or bundled name (fig1.json ... fig4.json)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=0, help="worker threads (default: cores)")
    p.add_argument("--trials", type=int, help="override the trial count")
    p.add_argument("--svg", action="store_true", help="also write an SVG chart")
    p.add_argument("--timing", action="store_true",
                   help="fill the wall_ms column (makes output run-dependent)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("oracle", help="ground-truth divergence for a distribution pair")
    p.add_argument("--config", required=True,
                   help="JSON with spec1, spec2, divergence and optional oracle settings")
    p.add_argument("--dim", type=int, help="dimension for broadcast scalar specs")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"nnrdiv {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EstimatorError as exc:
        print(f"nnrdiv {args.command}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR


if __name__ == "__main__":
    sys.exit(main())
