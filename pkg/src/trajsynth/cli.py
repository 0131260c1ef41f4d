"""Command line entry point: ``synth run|gen-toy|metrics|validate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace

from . import metrics
from .core import Rng
from .io import TrajectoryFormatError, read_trajectories, write_trajectories
from .pipeline import ConfigError, RunConfig, run_pipeline, validate_config
from .synthgen import BUILTIN_WORLDS, builtin_world, generate_toy_dataset

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

_PAIRS = {"budget_ratios": 3, "radius_range": 2}
_INTS = {"world_size", "first_layer_k", "n_syn", "max_len", "seed", "repetitions", "bins", "queries", "mu", "ablation", "jobs"}
_FLOATS = {"epsilon", "c", "pop", "kappa_denom", "theta1", "theta2", "phi"}
_CHOICES = {
    "model": ("first", "second", "adaptive"),
    "trip_estimation": ("optimized", "raw_start_end"),
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    """One flag per RunConfig key; anything given overrides the file."""
    g = p.add_argument_group("config overrides")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        kw = {"dest": f.name, "default": None}
        if f.name in _PAIRS:
            g.add_argument(flag, type=float, nargs=_PAIRS[f.name], **kw)
        elif f.name in _INTS:
            g.add_argument(flag, type=int, **kw)
        elif f.name in _FLOATS:
            g.add_argument(flag, type=float, **kw)
        elif f.name in _CHOICES:
            g.add_argument(flag, choices=_CHOICES[f.name], **kw)
        elif isinstance(f.default, bool):
            g.add_argument(flag, action=argparse.BooleanOptionalAction, **kw)
        else:
            g.add_argument(flag, **kw)


def _overrides(args) -> dict:
    out = {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            out[f.name] = tuple(v) if f.name in _PAIRS else v
    return out


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_json(args.config) if args.config else RunConfig()
    over = _overrides(args)
    if "input" in over and "world" not in over:
        over["world"] = None
    return replace(cfg, **over)


def _cmd_run(args) -> int:
    cfg = _load_config(args)
    problems = validate_config(cfg)
    if problems:
        for msg in problems:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    root, result = run_pipeline(cfg)
    ledger = result.privacy
    print(
        f"privacy: eps={ledger['epsilon_total']} = {ledger['epsilon1_discretization']}"
        f" + {ledger['epsilon2_first_order']} + {ledger['epsilon3_second_order']}"
    )
    for key, s in result.summary.items():
        print(f"{key}: {s['mean']:.6g} +/- {s['std']:.6g}")
    print(f"wrote {root}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = _load_config(args)
    problems = validate_config(cfg)
    for msg in problems:
        print(msg)
    if not problems:
        print("ok")
    return EXIT_CONFIG if problems else EXIT_OK


def _cmd_gen_toy(args) -> int:
    if args.world not in BUILTIN_WORLDS:
        raise ConfigError(f"unknown world {args.world!r}; choose from {', '.join(BUILTIN_WORLDS)}")
    spec = builtin_world(args.world)
    if args.n is not None:
        if args.n < 1:
            raise ConfigError("--n must be positive")
        spec = spec.with_size(args.n)
    ds = generate_toy_dataset(spec, Rng(args.seed).substream("toy-data"))
    write_trajectories(ds, args.out)
    print(f"wrote {len(ds)} trajectories to {args.out}")
    return EXIT_OK


def _cmd_metrics(args) -> int:
    d_o = read_trajectories(args.original)
    d_s = read_trajectories(args.synthetic)
    report = metrics.evaluate(
        d_o,
        d_s,
        Rng(args.seed).substream("metrics"),
        n_bins=args.bins,
        n_queries=args.queries,
        mu=args.mu,
        phi=args.phi,
        radius_range=tuple(args.radius_range),
    )
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="synth", description="Differentially private trajectory synthesis.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the pipeline from a JSON config")
    run.add_argument("config", nargs="?", help="JSON config (defaults apply when omitted)")
    _add_config_flags(run)
    run.set_defaults(func=_cmd_run)

    val = sub.add_parser("validate", help="check a config and list every problem")
    val.add_argument("config", nargs="?")
    _add_config_flags(val)
    val.set_defaults(func=_cmd_validate)

    toy = sub.add_parser("gen-toy", help="sample a builtin toy world to a trajectory file")
    toy.add_argument("world", help=f"one of {', '.join(BUILTIN_WORLDS)}")
    toy.add_argument("out")
    toy.add_argument("--n", type=int, default=None, help="number of trajectories")
    toy.add_argument("--seed", type=int, default=0)
    toy.set_defaults(func=_cmd_gen_toy)

    met = sub.add_parser("metrics", help="score a synthetic file against an original")
    met.add_argument("original")
    met.add_argument("synthetic")
    met.add_argument("--bins", type=int, default=metrics.DEFAULT_BINS)
    met.add_argument("--queries", type=int, default=metrics.DEFAULT_QUERIES)
    met.add_argument("--mu", type=int, default=metrics.DEFAULT_MU)
    met.add_argument("--phi", type=float, default=None)
    met.add_argument("--radius-range", type=float, nargs=2, default=list(metrics.DEFAULT_RADIUS_RANGE))
    met.add_argument("--seed", type=int, default=0)
    met.set_defaults(func=_cmd_metrics)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrajectoryFormatError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
