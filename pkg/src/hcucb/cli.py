"""Command-line entry point: ``hcucb {run,sweep,gapcheck,hardfamily,validate}``.

Exit codes: 0 success, 1 invariant violations or failed sweep cells,
2 invalid configuration, 3 generation failure (feasibility or packing).
"""
from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from . import harness
from .errors import CapacityError, ConfigurationError, FeasibilityError, PackingError, StructuralError

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_CONFIG = 2
EXIT_GENERATION = 3


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_set(items: Sequence[str]) -> dict:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        out[key] = _parse_value(value)
    return out


def _parse_seeds(text: str) -> list:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"seeds must be comma-separated integers: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hcucb", description="Hierarchical constrained contextual bandit simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one config over its seeds")
    r.add_argument("--config", help="JSON run config; omitted fields take defaults")
    r.add_argument("--horizon", type=int)
    r.add_argument("--seeds", help="comma-separated seeds")
    r.add_argument("--seed-count", type=int, help="use seeds 0..N-1")
    r.add_argument("--agent", help="agent kind")
    r.add_argument("--output-dir")
    r.add_argument("--run-id")
    r.add_argument("--trace", action="store_true", default=None, help="write per-round traces")
    r.add_argument("--no-instrument", dest="instrument", action="store_false", default=None)
    r.add_argument("--per-seed-spec", action="store_true", default=None)
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a dotted config key, value parsed as JSON")
    r.add_argument("--jobs", type=int, default=1)

    s = sub.add_parser("sweep", help="run a grid of configs and aggregate")
    s.add_argument("--config", required=True)
    s.add_argument("--output-dir")
    s.add_argument("--jobs", type=int, default=1)

    g = sub.add_parser("gapcheck", help="decomposition-gap checks on random small MDPs")
    g.add_argument("--count", type=int, default=200)
    g.add_argument("--states", type=int, default=8)
    g.add_argument("--actions", type=int, default=3)
    g.add_argument("--high-states", type=int, default=3)
    g.add_argument("--high-actions", type=int, default=2)
    g.add_argument("--gamma", type=float, default=0.9)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tightness", action="store_true", help="use the hidden-optimum construction")
    g.add_argument("--output-dir", default="gapcheck")

    h = sub.add_parser("hardfamily", help="generate and audit a packed hard-instance family")
    h.add_argument("--dim", type=int, required=True)
    h.add_argument("--levels", type=int, required=True)
    h.add_argument("--horizon", type=int, required=True)
    h.add_argument("--sigma", type=float, default=1.0)
    h.add_argument("--seed", type=int, default=0)
    h.add_argument("--output-dir", default="hardfamily")

    v = sub.add_parser("validate", help="check a run config, sweep config or spec file")
    v.add_argument("path")
    return p


def _run_config(args) -> harness.RunConfig:
    raw = harness.load_json(args.config) if args.config else {}
    overrides = _parse_set(args.set)
    if args.horizon is not None:
        overrides["horizon"] = args.horizon
    if args.seeds is not None:
        overrides["seeds"] = _parse_seeds(args.seeds)
    if args.seed_count is not None:
        if args.seed_count < 1:
            raise ConfigurationError("--seed-count must be at least 1")
        overrides["seeds"] = list(range(args.seed_count))
    if args.agent is not None:
        overrides["agent.kind"] = args.agent
    for name in ("output_dir", "run_id", "trace", "instrument", "per_seed_spec"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    return harness.validate_config(harness.apply_overrides(raw, overrides))


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            artifact = harness.run(_run_config(args), jobs=args.jobs)
            agg = artifact.summary["aggregate"]
            print(f"wrote {artifact.directory}: mean regret {agg['mean_regret']:.6g} "
                  f"over {agg['n_seeds']} seed(s)")
            if artifact.invariant_violations:
                print(f"invariant violations: {artifact.invariant_violations}", file=sys.stderr)
                return EXIT_INVARIANT
            return EXIT_OK
        if args.command == "sweep":
            art = harness.sweep(harness.load_json(args.config), jobs=args.jobs, output_dir=args.output_dir)
            print(f"wrote {art.aggregate_path} ({len(art.cells)} cells, {art.failed} failed)")
            for c in art.cells:
                if c.error:
                    print(f"{c.cell}: {c.error}", file=sys.stderr)
            return EXIT_INVARIANT if art.failed else EXIT_OK
        if args.command == "gapcheck":
            summary = harness.gapcheck_cmd(
                args.count, args.output_dir, states=args.states, actions=args.actions,
                high_states=args.high_states, high_actions=args.high_actions, gamma=args.gamma,
                seed=args.seed, tightness=args.tightness)
            print(f"{summary['count']} pair(s): nonnegative={summary['all_nonnegative']} "
                  f"within 2eps bound={summary['all_within_2eps']}")
            ok = summary["all_nonnegative"] and summary["all_within_2eps"]
            return EXIT_OK if ok else EXIT_INVARIANT
        if args.command == "hardfamily":
            report = harness.hardfamily_cmd(args.dim, args.levels, args.horizon, args.sigma, args.seed,
                                            args.output_dir)
            audit = report["audit"]
            print(f"{audit['count']} members, separation {audit['separation']!r}, "
                  f"min distance {min(audit['min_pairwise_distance'])!r}")
            return EXIT_OK if audit["norm_ok"] and audit["separation_ok"] else EXIT_INVARIANT
        if args.command == "validate":
            kind = harness.validate_file(args.path)
            print(f"{args.path}: valid {kind}")
            return EXIT_OK
    except (ConfigurationError, StructuralError, CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FeasibilityError, PackingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GENERATION
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
