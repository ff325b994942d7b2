"""Command-line entry point: ``lanefree simulate|design|sweep|summarize``.

Every failure exits with status 1 and a single JSON line on stderr of the
form ``{"error": <kind>, "message": <text>}``.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

from lanefree import harness
from lanefree.ctm import PlantInvariantError
from lanefree.lq_design import DesignError, WeightConfig, design_gains


def _float(text: str) -> float:
    """Float parser that also takes ``-inf`` / ``inf``."""
    return float(text)


def _on_off(text: str) -> bool:
    val = text.lower()
    if val in ("on", "true", "1", "yes"):
        return True
    if val in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def _weights(args) -> WeightConfig:
    p1 = -math.inf if args.controller == "lq" else args.p1
    return WeightConfig(p1, args.p2)


def cmd_simulate(args) -> int:
    sc = harness.load_scenario(args.scenario, capacity_drop=args.capacity_drop)
    weights = _weights(args) if args.controller != "none" else WeightConfig()
    row, trace = harness.run_experiment(
        sc, args.controller, weights, activation_step=args.activation_step, sigma=args.sigma
    )
    if args.trace:
        trace.to_csv(args.trace)
    if args.report:
        harness.write_report([row], args.report)
    print(json.dumps({k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in row.items()}, default=str))
    return 0


def cmd_design(args) -> int:
    sc = harness.load_scenario(args.scenario)
    gains = design_gains(sc, _weights(args), sigma=args.sigma)
    gains.save(args.output)
    print(json.dumps({"output": args.output, **{k: str(v) for k, v in gains.meta.items()}}))
    return 0


def cmd_sweep(args) -> int:
    spec = harness.SweepSpec(
        count=args.count,
        p1_range=(args.p1_min, args.p1_max),
        p2_range=(args.p2_min, args.p2_max),
        rng_seed=args.seed,
        scenario=args.scenario,
        controller=args.controller,
        capacity_drop=args.capacity_drop,
        sigma=args.sigma,
    )
    rows = harness.run_sweep(spec, workers=args.workers)
    harness.write_report(rows, args.output)
    failed = sum(1 for r in rows if r["error"])
    print(json.dumps({"output": args.output, "rows": len(rows), "failed": failed}))
    return 0


def cmd_summarize(args) -> int:
    rows = []
    for path in args.reports:
        rows.extend(harness.read_report(path))
    text = harness.summarize(rows)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lanefree", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, controllers):
        p.add_argument("--scenario", default="uncongested", help="YAML file or built-in name")
        p.add_argument("--controller", choices=controllers, default=controllers[-1])
        p.add_argument("--p1", type=_float, default=-2.5, help="log10 integrator weight")
        p.add_argument("--p2", type=_float, default=-3.0, help="log10 input weight")
        p.add_argument("--sigma", type=float, default=0.95)

    p = sub.add_parser("simulate", help="run one experiment and print its report row")
    add_common(p, ["none", "lq", "lqi"])
    p.add_argument("--capacity-drop", type=_on_off, default=None, help="on/off; default from the scenario file")
    p.add_argument("--activation-step", type=int, default=0, help="control step at which the regulator starts")
    p.add_argument("--trace", help="write the per-step trace CSV here")
    p.add_argument("--report", help="write the report row CSV here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("design", help="design gains and write a GainSet file")
    add_common(p, ["lq", "lqi"])
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("sweep", help="random (p1, p2) sweep")
    p.add_argument("--scenario", default="uncongested")
    p.add_argument("--controller", choices=["lq", "lqi"], default="lqi")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--p1-min", type=float, default=-5.0)
    p.add_argument("--p1-max", type=float, default=2.0)
    p.add_argument("--p2-min", type=float, default=-5.0)
    p.add_argument("--p2-max", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.95)
    p.add_argument("--capacity-drop", type=_on_off, default=None)
    p.add_argument("--workers", type=int, default=harness.default_workers())
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("summarize", help="TTS table from report CSVs")
    p.add_argument("reports", nargs="+")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_summarize)
    return parser


def _fail(kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return 1


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return 0
        return _fail("usage", "invalid command line (see --help)")
    try:
        return args.func(args)
    except harness.ScenarioError as exc:
        return _fail("scenario", str(exc))
    except DesignError as exc:
        return _fail("design", str(exc))
    except PlantInvariantError as exc:
        return _fail("simulation", str(exc))
    except (ValueError, OSError) as exc:
        return _fail(type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
