"""Command-line front end: run, verify, oracle.

  hjbkit run    --config scenario.json --out results/
  hjbkit verify --model pollution --out results/ --seed 7
  hjbkit oracle --model vintage-dde --out results/

``run`` simulates the closed loop and writes ``trajectory.csv`` (RFC-4180,
fixed column order) plus ``summary.json``; ``verify`` runs the
verification suite and writes ``report.json``; ``oracle`` runs the
coarse-scale dynamic-programming bracket for a delay model.

Exit codes: 0 pass, 2 assumption/configuration failure, 3 tolerance
failure, 4 domain exit.  All outputs are deterministic for a fixed seed:
no timestamps, sorted keys, and full-precision floats.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .errors import AssumptionError, ConfigError, DomainExitError
from .scenarios import (MODELS, build_scenario, default_config,
                        oracle_scenario, refine_config, validate_config,
                        verify_scenario)
from .verify import OracleBudgetError

EXIT_OK = 0
EXIT_ASSUMPTION = 2
EXIT_TOLERANCE = 3
EXIT_DOMAIN = 4


def _json_ready(obj):
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [float(v) for v in obj]
    return obj


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_json_ready(obj), sort_keys=True, indent=2)
                    + "\n")


def _load_config(args) -> dict:
    if args.config is not None:
        raw = json.loads(Path(args.config).read_text())
        if "config" in raw and isinstance(raw["config"], dict) \
                and "model" in raw["config"]:
            raw = raw["config"]  # summary.json round trip
        config = validate_config(raw)
    elif args.model is not None:
        config = validate_config(default_config(args.model))
    else:
        raise ConfigError("provide --config <path> or --model <name>")
    if args.refine:
        config = refine_config(config, args.refine)
    return config


def _write_trajectory_csv(path: Path, scenario, traj) -> None:
    first = scenario.state_columns(traj.states[0], traj.controls[0])
    header = ["t"] + list(first) + ["running_payoff"]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k, t in enumerate(traj.times):
            cols = scenario.state_columns(traj.states[k], traj.controls[k])
            writer.writerow([repr(float(t))]
                            + [repr(float(v)) for v in cols.values()]
                            + [repr(float(traj.running_payoff[k]))])


def cmd_run(args) -> int:
    config = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenario = build_scenario(config)
    traj = scenario.simulate()
    analytic = float(scenario.handle.value(scenario.state0))
    tail = float(np.exp(-scenario.handle.rho * traj.times[-1])
                 * scenario.handle.value(traj.states[-1]))
    payoff = traj.payoff
    gap = abs(payoff + tail - analytic) / max(abs(analytic), 1e-300)
    summary = {
        "model": scenario.name,
        "config": config,
        "derived": scenario.derived,
        "analytic_value": analytic,
        "simulated_payoff": payoff,
        "discounted_tail": tail,
        "value_gap": gap,
        "flags": traj.meta,
    }
    _write_trajectory_csv(out / "trajectory.csv", scenario, traj)
    _write_json(out / "summary.json", summary)
    print(f"{scenario.name}: analytic {analytic:.6g}, simulated+tail "
          f"{payoff + tail:.6g} (gap {gap:.2e}) -> {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    config = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = verify_scenario(config, seed=args.seed)
    _write_json(out / "report.json", report.to_dict())
    status = "PASS" if report.passed else "FAIL"
    print(f"{report.model}: {status} (residual max {report.residual_max:.2e}, "
          f"value gap {report.value_match_gap:.2e}, suboptimal margin "
          f"{report.suboptimal_margin:.2e}, transversality slope "
          f"{report.transversality_slope:.3f})")
    for failure in report.failures:
        print(f"  tolerance failure: {failure}")
    return EXIT_OK if report.passed else EXIT_TOLERANCE


def cmd_oracle(args) -> int:
    config = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        bracket, analytic = oracle_scenario(config, n_controls=args.levels,
                                            budget=args.budget)
    except OracleBudgetError as exc:
        _write_json(out / "oracle.json",
                    {"model": config["model"], "partial": True,
                     "error": str(exc)})
        print(f"oracle budget exceeded: {exc}")
        return EXIT_TOLERANCE
    slack = config["tolerances"]["oracle_slack"]
    contained = bracket.contains(analytic, slack)
    _write_json(out / "oracle.json", {
        "model": config["model"],
        "partial": False,
        "bracket_lo": bracket.lo,
        "bracket_hi": bracket.hi,
        "truncated_value": bracket.truncated_value,
        "tail_bound": bracket.tail_bound,
        "analytic_value": analytic,
        "slack": slack,
        "contained": contained,
        "evaluations": bracket.evaluations,
        "passes": bracket.passes,
    })
    print(f"{config['model']}: analytic {analytic:.6g} vs bracket "
          f"[{bracket.lo:.6g}, {bracket.hi:.6g}] "
          f"({'contained' if contained else 'OUTSIDE'})")
    return EXIT_OK if contained else EXIT_TOLERANCE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hjbkit",
        description="Closed-form optimal control models: simulation and "
                    "numerical verification.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, extra in (
            ("run", cmd_run, "simulate the closed loop and write outputs"),
            ("verify", cmd_verify, "run the verification suite"),
            ("oracle", cmd_oracle, "run the coarse DP value bracket")):
        p = sub.add_parser(name, help=extra)
        p.add_argument("--config", help="scenario configuration (JSON)")
        p.add_argument("--model", choices=MODELS,
                       help="use the named model's default scenario")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--refine", type=int, default=0,
                       help="double the resolution (and halve dt) k times")
        p.add_argument("--seed", type=int, default=0,
                       help="seed for random test-state sampling in verify")
        if name == "oracle":
            p.add_argument("--levels", type=int, default=33,
                           help="control levels per step in the DP sweep")
            p.add_argument("--budget", type=int, default=20_000_000,
                           help="payoff-evaluation budget before the DP "
                                "aborts with a partial report")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, AssumptionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except DomainExitError as exc:
        print(f"domain exit: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
