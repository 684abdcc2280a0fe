"""Command-line front end: single runs, parameter sweeps, the five-setup
enforcement-correctness table, and trace verification.

Exit codes: 0 success, 2 usage/config error, 3 internal invariant abort,
4 verification failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from .metrics import (
    SUMMARY_METRICS,
    aggregate,
    metrics_row,
    METRICS_COLUMNS,
    write_cdf_csv,
    write_metrics_csv,
)
from .model import PolicyKind
from .oracle import oracle_check
from .scenario import ConfigError, ScenarioConfig, load_config
from .sim import run_scenario
from .trace import MalformedTrace, parse_trace

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_VERIFY = 4

SWEEP_AXES = ("relocation_probability", "stress_level", "overload_threshold")
TABLE_SETUPS = ("s1", "s2", "s3", "s4", "s5")
TABLE_POLICIES = (PolicyKind.ENDPOINT_BOUND, PolicyKind.BEST_EFFORT, PolicyKind.AI_PAGING)


def _parse_seeds(args) -> list[int]:
    seeds: list[int] = []
    for chunk in args.seeds or []:
        for part in chunk.split(","):
            part = part.strip()
            if not part:
                continue
            if "-" in part[1:]:
                lo, _, hi = part.partition("-")
                seeds.extend(range(int(lo), int(hi) + 1))
            else:
                seeds.append(int(part))
    for s in args.seed or []:
        seeds.append(s)
    return seeds


def _policies(args, config: ScenarioConfig) -> list[PolicyKind]:
    if args.policy:
        return [PolicyKind(p) for p in args.policy]
    return [config.policy_kind]


def _outdir(args) -> str:
    out = args.out or os.environ.get("AIPAGING_OUT") or "out"
    os.makedirs(out, exist_ok=True)
    return out


def _run_one(config: ScenarioConfig, policy: PolicyKind, seed: int):
    return run_scenario(config.with_overrides(policy_kind=policy, seed=seed))


def cmd_run(args) -> int:
    config = load_config(args.config)
    seeds = _parse_seeds(args) or [config.seed]
    out = _outdir(args)
    for policy in _policies(args, config):
        for seed in seeds:
            trace, report = _run_one(config, policy, seed)
            base = os.path.join(out, f"{config.setup_id}_{policy.value}_s{seed}")
            trace.write(base + ".trace.tsv")
            write_metrics_csv(base + ".metrics.csv", [report])
            if report.transaction_time_samples:
                write_cdf_csv(base + ".cdf.csv", [report])
            print(f"run {config.setup_id} policy={policy.value} seed={seed}: "
                  f"violation={report.violation_rate_percent:.3f}% "
                  f"failure_rate={report.request_failure_rate:.4f} -> {base}.trace.tsv")
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.sweep_axis not in SWEEP_AXES:
        print(f"error: unknown sweep axis {args.sweep_axis!r} (expected one of {SWEEP_AXES})",
              file=sys.stderr)
        return EXIT_CONFIG
    config = load_config(args.config)
    try:
        values = [float(v) for v in args.sweep_values.split(",") if v.strip()]
    except ValueError as exc:
        print(f"error: bad sweep values: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not values:
        print("error: empty sweep values", file=sys.stderr)
        return EXIT_CONFIG
    seeds = _parse_seeds(args) or [config.seed]
    out = _outdir(args)
    for policy in _policies(args, config):
        path = os.path.join(out, f"sweep_{args.sweep_axis}_{policy.value}.csv")
        with open(path, "w", newline="\n") as fh:
            fh.write(args.sweep_axis + "," + ",".join(SUMMARY_METRICS) + "\n")
            for value in values:
                reports = []
                for seed in seeds:
                    cfg = config.with_overrides(**{args.sweep_axis: value})
                    _, report = _run_one(cfg, policy, seed)
                    reports.append(report)
                summary = aggregate(reports)
                cells = [f"{value:.4f}"] + [
                    f"{summary.mean(m):.6f}" for m in SUMMARY_METRICS
                ]
                fh.write(",".join(cells) + "\n")
        print(f"sweep {args.sweep_axis} policy={policy.value}: {len(values)} points -> {path}")
    return EXIT_OK


def cmd_table2(args) -> int:
    config_dir = args.config_dir
    configs = {}
    for name in TABLE_SETUPS:
        path = os.path.join(config_dir, f"{name}.cfg")
        if not os.path.exists(path):
            print(f"error: missing setup config {path}", file=sys.stderr)
            return EXIT_CONFIG
        configs[name] = load_config(path)
    seeds = _parse_seeds(args) or list(range(1, 11))
    out = _outdir(args)
    rows = []
    for name in TABLE_SETUPS:
        config = configs[name]
        row = {"setup": config.setup_id}
        for policy in TABLE_POLICIES:
            reports = [_run_one(config, policy, seed)[1] for seed in seeds]
            row[policy.value] = aggregate(reports).mean("violation_rate_percent")
        rows.append(row)
    header = f"{'Setup':<22}{'EndpointBound':>15}{'BestEffort':>13}{'AIPaging':>11}"
    print(header)
    print("-" * len(header))
    csv_path = os.path.join(out, "table2.csv")
    with open(csv_path, "w", newline="\n") as fh:
        fh.write("setup,endpointbound,besteffort,aipaging\n")
        for row in rows:
            print(
                f"{row['setup']:<22}"
                f"{row[PolicyKind.ENDPOINT_BOUND.value]:>15.3f}"
                f"{row[PolicyKind.BEST_EFFORT.value]:>13.3f}"
                f"{row[PolicyKind.AI_PAGING.value]:>11.3f}"
            )
            fh.write(
                f"{row['setup']},{row[PolicyKind.ENDPOINT_BOUND.value]:.3f},"
                f"{row[PolicyKind.BEST_EFFORT.value]:.3f},{row[PolicyKind.AI_PAGING.value]:.3f}\n"
            )
    print(f"table -> {csv_path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        entries = parse_trace(args.trace)
    except (MalformedTrace, OSError) as exc:
        print(f"error: malformed trace: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        violations = oracle_check(entries)
    except Exception as exc:  # index failures on structurally broken traces
        print(f"error: malformed trace: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not violations:
        print(f"{args.trace}: conforming ({len(entries)} entries)")
        return EXIT_OK
    print(f"{args.trace}: {len(violations)} invariant violation(s)")
    for v in violations:
        print(f"  {v}")
    return EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aipaging",
        description="Lease-gated execution anchoring: deterministic scenario runs, "
        "sweeps, the enforcement-correctness table, and trace verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, action="append", help="single seed (repeatable)")
        p.add_argument("--seeds", action="append",
                       help="seed list/range, e.g. 1,2,3 or 1-10 (repeatable)")
        p.add_argument("--policy", action="append",
                       choices=[k.value for k in PolicyKind],
                       help="policy kind (repeatable; default from config)")
        p.add_argument("--out", help="output directory (default $AIPAGING_OUT or ./out)")

    p_run = sub.add_parser("run", help="run one scenario per (policy, seed)")
    p_run.add_argument("--config", required=True, help="scenario config file")
    add_common(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="sweep one scenario axis")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--sweep-axis", required=True)
    p_sweep.add_argument("--sweep-values", required=True, help="comma-separated values")
    add_common(p_sweep)
    p_sweep.set_defaults(fn=cmd_sweep)

    p_table = sub.add_parser("table2", help="five-setup enforcement correctness table")
    p_table.add_argument("--config-dir", default="configs", help="directory with s1.cfg..s5.cfg")
    add_common(p_table)
    p_table.set_defaults(fn=cmd_table2)

    p_verify = sub.add_parser("verify", help="audit a trace file with the invariant oracle")
    p_verify.add_argument("trace", help="trace file to verify")
    p_verify.set_defaults(fn=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AssertionError as exc:
        print(f"internal invariant abort: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
