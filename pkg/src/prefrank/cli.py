"""Operator command line: plan experiments, simulate, serve, analyze logs."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig
from .engine import POLICY_BALANCED, POLICY_NAIVE
from .eventlog import EventLogWriter, LogCorruptError, audit_records, dumps_record, read_log
from .report import analyze_log, format_rows
from .sim import EvaluatorProfile, TruePreferenceModel, run_simulation
from .stats import (
    Accuracy,
    InfeasibleBudgetError,
    max_comparisons,
    plan_epsilon,
    sort_complexity_bounds,
)


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def cmd_plan(args: argparse.Namespace) -> int:
    try:
        bounds = sort_complexity_bounds(args.n)
        if args.epsilon is None:
            epsilon = plan_epsilon(args.budget, args.n, args.delta)
            source = "planned"
        else:
            epsilon = args.epsilon
            source = "given"
        m = max_comparisons(Accuracy(epsilon=epsilon, delta=args.delta))
    except (InfeasibleBudgetError, ValueError) as exc:
        return _fail(str(exc))
    worst = m * bounds.upper
    print(f"targets:               {args.n}")
    print(f"pair count bounds:     {bounds.lower} .. {bounds.upper}")
    print(f"epsilon ({source}):     {epsilon:.6g}")
    print(f"delta:                 {args.delta:.6g}")
    print(f"max comparisons/pair:  {m}")
    print(f"worst-case volume:     {worst}")
    print(f"budget:                {args.budget}")
    if worst > args.budget:
        print("warning: worst-case volume exceeds the budget; convergence not guaranteed")
    return 0


def _load_scenario(path: Path) -> tuple[ExperimentConfig, TruePreferenceModel, EvaluatorProfile, str]:
    data = json.loads(path.read_text(encoding="utf-8"))
    config = ExperimentConfig.from_dict(data.get("experiment", data))
    sim = data.get("simulation", {})
    if "model" not in sim:
        raise ConfigError(f"{path}: scenario needs a simulation.model section")
    model = TruePreferenceModel.from_dict(sim["model"])
    profile = EvaluatorProfile.from_dict(sim.get("profile", {}))
    policy = sim.get("policy", config.policy)
    if policy not in (POLICY_BALANCED, POLICY_NAIVE):
        raise ConfigError(f"unknown policy {policy!r}")
    return config, model, profile, policy


def cmd_simulate(args: argparse.Namespace) -> int:
    path = Path(args.scenario)
    try:
        config, model, profile, policy = _load_scenario(path)
    except (ConfigError, ValueError, OSError, json.JSONDecodeError) as exc:
        return _fail(str(exc))
    report = run_simulation(
        targets=config.ordered_targets(),
        model=model,
        profile=profile,
        accuracy=config.accuracy,
        budget=config.budget,
        seed=args.seed,
        policy=policy,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    log_path = out / "events.log"
    if log_path.exists():
        log_path.unlink()
    writer = EventLogWriter(log_path, config.to_dict())
    for tick, (kind, payload) in enumerate(report.events):
        writer.append(kind, payload, float(tick))
    writer.close()

    (out / "rows.csv").write_text(format_rows(report.rows, machine=True), encoding="utf-8")
    summary = {
        "seed": args.seed,
        "policy": policy,
        "total_submissions": report.total_submissions,
        "compared_pairs": report.compared_pairs,
        "converged": report.converged,
        "convergence_at": report.convergence_at,
        "kendall_tau": report.kendall_tau,
        "adjacent_misorders": report.adjacent_misorders,
        "reversal_count": report.reversal_count,
        "max_overshoot": report.max_overshoot,
        "final_order": report.final_order,
        "complete": report.complete,
        "phase": report.phase,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    lines = [
        f"scenario:        {path}",
        f"seed:            {args.seed}  policy: {policy}",
        f"submissions:     {report.total_submissions} / {config.budget}",
        f"compared pairs:  {report.compared_pairs}",
        f"converged:       {report.converged}"
        + (f" at {report.convergence_at}" if report.converged else ""),
        f"kendall tau:     {report.kendall_tau:.4f}",
        f"adjacent misorders: {report.adjacent_misorders}",
        f"reversals:       {report.reversal_count}",
        f"max overshoot:   {report.max_overshoot}",
        f"final order:     {' < '.join(report.final_order)}",
        "",
        format_rows(report.rows),
    ]
    (out / "report.txt").write_text("\n".join(lines), encoding="utf-8")
    print("\n".join(lines[:10]))
    print(f"wrote {out}/report.txt, rows.csv, summary.json, events.log")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    try:
        config = ExperimentConfig.load(args.config)
    except (ConfigError, OSError) as exc:
        return _fail(str(exc))
    from .server import ExperimentService, create_app  # deferred: pulls in fastapi

    log_path = Path(args.log) if args.log else Path(f"{config.experiment_id}.log")
    try:
        service = ExperimentService(log_path, config)
    except LogCorruptError as exc:
        return _fail(str(exc))
    app = create_app(
        service,
        admin_token=os.environ.get("PREFRANK_ADMIN_TOKEN"),
        web_root=args.web_root,
    )
    import uvicorn

    print(f"serving {config.experiment_id} on {args.host}:{args.port} (log: {log_path})")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    try:
        analysis = analyze_log(args.log, confidence=args.confidence)
    except (LogCorruptError, ConfigError, OSError) as exc:
        return _fail(str(exc))
    table = format_rows(analysis.rows, machine=args.machine)
    s = analysis.summary
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    else:
        print(table, end="")
    if not args.machine:
        print(f"order:     {' < '.join(s['order'])}{'' if s['complete'] else '  (partial)'}")
        print(f"phase:     {s['phase']}  submissions: {s['submitted_total']}/{s['budget']}")
        print(f"pairs:     {s['compared_pairs']} compared, {s['determined_pairs']} determined")
        if s["converged_at"] is not None:
            print(
                f"converged: at {s['converged_at']} submissions "
                f"({s['refinement_submissions']} spent on refinement)"
            )
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    try:
        config, records = read_log(args.log)
        audit_records(records)
    except LogCorruptError as exc:
        return _fail(str(exc))
    lines = [dumps_record(r) for r in records]
    if args.out:
        Path(args.out).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
        print(f"{len(records)} events from {config.get('experiment_id', '?')} -> {args.out}")
    else:
        for line in lines:
            print(line)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prefrank",
        description="Budgeted online preference ranking: plan, simulate, serve, analyze.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="check budget feasibility and pick a tolerance bias")
    p.add_argument("n", type=int, help="number of targets")
    p.add_argument("budget", type=int, help="total judgment budget")
    p.add_argument("delta", type=float, help="per-pair error probability")
    p.add_argument("--epsilon", type=float, default=None, help="use this tolerance instead of planning one")
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("simulate", help="run a seeded crowd simulation from a scenario file")
    p.add_argument("scenario", help="scenario JSON (experiment + simulation sections)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="sim-out", help="output directory")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("serve", help="serve an experiment over HTTP")
    p.add_argument("config", help="experiment config JSON")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--log", default=None, help="event log path (resumes if it exists)")
    p.add_argument("--web-root", default=None, help="directory with the built web ui")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("analyze", help="rebuild state from an event log and report")
    p.add_argument("log", help="event log path")
    p.add_argument("--machine", action="store_true", help="comma-delimited full precision")
    p.add_argument("--confidence", type=float, default=0.95)
    p.add_argument("--out", default=None, help="write the table here instead of stdout")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("export", help="validate an event log and re-emit its records")
    p.add_argument("log", help="event log path")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_export)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
