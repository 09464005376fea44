"""Per-pair result rows and log analysis.

Every numeric column is recomputable from (wins, received) and the experiment
configuration alone; nothing here depends on how the counts were gathered.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

from .config import ExperimentConfig
from .engine import RankEngine, replay_events
from .eventlog import EventRecord, audit_records, read_log
from .stats import (
    PairTally,
    anytime_interval,
    binomial_test_one_sided,
    clopper_pearson,
    error_bias,
    hoeffding_interval,
)

SIGNIFICANCE_LEVEL = 0.05


@dataclass(frozen=True)
class ReportRow:
    pair: str
    left: str
    right: str
    final_received: int
    final_win_rate: float
    determined_received: int | None
    determined_win_rate: float | None
    winner: str | None
    interval: float
    hoeffding: float | None
    bias: float
    hoeffding_bias: float | None
    p_value: float | None
    significant: bool
    ci_low: float | None
    ci_high: float | None
    termination: str | None  # "early" | "max-limit" | None while undetermined
    reversal: bool


def build_rows(engine: RankEngine, confidence: float = 0.95) -> list[ReportRow]:
    """One row per compared pair (pairs with zero judgments stay off the report)."""
    rows = []
    for pair in sorted(engine.pairs.values(), key=lambda p: p.created_seq):
        r = pair.received
        if r == 0:
            continue
        p_hat = pair.win_rate
        det = pair.determination
        interval = anytime_interval(r, engine.accuracy.delta)
        hoeff = hoeffding_interval(r, engine.accuracy.delta)
        tally = PairTally(wins=pair.wins, received=r)
        p_value = binomial_test_one_sided(tally)
        ci_low, ci_high = clopper_pearson(tally, confidence)
        reversal = det is not None and (p_hat - 0.5) * (det.at_win_rate - 0.5) < 0
        rows.append(
            ReportRow(
                pair=pair.key,
                left=pair.left,
                right=pair.right,
                final_received=r,
                final_win_rate=p_hat,
                determined_received=det.at_received if det else None,
                determined_win_rate=det.at_win_rate if det else None,
                winner=det.winner if det else None,
                interval=interval,
                hoeffding=hoeff,
                bias=error_bias(interval, p_hat),
                hoeffding_bias=error_bias(hoeff, p_hat),
                p_value=p_value,
                significant=p_value < SIGNIFICANCE_LEVEL,
                ci_low=ci_low,
                ci_high=ci_high,
                termination=None
                if det is None
                else ("early" if det.at_received < engine.m else "max-limit"),
                reversal=reversal,
            )
        )
    return rows


def summarize(engine: RankEngine) -> dict:
    order, complete = engine.order()
    determined = sum(1 for p in engine.pairs.values() if p.determination is not None)
    compared = sum(1 for p in engine.pairs.values() if p.received > 0)
    refinement = (
        engine.submitted_total - engine.converged_at
        if engine.converged_at is not None
        else 0
    )
    return {
        "phase": engine.phase,
        "submitted_total": engine.submitted_total,
        "budget": engine.budget,
        "max_comparisons": engine.m,
        "order": order,
        "complete": complete,
        "converged_at": engine.converged_at,
        "sorting_submissions": engine.converged_at
        if engine.converged_at is not None
        else engine.submitted_total,
        "refinement_submissions": refinement,
        "compared_pairs": compared,
        "determined_pairs": determined,
        "outstanding": len(engine.outstanding),
    }


@dataclass
class Analysis:
    config: ExperimentConfig
    engine: RankEngine
    rows: list[ReportRow]
    summary: dict


def analyze_records(
    config: ExperimentConfig, records: list[EventRecord], confidence: float = 0.95
) -> Analysis:
    audit_records(records)
    engine = config.build_engine()
    replay_events(engine, ((r.kind, r.payload) for r in records))
    return Analysis(
        config=config,
        engine=engine,
        rows=build_rows(engine, confidence),
        summary=summarize(engine),
    )


def analyze_log(path: str | Path, confidence: float = 0.95) -> Analysis:
    config_dict, records = read_log(path)
    config = ExperimentConfig.from_dict(config_dict)
    return analyze_records(config, records, confidence)


_COLUMNS = [
    ("pair", "pair"),
    ("r_final", "final_received"),
    ("r_det", "determined_received"),
    ("p_final", "final_win_rate"),
    ("p_det", "determined_win_rate"),
    ("interval", "interval"),
    ("hoeffding", "hoeffding"),
    ("bias", "bias"),
    ("h_bias", "hoeffding_bias"),
    ("p_value", "p_value"),
    ("sig", "significant"),
    ("ci_low", "ci_low"),
    ("ci_high", "ci_high"),
    ("termination", "termination"),
    ("reversal", "reversal"),
]


def _cell(value, machine: bool) -> str:
    if value is None:
        return "" if machine else "-"
    if isinstance(value, bool):
        if machine:
            return "1" if value else "0"
        return "*" if value else ""
    if isinstance(value, float):
        return repr(value) if machine else f"{value:.2f}"
    return str(value)


def format_rows(rows: list[ReportRow], *, machine: bool = False) -> str:
    """Aligned human table, or comma-delimited full-precision rows."""
    header = [name for name, _ in _COLUMNS]
    table = [
        [_cell(getattr(row, attr), machine) for _, attr in _COLUMNS] for row in rows
    ]
    if machine:
        out = io.StringIO()
        out.write(",".join(header) + "\n")
        for cells in table:
            out.write(",".join(cells) + "\n")
        return out.getvalue()
    widths = [
        max(len(header[c]), *(len(r[c]) for r in table)) if table else len(header[c])
        for c in range(len(header))
    ]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    for cells in table:
        lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip())
    return "\n".join(lines) + "\n"
