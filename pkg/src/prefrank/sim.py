"""Simulated crowdsourcing: concurrent virtual evaluators on a discrete clock.

Evaluator loops (join, wait for latency, submit or abandon) interleave on a
single discrete-event clock; no wall-clock time is involved. All randomness
derives from the run seed. Pair outcomes use a counter-based substream per
pair so that two runs with different event interleavings (e.g. different
selection policies) still see the identical k-th judgment for a given pair.
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field
from typing import Sequence

from .engine import (
    POLICY_BALANCED,
    POLICY_NAIVE,
    RankEngine,
    Target,
)
from .report import ReportRow, build_rows
from .stats import Accuracy


@dataclass(frozen=True)
class TruePreferenceModel:
    """Ground-truth pairwise win probabilities for the simulated crowd."""

    kind: str  # "explicit-matrix" | "strength-based"
    ids: tuple[str, ...]
    matrix: dict[str, dict[str, float]] | None = None
    strengths: dict[str, float] | None = None

    @classmethod
    def from_strengths(cls, strengths: dict[str, float]) -> "TruePreferenceModel":
        return cls(kind="strength-based", ids=tuple(strengths), strengths=dict(strengths))

    @classmethod
    def from_matrix(cls, matrix: dict[str, dict[str, float]]) -> "TruePreferenceModel":
        ids = tuple(matrix)
        for a in ids:
            for b in ids:
                if a == b:
                    continue
                p_ab = matrix[a][b]
                p_ba = matrix[b][a]
                if abs(p_ab + p_ba - 1.0) > 1e-9:
                    raise ValueError(f"matrix not complementary at ({a},{b})")
        return cls(kind="explicit-matrix", ids=ids, matrix={a: dict(row) for a, row in matrix.items()})

    @classmethod
    def from_dict(cls, data: dict) -> "TruePreferenceModel":
        kind = data.get("kind")
        if kind == "strength-based":
            return cls.from_strengths({str(k): float(v) for k, v in data["strengths"].items()})
        if kind == "explicit-matrix":
            return cls.from_matrix(data["matrix"])
        raise ValueError(f"unknown preference model kind {kind!r}")

    def p(self, left: str, right: str) -> float:
        """True probability that `left` beats `right`."""
        if self.kind == "strength-based":
            s = self.strengths
            assert s is not None
            d = s[left] - s[right]
            return 1.0 / (1.0 + math.exp(-d))
        assert self.matrix is not None
        return self.matrix[left][right]

    def covers(self, ids: Sequence[str]) -> bool:
        return set(ids) <= set(self.ids)

    def true_order(self, ids: Sequence[str]) -> list[str]:
        """Ascending quality. Strengths sort directly; a matrix sorts by wins."""
        if self.kind == "strength-based":
            assert self.strengths is not None
            return sorted(ids, key=lambda t: (self.strengths[t], t))
        scores = {a: sum(1 for b in ids if b != a and self.p(a, b) > 0.5) for a in ids}
        return sorted(ids, key=lambda t: (scores[t], t))


@dataclass(frozen=True)
class LatencySpec:
    kind: str  # "fixed" | "uniform" | "exponential"
    value: float = 1.0
    low: float = 1.0
    high: float = 10.0

    @classmethod
    def from_dict(cls, data: dict) -> "LatencySpec":
        kind = data.get("kind", "uniform")
        if kind == "fixed":
            return cls(kind="fixed", value=float(data.get("value", 1.0)))
        if kind == "uniform":
            return cls(kind="uniform", low=float(data.get("min", 1.0)), high=float(data.get("max", 10.0)))
        if kind == "exponential":
            return cls(kind="exponential", value=float(data.get("mean", 5.0)))
        raise ValueError(f"unknown latency kind {kind!r}")

    def sample(self, rng: random.Random) -> float:
        if self.kind == "fixed":
            return self.value
        if self.kind == "uniform":
            return rng.uniform(self.low, self.high)
        return rng.expovariate(1.0 / self.value)


@dataclass(frozen=True)
class EvaluatorProfile:
    latency: LatencySpec = LatencySpec(kind="uniform", low=1.0, high=10.0)
    abandonment_prob: float = 0.0
    count: int = 1

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError("need at least one evaluator")
        if not 0.0 <= self.abandonment_prob < 1.0:
            raise ValueError("abandonment_prob must be in [0, 1)")

    @classmethod
    def from_dict(cls, data: dict) -> "EvaluatorProfile":
        return cls(
            latency=LatencySpec.from_dict(data.get("latency", {})),
            abandonment_prob=float(data.get("abandonment_prob", 0.0)),
            count=int(data.get("count", 1)),
        )


@dataclass
class SimReport:
    total_submissions: int
    compared_pairs: int
    converged: bool
    convergence_at: int | None
    kendall_tau: float
    adjacent_misorders: int
    rows: list[ReportRow]
    reversal_count: int
    max_overshoot: int
    final_order: list[str]
    complete: bool
    phase: str
    events: list[tuple[str, dict]] = field(default_factory=list, repr=False)


def kendall_tau(order_a: Sequence[str], order_b: Sequence[str]) -> float:
    """Rank correlation in [-1, 1]: 1 - 2 * discordant / C(n, 2)."""
    if sorted(order_a) != sorted(order_b):
        raise ValueError("orders must rank the same elements")
    n = len(order_a)
    if n < 2:
        return 1.0
    pos = {x: i for i, x in enumerate(order_b)}
    seq = [pos[x] for x in order_a]
    discordant = sum(
        1 for i in range(n) for j in range(i + 1, n) if seq[i] > seq[j]
    )
    return 1.0 - 2.0 * discordant / (n * (n - 1) / 2)


def run_simulation(
    targets: Sequence[Target],
    model: TruePreferenceModel,
    profile: EvaluatorProfile,
    accuracy: Accuracy,
    budget: int,
    seed: int,
    *,
    policy: str = POLICY_BALANCED,
    collect_events: bool = True,
    build_report_rows: bool = True,
) -> SimReport:
    """Drive a full engine run to budget exhaustion (or starvation) and report.

    `build_report_rows=False` skips the per-pair statistics table (p-values,
    exact intervals), which dominates the cost of bulk seeded runs.
    """
    ids = [t.id for t in targets]
    if not model.covers(ids):
        raise ValueError("preference model does not cover all targets")

    events: list[tuple[str, dict]] = []
    # Overshoot bookkeeping: requests in flight at a pair's determination that
    # later land as submissions.
    watch: dict[str, set[str]] = {}
    overshoot: dict[str, int] = {}
    engine: RankEngine | None = None

    def sink(kind: str, payload: dict) -> None:
        if collect_events:
            events.append((kind, payload))
        if kind == "Determine":
            pair = payload["pair"]
            assert engine is not None
            watch[pair] = {
                rid for rid, req in engine.outstanding.items() if req.pair_key == pair
            }
            overshoot.setdefault(pair, 0)
        elif kind == "Submit":
            pending = watch.get(payload["pair"])
            if pending and payload["request_id"] in pending:
                pending.discard(payload["request_id"])
                overshoot[payload["pair"]] += 1
        elif kind == "Expire":
            pending = watch.get(payload["pair"])
            if pending is not None:
                pending.discard(payload["request_id"])

    engine = RankEngine(
        targets=targets,
        accuracy=accuracy,
        budget=budget,
        seed=seed,
        policy=policy,
        sink=sink,
    )

    lat_rng = [random.Random(f"{seed}:lat:{e}") for e in range(profile.count)]
    ab_rng = [random.Random(f"{seed}:abandon:{e}") for e in range(profile.count)]
    # One substream per pair, consumed in submission order: the k-th judgment
    # of a pair is identical across runs whose event interleavings differ.
    duel_rng: dict[str, random.Random] = {}

    def duel(pair_key: str, left: str, right: str) -> bool:
        rng = duel_rng.get(pair_key)
        if rng is None:
            rng = duel_rng[pair_key] = random.Random(f"{seed}:duel:{pair_key}")
        return rng.random() < model.p(left, right)

    # Heap entries: (time, tie-break seq, evaluator, action, request)
    heap: list[tuple[float, int, int, str, object]] = []
    schedule_seq = 0

    def schedule(time: float, evaluator: int, action: str, request=None) -> None:
        nonlocal schedule_seq
        heapq.heappush(heap, (time, schedule_seq, evaluator, action, request))
        schedule_seq += 1

    for e in range(profile.count):
        schedule(0.0, e, "join")

    while heap:
        now, _, e, action, request = heapq.heappop(heap)
        if action == "join":
            req = engine.join(token=f"sim-{e}", now=now)
            if req is None:
                # Budget fully reserved; in-flight work may still expire.
                if engine.outstanding and engine.submitted_total < engine.budget:
                    schedule(now + 1.0, e, "join")
                continue
            schedule(now + profile.latency.sample(lat_rng[e]), e, "finish", req)
        else:
            assert request is not None
            if profile.abandonment_prob > 0.0 and ab_rng[e].random() < profile.abandonment_prob:
                engine.expire(request.request_id, now=now)
            else:
                won = duel(request.pair_key, request.left, request.right)
                engine.submit(request.request_id, won, now=now)
            schedule(now, e, "join")

    rows = build_rows(engine) if build_report_rows else []
    order, complete = engine.order()
    true_order = model.true_order(ids)
    misorders = 0
    for a, b in zip(order, order[1:]):
        # Output claims b >= a; a true preference for a beyond the tolerance
        # bias makes this adjacency a misorder.
        if model.p(a, b) - 0.5 > accuracy.epsilon:
            misorders += 1
    return SimReport(
        total_submissions=engine.submitted_total,
        compared_pairs=sum(1 for p in engine.pairs.values() if p.received > 0),
        converged=engine.converged_at is not None,
        convergence_at=engine.converged_at,
        kendall_tau=kendall_tau(order, true_order),
        adjacent_misorders=misorders,
        rows=rows,
        reversal_count=sum(1 for r in rows if r.reversal),
        max_overshoot=max(overshoot.values(), default=0),
        final_order=order,
        complete=complete,
        phase=engine.phase,
        events=events,
    )


@dataclass(frozen=True)
class PolicyComparison:
    balanced: SimReport
    naive: SimReport


def compare_policies(
    targets: Sequence[Target],
    model: TruePreferenceModel,
    profile: EvaluatorProfile,
    accuracy: Accuracy,
    budget: int,
    seed: int,
    *,
    collect_events: bool = True,
    build_report_rows: bool = True,
) -> PolicyComparison:
    """Run the same seeded scenario under both selection policies."""
    balanced = run_simulation(
        targets, model, profile, accuracy, budget, seed,
        policy=POLICY_BALANCED, collect_events=collect_events,
        build_report_rows=build_report_rows,
    )
    naive = run_simulation(
        targets, model, profile, accuracy, budget, seed,
        policy=POLICY_NAIVE, collect_events=collect_events,
        build_report_rows=build_report_rows,
    )
    return PolicyComparison(balanced=balanced, naive=naive)
