"""Ranking state machine: a merge sort over targets fed by judgment events.

The engine maintains a merge-sort recursion over the targets. Each active
merge node exposes one head-to-head pair; judgments accumulate per pair until
either the early-stopping criterion or the per-pair cap fixes a winner, which
advances the merge. After the full order is fixed, remaining budget is spent
on the compared pair with the worst expected error bias.

All mutating calls (join / submit / expire) must be serialized by the caller
(a single logical event queue is sufficient); reads between calls see a
consistent state.
"""

from __future__ import annotations

import warnings
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .stats import (
    Accuracy,
    PairTally,
    anytime_interval,
    error_bias,
    max_comparisons,
    sort_complexity_bounds,
)

PHASE_SORTING = "sorting"
PHASE_REFINEMENT = "refinement"
PHASE_EXHAUSTED = "exhausted"

# Pair selection policies: "balanced" scores pairs by requested (in-flight
# inclusive) counts, "naive" by received counts only. Naive exists to
# demonstrate the allocation pile-up it causes under concurrency.
POLICY_BALANCED = "balanced"
POLICY_NAIVE = "naive"

EventSink = Callable[[str, dict], None]


class ReplayError(RuntimeError):
    """An event sequence that no live run could have produced."""


@dataclass(frozen=True)
class Target:
    """One evaluation target and the stimuli it can present."""

    id: str
    label: str
    stimuli: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.stimuli:
            raise ValueError(f"target {self.id!r} has no stimuli")


@dataclass(frozen=True)
class Determination:
    """The once-only winner call for a pair."""

    winner: str
    at_received: int
    at_win_rate: float


@dataclass
class PairState:
    """Counters and decision record for one oriented pair (left vs right)."""

    left: str
    right: str
    wins: int = 0
    received: int = 0
    requested: int = 0
    determination: Determination | None = None
    created_seq: int = 0
    left_issued: int = 0
    right_issued: int = 0
    score: float = 0.5  # cached selection score, kept fresh by the engine

    @property
    def key(self) -> str:
        return f"{self.left}:{self.right}"

    @property
    def win_rate(self) -> float:
        return 0.5 if self.received == 0 else self.wins / self.received

    @property
    def status(self) -> str:
        return "determined" if self.determination is not None else "active"

    @property
    def tally(self) -> PairTally:
        return PairTally(wins=self.wins, received=self.received)


@dataclass(frozen=True)
class EvaluationRequest:
    """An outstanding judgment assignment handed to one evaluator."""

    request_id: str
    pair_key: str
    left: str
    right: str
    left_stimulus: str
    right_stimulus: str
    left_first: bool
    issued_at: float
    ttl: float
    token: str


@dataclass(frozen=True)
class SubmitResult:
    """Outcome of applying one submission."""

    status: str  # accepted | determined | converged | duplicate | unknown
    determination: Determination | None = None

    @property
    def accepted(self) -> bool:
        return self.status in ("accepted", "determined", "converged")


@dataclass
class _MergeNode:
    index: int
    parent: int | None
    children: tuple[int, int] | None = None
    target: str | None = None
    output: list[str] = field(default_factory=list)
    i: int = 0
    j: int = 0
    pair_key: str | None = None
    complete: bool = False
    activated: bool = False


def _build_tree(ids: Sequence[str]) -> tuple[list[_MergeNode], int]:
    """Binary recursion tree with the first floor(n/2) ids on the left."""
    nodes: list[_MergeNode] = []

    def rec(segment: Sequence[str], parent: int | None) -> int:
        idx = len(nodes)
        if len(segment) == 1:
            nodes.append(
                _MergeNode(
                    index=idx,
                    parent=parent,
                    target=segment[0],
                    output=[segment[0]],
                    complete=True,
                )
            )
            return idx
        nodes.append(_MergeNode(index=idx, parent=parent))
        mid = len(segment) // 2
        a = rec(segment[:mid], idx)
        b = rec(segment[mid:], idx)
        nodes[idx].children = (a, b)
        return idx

    root = rec(list(ids), None)
    return nodes, root


class RankEngine:
    """Event-driven ranking over a fixed target set under a judgment budget."""

    def __init__(
        self,
        targets: Sequence[Target],
        accuracy: Accuracy,
        budget: int,
        *,
        seed: int = 0,
        request_ttl: float = 600.0,
        policy: str = POLICY_BALANCED,
        sink: EventSink | None = None,
    ) -> None:
        if len(targets) < 2:
            raise ValueError("need at least 2 targets to rank")
        ids = [t.id for t in targets]
        if len(set(ids)) != len(ids):
            raise ValueError("target ids must be unique")
        if budget < 1:
            raise ValueError("budget must be positive")
        if policy not in (POLICY_BALANCED, POLICY_NAIVE):
            raise ValueError(f"unknown policy {policy!r}")

        self.targets: dict[str, Target] = {t.id: t for t in targets}
        self.initial_order: list[str] = ids
        self.accuracy = accuracy
        self.budget = budget
        self.m = max_comparisons(accuracy)
        self.seed = seed
        self.request_ttl = request_ttl
        self.policy = policy
        self._sink: EventSink = sink if sink is not None else (lambda kind, payload: None)

        self.pairs: dict[str, PairState] = {}
        self._pair_node: dict[str, int] = {}
        self._frontier: set[str] = set()
        self.nodes, self._root = _build_tree(ids)
        self.phase = PHASE_SORTING
        self.submitted_total = 0
        self.converged_at: int | None = None
        self.outstanding: dict[str, EvaluationRequest] = {}
        self._consumed: set[str] = set()
        self._request_seq = 0
        self._pair_seq = 0

        worst = self.m * sort_complexity_bounds(len(ids)).upper
        self.convergence_guaranteed = worst <= budget
        if not self.convergence_guaranteed:
            warnings.warn(
                f"worst-case judgment volume {worst} exceeds budget {budget}; "
                "convergence is not guaranteed",
                UserWarning,
                stacklevel=2,
            )

        for node in self.nodes:
            self._try_activate(node)

    # -- merge frontier -----------------------------------------------------

    def _inputs(self, node: _MergeNode) -> tuple[list[str], list[str]]:
        a, b = node.children  # type: ignore[misc]
        return self.nodes[a].output, self.nodes[b].output

    def _try_activate(self, node: _MergeNode) -> None:
        if node.children is None or node.complete or node.activated:
            return
        a, b = node.children
        if self.nodes[a].complete and self.nodes[b].complete:
            node.activated = True
            self._new_head(node)

    def _new_head(self, node: _MergeNode) -> None:
        s1, s2 = self._inputs(node)
        pair = PairState(left=s1[node.i], right=s2[node.j], created_seq=self._pair_seq)
        self._pair_seq += 1
        if pair.key in self.pairs:
            raise RuntimeError(f"duplicate pair {pair.key} on the frontier")
        self.pairs[pair.key] = pair
        self._pair_node[pair.key] = node.index
        self._frontier.add(pair.key)
        node.pair_key = pair.key
        self._refresh_score(pair)

    def _advance(self, node: _MergeNode, det: Determination) -> bool:
        """Consume the determined head pair; returns True when the root completes."""
        s1, s2 = self._inputs(node)
        pair = self.pairs[node.pair_key]  # type: ignore[index]
        self._frontier.discard(pair.key)
        node.pair_key = None
        if det.winner == pair.left:
            node.output.append(s2[node.j])
            node.j += 1
        else:
            node.output.append(s1[node.i])
            node.i += 1
        if node.i < len(s1) and node.j < len(s2):
            self._new_head(node)
            return False
        if node.i < len(s1):
            node.output.extend(s1[node.i :])
            node.i = len(s1)
        elif node.j < len(s2):
            node.output.extend(s2[node.j :])
            node.j = len(s2)
        node.complete = True
        if node.parent is None:
            return True
        self._try_activate(self.nodes[node.parent])
        return False

    # -- pair selection -----------------------------------------------------

    def _refresh_score(self, pair: PairState) -> None:
        count = pair.requested if self.policy == POLICY_BALANCED else pair.received
        # The raw anytime interval exceeds 1/2 for small positive counts; on a
        # probability scale that is vacuous, so the selection score caps it.
        interval = min(anytime_interval(count, self.accuracy.delta), 0.5)
        pair.score = error_bias(interval, pair.win_rate)

    def _select_pair(self) -> PairState:
        if self.phase == PHASE_SORTING:
            candidates = [self.pairs[k] for k in self._frontier]
        else:
            candidates = list(self.pairs.values())
        # Ties break toward the least-loaded pair, then lexicographically. The
        # naive policy substitutes received for requested counts throughout,
        # so in-flight work is invisible to it.
        if self.policy == POLICY_BALANCED:
            return min(candidates, key=lambda p: (-p.score, p.requested, p.key))
        return min(candidates, key=lambda p: (-p.score, p.received, p.key))

    def _presentation_bit(self, request_seq: int) -> bool:
        # Pure function of (seed, request counter) so restart/replay and the
        # live run agree on presentation order.
        return zlib.crc32(f"{self.seed}:pres:{request_seq}".encode()) & 1 == 1

    # -- event handlers -----------------------------------------------------

    def join(self, token: str, now: float) -> EvaluationRequest | None:
        """Issue the next judgment request, or None when the budget is spoken for.

        In-flight requests reserve budget; expiry releases the reservation.
        """
        if self.submitted_total + len(self.outstanding) >= self.budget:
            return None
        pair = self._select_pair()
        pair.requested += 1
        self._refresh_score(pair)
        request_id = f"r{self._request_seq:06d}"
        left_target = self.targets[pair.left]
        right_target = self.targets[pair.right]
        left_stim = left_target.stimuli[pair.left_issued % len(left_target.stimuli)]
        right_stim = right_target.stimuli[pair.right_issued % len(right_target.stimuli)]
        pair.left_issued += 1
        pair.right_issued += 1
        request = EvaluationRequest(
            request_id=request_id,
            pair_key=pair.key,
            left=pair.left,
            right=pair.right,
            left_stimulus=left_stim,
            right_stimulus=right_stim,
            left_first=self._presentation_bit(self._request_seq),
            issued_at=now,
            ttl=self.request_ttl,
            token=token,
        )
        self._request_seq += 1
        self.outstanding[request_id] = request
        self._sink(
            "Issue",
            {
                "request_id": request.request_id,
                "token": token,
                "pair": pair.key,
                "left": pair.left,
                "right": pair.right,
                "left_stimulus": left_stim,
                "right_stimulus": right_stim,
                "left_first": request.left_first,
                "issued_at": now,
                "ttl": request.ttl,
            },
        )
        return request

    def submit(self, request_id: str, left_won: bool, now: float) -> SubmitResult:
        """Apply one preference judgment expressed in pair orientation."""
        request = self.outstanding.pop(request_id, None)
        if request is None:
            if request_id in self._consumed:
                return SubmitResult(status="duplicate")
            return SubmitResult(status="unknown")
        self._consumed.add(request_id)
        pair = self.pairs[request.pair_key]
        if left_won:
            pair.wins += 1
        pair.received += 1
        self.submitted_total += 1
        self._sink(
            "Submit",
            {
                "request_id": request_id,
                "token": request.token,
                "pair": pair.key,
                "value": 1 if left_won else 0,
                "wins": pair.wins,
                "received": pair.received,
                "submitted_total": self.submitted_total,
            },
        )

        status = "accepted"
        determination: Determination | None = None
        if pair.determination is None and self._should_determine(pair):
            determination = Determination(
                winner=pair.left if pair.win_rate > 0.5 else pair.right,
                at_received=pair.received,
                at_win_rate=pair.win_rate,
            )
            pair.determination = determination
            status = "determined"
            self._sink(
                "Determine",
                {
                    "pair": pair.key,
                    "winner": determination.winner,
                    "at_received": determination.at_received,
                    "at_win_rate": determination.at_win_rate,
                },
            )
            node = self.nodes[self._pair_node[pair.key]]
            if self._advance(node, determination):
                self.converged_at = self.submitted_total
                self.phase = PHASE_REFINEMENT
                status = "converged"
                final_order, _ = self.order()
                self._sink(
                    "Converge",
                    {"at_submissions": self.submitted_total, "order": final_order},
                )
        self._refresh_score(pair)
        if self.submitted_total >= self.budget:
            self.phase = PHASE_EXHAUSTED
            self._sink("Exhaust", {"at_submissions": self.submitted_total})
        return SubmitResult(status=status, determination=determination)

    def _should_determine(self, pair: PairState) -> bool:
        if pair.received >= self.m:
            return True
        interval = anytime_interval(pair.received, self.accuracy.delta)
        return error_bias(interval, pair.win_rate) <= self.accuracy.epsilon

    def expire(self, request_id: str, now: float) -> bool:
        """Release an outstanding request; unknown ids are a no-op."""
        request = self.outstanding.pop(request_id, None)
        if request is None:
            return False
        pair = self.pairs[request.pair_key]
        pair.requested -= 1
        self._refresh_score(pair)
        self._sink(
            "Expire",
            {"request_id": request_id, "pair": pair.key, "requested": pair.requested},
        )
        return True

    # -- views ----------------------------------------------------------------

    def is_consumed(self, request_id: str) -> bool:
        """Whether this request id was already turned into a submission."""
        return request_id in self._consumed

    def order(self) -> tuple[list[str], bool]:
        """Current order (ascending quality) and whether it is the final one."""

        def render(node: _MergeNode) -> list[str]:
            if node.complete:
                return list(node.output)
            if node.activated:
                s1, s2 = self._inputs(node)
                return list(node.output) + s1[node.i :] + s2[node.j :]
            a, b = node.children  # type: ignore[misc]
            return render(self.nodes[a]) + render(self.nodes[b])

        root = self.nodes[self._root]
        return render(root), root.complete

    def frontier_pairs(self) -> list[str]:
        return sorted(self._frontier)

    # -- persistence ----------------------------------------------------------

    def snapshot(self) -> dict:
        """Full serializable state; `restore` round-trips it exactly."""
        return {
            "config": {
                "epsilon": self.accuracy.epsilon,
                "delta": self.accuracy.delta,
                "budget": self.budget,
                "seed": self.seed,
                "request_ttl": self.request_ttl,
                "policy": self.policy,
                "targets": [
                    {
                        "id": t.id,
                        "label": t.label,
                        "stimuli": list(t.stimuli),
                    }
                    for t in (self.targets[i] for i in self.initial_order)
                ],
            },
            "phase": self.phase,
            "submitted_total": self.submitted_total,
            "converged_at": self.converged_at,
            "request_seq": self._request_seq,
            "pair_seq": self._pair_seq,
            "pairs": [
                {
                    "left": p.left,
                    "right": p.right,
                    "wins": p.wins,
                    "received": p.received,
                    "requested": p.requested,
                    "created_seq": p.created_seq,
                    "left_issued": p.left_issued,
                    "right_issued": p.right_issued,
                    "determination": None
                    if p.determination is None
                    else {
                        "winner": p.determination.winner,
                        "at_received": p.determination.at_received,
                        "at_win_rate": p.determination.at_win_rate,
                    },
                }
                for p in sorted(self.pairs.values(), key=lambda p: p.created_seq)
            ],
            "nodes": [
                {
                    "output": list(n.output),
                    "i": n.i,
                    "j": n.j,
                    "pair_key": n.pair_key,
                    "complete": n.complete,
                    "activated": n.activated,
                }
                for n in self.nodes
            ],
            "outstanding": [
                {
                    "request_id": r.request_id,
                    "pair": r.pair_key,
                    "left": r.left,
                    "right": r.right,
                    "left_stimulus": r.left_stimulus,
                    "right_stimulus": r.right_stimulus,
                    "left_first": r.left_first,
                    "issued_at": r.issued_at,
                    "ttl": r.ttl,
                    "token": r.token,
                }
                for r in sorted(self.outstanding.values(), key=lambda r: r.request_id)
            ],
            "consumed": sorted(self._consumed),
        }

    @classmethod
    def from_snapshot(cls, snap: dict, *, sink: EventSink | None = None) -> "RankEngine":
        cfg = snap["config"]
        with warnings.catch_warnings():
            # The convergence warning already fired on the original engine.
            warnings.simplefilter("ignore", UserWarning)
            engine = cls(
                targets=[
                    Target(id=t["id"], label=t["label"], stimuli=tuple(t["stimuli"]))
                    for t in cfg["targets"]
                ],
                accuracy=Accuracy(epsilon=cfg["epsilon"], delta=cfg["delta"]),
                budget=cfg["budget"],
                seed=cfg["seed"],
                request_ttl=cfg["request_ttl"],
                policy=cfg["policy"],
                sink=sink,
            )
        engine.phase = snap["phase"]
        engine.submitted_total = snap["submitted_total"]
        engine.converged_at = snap["converged_at"]
        engine._request_seq = snap["request_seq"]
        engine._pair_seq = snap["pair_seq"]
        engine.pairs = {}
        engine._pair_node = {}
        for p in snap["pairs"]:
            det = p["determination"]
            pair = PairState(
                left=p["left"],
                right=p["right"],
                wins=p["wins"],
                received=p["received"],
                requested=p["requested"],
                created_seq=p["created_seq"],
                left_issued=p["left_issued"],
                right_issued=p["right_issued"],
                determination=None
                if det is None
                else Determination(
                    winner=det["winner"],
                    at_received=det["at_received"],
                    at_win_rate=det["at_win_rate"],
                ),
            )
            engine.pairs[pair.key] = pair
        for node, ns in zip(engine.nodes, snap["nodes"]):
            node.output = list(ns["output"])
            node.i = ns["i"]
            node.j = ns["j"]
            node.pair_key = ns["pair_key"]
            node.complete = ns["complete"]
            node.activated = ns["activated"]
            if node.pair_key is not None:
                engine._pair_node[node.pair_key] = node.index
        # Determined pairs keep their node link for reporting even though they
        # are off the frontier.
        for key in engine.pairs:
            engine._pair_node.setdefault(key, -1)
        engine._frontier = {
            n.pair_key for n in engine.nodes if n.pair_key is not None and not n.complete
        }
        engine.outstanding = {
            r["request_id"]: EvaluationRequest(
                request_id=r["request_id"],
                pair_key=r["pair"],
                left=r["left"],
                right=r["right"],
                left_stimulus=r["left_stimulus"],
                right_stimulus=r["right_stimulus"],
                left_first=r["left_first"],
                issued_at=r["issued_at"],
                ttl=r["ttl"],
                token=r["token"],
            )
            for r in snap["outstanding"]
        }
        engine._consumed = set(snap["consumed"])
        for pair in engine.pairs.values():
            engine._refresh_score(pair)
        return engine

    # -- replay -----------------------------------------------------------------

    def _apply_issue(self, payload: dict, line: int) -> None:
        pair = self.pairs.get(payload["pair"])
        if pair is None:
            raise ReplayError(f"event {line}: issue for unknown pair {payload['pair']!r}")
        request_id = payload["request_id"]
        if request_id in self.outstanding or request_id in self._consumed:
            raise ReplayError(f"event {line}: request id {request_id!r} reused")
        pair.requested += 1
        pair.left_issued += 1
        pair.right_issued += 1
        self._refresh_score(pair)
        self._request_seq += 1
        self.outstanding[request_id] = EvaluationRequest(
            request_id=request_id,
            pair_key=pair.key,
            left=pair.left,
            right=pair.right,
            left_stimulus=payload["left_stimulus"],
            right_stimulus=payload["right_stimulus"],
            left_first=payload["left_first"],
            issued_at=payload["issued_at"],
            ttl=payload["ttl"],
            token=payload["token"],
        )


def replay_events(
    engine: RankEngine, records: Iterable[tuple[str, dict]], *, strict: bool = True
) -> RankEngine:
    """Re-apply an event sequence onto a freshly initialized engine.

    Only Issue / Submit / Expire records mutate state; Determine, Converge and
    Exhaust lines are derived and are cross-checked against the re-derived
    state when present. Raises ReplayError on a sequence no live run could
    have produced, naming the offending record.
    """
    for line, (kind, payload) in enumerate(records, start=1):
        if kind == "Issue":
            engine._apply_issue(payload, line)
        elif kind == "Submit":
            result = engine.submit(
                payload["request_id"], payload["value"] == 1, now=0.0
            )
            if not result.accepted:
                raise ReplayError(
                    f"event {line}: submit for {payload['request_id']!r} "
                    f"rejected ({result.status}); submit must follow its issue"
                )
        elif kind == "Expire":
            if not engine.expire(payload["request_id"], now=0.0):
                raise ReplayError(
                    f"event {line}: expire for unknown request {payload['request_id']!r}"
                )
        elif kind == "Determine":
            if not strict:
                continue
            pair = engine.pairs.get(payload["pair"])
            if pair is None or pair.determination is None:
                raise ReplayError(f"event {line}: determine not reproduced by replay")
            if pair.determination.winner != payload["winner"]:
                raise ReplayError(
                    f"event {line}: replayed winner {pair.determination.winner!r} "
                    f"differs from logged {payload['winner']!r}"
                )
        elif kind in ("Join", "Converge", "Exhaust"):
            continue
        else:
            raise ReplayError(f"event {line}: unknown event kind {kind!r}")
    return engine
