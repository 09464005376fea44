"""Engine behavior: frontier structure, selection, determination, replay."""

import json
import random
import warnings

import pytest

from prefrank.engine import (
    POLICY_NAIVE,
    RankEngine,
    ReplayError,
    Target,
    replay_events,
)
from prefrank.stats import Accuracy

ACC = Accuracy(epsilon=0.0877, delta=0.05)


def make_targets(n, stimuli_per_target=1):
    return [
        Target(
            id=f"t{i}",
            label=f"T{i}",
            stimuli=tuple(f"t{i}-s{k}.wav" for k in range(stimuli_per_target)),
        )
        for i in range(n)
    ]


def make_engine(n, budget=100_000, sink=None, policy="balanced", stimuli_per_target=1):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return RankEngine(
            make_targets(n, stimuli_per_target),
            ACC,
            budget,
            sink=sink,
            policy=policy,
        )


def drain_pair(engine, pair_key, outcomes, token="t"):
    """Issue+submit judgments until the listed outcomes are consumed."""
    results = []
    for won in outcomes:
        request = engine.join(token, now=0.0)
        assert request is not None and request.pair_key == pair_key
        results.append(engine.submit(request.request_id, won, now=0.0))
    return results


class TestInit:
    def test_four_targets_has_two_leaf_merges(self):
        engine = make_engine(4)
        assert engine.frontier_pairs() == ["t0:t1", "t2:t3"]

    def test_three_targets_splits_at_floor(self):
        # floor(3/2) = 1: the singleton [t0] waits for the root merge while
        # [t1, t2] forms the only active pair.
        engine = make_engine(3)
        assert engine.frontier_pairs() == ["t1:t2"]

    def test_seven_targets_has_three_leaf_merges(self):
        engine = make_engine(7)
        assert engine.frontier_pairs() == ["t1:t2", "t3:t4", "t5:t6"]

    def test_reference_scale_no_warning(self):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            engine = RankEngine(make_targets(27), ACC, budget=24960)
        assert engine.m == 240
        assert engine.convergence_guaranteed
        assert not [w for w in caught if issubclass(w.category, UserWarning)]

    def test_warns_when_budget_below_worst_case(self):
        with pytest.warns(UserWarning, match="not guaranteed"):
            engine = RankEngine(make_targets(27), ACC, budget=24959)
        assert not engine.convergence_guaranteed

    def test_rejects_degenerate_inputs(self):
        with pytest.raises(ValueError):
            RankEngine(make_targets(1), ACC, budget=10)
        with pytest.raises(ValueError):
            RankEngine(make_targets(3), ACC, budget=0)
        dupes = [make_targets(2)[0]] * 2
        with pytest.raises(ValueError):
            RankEngine(dupes, ACC, budget=10)


class TestJoin:
    def test_single_fresh_pair_selected(self):
        engine = make_engine(2)
        request = engine.join("tok", now=0.0)
        assert request is not None
        assert request.pair_key == "t0:t1"
        assert engine.pairs["t0:t1"].requested == 1

    def test_sequential_joins_spread_over_fresh_pairs(self):
        engine = make_engine(7)
        issued = [engine.join("tok", now=0.0).pair_key for _ in range(3)]
        assert sorted(issued) == ["t1:t2", "t3:t4", "t5:t6"]

    def test_naive_policy_piles_onto_one_pair(self):
        engine = make_engine(7, policy=POLICY_NAIVE)
        issued = [engine.join("tok", now=0.0).pair_key for _ in range(3)]
        assert len(set(issued)) == 1

    def test_budget_gate_counts_outstanding(self):
        engine = make_engine(7, budget=10)
        requests = [engine.join("tok", now=0.0) for _ in range(10)]
        assert all(r is not None for r in requests)
        for r in requests[:8]:
            engine.submit(r.request_id, True, now=0.0)
        # 8 submitted + 2 outstanding = budget: no new work.
        assert engine.join("tok", now=0.0) is None

    def test_request_ids_unique(self):
        engine = make_engine(4)
        ids = {engine.join("tok", now=0.0).request_id for _ in range(50)}
        assert len(ids) == 50


class TestDetermination:
    def test_all_wins_determines_at_fourteen(self):
        engine = make_engine(2)
        results = drain_pair(engine, "t0:t1", [True] * 14)
        assert all(r.status == "accepted" for r in results[:13])
        final = results[13]
        assert final.status == "converged"  # n=2: determination completes the root
        det = engine.pairs["t0:t1"].determination
        assert det is not None
        assert det.at_received == 14
        assert det.at_win_rate == 1.0
        assert det.winner == "t0"

    def test_near_tie_hits_max_limit(self):
        engine = make_engine(2, budget=100_000)
        outcomes = [i % 2 == 0 for i in range(240)]
        results = drain_pair(engine, "t0:t1", outcomes)
        det = engine.pairs["t0:t1"].determination
        assert det is not None
        assert det.at_received == 240 == engine.m
        assert det.at_win_rate == 0.5
        assert det.winner == "t1"  # ties go to the right element
        assert all(r.status == "accepted" for r in results[:239])

    def test_two_targets_left_always_wins_order(self):
        engine = make_engine(2)
        drain_pair(engine, "t0:t1", [True] * 14)
        order, complete = engine.order()
        assert complete
        assert order == ["t1", "t0"]  # ascending quality: loser first

    def test_incomplete_order_before_any_determination(self):
        engine = make_engine(4)
        order, complete = engine.order()
        assert not complete
        assert sorted(order) == sorted(f"t{i}" for i in range(4))

    def test_submissions_after_determination_update_tally_only(self):
        events = []
        engine = make_engine(2, sink=lambda k, p: events.append((k, p)))
        # Leave two requests in flight while the pair determines.
        early = [engine.join("tok", now=0.0) for _ in range(16)]
        for r in early[:14]:
            engine.submit(r.request_id, True, now=0.0)
        assert engine.pairs["t0:t1"].determination is not None
        for r in early[14:]:
            result = engine.submit(r.request_id, False, now=0.0)
            assert result.status == "accepted"
        pair = engine.pairs["t0:t1"]
        assert pair.received == 16
        assert pair.determination.at_received == 14
        assert sum(1 for k, _ in events if k == "Determine") == 1

    def test_duplicate_submit_rejected(self):
        engine = make_engine(2)
        request = engine.join("tok", now=0.0)
        first = engine.submit(request.request_id, True, now=0.0)
        assert first.accepted
        second = engine.submit(request.request_id, True, now=0.0)
        assert second.status == "duplicate"
        assert engine.pairs["t0:t1"].received == 1

    def test_unknown_submit_rejected(self):
        engine = make_engine(2)
        assert engine.submit("nope", True, now=0.0).status == "unknown"


class TestExpire:
    def test_expire_restores_requested_count(self):
        engine = make_engine(2)
        request = engine.join("tok", now=0.0)
        assert engine.pairs["t0:t1"].requested == 1
        assert engine.expire(request.request_id, now=100.0)
        assert engine.pairs["t0:t1"].requested == 0

    def test_late_submit_after_expiry_is_unknown(self):
        engine = make_engine(2)
        request = engine.join("tok", now=0.0)
        engine.expire(request.request_id, now=100.0)
        assert engine.submit(request.request_id, True, now=101.0).status == "unknown"

    def test_ledger_arithmetic(self):
        engine = make_engine(2)
        requests = [engine.join("tok", now=0.0) for _ in range(3)]
        engine.expire(requests[0].request_id, now=10.0)
        engine.submit(requests[1].request_id, True, now=11.0)
        engine.submit(requests[2].request_id, False, now=12.0)
        pair = engine.pairs["t0:t1"]
        assert pair.requested == 2
        assert pair.received == 2

    def test_unknown_expire_is_noop(self):
        engine = make_engine(2)
        assert not engine.expire("missing", now=0.0)

    def test_expiry_releases_budget_slot(self):
        engine = make_engine(2, budget=1)
        request = engine.join("tok", now=0.0)
        assert engine.join("tok", now=0.0) is None
        engine.expire(request.request_id, now=50.0)
        assert engine.join("tok", now=0.0) is not None


class TestBalancedStimuli:
    def test_round_robin_within_pair(self):
        engine = make_engine(2, stimuli_per_target=3)
        seen = []
        for _ in range(7):
            request = engine.join("tok", now=0.0)
            seen.append(request.left_stimulus)
        counts = {s: seen.count(s) for s in set(seen)}
        assert max(counts.values()) - min(counts.values()) <= 1

    def test_presentation_bit_varies_and_is_recorded(self):
        engine = make_engine(2)
        bits = [engine.join("tok", now=0.0).left_first for _ in range(64)]
        assert any(bits) and not all(bits)


def run_random_session(
    n, budget, seed, sink=None, check_conservation=False, stop_on_converge=False
):
    """Random full run; per-pair outcome streams are derived from pair keys."""
    engine = make_engine(n, budget=budget, sink=sink)
    rng = random.Random(seed)
    draws = {}

    def draw(key):
        rng_pair = draws.setdefault(key, random.Random(f"stream:{key}"))
        return rng_pair.random() < 0.7

    pending = []
    ids = sorted(f"t{i}" for i in range(n))
    while not (stop_on_converge and engine.converged_at is not None):
        request = engine.join("tok", now=0.0)
        if request is not None:
            pending.append(request)
        if request is None and not pending:
            break
        if pending and (request is None or rng.random() < 0.6):
            r = pending.pop(rng.randrange(len(pending)))
            engine.submit(r.request_id, draw(r.pair_key), now=0.0)
        if check_conservation:
            order, _ = engine.order()
            assert sorted(order) == ids, "frontier lost or duplicated a target"
    return engine


class TestInvariants:
    def test_frontier_conservation_and_exactly_once(self):
        events = []
        engine = run_random_session(
            9, budget=3000, seed=5, sink=lambda k, p: events.append((k, p)),
            check_conservation=True,
        )
        determines = [p["pair"] for k, p in events if k == "Determine"]
        assert len(determines) == len(set(determines))
        assert sum(1 for k, _ in events if k == "Converge") <= 1
        assert engine.submitted_total <= engine.budget

    def test_budget_safety(self):
        engine = run_random_session(5, budget=200, seed=3)
        assert engine.submitted_total <= 200

    def test_determined_pairs_within_sort_bounds_when_converged(self):
        from prefrank.stats import sort_complexity_bounds

        for seed in range(5):
            engine = run_random_session(8, budget=100_000, seed=seed, stop_on_converge=True)
            if engine.converged_at is None:
                continue
            determined = sum(
                1 for p in engine.pairs.values() if p.determination is not None
            )
            bounds = sort_complexity_bounds(8)
            assert bounds.lower <= determined <= bounds.upper


class TestOrderInsensitivity:
    """Fixed per-pair judgment streams give the same final order no matter how
    submissions interleave across pairs."""

    def run_with_interleaving(self, seed):
        engine = make_engine(8, budget=100_000)
        rng = random.Random(seed)
        draws = {}

        def draw(key):
            rng_pair = draws.setdefault(key, random.Random(f"duel:{key}"))
            return rng_pair.random() < 0.75

        pending = []
        while engine.converged_at is None:
            request = engine.join("tok", now=0.0)
            if request is not None:
                pending.append(request)
            # Randomly delay submissions to permute cross-pair interleaving.
            while pending and (request is None or rng.random() < 0.5):
                r = pending.pop(rng.randrange(len(pending)))
                engine.submit(r.request_id, draw(r.pair_key), now=0.0)
        order, complete = engine.order()
        assert complete
        return order

    def test_final_order_independent_of_interleaving(self):
        orders = {tuple(self.run_with_interleaving(seed)) for seed in range(6)}
        assert len(orders) == 1


class TestRefinementPhase:
    def converge_small(self, budget=5000):
        engine = make_engine(4, budget=budget)
        draws = {}

        def draw(key):
            rng = draws.setdefault(key, random.Random(f"ref:{key}"))
            return rng.random() < 0.8

        while engine.converged_at is None:
            request = engine.join("tok", now=0.0)
            engine.submit(request.request_id, draw(request.pair_key), now=0.0)
        return engine, draw

    def test_eligible_set_is_compared_pairs(self):
        engine, draw = self.converge_small()
        compared = set(engine.pairs)
        for _ in range(40):
            request = engine.join("tok", now=0.0)
            assert request.pair_key in compared
            engine.submit(request.request_id, draw(request.pair_key), now=0.0)
        assert set(engine.pairs) == compared  # refinement creates no new pairs

    def test_every_issue_targets_current_worst_expected_bias(self):
        from prefrank.stats import anytime_interval, error_bias

        engine, draw = self.converge_small()
        for _ in range(60):
            expected = min(
                engine.pairs.values(),
                key=lambda p: (
                    -error_bias(
                        min(anytime_interval(p.requested, ACC.delta), 0.5), p.win_rate
                    ),
                    p.requested,
                    p.key,
                ),
            )
            request = engine.join("tok", now=0.0)
            assert request.pair_key == expected.key
            engine.submit(request.request_id, draw(request.pair_key), now=0.0)

    def test_refinement_reduces_worst_hoeffding_bias(self):
        from prefrank.stats import error_bias, hoeffding_interval

        def worst(engine):
            return max(
                error_bias(hoeffding_interval(p.received, ACC.delta), p.win_rate)
                for p in engine.pairs.values()
            )

        engine, draw = self.converge_small(budget=3000)
        at_convergence = worst(engine)
        while True:
            request = engine.join("tok", now=0.0)
            if request is None:
                break
            engine.submit(request.request_id, draw(request.pair_key), now=0.0)
        assert engine.submitted_total == 3000
        assert worst(engine) <= at_convergence


class TestSnapshotReplay:
    def test_snapshot_round_trip(self):
        engine = run_random_session(6, budget=400, seed=11)
        snap = engine.snapshot()
        restored = RankEngine.from_snapshot(snap)
        assert restored.snapshot() == snap

    def test_restored_engine_continues_identically(self):
        events_a, events_b = [], []
        engine = make_engine(5, budget=5000)
        for _ in range(7):
            r = engine.join("tok", now=0.0)
            engine.submit(r.request_id, True, now=0.0)
        live = RankEngine.from_snapshot(engine.snapshot(), sink=lambda k, p: events_a.append((k, p)))
        restored = RankEngine.from_snapshot(engine.snapshot(), sink=lambda k, p: events_b.append((k, p)))
        for twin in (live, restored):
            for _ in range(20):
                r = twin.join("tok", now=1.0)
                twin.submit(r.request_id, False, now=1.0)
        assert live.snapshot() == restored.snapshot()
        assert events_a == events_b

    def test_replay_reproduces_live_state(self):
        events = []
        live = run_random_session(7, budget=800, seed=2, sink=lambda k, p: events.append((k, p)))
        replayed = replay_events(make_engine(7, budget=800), events)
        assert replayed.snapshot() == live.snapshot()

    def test_replay_of_empty_log_is_fresh_state(self):
        fresh = make_engine(4)
        replayed = replay_events(make_engine(4), [])
        assert replayed.snapshot() == fresh.snapshot()

    def test_replay_of_prefix_is_valid_intermediate_state(self):
        events = []
        run_random_session(6, budget=600, seed=9, sink=lambda k, p: events.append((k, p)))
        half = replay_events(make_engine(6, budget=600), events[: len(events) // 2])
        order, complete = half.order()
        assert sorted(order) == sorted(f"t{i}" for i in range(6))
        assert not complete

    def test_replay_submit_before_issue_names_line(self):
        events = []
        engine = make_engine(2, sink=lambda k, p: events.append((k, p)))
        r = engine.join("tok", now=0.0)
        engine.submit(r.request_id, True, now=0.0)
        bad = [events[1], events[0]]  # Submit first, then Issue
        with pytest.raises(ReplayError, match="event 1"):
            replay_events(make_engine(2), bad)

    def test_replay_rejects_unknown_kind(self):
        with pytest.raises(ReplayError, match="unknown event kind"):
            replay_events(make_engine(2), [("Frobnicate", {})])

    def test_event_log_serializable(self):
        events = []
        run_random_session(4, budget=100, seed=1, sink=lambda k, p: events.append((k, p)))
        text = "\n".join(json.dumps({"kind": k, "payload": p}) for k, p in events)
        assert "Issue" in text and "Submit" in text
