#!/usr/bin/env python3
"""
Tests for continuous heavy hitter tracking and the moment sum tracker
"""

import math
from collections import Counter
from fractions import Fraction
from types import SimpleNamespace

import numpy as np
import pytest

from experiment_runner import fit_scaling_exponent
from frequency_core import CommLedger, ParameterError, ProtocolError, SeededRng
from ground_truth import PrefixOracle
from network_simulator import Message, iter_events, run_tracking
from stream_generator import generate
from tracking_heavy_hitters import (
    CHECKPOINT_COLUMNS,
    CoordinatorHHState,
    L2HeavyHitterTracker,
    LpHeavyHitterTracker,
    MomentSumTracker,
    SiteTrackerState,
    checkpoint_rows,
    l2hh_coordinator_apply,
    l2hh_query,
    l2hh_site_on_arrival,
    l2hh_tracking,
    lp_prime_sum_tracker,
    lphh_tracking,
    rescaled_eps,
    tracking_l2_eps,
)


class NeedDraw(Exception):
    def __init__(self, high):
        self.high = high


class ScriptedRng:
    """Replays fixed threshold draws and asks for a branch once they run out"""

    def __init__(self, script):
        self.script = list(script)

    def integers(self, low, high):
        if not self.script:
            raise NeedDraw(high)
        return self.script.pop(0)


def expected_estimate(arrivals, F, eps, script=()):
    """Exact E[v̂] over every threshold draw for `arrivals` copies of item 1"""
    state = SiteTrackerState(0, F=F, F2=F)
    coordinator = CoordinatorHHState()
    rng = ScriptedRng(script)
    try:
        for _ in range(arrivals):
            for message in l2hh_site_on_arrival(state, 1, eps, rng):
                l2hh_coordinator_apply(coordinator, message)
    except NeedDraw as branch:
        return sum(
            Fraction(1, branch.high) * expected_estimate(arrivals, F, eps, tuple(script) + (r,))
            for r in range(1, branch.high + 1)
        )
    return Fraction(l2hh_query(coordinator, 1))


# ============================================================================
# SITE AUTOMATON
# ============================================================================

def test_interval_bound():
    state = SiteTrackerState(0, F=400)
    assert state.interval_bound(1, 0.5) == 50
    assert state.interval_bound(7, 0.5) == 1


def test_first_arrival_message_probability():
    hits = 0
    for r in range(1, 51):
        trial = SiteTrackerState(0, F=400, F2=400)
        hits += bool(l2hh_site_on_arrival(trial, 3, 0.5, ScriptedRng([r])))
    assert hits == 1


def test_interval_estimate_is_exactly_unbiased():
    # eps² F = 36: intervals of length 2 and 4 with bounds 18 and 9, the
    # phase ends at the 6th arrival
    for arrivals in range(1, 8):
        assert expected_estimate(arrivals, 144, 0.5) == arrivals


def test_phase_end_sends_exact_count():
    state = SiteTrackerState(0, F=144, F2=144)
    rng = ScriptedRng([18, 9])
    messages = []
    for _ in range(6):
        messages.extend(l2hh_site_on_arrival(state, 1, 0.5, rng))
    assert messages[-1] == Message(1, 0, 1, 6.0)
    assert state.items[1].phase == 2
    assert state.completed_phases[0] == 1


def test_round_starts_when_local_f2_doubles():
    state = SiteTrackerState(0)
    rng = SeededRng(1)
    for item in (0, 1):
        l2hh_site_on_arrival(state, item, 0.5, rng)
    # F2 reaches 2 = 2F
    assert state.round_id == 1
    assert state.F == 2
    l2hh_site_on_arrival(state, 0, 0.5, rng)
    assert state.items[0].round_id == 1
    assert state.items[0].count == 2


def test_coordinator_overwrites_on_phase_end():
    coordinator = CoordinatorHHState()
    l2hh_coordinator_apply(coordinator, Message(0, 0, 5, 18.0))
    l2hh_coordinator_apply(coordinator, Message(0, 1, 5, 2.0))
    assert l2hh_query(coordinator, 5) == 20.0
    l2hh_coordinator_apply(coordinator, Message(1, 0, 5, 7.0))
    assert l2hh_query(coordinator, 5) == 9.0
    with pytest.raises(ProtocolError):
        l2hh_coordinator_apply(coordinator, Message('bogus', 0, 5, 1.0))


# ============================================================================
# l2 TRACKER
# ============================================================================

def small_stream(m, k=3, n=16, seed=5):
    return generate(SimpleNamespace(k=k, n=n, m=m, generator='zipf(1.2)', seed=seed))


def test_tiny_eps_forwards_every_arrival_exactly():
    events = small_stream(200)
    queries = [50, 100, 150, 200]
    ledger = CommLedger(3, 16)
    answers = l2hh_tracking(events, 3, 0.004, SeededRng(3), queries, ledger)
    oracle = PrefixOracle(events, 3, 16, 2, queries)
    for t in queries:
        assert answers[t] == {j: float(c) for j, c in oracle.snapshot(t).counts.items()}
    assert ledger.total_messages == 2 * len(events)


def test_phases_per_round_are_bounded():
    eps = 0.3
    events = small_stream(3000, k=2, n=32, seed=8)
    tracker = L2HeavyHitterTracker(2, eps)
    run_tracking(events, tracker, [], SeededRng(8), CommLedger(2, 32))
    assert 0 < tracker.max_phases_per_round() <= 2 / eps ** 2 + 1


def test_tracking_is_reproducible():
    events = small_stream(500)
    first = l2hh_tracking(events, 3, 0.3, SeededRng(4), [250, 500], CommLedger(3, 16))
    second = l2hh_tracking(events, 3, 0.3, SeededRng(4), [250, 500], CommLedger(3, 16))
    assert first == second


def test_rescaled_eps():
    assert rescaled_eps(0.5, 1024) == pytest.approx(0.5 / math.sqrt(18))
    assert rescaled_eps(0.5, 2) == pytest.approx(0.5 / math.sqrt(2))
    with pytest.raises(ParameterError):
        rescaled_eps(1.5, 10)


def test_tracker_runs_at_rescaled_eps_when_given_a_length():
    assert L2HeavyHitterTracker(3, 0.3, m=5000).eps == rescaled_eps(0.3, 5000)
    assert L2HeavyHitterTracker(3, 0.3, m=5000).target_eps == 0.3
    assert L2HeavyHitterTracker(3, 0.3).eps == 0.3

    lp = LpHeavyHitterTracker(4, 3, 0.3, 5000)
    assert {instance.eps for instance in lp.instances} == {rescaled_eps(tracking_l2_eps(0.3, 3, 4), 5000)}
    plain = LpHeavyHitterTracker(4, 3, 0.3, 5000, rescale=False)
    assert {instance.eps for instance in plain.instances} == {plain.l2_eps}


def test_l2_tracking_rescales_by_default():
    events = small_stream(500)
    answers = l2hh_tracking(events, 3, 0.3, SeededRng(6), [250, 500], CommLedger(3, 16))
    direct = run_tracking(
        events, L2HeavyHitterTracker(3, rescaled_eps(0.3, 500)), [250, 500], SeededRng(6), CommLedger(3, 16)
    )
    assert answers == direct

    unscaled = CommLedger(3, 16)
    rescaled = CommLedger(3, 16)
    l2hh_tracking(events, 3, 0.3, SeededRng(6), [], unscaled, rescale=False)
    l2hh_tracking(events, 3, 0.3, SeededRng(6), [], rescaled)
    assert rescaled.total_messages > unscaled.total_messages


# ============================================================================
# COMMUNICATION SCALING
# ============================================================================

def distinct_item_stream(k, per_site):
    """Round-robin sites, every arrival a fresh item"""
    sites = np.tile(np.arange(k), per_site)
    return list(iter_events(sites, range(k * per_site)))


def distinct_item_messages(k, eps, per_site, seed=0):
    ledger = CommLedger(k, k * per_site)
    run_tracking(distinct_item_stream(k, per_site), L2HeavyHitterTracker(k, eps), [], SeededRng(seed), ledger)
    return ledger.total_messages


def test_distinct_items_cost_matches_closed_form():
    # eps = 1/4, 2^11 arrivals per site: 64 + 32 deterministic, then 32 per round over five rounds
    total = distinct_item_messages(4, 0.25, 2048)
    assert abs(total - 4 * 256) <= 0.12 * 4 * 256


def test_messages_grow_as_inverse_eps_squared():
    eps_values = [0.5, 0.25, 0.125]
    totals = [distinct_item_messages(4, eps, int(128 / eps ** 2)) for eps in eps_values]
    assert fit_scaling_exponent([1 / eps for eps in eps_values], totals) == pytest.approx(2, abs=0.25)


def test_messages_grow_linearly_in_k():
    ks = [2, 4, 8]
    totals = [distinct_item_messages(k, 0.25, 2048) for k in ks]
    assert fit_scaling_exponent(ks, totals) == pytest.approx(1, abs=0.25)


def test_l2_tracking_covers_top_items_across_seeds():
    k, n, m, eps = 3, 32, 2000, 0.3
    queries = [500, 1000, 1500, 2000]
    checks = covered = 0
    for seed in range(20):
        events = small_stream(m, k=k, n=n, seed=seed)
        answers = l2hh_tracking(events, k, eps, SeededRng(seed), queries, CommLedger(k, n))
        oracle = PrefixOracle(events, k, n, 2, queries)
        for t in queries:
            snapshot = oracle.snapshot(t)
            top = sorted(snapshot.counts, key=snapshot.counts.get, reverse=True)[:3]
            for item in top:
                checks += 1
                covered += abs(answers[t].get(item, 0.0) - snapshot.counts[item]) <= eps * snapshot.l2_prime
    assert covered / checks >= 0.8


# ============================================================================
# MOMENT SUM TRACKER
# ============================================================================

def test_sum_tracker_stays_within_factor():
    k, p, theta = 3, 2, 0.5
    events = small_stream(1000, k=k)
    tracker = MomentSumTracker(k, p, theta)
    queries = list(range(100, 1001, 100))
    answers = run_tracking(events, tracker, queries, SeededRng(1), CommLedger(k, 16))
    oracle = PrefixOracle(events, k, 16, p, queries)
    for t in queries:
        exact = oracle.snapshot(t).lp_prime
        assert exact / (1 + theta) ** (1 / p) - 1e-9 <= answers[t] <= exact + 1e-9


def test_sum_tracker_report_count():
    k, p = 3, 2
    events = small_stream(1000, k=k)
    ledger = CommLedger(k, 16)
    lp_prime_sum_tracker(events, k, p, 0.5, SeededRng(1), [1000], ledger)
    per_site = Counter(e.site for e in events)
    bound = sum(1 + math.log(per_site[i] ** p, 1.5) for i in range(k))
    assert ledger.messages_by_kind['moment-report'] <= bound


def test_sum_tracker_checks_theta():
    with pytest.raises(ParameterError):
        MomentSumTracker(2, 2, theta=0.9)


# ============================================================================
# lp TRACKER
# ============================================================================

def test_tracking_l2_eps():
    assert tracking_l2_eps(0.5, 2, 4) == pytest.approx(0.5)
    assert tracking_l2_eps(0.3, 3, 4) == pytest.approx(0.3 ** 1.5 / 4)


def test_lp_tracking_keeps_planted_item_within_bound():
    k, n, p, eps, m = 4, 64, 3, 0.3, 400
    events = generate(SimpleNamespace(k=k, n=n, m=m, generator='planted_hh(1,0.5)', seed=21))
    queries = [100, 200, 300, 400]
    answers = lphh_tracking(events, k, p, eps, SeededRng(21), queries, CommLedger(k, n))
    oracle = PrefixOracle(events, k, n, p, queries)
    covered = 0
    for t in queries:
        snapshot = oracle.snapshot(t)
        error = abs(answers[t].get(0, 0.0) - snapshot.counts.get(0, 0))
        covered += error <= 3 * eps * snapshot.lp_prime
    assert covered / len(queries) >= 0.6


def test_lp_tracking_on_empty_stream():
    answers = lphh_tracking([], 2, 3, 0.3, SeededRng(1), [0, 5], CommLedger(2, 4), m=16)
    assert answers == {0: {}, 5: {}}


# ============================================================================
# CHECKPOINT DUMP
# ============================================================================

def test_checkpoint_rows():
    events = list(iter_events([0, 1, 0], [2, 2, 1]))
    oracle = PrefixOracle(events, 2, 4, 3, [2, 3])
    frame = checkpoint_rows({2: {2: 2.0}, 3: {2: 1.5}}, oracle)
    assert list(frame.columns) == CHECKPOINT_COLUMNS
    assert len(frame) == 1 + 2
    last = frame[(frame.t == 3) & (frame.j == 2)].iloc[0]
    assert last.estimate == 1.5
    assert last.exact == 2
    assert last.l2_prime == pytest.approx(math.sqrt(3))
    assert last.lp_prime == pytest.approx(3 ** (1 / 3))
