#!/usr/bin/env python3
"""
Tests for exact threshold tracking, v_j^p phases, weak covers and Fp tracking
"""

import math
from fractions import Fraction
from types import SimpleNamespace

import pytest

import moment_tracking
from experiment_runner import fit_scaling_exponent
from frequency_core import CommLedger, ParameterError, SeededRng
from ground_truth import PrefixOracle
from moment_covers import CoverSet
from moment_tracking import (
    FP_CHECKPOINT_COLUMNS,
    VjpTracker,
    WeakCoverTracker,
    fp_checkpoint_rows,
    fp_track,
    integer_root_ceil,
    round_start_reps,
    threshold_tracker_run,
    vjp_track,
)
from network_simulator import Channel, StreamEvent, iter_events, run_tracking
from stream_generator import generate


def single_item_stream(m, k, seed=1, item=0):
    sites = SeededRng(seed, ('sites',)).generator.integers(0, k, size=m)
    return list(iter_events(sites, [item] * m))


# ============================================================================
# THRESHOLD TRACKER
# ============================================================================

def test_zero_threshold_fires_at_start():
    assert threshold_tracker_run(single_item_stream(10, 2), 2, 0, CommLedger(2, 4)) == 0
    assert threshold_tracker_run([], 2, 3, CommLedger(2, 4), start_count=3) == 0


def test_alternating_sites_fire_on_exact_arrival():
    events = list(iter_events([0, 1] * 5, [0] * 10))
    ledger = CommLedger(2, 4)
    assert threshold_tracker_run(events, 2, 5, ledger) == 5
    assert ledger.total_messages > 0


def test_unreachable_threshold_never_fires():
    assert threshold_tracker_run(single_item_stream(20, 3), 3, 21, CommLedger(3, 4)) is None


def test_negative_threshold_is_rejected():
    with pytest.raises(ParameterError):
        threshold_tracker_run([], 2, -1, CommLedger(2, 4))


def test_threshold_tracker_is_exact_on_random_streams():
    rng = SeededRng(99, ('thresholds',))
    for trial in range(40):
        k = rng.integers(1, 6)
        events = generate(SimpleNamespace(k=k, n=4, m=300, generator='uniform', seed=trial))
        item_times = [e.time for e in events if e.item == 2]
        tau = rng.uniform(0, len(item_times) + 5)
        target = math.ceil(tau)
        expected = 0 if target == 0 else (item_times[target - 1] if target <= len(item_times) else None)
        assert threshold_tracker_run(events, k, tau, CommLedger(k, 4), item=2) == expected


def test_threshold_tracker_is_cheaper_than_forwarding():
    events = single_item_stream(5000, 4)
    ledger = CommLedger(4, 4)
    assert threshold_tracker_run(events, 4, 5000, ledger) == 5000
    assert ledger.total_messages < len(events) / 4


# ============================================================================
# v_j^p PHASES
# ============================================================================

def test_integer_root_ceil():
    assert integer_root_ceil(25, 2) == 5
    assert integer_root_ceil(26, 2) == 6
    assert integer_root_ceil(9.1, 2) == 4
    assert integer_root_ceil(Fraction(27), 3) == 3
    assert integer_root_ceil(0, 3) == 0
    assert integer_root_ceil(10 ** 30 + 1, 2) == 10 ** 15 + 1


def make_vjp(r=None):
    tracker = VjpTracker(2, 7, 2, 0.5, 64, site_counts=[2, 1])
    tracker.start(Channel(CommLedger(2, 8)), SeededRng(1))
    if r is not None:
        tracker.start_phase(0, r=r)
    return tracker


def test_vjp_phase_ends_at_exact_count():
    tracker = make_vjp(r=7)
    assert tracker.base == 9
    assert tracker.query(0) == 9
    assert not tracker.on_arrival(StreamEvent(1, 0, 7))
    assert tracker.query(1) == 25
    assert tracker.on_arrival(StreamEvent(2, 1, 7))
    assert tracker.phases_completed == 1
    assert tracker.base_count == 5
    assert tracker.query(2) == 25


def test_vjp_ignores_other_items():
    tracker = make_vjp(r=7)
    assert not tracker.on_arrival(StreamEvent(1, 0, 3))
    assert tracker.query(1) == 9


def test_vjp_estimate_is_unbiased_over_thresholds():
    # r at the midpoints of 160 equal cells of [0, 16]
    values = []
    for i in range(160):
        tracker = make_vjp(r=(i + 0.5) / 10)
        tracker.on_arrival(StreamEvent(1, 0, 7))
        values.append(tracker.query(1))
    assert sum(values) / len(values) == 16


def test_phase_start_collects_counts_with_k_messages():
    ledger = CommLedger(3, 8)
    tracker = VjpTracker(3, 7, 2, 0.5, 64, site_counts=[2, 1, 0])
    tracker.start(Channel(ledger), SeededRng(1))
    assert tracker.base_count == 3
    assert ledger.messages_by_kind['vjp-sync'] == 3
    assert ledger.messages_by_kind['vjp-sync-request'] == 0
    assert ledger.total_messages == 3


def test_vjp_error_stays_within_one_step():
    p, eps, F_hat = 3, 0.4, 2000
    events = single_item_stream(60, 3, seed=4)
    queries = list(range(0, 61, 5))
    answers = vjp_track(events, 0, p, F_hat, eps, 3, SeededRng(4), queries, CommLedger(3, 2))
    for t in queries:
        exact = sum(1 for e in events if e.time <= t) ** p
        assert abs(answers[t] - exact) <= eps * eps * F_hat + 1e-9


def test_round_start_reps_are_odd():
    assert round_start_reps(1) == 7
    assert all(round_start_reps(phi) % 2 == 1 for phi in range(1, 20))


# ============================================================================
# WEAK COVERS
# ============================================================================

def test_weak_cover_keeps_planted_item():
    k, n, p, eps, m = 2, 16, 2, 0.3, 400
    events = generate(SimpleNamespace(k=k, n=n, m=m, generator='planted_hh(1,0.5)', seed=12))
    tracker = WeakCoverTracker(k, n, p, 0.1, eps, m)
    answers = run_tracking(events, tracker, [0, m], SeededRng(12), CommLedger(k, n))
    assert len(answers[0]) == 0
    assert 0 in answers[m]
    assert answers[m].value(0) > 0
    assert tracker.rounds_started >= 1
    assert all(entry[2] in ('phases', 'moment-growth', 'index-growth') for entry in tracker.round_log[:-1])


def test_weak_cover_rejects_bad_alpha():
    with pytest.raises(ParameterError):
        WeakCoverTracker(2, 8, 2, 1.5, 0.3, 100)


def test_round_start_admits_items_already_over_threshold(monkeypatch):
    monkeypatch.setattr(moment_tracking, 'cover_two_round', lambda *args, **kwargs: CoverSet())
    k, n, p, m = 2, 16, 2, 400
    events = generate(SimpleNamespace(k=k, n=n, m=m, generator='planted_hh(1,0.5)', seed=12))
    tracker = WeakCoverTracker(k, n, p, 0.1, 0.3, m)
    run_tracking(events, tracker, [], SeededRng(12), CommLedger(k, n))
    tracker.start_round(m + 1)
    crossing = {j for j in tracker.hh.query(m + 1) if tracker.hh.estimate(j) >= tracker.admission}
    assert 0 in crossing
    assert crossing <= tracker.state.index
    assert tracker.state.initial_size == len(tracker.state.index)


def test_rounds_grow_the_moment_geometrically():
    k, n, p, m = 2, 16, 2, 1500
    events = generate(SimpleNamespace(k=k, n=n, m=m, generator='uniform', seed=31))
    tracker = WeakCoverTracker(k, n, p, 0.1, 0.35, m)
    run_tracking(events, tracker, [], SeededRng(31), CommLedger(k, n))
    closed = tracker.round_log[:-1]
    assert len(closed) >= 3
    oracle = PrefixOracle(events, k, n, p, [t for entry in closed for t in entry[:2]])
    for (start, end, trigger, F_hat), following in zip(closed, tracker.round_log[1:]):
        Fp_start = oracle.snapshot(start).Fp
        Fp_end = oracle.snapshot(end).Fp
        # more than 3/eps² phases, each adding eps²·F̂ to some v_j^p
        if trigger == 'phases':
            assert Fp_end - Fp_start >= 3 * F_hat
        else:
            assert trigger == 'moment-growth'
            assert Fp_end > 4 * F_hat
        assert Fp_end >= 2 * Fp_start
        assert following[3] >= 2 * F_hat


# ============================================================================
# Fp TRACKING
# ============================================================================

def test_fp_tracking_single_item_error_bound():
    k, p, eps = 2, 2, 0.3
    events = single_item_stream(300, k, seed=6)
    queries = list(range(0, 301, 20))
    ledger = CommLedger(k, 1)
    tracker = fp_track(events, k, 1, p, eps, SeededRng(6), queries, ledger)
    for t in queries:
        exact = sum(1 for e in events if e.time <= t) ** p
        assert abs(tracker.answers[t] - exact) <= eps * eps * exact + 1e-6
    assert not tracker.failed
    assert tracker.rounds_completed <= 6 * math.log2(300 ** p + 2)
    forwarded = ledger.messages_by_kind['deep-forward']
    assert forwarded == (len(events) if tracker.h[0, 0] else 0)


def test_fp_tracking_empty_stream():
    tracker = fp_track([], 2, 8, 2, 0.3, SeededRng(1), [0, 5], CommLedger(2, 8), m=10)
    assert tracker.answers == {0: 0.0, 5: 0.0}
    assert tracker.rounds_completed == 0


def test_fp_checkpoint_rows():
    k, p = 2, 2
    events = single_item_stream(50, k, seed=2)
    queries = [10, 50]
    tracker = fp_track(events, k, 1, p, 0.3, SeededRng(2), queries, CommLedger(k, 1))
    frame = fp_checkpoint_rows(tracker, PrefixOracle(events, k, 1, p, queries))
    assert list(frame.columns) == FP_CHECKPOINT_COLUMNS
    assert list(frame.t) == queries
    assert list(frame.exact) == [100, 2500]
    assert frame.bits.is_monotonic_increasing


def test_fp_tracking_bits_grow_no_faster_than_k():
    ks = [2, 4, 8]
    bits = []
    for k in ks:
        events = generate(SimpleNamespace(k=k, n=16, m=600, generator='uniform', seed=43))
        ledger = CommLedger(k, 16)
        fp_track(events, k, 16, 2, 0.35, SeededRng(43), [], ledger, reps=3)
        bits.append(ledger.total_bits)
    assert fit_scaling_exponent(ks, bits) <= 1.4
