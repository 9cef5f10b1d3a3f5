"""
Tracking Heavy Hitters Module
Continuous heavy hitter estimation in the distributed tracking model

This module provides:
1. The l2 heavy hitter site automaton (rounds / phases / intervals)
2. The coordinator that folds type-0 and type-1 messages into estimates
3. A per-site moment sum tracker (continuous F'p within a (1+θ) factor)
4. lp heavy hitter tracking via shifted sparsification and l'p guesses

Message kinds: 0 carries an unbiased interval increment, 1 carries the
exact local count v_ij and resynchronises the coordinator.
"""

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import pandas as pd

from frequency_core import (
    ParameterError,
    ProtocolError,
    ceil_log2,
    check_eps,
    check_p,
    floor_log2_root,
    log,
    root,
)
from network_simulator import Message, TrackingProtocol, run_tracking


# ============================================================================
# CONFIGURATION
# ============================================================================

LP_SUM_THETA = 0.5
PHASE_END = 1
INTERVAL_HIT = 0


def rescaled_eps(eps, m):
    """
    eps / sqrt(2·max(1, log2(eps·m))).

    The variance bound needs eps scaled down by the log of eps·sqrt(F) at
    the end of the stream; F ≤ m² is used since the final F is unknown.
    """
    check_eps(eps)
    factor = max(1.0, math.log2(eps * m) if eps * m > 1 else 0.0)
    return eps / math.sqrt(2 * factor)


# ============================================================================
# SITE AUTOMATON
# ============================================================================

@dataclass
class ItemPhaseState:
    """Per-item automaton state at one site; `count` is never reset"""
    count: int = 0
    round_id: int = -1
    phase: int = 0
    interval: int = 1
    w: int = 0
    delta: int = 0
    r: int = None
    bound: int = 1

    def restart(self, round_id):
        self.round_id = round_id
        self.phase = 0
        self.next_phase()

    def next_phase(self):
        self.phase += 1
        self.interval = 1
        self.w = 0
        self.delta = 0
        self.r = None


@dataclass
class SiteTrackerState:
    """
    One site of the l2 heavy hitter tracker.

    F is the local F2 at the start of the current round (at least 1) and
    F2 the live local F2; a round ends once F2 ≥ 2F.
    """
    site: int
    F: int = 1
    F2: int = 0
    round_id: int = 0
    items: dict = field(default_factory=dict)
    completed_phases: Counter = field(default_factory=Counter)

    def interval_bound(self, interval, eps):
        """L = max(1, ⌈eps² F / 2^c⌉)"""
        return max(1, math.ceil(eps * eps * self.F / 2 ** interval))


def l2hh_site_on_arrival(state, item, eps, rng):
    """
    Advance the site automaton by one arrival of `item`.

    Args:
        state: SiteTrackerState of the receiving site
        item: arriving item id
        eps: accuracy parameter
        rng: the site's private SeededRng (interval thresholds)

    Returns:
        List of Messages to upload (kind 0 / kind 1), in emission order
    """
    outbox = []
    entry = state.items.get(item)
    if entry is None:
        entry = state.items[item] = ItemPhaseState()
    if entry.round_id != state.round_id:
        entry.restart(state.round_id)

    state.F2 += 2 * entry.count + 1
    entry.count += 1
    entry.w += 1
    entry.delta += 1

    if entry.r is None:
        entry.bound = state.interval_bound(entry.interval, eps)
        entry.r = rng.integers(1, entry.bound)
    if entry.delta == entry.r:
        outbox.append(Message(INTERVAL_HIT, state.site, item, float(entry.bound)))

    # interval, then phase, then round
    if entry.delta >= 2 ** entry.interval:
        entry.interval += 1
        entry.delta = 0
        entry.r = None

    if entry.w * entry.w >= eps * eps * state.F:
        outbox.append(Message(PHASE_END, state.site, item, float(entry.count)))
        state.completed_phases[state.round_id] += 1
        entry.next_phase()

    if state.F2 >= 2 * state.F:
        state.round_id += 1
        state.F = state.F2
        log(f"🔄 site {state.site}: round {state.round_id} starts at F2 = {state.F}")

    return outbox


# ============================================================================
# COORDINATOR
# ============================================================================

@dataclass
class CoordinatorHHState:
    """v̂_ij per (site, item) and the running totals v̂_j = Σ_i v̂_ij"""
    per_site: dict = field(default_factory=dict)
    totals: defaultdict = field(default_factory=lambda: defaultdict(float))


def l2hh_coordinator_apply(state, message):
    """Type 0 adds its payload to v̂_ij, type 1 overwrites v̂_ij"""
    key = (message.site, message.item)
    old = state.per_site.get(key, 0.0)
    if message.kind == INTERVAL_HIT:
        new = old + message.payload
    elif message.kind == PHASE_END:
        new = float(message.payload)
    else:
        raise ProtocolError(f"❌ unknown heavy hitter message type {message.kind!r} from site {message.site}")
    state.per_site[key] = new
    state.totals[message.item] += new - old


def l2hh_query(state, item):
    return state.totals.get(item, 0.0)


# ============================================================================
# l2 TRACKER
# ============================================================================

class L2HeavyHitterTracker(TrackingProtocol):
    """
    k site automata plus the coordinator.

    Args:
        k: number of sites
        eps: target accuracy of the estimates
        label: key separating the random streams of parallel instances
        m: stream length bound; when given the automata run at
            rescaled_eps(eps, m), otherwise at eps itself
    """

    name = 'l2hh-tracking'

    def __init__(self, k, eps, label='l2', m=None):
        check_eps(eps)
        self.k = k
        self.target_eps = eps
        self.eps = eps if m is None else rescaled_eps(eps, max(int(m), 1))
        self.label = label
        self.sites = [SiteTrackerState(i) for i in range(k)]
        self.coordinator = CoordinatorHHState()

    def start(self, channel, rng):
        super().start(channel, rng)
        self.site_rngs = [rng.child(self.label, 'site', i) for i in range(self.k)]

    def deliver(self, site, item):
        for message in l2hh_site_on_arrival(self.sites[site], item, self.eps, self.site_rngs[site]):
            self.channel.upload(site, f'hh{message.kind}', message.item, message.payload)
            l2hh_coordinator_apply(self.coordinator, message)

    def on_arrival(self, event):
        self.deliver(event.site, event.item)

    def estimate(self, item):
        return l2hh_query(self.coordinator, item)

    def query(self, time):
        return {j: v for j, v in self.coordinator.totals.items() if v != 0}

    def max_phases_per_round(self):
        return max((count for s in self.sites for count in s.completed_phases.values()), default=0)


def l2hh_tracking(events, k, eps, rng, query_times, ledger, rescale=True, m=None):
    """
    Replay `events` through the l2 heavy hitter tracker.

    Args:
        rescale: run the automata at rescaled_eps(eps, m); off runs them at eps
        m: stream length bound for the rescale (defaults to len(events))

    Returns:
        dict query time → {item: v̂_j}
    """
    events = list(events)
    bound = (m or max(len(events), 1)) if rescale else None
    return run_tracking(events, L2HeavyHitterTracker(k, eps, m=bound), query_times, rng, ledger)


# ============================================================================
# MOMENT SUM TRACKER
# ============================================================================

@dataclass
class SumTrackerState:
    """Per-site last reported local Fp and the coordinator's sum of reports"""
    theta: float
    reported: list
    total: int = 0
    reports: int = 0


class MomentSumTracker(TrackingProtocol):
    """
    Continuous F'p = Σ_i Fp(v^(i)) within a factor (1+θ).

    A site reports its local Fp on its first arrival and whenever the
    value has grown by a factor ≥ (1+θ) since its last report.
    """

    name = 'moment-sum-tracker'

    def __init__(self, k, p, theta=LP_SUM_THETA):
        check_p(p, minimum=1)
        if not 0 < theta <= 0.5:
            raise ParameterError(f"❌ theta must lie in (0, 1/2], got {theta}")
        self.k = k
        self.p = p
        self.state = SumTrackerState(theta, [0] * k)
        self.local_counts = [defaultdict(int) for _ in range(k)]
        self.local_moment = [0] * k

    def on_arrival(self, event):
        counts = self.local_counts[event.site]
        old = counts[event.item]
        counts[event.item] = old + 1
        self.local_moment[event.site] += (old + 1) ** self.p - old ** self.p

        current = self.local_moment[event.site]
        last = self.state.reported[event.site]
        if last == 0 or current >= (1 + self.state.theta) * last:
            self.channel.upload(event.site, 'moment-report', payload=current)
            self.state.total += current - last
            self.state.reported[event.site] = current
            self.state.reports += 1

    def estimate(self):
        """Coordinator's F̂'p"""
        return self.state.total

    def query(self, time):
        return root(self.state.total, self.p)


def lp_prime_sum_tracker(events, k, p, theta, rng, query_times, ledger):
    """
    Track l'p continuously.

    Returns:
        dict query time → l̂'p, within (1±θ)^(1/p) of l'p
    """
    return run_tracking(list(events), MomentSumTracker(k, p, theta), query_times, rng, ledger)


# ============================================================================
# lp TRACKER
# ============================================================================

def tracking_l2_eps(eps, p, k):
    """eps' = eps^(p/2) / (2^(p−2) · k^(p/2 − 1))"""
    return eps ** (p / 2) / (2 ** (p - 2) * k ** (p / 2 - 1))


class LpHeavyHitterTracker(TrackingProtocol):
    """
    lp heavy hitters from ⌈log2 m⌉+1 shifted l2 trackers.

    Instance t (guess τ = 2^t) only sees arrivals of j at site i once the
    local count exceeds the shift ⌊eps·τ/k⌋, so its local vectors are the
    shifted sparsifications of the real ones. A query picks the instance
    with τ ≤ l̂'p < 2τ from the moment sum tracker. With `rescale` every
    instance runs at rescaled_eps(eps', m).
    """

    name = 'lphh-tracking'

    def __init__(self, k, p, eps, m, rescale=True):
        check_p(p)
        check_eps(eps)
        self.k = k
        self.p = p
        self.eps = eps
        self.m = max(int(m), 1)
        self.max_exponent = ceil_log2(self.m)
        self.l2_eps = tracking_l2_eps(eps, p, k)
        self.shifts = [math.floor(eps * 2 ** t / k) for t in range(self.max_exponent + 1)]
        bound = self.m if rescale else None
        self.instances = [
            L2HeavyHitterTracker(k, self.l2_eps, label=f'tau{t}', m=bound) for t in range(self.max_exponent + 1)
        ]
        self.moment_sum = MomentSumTracker(k, p, LP_SUM_THETA)
        self.local_counts = [defaultdict(int) for _ in range(k)]

    def start(self, channel, rng):
        super().start(channel, rng)
        self.moment_sum.start(channel, rng.child('moment-sum'))
        for instance in self.instances:
            instance.start(channel, rng)

    def on_arrival(self, event):
        self.moment_sum.on_arrival(event)
        counts = self.local_counts[event.site]
        counts[event.item] += 1
        for shift, instance in zip(self.shifts, self.instances):
            if counts[event.item] > shift:
                instance.deliver(event.site, event.item)

    def selected_exponent(self):
        t = floor_log2_root(self.moment_sum.estimate(), self.p)
        return -1 if t < 0 else min(t, self.max_exponent)

    def estimate(self, item):
        t = self.selected_exponent()
        return 0.0 if t < 0 else self.instances[t].estimate(item)

    def query(self, time):
        t = self.selected_exponent()
        if t < 0:
            return {}
        return self.instances[t].query(time)


def lphh_tracking(events, k, p, eps, rng, query_times, ledger, m=None, rescale=True):
    """
    Replay `events` through the lp heavy hitter tracker.

    Returns:
        dict query time → {item: v̂_j}; |v̂_j − v_j| ≤ 3 eps l'p with
        constant probability at every query time
    """
    events = list(events)
    tracker = LpHeavyHitterTracker(k, p, eps, m or max(len(events), 1), rescale)
    return run_tracking(events, tracker, query_times, rng, ledger)


# ============================================================================
# CHECKPOINT DUMP
# ============================================================================

CHECKPOINT_COLUMNS = ['t', 'j', 'estimate', 'exact', 'l2_prime', 'lp_prime']


def checkpoint_rows(answers, oracle, items=None):
    """
    Estimates next to exact prefix values at every answered query time.

    Args:
        answers: dict time → {item: estimate} from a tracker
        oracle: ground_truth.PrefixOracle holding the same checkpoints
        items: items to dump (default: support of the exact prefix vector)

    Returns:
        pandas DataFrame with CHECKPOINT_COLUMNS
    """
    rows = []
    for t in sorted(answers):
        snapshot = oracle.snapshot(t)
        estimates = answers[t]
        chosen = items if items is not None else sorted(snapshot.counts)
        for j in chosen:
            rows.append({
                't': t,
                'j': j,
                'estimate': estimates.get(j, 0.0),
                'exact': snapshot.counts.get(j, 0),
                'l2_prime': root(snapshot.F2_prime, 2),
                'lp_prime': root(snapshot.Fp_prime, oracle.p),
            })
    return pd.DataFrame(rows, columns=CHECKPOINT_COLUMNS)
