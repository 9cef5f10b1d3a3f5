"""
Moment Tracking Module
Continuous Fp estimation in the distributed tracking model

This module provides:
1. ThresholdTracker: exact detection of a global count reaching ⌈τ⌉
2. VjpTracker: unbiased phase tracking of v_j^p with a public random threshold
3. WeakCoverTracker: a weak (alpha, eps)-cover of one subsample, in rounds
4. FpTracker: 2·phi weak covers folded through the Y recursion

Every sub-tracker talks through the shared Channel, so all of their
messages land in one CommLedger.
"""

import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction

import pandas as pd

from frequency_core import (
    FrequencyVector,
    ParameterError,
    PartitionedInput,
    check_eps,
    check_p,
    log,
)
from moment_covers import (
    CoverSet,
    DEEP_LEVEL_F0_LIMIT,
    cover_two_round,
    draw_levels,
    fold_levels,
    fp_static,
    sketch_depth,
)
from network_simulator import Channel, TrackingProtocol, run_tracking
from tracking_heavy_hitters import LpHeavyHitterTracker, MomentSumTracker


# ============================================================================
# CONFIGURATION
# ============================================================================

# Relative accuracy of the F'p sum tracker inside a weak cover tracker
FP_SUM_THETA = 0.05

# Accuracy of the static Fp estimate taken at each round start
ROUND_START_EPS = 0.2

# Admission threshold factor: v̂_j ≥ (2/3)·alpha^(1/p)·F̂^(1/p)
ADMISSION_FACTOR = Fraction(2, 3)


def round_start_reps(phi):
    """⌈8 ln(phi+1)⌉ boosting repetitions, odd"""
    reps = max(1, math.ceil(8 * math.log(phi + 1)))
    return reps if reps % 2 else reps + 1


def integer_root_ceil(value, p):
    """Smallest integer v ≥ 0 with v^p ≥ value (exact for int/Fraction input)"""
    if value <= 0:
        return 0
    v = max(0, math.ceil(float(value) ** (1.0 / p)))
    while v > 0 and (v - 1) ** p >= value:
        v -= 1
    while v ** p < value:
        v += 1
    return v


# ============================================================================
# EXACT THRESHOLDED SUM TRACKING
# ============================================================================

class ThresholdTracker:
    """
    Fires on the exact arrival at which Σ_i v_ij first reaches `target`.

    The coordinator knows the exact count S at the start of a stage. Each
    site gets slack ⌊(target − S)/(2k)⌋ and reports whenever it has seen
    that many arrivals since its last report; after k reports the
    coordinator polls exact counts and restages. Fewer than 2k·slack
    arrivals fit in a stage, so no crossing is missed. Once
    target − S ≤ 2k every arrival is reported.
    """

    def __init__(self, k, target, start_count, channel, kind='threshold', time=0):
        self.k = k
        self.target = int(target)
        self.known = start_count
        self.channel = channel
        self.kind = kind
        self.unsynced = [0] * k
        self.fired = False
        self.fire_time = None
        self.stage(time)

    def stage(self, time):
        if self.known >= self.target:
            self.fired = True
            self.fire_time = time
            return
        gap = self.target - self.known
        self.every_arrival = gap <= 2 * self.k
        self.slack = 1 if self.every_arrival else gap // (2 * self.k)
        self.unreported = [0] * self.k
        self.reports = 0

    def on_arrival(self, site, time):
        """Count one arrival at `site`; returns True on the firing arrival"""
        if self.fired:
            return False
        self.unsynced[site] += 1
        if self.every_arrival:
            self.channel.upload(site, f'{self.kind}-arrival')
            self.known += 1
            self.unsynced[site] = 0
            if self.known >= self.target:
                self.fired = True
                self.fire_time = time
                return True
            return False

        self.unreported[site] += 1
        if self.unreported[site] >= self.slack:
            self.channel.upload(site, f'{self.kind}-report')
            self.unreported[site] = 0
            self.reports += 1
            if self.reports >= self.k:
                self.known += sum(self.channel.poll(f'{self.kind}-sync', self.unsynced))
                self.unsynced = [0] * self.k
                self.stage(time)
        return False


def threshold_tracker_run(events, k, tau, ledger, item=None, start_count=0):
    """
    Run a ThresholdTracker over a stream.

    Args:
        events: StreamEvents (restricted to one item, or filtered by `item`)
        tau: threshold; the tracker fires when the count reaches ⌈tau⌉
        start_count: count already known to the coordinator at time 0

    Returns:
        Time of the firing event (0 if it fires at the start), or None
    """
    if tau < 0:
        raise ParameterError(f"❌ tau must be ≥ 0, got {tau}")
    tracker = ThresholdTracker(k, math.ceil(tau), start_count, Channel(ledger))
    if tracker.fired:
        return 0
    for event in events:
        if item is not None and event.item != item:
            continue
        if tracker.on_arrival(event.site, event.time):
            return event.time
    return None


# ============================================================================
# v_j^p PHASE TRACKING
# ============================================================================

class VjpTracker(TrackingProtocol):
    """
    Unbiased tracking of v_j^p for one item.

    A phase starts by collecting the exact count v_j(t_s) from every site
    (k messages) and drawing r ~ U[0, eps²F̂] from public randomness. The
    estimate w_j is v_j(t_s)^p until v_j^p reaches v_j(t_s)^p + r, then
    v_j(t_s)^p + eps²F̂. The phase ends once v_j^p reaches
    v_j(t_s)^p + eps²F̂.
    """

    name = 'vjp-tracker'

    def __init__(self, k, item, p, eps, F_hat, site_counts=None):
        check_p(p)
        check_eps(eps)
        if F_hat <= 0:
            raise ParameterError(f"❌ F̂ must be > 0, got {F_hat}")
        self.k = k
        self.item = item
        self.p = p
        self.step = eps * eps * F_hat
        self.site_counts = list(site_counts) if site_counts is not None else [0] * k
        self.phases_completed = 0

    def start(self, channel, rng, time=0):
        super().start(channel, rng)
        self.start_phase(time)

    def start_phase(self, time, r=None):
        self.base_count = sum(self.channel.collect('vjp-sync', self.site_counts))
        self.base = self.base_count ** self.p
        self.r = self.rng.uniform(0.0, self.step) if r is None else r
        self.phase_start = time
        self.w = self.base

        estimate_target = integer_root_ceil(self.base + Fraction(self.r), self.p)
        phase_target = integer_root_ceil(self.base + Fraction(self.step), self.p)
        self.estimate_tracker = ThresholdTracker(self.k, estimate_target, self.base_count, self.channel, 'vjp-estimate', time)
        self.phase_tracker = ThresholdTracker(self.k, phase_target, self.base_count, self.channel, 'vjp-phase', time)
        if self.estimate_tracker.fired:
            self.w = self.base + self.step

    def on_arrival(self, event):
        """Returns True when the arrival ends a phase"""
        if event.item != self.item:
            return False
        self.site_counts[event.site] += 1
        if self.estimate_tracker.on_arrival(event.site, event.time):
            self.w = self.base + self.step
        if self.phase_tracker.on_arrival(event.site, event.time):
            self.phases_completed += 1
            self.start_phase(event.time)
            return True
        return False

    def query(self, time):
        return self.w


def vjp_track(events, item, p, F_hat, eps, k, rng, query_times, ledger):
    """
    Track w_j(t) for one item from time 0.

    Returns:
        dict query time → w_j, with E[w_j] = v_j^p
    """
    tracker = VjpTracker(k, item, p, eps, F_hat)
    return run_tracking([e for e in events if e.item == item], tracker, query_times, rng, ledger)


# ============================================================================
# WEAK COVER TRACKING
# ============================================================================

@dataclass
class WeakCoverState:
    """One round of a weak cover tracker"""
    t0: int
    F_hat: float
    index: set = field(default_factory=set)
    initial_size: int = 0
    trackers: dict = field(default_factory=dict)
    completed_phases: int = 0


class WeakCoverTracker(TrackingProtocol):
    """
    Weak (alpha, eps)-cover of the arrivals routed to it.

    Round start: a static 2-round Fp estimate F̂ and an exact cover at
    alpha/6^(p+3) seed the index set I, each with its own VjpTracker. An lp
    heavy hitter tracker at alpha^(1/p)/4 admits further items once their
    estimate reaches (2/3)·alpha^(1/p)·F̂^(1/p). The round ends when more
    than 3/eps² phases complete, when F̂'p exceeds 4F̂, or when more than
    6^(p+3)/alpha items have been admitted.
    """

    name = 'weak-cover-tracker'

    def __init__(self, k, n, p, alpha, eps, m, reps=None, label='weak-cover'):
        check_p(p)
        check_eps(eps)
        if not 0 < alpha < 1:
            raise ParameterError(f"❌ alpha must lie in (0, 1), got {alpha}")
        self.k = k
        self.n = n
        self.p = p
        self.alpha = alpha
        self.eps = eps
        self.m = max(int(m), 1)
        self.reps = reps or round_start_reps(sketch_depth(n))
        self.label = label
        self.phase_limit = 3 / (eps * eps)
        self.growth_limit = 6 ** (p + 3) / alpha
        self.site_counts = [defaultdict(int) for _ in range(k)]
        self.hh = LpHeavyHitterTracker(k, p, alpha ** (1 / p) / 4, self.m)
        self.moment_sum = MomentSumTracker(k, p, FP_SUM_THETA)
        self.state = None
        self.round_log = []
        self.failed = False
        self.last_exponent = None

    def start(self, channel, rng):
        super().start(channel, rng)
        self.hh.start(channel, rng.child(self.label, 'hh'))
        self.moment_sum.start(channel, rng.child(self.label, 'sum'))

    # ------------------------------------------------------------------
    # rounds
    # ------------------------------------------------------------------

    def local_input(self):
        return PartitionedInput(self.k, self.n, [FrequencyVector(self.n, counts) for counts in self.site_counts])

    def estimate_round_moment(self, inp, round_no):
        ledger = self.channel.ledger
        for attempt in range(2):
            rng = self.rng.child(self.label, 'round', round_no, 'fp', attempt)
            F_hat = fp_static(inp, self.p, ROUND_START_EPS, rng, rounds=2, ledger=ledger, reps=self.reps)
            if F_hat > 0:
                return F_hat
            log(f"⚠️ {self.label}: round {round_no} static Fp attempt {attempt + 1} failed")
        self.failed = True
        return max(float(self.moment_sum.estimate()), 1.0)

    def start_round(self, time, trigger=None):
        if self.round_log:
            self.round_log[-1][1] = time
            self.round_log[-1][2] = trigger
        round_no = len(self.round_log)
        self.round_log.append([time, None, None, None])

        inp = self.local_input()
        F_hat = self.estimate_round_moment(inp, round_no)
        self.round_log[-1][3] = F_hat
        cover = cover_two_round(
            inp, self.p, self.alpha / 6 ** (self.p + 3),
            self.rng.child(self.label, 'round', round_no, 'cover'),
            ledger=self.channel.ledger, reps=self.reps, m=self.m,
        )
        self.state = WeakCoverState(time, F_hat)
        self.admission = float(ADMISSION_FACTOR) * (self.alpha * F_hat) ** (1 / self.p)
        for item in sorted(cover.pairs):
            self.admit(item, time)
        self.sweep_admissions(time)
        self.state.initial_size = len(self.state.index)
        self.last_exponent = self.hh.selected_exponent()
        log(f"🔄 {self.label}: round {round_no} at t={time}, F̂ = {F_hat:.1f}, |I| = {len(self.state.index)}")

    def admit(self, item, time):
        tracker = VjpTracker(self.k, item, self.p, self.eps, self.state.F_hat,
                             [counts.get(item, 0) for counts in self.site_counts])
        tracker.start(self.channel, self.rng.child(self.label, 'vjp', len(self.round_log), item), time)
        self.state.trackers[item] = tracker
        self.state.index.add(item)

    # ------------------------------------------------------------------
    # arrivals
    # ------------------------------------------------------------------

    def on_arrival(self, event):
        self.site_counts[event.site][event.item] += 1
        self.hh.on_arrival(event)
        self.moment_sum.on_arrival(event)

        if self.state is None:
            self.start_round(event.time)
            return

        tracker = self.state.trackers.get(event.item)
        if tracker is not None and tracker.on_arrival(event):
            self.state.completed_phases += 1

        if self.state.completed_phases > self.phase_limit:
            self.start_round(event.time, 'phases')
            return
        if self.moment_sum.estimate() > 4 * self.state.F_hat:
            self.start_round(event.time, 'moment-growth')
            return

        self.check_admissions(event)
        if len(self.state.index) - self.state.initial_size > self.growth_limit:
            self.start_round(event.time, 'index-growth')

    def consider(self, item, time):
        if item not in self.state.index and self.hh.estimate(item) >= self.admission:
            self.admit(item, time)

    def sweep_admissions(self, time):
        """Admit every tracked item whose estimate already crosses the threshold"""
        for item in sorted(self.hh.query(time)):
            self.consider(item, time)

    def check_admissions(self, event):
        exponent = self.hh.selected_exponent()
        if exponent != self.last_exponent:
            self.last_exponent = exponent
            self.sweep_admissions(event.time)
        else:
            self.consider(event.item, event.time)

    # ------------------------------------------------------------------
    # queries
    # ------------------------------------------------------------------

    def cover(self):
        """Q(t) = {(j, w_j(t)) : j ∈ I(t)}"""
        if self.state is None:
            return CoverSet({}, self.alpha, self.eps, False)
        pairs = {j: tracker.w for j, tracker in self.state.trackers.items()}
        return CoverSet(pairs, self.alpha, self.eps, False)

    def query(self, time):
        return self.cover()

    @property
    def rounds_started(self):
        return len(self.round_log)


def weak_cover_track(events, k, n, p, alpha, eps, rng, query_times, ledger, m=None, reps=None):
    """
    Track a weak (alpha, eps)-cover of the stream's v^p.

    Returns:
        dict query time → CoverSet
    """
    events = list(events)
    tracker = WeakCoverTracker(k, n, p, alpha, eps, m or len(events), reps)
    return run_tracking(events, tracker, query_times, rng, ledger)


# ============================================================================
# Fp TRACKING
# ============================================================================

FP_CHECKPOINT_COLUMNS = ['t', 'estimate', 'exact', 'bits', 'rounds']


class FpTracker(TrackingProtocol):
    """
    (1±eps)·Fp(t) from weak covers of the subsamples u^(l,b).

    Item e belongs to subsample (l, b) when h_1,e = ... = h_l,e = 1 and
    h_(l+1),e = b. Items surviving all phi levels are forwarded on every
    arrival so Y_phi is exact.
    """

    name = 'fp-tracking'

    def __init__(self, k, n, p, eps, m, reps=None, printed_sign=False):
        check_p(p)
        check_eps(eps)
        self.k = k
        self.n = n
        self.p = p
        self.eps = eps
        self.phi = sketch_depth(n)
        self.alpha = eps * eps / self.phi ** 3
        self.sign = -1 if printed_sign else 1
        self.trackers = {
            (level, branch): WeakCoverTracker(k, n, p, self.alpha, eps, m, reps, label=f'cover-{level}-{branch}')
            for level in range(self.phi)
            for branch in (0, 1)
        }
        self.deep_counts = defaultdict(int)
        self.answers = {}
        self.checkpoints = []

    def start(self, channel, rng):
        super().start(channel, rng)
        self.h = draw_levels(self.n, self.phi, rng.child('public', 'levels'))
        self.routes = {}
        for tracker in self.trackers.values():
            tracker.start(channel, rng)

    def route(self, item):
        """Subsamples (l, b) holding `item`, and whether it reaches level phi"""
        cached = self.routes.get(item)
        if cached is None:
            path = []
            for level in range(self.phi):
                bit = int(self.h[level, item])
                path.append((level, bit))
                if not bit:
                    break
            deep = len(path) == self.phi and bool(self.h[self.phi - 1, item])
            cached = self.routes[item] = (path, deep)
        return cached

    def on_arrival(self, event):
        path, deep = self.route(event.item)
        for key in path:
            self.trackers[key].on_arrival(event)
        if deep:
            self.channel.upload(event.site, 'deep-forward', event.item, 1)
            self.deep_counts[event.item] += 1

    def estimate_fp(self, time=None):
        if len(self.deep_counts) > DEEP_LEVEL_F0_LIMIT:
            return 0.0
        y_phi = sum(c ** self.p for c in self.deep_counts.values())
        covers = [
            self.trackers[(level, 0)].cover().union(self.trackers[(level, 1)].cover())
            for level in range(self.phi)
        ]
        return float(fold_levels(y_phi, covers, self.h, self.sign)[0])

    @property
    def rounds_completed(self):
        return max((t.rounds_started for t in self.trackers.values()), default=0)

    @property
    def failed(self):
        return any(t.failed for t in self.trackers.values())

    def query(self, time):
        estimate = self.estimate_fp(time)
        self.answers[time] = estimate
        self.checkpoints.append({
            't': time,
            'estimate': estimate,
            'bits': self.channel.ledger.total_bits,
            'rounds': self.rounds_completed,
        })
        return estimate


def fp_track(events, k, n, p, eps, rng, query_times, ledger, m=None, reps=None, printed_sign=False):
    """
    Replay `events` through the Fp tracker.

    Returns:
        The FpTracker; `.answers` maps query time → F̂p(t)
    """
    events = list(events)
    tracker = FpTracker(k, n, p, eps, m or max(len(events), 1), reps, printed_sign)
    run_tracking(events, tracker, query_times, rng, ledger)
    return tracker


def fp_checkpoint_rows(tracker, oracle):
    """(t, F̂p, Fp exact, ledger bits, rounds) per answered query, as a DataFrame"""
    rows = [dict(row, exact=oracle.snapshot(row['t']).Fp) for row in tracker.checkpoints]
    return pd.DataFrame(rows, columns=FP_CHECKPOINT_COLUMNS)
