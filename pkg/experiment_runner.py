"""
Experiment Runner Module
Runs registered protocols over generated streams and checks them against ground truth

This module provides:
1. ExperimentConfig and the protocol registry
2. Per-trial execution with fresh streams, rngs and ledgers
3. Per-trial CSV rows and an aggregate JSON per run
4. Report recomputation and scaling-exponent fits across runs
"""

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from count_sketch import count_sketch_static
from frequency_core import CommLedger, ConfigError, PartitionedInput, SeededRng, log
from ground_truth import PrefixOracle, oracle
from moment_covers import cover_capacity, cover_one_round, cover_two_round, fp_static
from moment_tracking import fp_track, threshold_tracker_run
from network_simulator import ExactForwarding, run_tracking
from static_heavy_hitters import l2hh_static, lphh_one_round, lphh_two_round
from stream_generator import generate, parse_generator
from tracking_heavy_hitters import L2HeavyHitterTracker, LpHeavyHitterTracker

load_dotenv()


# ============================================================================
# CONFIGURATION
# ============================================================================

OUTPUT_DIR = os.environ.get('EXPERIMENT_OUTPUT_DIR', 'archivesCSV')
DEFAULT_SEED = int(os.environ.get('DEFAULT_SEED', '20240601'))
DEFAULT_TRIALS = int(os.environ.get('DEFAULT_TRIALS', '20'))
WORKERS = int(os.environ.get('WORKERS', '1'))

CSV_VERSION = 'trial-rows v1'
CSV_COLUMNS = [
    'trial', 't', 'item', 'estimate', 'exact', 'abs_error', 'rel_error',
    'bound', 'covered', 'bits', 'messages', 'rounds',
]
AGGREGATE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ExperimentConfig:
    protocol: str = 'l2hh_static'
    k: int = 4
    n: int = 256
    p: int = 2
    eps: float = 0.3
    m: int = 10000
    generator: str = 'zipf(1.1)'
    trials: int = DEFAULT_TRIALS
    seed: int = DEFAULT_SEED
    checkpoints: int = 20
    alpha: float = 0.1
    reps: int = 0
    top: int = 10
    fixed_stream: bool = False
    rescale: bool = True

    def validate(self):
        """Raise ConfigError on the first invalid field"""
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"❌ unknown protocol '{self.protocol}' (choose from: {', '.join(sorted(PROTOCOLS))})")
        for name in ('k', 'n', 'p', 'm', 'trials', 'checkpoints', 'top'):
            if getattr(self, name) < 1:
                raise ConfigError(f"❌ {name} must be a positive integer, got {getattr(self, name)}")
        if self.p < 2:
            raise ConfigError(f"❌ p must be ≥ 2, got {self.p}")
        if not 0 < self.eps < 1:
            raise ConfigError(f"❌ eps must lie in (0, 1), got {self.eps}")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"❌ alpha must lie in (0, 1), got {self.alpha}")
        if self.reps < 0 or (self.reps and self.reps % 2 == 0):
            raise ConfigError(f"❌ reps must be 0 (protocol default) or odd, got {self.reps}")
        if self.seed < 0:
            raise ConfigError(f"❌ seed must be non-negative, got {self.seed}")
        parse_generator(self.generator)
        return self

    def echo(self):
        return asdict(self)


def run_identifier(config):
    """Stable short id of a configuration (sha1 of its JSON echo)"""
    text = json.dumps(config.echo(), sort_keys=True)
    return hashlib.sha1(text.encode('utf-8')).hexdigest()[:12]


def checkpoint_times(m, checkpoints):
    """Evenly spaced query times ending at m"""
    return sorted({max(1, round(m * i / checkpoints)) for i in range(1, checkpoints + 1)})


# ============================================================================
# TRIAL RESULTS
# ============================================================================

@dataclass
class TrialResult:
    rows: list = field(default_factory=list)
    rounds: int = None
    hard_failures: list = field(default_factory=list)


def make_row(t, item, estimate, exact, bound):
    error = abs(float(estimate) - float(exact))
    return {
        't': int(t),
        'item': int(item),
        'estimate': float(estimate),
        'exact': float(exact),
        'abs_error': error,
        'rel_error': error / float(exact) if exact else error,
        'bound': float(bound),
        'covered': bool(error <= bound * (1 + AGGREGATE_TOLERANCE) + AGGREGATE_TOLERANCE),
    }


def boost(config, default=None):
    return config.reps or default


# ============================================================================
# PROTOCOL RUNNERS
# ============================================================================

def run_l2hh_static(config, events, rng, ledger):
    inp = PartitionedInput.from_events(events, config.k, config.n)
    truth = oracle(inp, 2)
    estimate = l2hh_static(inp, config.eps, rng, ledger)
    bound = config.eps * truth.summary.lp_prime
    return TrialResult([make_row(config.m, j, estimate.get(j), truth.vector.get(j), bound) for j in truth.top(config.top)])


def run_lphh(rounds):
    def runner(config, events, rng, ledger):
        inp = PartitionedInput.from_events(events, config.k, config.n)
        truth = oracle(inp, config.p)
        if rounds == 2:
            estimate = lphh_two_round(inp, config.p, config.eps, rng, ledger)
        else:
            estimate = lphh_one_round(inp, config.p, config.eps, rng, ledger, reps=boost(config, 1))
        bound = 2 * config.eps * truth.summary.lp_prime
        return TrialResult([make_row(config.m, j, estimate.get(j), c, bound) for j, c in sorted(truth.vector.items())])
    return runner


def run_cover(rounds):
    def runner(config, events, rng, ledger):
        inp = PartitionedInput.from_events(events, config.k, config.n)
        truth = oracle(inp, config.p)
        p = config.p
        if rounds == 2:
            cover = cover_two_round(inp, p, config.alpha, rng, ledger, reps=boost(config))
        else:
            cover = cover_one_round(inp, p, config.alpha, config.eps, rng, ledger, reps=boost(config))
        result = TrialResult()
        if len(cover) > cover_capacity(p, config.alpha) + 1:
            result.hard_failures.append(f"cover holds {len(cover)} items, above the cap")
        if rounds == 2:
            wrong = [j for j, w in cover.items() if w != truth.vector.get(j) ** p]
            if wrong:
                result.hard_failures.append(f"exact cover values differ from v_j^p for items {wrong[:5]}")
        for j in truth.heavy_hitters(config.alpha):
            exact = truth.vector.get(j) ** p
            bound = 0.0 if rounds == 2 else config.eps * exact
            value = cover.value(j) if j in cover else -1.0
            result.rows.append(make_row(config.m, j, value, exact, bound))
        return result
    return runner


def run_fp_static(rounds):
    def runner(config, events, rng, ledger):
        inp = PartitionedInput.from_events(events, config.k, config.n)
        truth = oracle(inp, config.p)
        estimate = fp_static(inp, config.p, config.eps, rng, rounds=rounds, ledger=ledger, reps=boost(config))
        return TrialResult([make_row(config.m, -1, estimate, truth.summary.Fp, config.eps * truth.summary.Fp)])
    return runner


def run_count_sketch(config, events, rng, ledger):
    inp = PartitionedInput.from_events(events, config.k, config.n)
    truth = oracle(inp, 2)
    estimate = count_sketch_static(inp, config.eps, rng, ledger)
    bound = config.eps * truth.summary.lp
    return TrialResult([make_row(config.m, j, estimate.get(j), truth.vector.get(j), bound) for j in truth.top(config.top)])


def tracked_items(prefix, config):
    final = prefix.snapshot(max(prefix.snapshots))
    ranked = sorted(final.counts.items(), key=lambda pair: (-pair[1], pair[0]))
    return [j for j, _ in ranked[:config.top]]


def run_hh_tracking(lp):
    def runner(config, events, rng, ledger):
        times = checkpoint_times(config.m, config.checkpoints)
        prefix = PrefixOracle(events, config.k, config.n, config.p, times)
        if lp:
            tracker = LpHeavyHitterTracker(config.k, config.p, config.eps, config.m, config.rescale)
        else:
            tracker = L2HeavyHitterTracker(config.k, config.eps, m=config.m if config.rescale else None)
        answers = run_tracking(events, tracker, times, rng, ledger)

        result = TrialResult()
        items = tracked_items(prefix, config)
        for t in times:
            snapshot = prefix.snapshot(t)
            bound = 3 * config.eps * snapshot.lp_prime if lp else config.eps * snapshot.l2_prime
            for j in items:
                result.rows.append(make_row(t, j, answers[t].get(j, 0.0), snapshot.counts.get(j, 0), bound))
        if not lp:
            limit = 1 / tracker.eps ** 2 + 1
            if tracker.max_phases_per_round() > limit:
                result.hard_failures.append(f"{tracker.max_phases_per_round()} phases in one site round (limit {limit:.1f})")
        return result
    return runner


def run_fp_tracking(config, events, rng, ledger):
    times = checkpoint_times(config.m, config.checkpoints)
    prefix = PrefixOracle(events, config.k, config.n, config.p, times)
    tracker = fp_track(events, config.k, config.n, config.p, config.eps, rng, times, ledger, reps=boost(config))
    result = TrialResult(rounds=tracker.rounds_completed)
    for t in times:
        exact = prefix.snapshot(t).Fp
        result.rows.append(make_row(t, -1, tracker.answers[t], exact, config.eps * exact))
    final = prefix.snapshot(times[-1]).Fp
    if tracker.rounds_completed > 6 * math.log2(final + 2):
        result.hard_failures.append(f"{tracker.rounds_completed} rounds exceed 6·log2(Fp+2)")
    return result


def run_threshold_tracker(config, events, rng, ledger):
    counts = {}
    for event in events:
        counts[event.item] = counts.get(event.item, 0) + 1
    item = min(counts, key=lambda j: (-counts[j], j))
    tau = rng.child('tau').integers(1, counts[item])
    fired = threshold_tracker_run(events, config.k, tau, ledger, item=item)

    seen = 0
    crossing = None
    for event in events:
        if event.item == item:
            seen += 1
            if seen == tau:
                crossing = event.time
                break

    result = TrialResult([make_row(config.m, item, fired or -1, crossing, 0.0)])
    if fired != crossing:
        result.hard_failures.append(f"threshold tracker fired at {fired}, exact crossing at {crossing}")
    return result


def run_exact_forwarding(config, events, rng, ledger):
    times = checkpoint_times(config.m, config.checkpoints)
    prefix = PrefixOracle(events, config.k, config.n, config.p, times)
    answers = run_tracking(events, ExactForwarding(config.k, config.n), times, rng, ledger)
    items = tracked_items(prefix, config)
    rows = [
        make_row(t, j, answers[t].get(j, 0), prefix.snapshot(t).counts.get(j, 0), 0.0)
        for t in times for j in items
    ]
    return TrialResult(rows)


@dataclass(frozen=True)
class ProtocolEntry:
    kind: str
    runner: object
    description: str


PROTOCOLS = {
    'l2hh_static': ProtocolEntry('static', run_l2hh_static, 'one-round l2 heavy hitters (top items, bound eps·l2\')'),
    'lphh_two_round': ProtocolEntry('static', run_lphh(2), 'two-round lp heavy hitters (all items, bound 2eps·lp\')'),
    'lphh_one_round': ProtocolEntry('static', run_lphh(1), 'one-round lp heavy hitters (all items, bound 2eps·lp\')'),
    'cover_two_round': ProtocolEntry('static', run_cover(2), 'two-round exact cover (alpha-heavy items present)'),
    'cover_one_round': ProtocolEntry('static', run_cover(1), 'one-round cover (alpha-heavy items, values within eps)'),
    'fp_static': ProtocolEntry('static', run_fp_static(2), 'two-round Fp (bound eps·Fp)'),
    'fp_static_1r': ProtocolEntry('static', run_fp_static(1), 'one-round Fp (bound eps·Fp)'),
    'count_sketch': ProtocolEntry('static', run_count_sketch, 'count sketch baseline (bound eps·l2)'),
    'l2hh_tracking': ProtocolEntry('tracking', run_hh_tracking(False), 'l2 heavy hitter tracking (bound eps·l2\'(t))'),
    'lphh_tracking': ProtocolEntry('tracking', run_hh_tracking(True), 'lp heavy hitter tracking (bound 3eps·lp\'(t))'),
    'fp_tracking': ProtocolEntry('tracking', run_fp_tracking, 'Fp tracking (bound eps·Fp(t))'),
    'threshold_tracker': ProtocolEntry('tracking', run_threshold_tracker, 'exact crossing of a random threshold on the heaviest item'),
    'exact_forwarding': ProtocolEntry('tracking', run_exact_forwarding, 'forward every arrival (exact counts)'),
}


# ============================================================================
# EXECUTION
# ============================================================================

@lru_cache(maxsize=2)
def cached_stream(config):
    return tuple(generate(config, 0))


def trial_stream(config, trial):
    """Stream of one trial; every trial replays stream 0 when config.fixed_stream is set"""
    if config.fixed_stream:
        return list(cached_stream(config))
    return generate(config, trial)


def run_trial(config, trial):
    """
    One trial: stream ('stream', trial) (or stream 0), protocol randomness ('protocol', trial).

    Returns:
        Tuple (rows, hard_failures)
    """
    entry = PROTOCOLS[config.protocol]
    events = trial_stream(config, trial)
    rng = SeededRng(config.seed, ('protocol', trial))
    ledger = CommLedger(config.k, config.n)
    result = entry.runner(config, events, rng, ledger)
    if not ledger.check():
        result.hard_failures.append('ledger total differs from the per-site sum')
    rounds = result.rounds if result.rounds is not None else ledger.snapshot()['rounds']
    rows = [
        dict(row, trial=trial, bits=ledger.total_bits, messages=ledger.total_messages, rounds=rounds)
        for row in result.rows
    ]
    return rows, [f"trial {trial}: {failure}" for failure in result.hard_failures]


def aggregate(frame):
    """
    Aggregate statistics of a per-trial frame; recomputable from the CSV.
    """
    if frame.empty:
        return {'trials': 0, 'rows': 0, 'coverage_rate': 0.0, 'mean_bits': 0.0,
                'mean_messages': 0.0, 'mean_rounds': 0.0, 'mean_abs_error': 0.0, 'estimate_stats': []}
    per_trial = frame.groupby('trial')[['bits', 'messages', 'rounds']].first()
    stats = []
    for (t, item), group in frame.groupby(['t', 'item'], sort=True):
        stats.append({
            't': int(t),
            'item': int(item),
            'mean': float(group['estimate'].mean()),
            'variance': float(group['estimate'].var(ddof=0)),
            'exact_mean': float(group['exact'].mean()),
            'coverage': float(group['covered'].astype(float).mean()),
        })
    return {
        'trials': int(frame['trial'].nunique()),
        'rows': int(len(frame)),
        'coverage_rate': float(frame['covered'].astype(float).mean()),
        'mean_bits': float(per_trial['bits'].mean()),
        'mean_messages': float(per_trial['messages'].mean()),
        'mean_rounds': float(per_trial['rounds'].mean()),
        'mean_abs_error': float(frame['abs_error'].mean()),
        'estimate_stats': stats,
    }


@dataclass
class TrialReport:
    config: ExperimentConfig
    run_id: str
    rows: pd.DataFrame
    aggregate: dict
    hard_failures: list = field(default_factory=list)
    csv_path: Path = None
    json_path: Path = None

    @property
    def coverage_rate(self):
        return self.aggregate['coverage_rate']

    @property
    def exit_code(self):
        return 0 if not self.hard_failures else 1

    def save(self, out_dir=None):
        out = Path(out_dir or OUTPUT_DIR)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"{self.config.protocol}_{self.run_id}"
        self.csv_path = out / f"{stem}.csv"
        self.json_path = out / f"{stem}.json"

        with open(self.csv_path, 'w', newline='') as handle:
            handle.write(f"# {CSV_VERSION} protocol={self.config.protocol} run_id={self.run_id}\n")
            self.rows.to_csv(handle, index=False)
        with open(self.json_path, 'w') as handle:
            json.dump({
                'version': CSV_VERSION,
                'run_id': self.run_id,
                'config': self.config.echo(),
                'aggregate': self.aggregate,
                'hard_failures': self.hard_failures,
            }, handle, indent=2, sort_keys=True)
        log(f"💾 Saved {len(self.rows)} rows to {self.csv_path}")
        return self.csv_path, self.json_path


def run_experiment(config, out_dir=None, workers=None, write=True):
    """
    Run `config.trials` independent trials and report them.

    Args:
        out_dir: output directory (default EXPERIMENT_OUTPUT_DIR)
        workers: process pool size (default WORKERS); results are reduced
            in trial order either way
        write: save the per-trial CSV and aggregate JSON

    Returns:
        TrialReport
    """
    config.validate()
    workers = workers or WORKERS
    trials = range(config.trials)
    if workers > 1 and config.trials > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_trial, [config] * config.trials, trials))
    else:
        results = [run_trial(config, trial) for trial in trials]

    rows = [row for trial_rows, _ in results for row in trial_rows]
    failures = [failure for _, trial_failures in results for failure in trial_failures]
    frame = pd.DataFrame(rows, columns=CSV_COLUMNS)
    report = TrialReport(config, run_identifier(config), frame, aggregate(frame), failures)
    for failure in failures:
        log(f"❌ {failure}")
    log(f"✅ {config.protocol}: {config.trials} trial(s), coverage {report.coverage_rate:.3f}, "
        f"mean bits {report.aggregate['mean_bits']:.0f}")
    if write:
        report.save(out_dir)
    return report


# ============================================================================
# REPORTING
# ============================================================================

def read_trial_rows(csv_path):
    return pd.read_csv(csv_path, comment='#')


def read_aggregate(json_path):
    with open(json_path) as handle:
        return json.load(handle)


def aggregates_match(left, right):
    """Compare two aggregate dicts up to float tolerance"""
    if isinstance(left, dict) and isinstance(right, dict):
        return left.keys() == right.keys() and all(aggregates_match(left[key], right[key]) for key in left)
    if isinstance(left, list) and isinstance(right, list):
        return len(left) == len(right) and all(aggregates_match(a, b) for a, b in zip(left, right))
    if isinstance(left, (int, float)) and isinstance(right, (int, float)):
        return math.isclose(left, right, rel_tol=AGGREGATE_TOLERANCE, abs_tol=AGGREGATE_TOLERANCE)
    return left == right


def recompute_report(csv_path, json_path=None):
    """
    Recompute the aggregate from a per-trial CSV and compare it with the JSON.

    Returns:
        Tuple (matches, recomputed aggregate, stored aggregate or None)
    """
    csv_path = Path(csv_path)
    json_path = Path(json_path) if json_path else csv_path.with_suffix('.json')
    recomputed = aggregate(read_trial_rows(csv_path))
    if not json_path.exists():
        return False, recomputed, None
    stored = read_aggregate(json_path)['aggregate']
    return aggregates_match(recomputed, stored), recomputed, stored


def fit_scaling_exponent(xs, ys):
    """Least-squares slope of log(ys) against log(xs)"""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) < 2 or np.any(xs <= 0) or np.any(ys <= 0):
        raise ConfigError("❌ scaling fits need at least two points with positive x and y")
    slope, _ = np.polyfit(np.log(xs), np.log(ys), 1)
    return float(slope)


def grid_axis(field_name, value):
    """The x coordinate of a grid point (1/eps for eps)"""
    return 1 / value if field_name == 'eps' else value


def run_scaling_grid(config, field_name, values, out_dir=None, write=False, workers=None):
    """
    Mean ledger bits across a one-parameter grid.

    Returns:
        Tuple (points, exponent): points are (x, mean_bits) with x = 1/eps
        when the grid is over eps
    """
    points = []
    for value in values:
        report = run_experiment(replace(config, **{field_name: value}), out_dir, workers, write)
        points.append((grid_axis(field_name, value), report.aggregate['mean_bits']))
    exponent = fit_scaling_exponent([x for x, _ in points], [y for _, y in points])
    log(f"📊 {config.protocol}: bits ~ {field_name}^{exponent:.2f}")
    return points, exponent


def fit_from_reports(json_paths, field_name):
    """Scaling exponent of mean bits across saved runs that differ in `field_name`"""
    points = []
    for path in json_paths:
        saved = read_aggregate(path)
        points.append((grid_axis(field_name, saved['config'][field_name]), saved['aggregate']['mean_bits']))
    return fit_scaling_exponent([x for x, _ in points], [y for _, y in points])
