"""
Ground Truth Module
Exact statistics every protocol estimate is checked against

This module provides:
1. oracle(): exact v, Fp, lp, F'p, l'p and heavy hitter sets for an input
2. PrefixOracle: exact prefix statistics at many checkpoints in one pass
"""

from collections import defaultdict
from dataclasses import dataclass

from frequency_core import (
    FrequencyVector,
    MomentSummary,
    PartitionedInput,
    ParameterError,
    log,
    partition_moments,
    root,
)


# ============================================================================
# ONE-SHOT ORACLE
# ============================================================================

@dataclass(frozen=True)
class OracleResult:
    vector: FrequencyVector
    summary: MomentSummary

    def heavy_hitters(self, alpha):
        """Items j with v_j^p > alpha · Fp"""
        p = self.summary.p
        return sorted(j for j, c in self.vector.items() if c ** p > alpha * self.summary.Fp)

    def top(self, count):
        ranked = sorted(self.vector.items(), key=lambda pair: (-pair[1], pair[0]))
        return [j for j, _ in ranked[:count]]


def oracle(source, p, k=None, n=None, prefix=None):
    """
    Exact statistics of a partitioned input or of a prefix of an event stream.

    Args:
        source: PartitionedInput, or a sequence of StreamEvents (then k and
            n are required)
        p: moment order (≥ 2)
        prefix: with events, only those with time ≤ prefix are counted

    Returns:
        OracleResult
    """
    if not isinstance(source, PartitionedInput):
        if k is None or n is None:
            raise ParameterError("❌ k and n are required when the oracle is given events")
        events = [e for e in source if prefix is None or e.time <= prefix]
        source = PartitionedInput.from_events(events, k, n)
    return OracleResult(source.global_vector(), partition_moments(source, p))


# ============================================================================
# PREFIX ORACLE
# ============================================================================

@dataclass(frozen=True)
class PrefixSnapshot:
    time: int
    counts: dict
    F2_prime: int
    Fp: int
    Fp_prime: int
    p: int

    @property
    def lp(self):
        return root(self.Fp, self.p)

    @property
    def lp_prime(self):
        return root(self.Fp_prime, self.p)

    @property
    def l2_prime(self):
        return root(self.F2_prime, 2)

    def F0(self):
        return len(self.counts)


class PrefixOracle:
    """
    Exact prefix statistics of an event stream.

    A snapshot at checkpoint t covers every event with time ≤ t; F2', Fp
    and F'p are maintained incrementally so the pass is linear in m.
    """

    def __init__(self, events, k, n, p, checkpoints):
        self.k = k
        self.n = n
        self.p = p
        self.snapshots = {}

        pending = sorted(set(checkpoints))
        cursor = 0
        global_counts = defaultdict(int)
        local_counts = [defaultdict(int) for _ in range(k)]
        F2_prime = Fp = Fp_prime = 0

        def record(t):
            self.snapshots[t] = PrefixSnapshot(t, dict(global_counts), F2_prime, Fp, Fp_prime, p)

        for event in events:
            while cursor < len(pending) and pending[cursor] < event.time:
                record(pending[cursor])
                cursor += 1
            old_local = local_counts[event.site][event.item]
            old_global = global_counts[event.item]
            local_counts[event.site][event.item] = old_local + 1
            global_counts[event.item] = old_global + 1
            F2_prime += 2 * old_local + 1
            Fp_prime += (old_local + 1) ** p - old_local ** p
            Fp += (old_global + 1) ** p - old_global ** p

        while cursor < len(pending):
            record(pending[cursor])
            cursor += 1

        log(f"📊 prefix oracle: {len(self.snapshots)} checkpoints, final Fp = {Fp}")

    def snapshot(self, time):
        try:
            return self.snapshots[time]
        except KeyError:
            raise ParameterError(f"❌ time {time} is not one of the oracle's checkpoints")
