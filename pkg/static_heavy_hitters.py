"""
Static Heavy Hitters Module
One-shot coordinator-model heavy hitter estimators

This module provides:
1. l2 heavy hitters by quadratic sampling (one round)
2. lp heavy hitters by sparsify + l2 sampling (two rounds)
3. lp heavy hitters in one round by guessing l'p in powers of two
4. The median trick for boosting any of the above

All protocols are RoundProtocols executed by network_simulator.run_rounds,
so every sample, moment report and broadcast is metered.
"""

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from frequency_core import (
    CommLedger,
    ParameterError,
    ceil_log2,
    check_eps,
    check_p,
    floor_log2_root,
    log,
    moments,
    root,
    sparsify,
)
from network_simulator import Message, MessageBatch, RoundOutcome, RoundProtocol, run_rounds


# ============================================================================
# ESTIMATES
# ============================================================================

@dataclass
class HHEstimate:
    """Per-item frequency estimates; unsampled items are estimated as 0"""
    estimates: dict = field(default_factory=dict)
    eps: float = 0.5
    guarantee_norm: str = 'l2_prime'
    p: int = 2

    def get(self, item):
        return self.estimates.get(item, 0.0)

    def __getitem__(self, item):
        return self.get(item)

    def top(self, count):
        """Items with the `count` largest positive estimates (ties by item id)"""
        ranked = sorted(
            ((value, item) for item, value in self.estimates.items() if value > 0),
            key=lambda pair: (-pair[0], pair[1]),
        )
        return [item for _, item in ranked[:count]]


# ============================================================================
# SITE-SIDE SAMPLING
# ============================================================================

def local_arrays(local):
    """Sorted item ids and their counts as numpy arrays"""
    items = np.array(sorted(local.counts), dtype=np.int64)
    counts = np.array([local.counts[j] for j in items.tolist()], dtype=float)
    return items, counts


def sampling_probabilities(counts, eps):
    """p_ij = min{1, 3 v_ij^2 / (eps^2 F2(v^(i)))}"""
    F2 = float(np.dot(counts, counts))
    if F2 <= 0:
        return np.zeros_like(counts)
    return np.minimum(1.0, 3.0 * counts * counts / (eps * eps * F2))


def sample_site(items, counts, eps, rng, reps=1):
    """
    Quadratic sampling at one site, for `reps` independent repetitions.

    Returns:
        Tuple (rep_index, items, payloads) of equally long arrays; the
        payload of a sampled entry is v_ij / p_ij, its contribution to the
        coordinator's unbiased estimate.
    """
    if len(items) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0)
    probabilities = sampling_probabilities(counts, eps)
    draws = rng.random((reps, len(items))) < probabilities
    rep_index, column = np.nonzero(draws)
    return rep_index, items[column], counts[column] / probabilities[column]


def accumulate(inboxes, kind='sample'):
    """Coordinator side: sum payloads per item over all received batches"""
    totals = defaultdict(float)
    for outbox in inboxes:
        for message in outbox:
            if message.kind != kind:
                continue
            for item, payload in zip(message.items.tolist(), message.payloads.tolist()):
                totals[item] += payload
    return dict(totals)


def lp_to_l2_eps(eps, p, k):
    """eps' = eps^(p/2) / k^(p/2 - 1)"""
    return eps ** (p / 2) / k ** (p / 2 - 1)


def select_tau(Fp_prime, p, max_exponent):
    """
    Exponent t of the guess τ = 2^t with τ ≤ l'p < 2τ.

    When l'p is an exact power of two the larger guess wins. Returns -1
    for an empty input.
    """
    t = floor_log2_root(Fp_prime, p)
    if t < 0:
        return -1
    return min(t, max_exponent)


def boost_reps(n):
    """⌈48 ln n⌉ repetitions (failure 1/n^2), rounded up to an odd count"""
    reps = max(1, math.ceil(48 * math.log(max(n, 2))))
    return reps if reps % 2 else reps + 1


# ============================================================================
# l2 HEAVY HITTERS
# ============================================================================

class L2SamplingProtocol(RoundProtocol):
    round_limit = 1
    name = 'l2hh-static'

    def __init__(self, eps):
        check_eps(eps)
        self.eps = eps

    def site_step(self, round_no, site, local, state, broadcasts, rng):
        items, counts = local_arrays(local)
        _, sampled, payloads = sample_site(items, counts, self.eps, rng)
        if len(sampled) == 0:
            return []
        return [MessageBatch('sample', sampled, payloads)]

    def coordinator_step(self, round_no, inboxes):
        return RoundOutcome.finish(HHEstimate(accumulate(inboxes), self.eps, 'l2_prime', 2))


def l2hh_static(inp, eps, rng, ledger=None):
    """
    One-round l2 heavy hitters.

    Each site i sends v_ij with probability min{1, 3 v_ij^2/(eps^2 F2(v^(i)))};
    the estimate v̂_j is unbiased with variance ≤ eps^2 F'2(v) / 3.
    """
    ledger = ledger or CommLedger(inp.k, inp.n)
    return run_rounds(inp, L2SamplingProtocol(eps), rng, ledger)


# ============================================================================
# lp HEAVY HITTERS - TWO ROUNDS
# ============================================================================

class TwoRoundLpProtocol(RoundProtocol):
    """Round 1: local Fp → l'p broadcast. Round 2: sparsify, then l2 sampling."""

    round_limit = 2
    name = 'lphh-two-round'

    def __init__(self, p, eps, k):
        check_p(p)
        check_eps(eps)
        self.p = p
        self.eps = eps
        self.k = k
        self.l2_eps = lp_to_l2_eps(eps, p, k)
        self.lp_prime = None

    def site_step(self, round_no, site, local, state, broadcasts, rng):
        if round_no == 1:
            Fp_local, _ = moments(local, self.p)
            return [Message('local-moment', site, payload=Fp_local)]

        threshold = self.eps * broadcasts[-1] / self.k
        items, counts = local_arrays(sparsify(local, threshold))
        _, sampled, payloads = sample_site(items, counts, self.l2_eps, rng)
        if len(sampled) == 0:
            return []
        return [MessageBatch('sample', sampled, payloads)]

    def coordinator_step(self, round_no, inboxes):
        if round_no == 1:
            Fp_prime = sum(m.payload for outbox in inboxes for m in outbox)
            if Fp_prime == 0:
                return RoundOutcome.finish(HHEstimate({}, self.eps, 'lp_prime', self.p))
            self.lp_prime = root(Fp_prime, self.p)
            log(f"📊 l'p = {self.lp_prime:.3f}, sparsify threshold {self.eps * self.lp_prime / self.k:.3f}")
            return RoundOutcome.send(self.lp_prime)
        return RoundOutcome.finish(HHEstimate(accumulate(inboxes), self.eps, 'lp_prime', self.p))


def lphh_two_round(inp, p, eps, rng, ledger=None):
    """
    Two-round lp heavy hitters: |v̂_j − v_j| ≤ 2 eps l'p(v) w.p. ≥ 2/3.

    Sites drop entries below eps·l'p/k and run l2 sampling with
    eps' = eps^(p/2) / k^(p/2 − 1) on what remains.
    """
    ledger = ledger or CommLedger(inp.k, inp.n)
    return run_rounds(inp, TwoRoundLpProtocol(p, eps, inp.k), rng, ledger)


# ============================================================================
# lp HEAVY HITTERS - ONE ROUND
# ============================================================================

def check_reps(reps):
    if reps < 1 or reps % 2 == 0:
        raise ParameterError(f"❌ reps must be odd and ≥ 1, got {reps}")


def one_round_site_batches(items, counts, eps, l2_eps, k, max_exponent, reps, rng, label=None):
    """
    Site side of the one-round lp protocol for every guess τ = 2^t.

    Instance t keeps local entries ≥ eps·τ/k and l2-samples them at l2_eps.
    Batch tags are rows (t, rep) or (t, rep, label).
    """
    batches = []
    for t in range(max_exponent + 1):
        keep = counts >= eps * (2 ** t) / k
        if not keep.any():
            break
        rep_index, sampled, payloads = sample_site(items[keep], counts[keep], l2_eps, rng, reps)
        if len(sampled) == 0:
            continue
        columns = [np.full(len(sampled), t), rep_index]
        if label is not None:
            columns.append(np.full(len(sampled), label))
        batches.append(MessageBatch('sample', sampled, payloads, np.column_stack(columns)))
    return batches


def one_round_medians(batches, t, reps, label=None):
    """Coordinator side: per-item median over repetitions of instance t"""
    reps_index, items, payloads = [], [], []
    for batch in batches:
        chosen = batch.tags[:, 0] == t
        if label is not None:
            chosen &= batch.tags[:, 2] == label
        reps_index.append(batch.tags[chosen, 1])
        items.append(batch.items[chosen])
        payloads.append(batch.payloads[chosen])
    if sum(len(a) for a in items) == 0:
        return {}

    reps_index = np.concatenate(reps_index)
    items = np.concatenate(items)
    payloads = np.concatenate(payloads)
    universe, column = np.unique(items, return_inverse=True)
    table = np.zeros((reps, len(universe)))
    np.add.at(table, (reps_index, column), payloads)
    medians = np.median(table, axis=0)
    return {int(j): float(value) for j, value in zip(universe, medians) if value != 0}


class OneRoundLpProtocol(RoundProtocol):
    """
    One round: every site runs the sparsified l2 sampler for each guess
    τ = 1, 2, 4, ..., 2^⌈log2 m⌉ (and `reps` repetitions of each), and
    reports its local Fp alongside. The coordinator keeps the instance
    with τ ≤ l'p < 2τ and takes the per-item median over repetitions.
    """

    round_limit = 1
    name = 'lphh-one-round'

    def __init__(self, p, eps, k, m, reps=1):
        check_p(p)
        check_eps(eps)
        check_reps(reps)
        self.p = p
        self.eps = eps
        self.k = k
        self.reps = reps
        self.max_exponent = ceil_log2(max(int(m), 1))
        self.l2_eps = lp_to_l2_eps(eps, p, k)
        self.selected_tau = None

    def site_step(self, round_no, site, local, state, broadcasts, rng):
        Fp_local, _ = moments(local, self.p)
        items, counts = local_arrays(local)
        batches = one_round_site_batches(
            items, counts, self.eps, self.l2_eps, self.k, self.max_exponent, self.reps, rng
        )
        return [Message('local-moment', site, payload=Fp_local)] + batches

    def coordinator_step(self, round_no, inboxes):
        Fp_prime = sum(m.payload for outbox in inboxes for m in outbox if m.kind == 'local-moment')
        t = select_tau(Fp_prime, self.p, self.max_exponent)
        if t < 0:
            return RoundOutcome.finish(HHEstimate({}, self.eps, 'lp_prime', self.p))
        self.selected_tau = 2 ** t

        batches = [m for outbox in inboxes for m in outbox if m.kind == 'sample']
        estimates = one_round_medians(batches, t, self.reps)
        log(f"📊 one-round lp-HH: τ = {self.selected_tau}, {len(estimates)} items estimated")
        return RoundOutcome.finish(HHEstimate(estimates, self.eps, 'lp_prime', self.p))


def lphh_one_round(inp, p, eps, rng, ledger=None, m=None, reps=1):
    """
    One-round lp heavy hitters (error ≤ 2 eps l'p per item w.p. ≥ 2/3).

    Args:
        m: known upper bound on the stream length (defaults to the input's)
        reps: odd number of repetitions per guess; the coordinator returns
            per-item medians (reps=1 is the plain protocol)
    """
    ledger = ledger or CommLedger(inp.k, inp.n)
    m = m if m is not None else max(inp.total(), 1)
    return run_rounds(inp, OneRoundLpProtocol(p, eps, inp.k, m, reps), rng, ledger)


# ============================================================================
# MEDIAN TRICK
# ============================================================================

def median_boost(runner, reps, rng):
    """
    Per-item median of `reps` independent runs.

    Args:
        runner: callable taking a SeededRng and returning an HHEstimate
        reps: odd number of repetitions ≥ 1
        rng: SeededRng; run r uses rng.child('rep', r)
    """
    check_reps(reps)
    runs = [runner(rng.child('rep', r)) for r in range(reps)]
    if reps == 1:
        return runs[0]

    items = sorted(set().union(*(run.estimates for run in runs)))
    estimates = {}
    for item in items:
        value = float(np.median([run.get(item) for run in runs]))
        if value != 0:
            estimates[item] = value
    first = runs[0]
    return HHEstimate(estimates, first.eps, first.guarantee_norm, first.p)
