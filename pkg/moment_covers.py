"""
Moment Covers Module
Static (alpha, eps)-covers, recursive sketching and one-shot Fp estimation

This module provides:
1. Two-round exact-value covers and one-round approximate-value covers
2. Subsampling levels h_1..h_phi drawn from public randomness
3. The Y recursion folding per-level covers into an estimate of |u|
4. fp_static: 1- or 2-round Fp, every level's cover computed in parallel

A cover of u = v^p is a set of (j, w_j) pairs containing every j with
u_j > alpha·|u|; exact covers have w_j = v_j^p.
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
    log,
)
from network_simulator import Message, MessageBatch, RoundOutcome, RoundProtocol, run_rounds
from static_heavy_hitters import (
    boost_reps,
    check_reps,
    local_arrays,
    lp_to_l2_eps,
    one_round_medians,
    one_round_site_batches,
    select_tau,
)


# ============================================================================
# CONFIGURATION
# ============================================================================

# Y_phi is computed only when the deepest level holds at most this many items
DEEP_LEVEL_F0_LIMIT = 100

# eps' = alpha^(1/p) · eps / (ONE_ROUND_VALUE_FACTOR · p)
ONE_ROUND_VALUE_FACTOR = 8


# ============================================================================
# TYPES
# ============================================================================

@dataclass
class CoverSet:
    """(item, value) pairs of an (alpha, eps)-cover"""
    pairs: dict = field(default_factory=dict)
    alpha: float = 1.0
    eps: float = 0.0
    exact_values: bool = False

    def __contains__(self, item):
        return item in self.pairs

    def __len__(self):
        return len(self.pairs)

    def items(self):
        return self.pairs.items()

    def value(self, item):
        return self.pairs.get(item, 0)

    def total(self):
        return sum(self.pairs.values())

    def union(self, other):
        """Union of covers of disjoint subsamples"""
        pairs = dict(self.pairs)
        pairs.update(other.pairs)
        return CoverSet(pairs, self.alpha, self.eps, self.exact_values and other.exact_values)


@dataclass
class SketchLevels:
    """
    One run of the recursive sketch.

    h[l] holds the bits h_{l+1}; covers[l] covers u^l; Y[l] is the level-l
    estimate and Y[0] the final one. `overflow` marks F0(u^phi) > 100.
    """
    phi: int
    h: np.ndarray
    covers: list
    Y: list
    overflow: bool = False

    @property
    def estimate(self):
        return self.Y[0]


def cover_capacity(p, alpha):
    """Number of top estimates kept: ⌊4^p / alpha⌋"""
    return math.floor(4 ** p / alpha)


def check_alpha(alpha, p):
    if not 0 < alpha < 4 ** p:
        raise ParameterError(f"❌ alpha must lie in (0, 4^p), got {alpha}")


# ============================================================================
# SUBSAMPLING LEVELS
# ============================================================================

def sketch_depth(n):
    """phi = ⌈log2 n⌉, at least 1"""
    return max(1, ceil_log2(n))


def draw_levels(n, phi, rng):
    """phi × n matrix of fair bits; row l is h_{l+1}"""
    return rng.bits((phi, n))


def level_mask(h, level):
    """Items e with h_1,e = ... = h_level,e = 1 (all items at level 0)"""
    if level == 0:
        return np.ones(h.shape[1], dtype=bool)
    return np.all(h[:level], axis=0)


def fold_levels(y_phi, covers, h, sign=1):
    """
    Y_l = 2·Y_{l+1} + sign · Σ_{(i,w) ∈ Q_l} (1 − 2·h_{l+1,i})·w, from l = phi−1 down to 0.

    Exact for int or Fraction inputs.

    Returns:
        [Y_0, ..., Y_phi]
    """
    phi = len(covers)
    Y = [0] * (phi + 1)
    Y[phi] = y_phi
    for level in range(phi - 1, -1, -1):
        row = h[level]
        correction = sum((1 - 2 * int(row[i])) * w for i, w in covers[level].items())
        Y[level] = 2 * Y[level + 1] + sign * correction
    return Y


def recursive_sketch(cover_provider, u_accessor, phi, rng, n, printed_sign=False, h=None):
    """
    Estimate |u| from covers of its subsamples.

    Args:
        cover_provider: callable (level, h) → CoverSet of u^level
        u_accessor: callable (mask) → dict item → u value on the masked items
        phi: number of subsampling levels
        rng: public SeededRng for the levels
        n: universe size
        printed_sign: use −Σ(1−2h)w instead of +Σ(1−2h)w
        h: fixed level bits (bypasses rng)

    Returns:
        SketchLevels; estimate is 0 when F0(u^phi) > 100
    """
    if phi < 1:
        raise ParameterError(f"❌ phi must be ≥ 1, got {phi}")
    h = draw_levels(n, phi, rng) if h is None else np.asarray(h, dtype=bool)
    covers = [cover_provider(level, h) for level in range(phi)]
    deepest = u_accessor(level_mask(h, phi))
    if len(deepest) > DEEP_LEVEL_F0_LIMIT:
        log(f"⚠️ F0(u^phi) = {len(deepest)} > {DEEP_LEVEL_F0_LIMIT}, outputting 0")
        return SketchLevels(phi, h, covers, [0] * (phi + 1), overflow=True)
    Y = fold_levels(sum(deepest.values()), covers, h, -1 if printed_sign else 1)
    return SketchLevels(phi, h, covers, Y)


# ============================================================================
# COVER PROTOCOLS
# ============================================================================

@dataclass
class LevelCoverResult:
    covers: list
    deep_counts: dict = None


class LevelCoverProtocol(RoundProtocol):
    """
    Covers for several subsamples at once.

    Round 1: per level, the boosted one-round lp heavy hitter protocol on
    the masked local vector, plus every local count at the deepest level.
    For exact covers the coordinator broadcasts the top ⌊4^p/alpha⌋ items
    of every level (one word each) and round 2 collects their exact counts.

    Args:
        masks: one boolean item mask per level (None = unrestricted)
        exact: two-round exact-value covers; otherwise one-round covers
            with values v̂^p
        hh_eps: accuracy of the underlying lp heavy hitter protocol
        deep_mask: items whose counts are forwarded in round 1
    """

    name = 'level-covers'

    def __init__(self, p, alpha, hh_eps, k, m, reps, masks, exact=True, value_eps=0.0, deep_mask=None):
        check_p(p)
        check_alpha(alpha, p)
        check_eps(hh_eps, 'heavy hitter eps')
        check_reps(reps)
        self.p = p
        self.alpha = alpha
        self.hh_eps = hh_eps
        self.k = k
        self.reps = reps
        self.masks = list(masks)
        self.exact = exact
        self.value_eps = value_eps
        self.deep_mask = deep_mask
        self.round_limit = 2 if exact else 1
        self.max_exponent = ceil_log2(max(int(m), 1))
        self.l2_eps = lp_to_l2_eps(hh_eps, p, k)
        self.capacity = cover_capacity(p, alpha)
        self.deep_counts = None

    def masked(self, items, counts, mask):
        if mask is None:
            return items, counts
        keep = mask[items] if len(items) else np.zeros(0, dtype=bool)
        return items[keep], counts[keep]

    def site_step(self, round_no, site, local, state, broadcasts, rng):
        items, counts = local_arrays(local)
        if round_no == 2:
            outbox = []
            for level, selected in broadcasts[-1].items():
                present = [j for j in selected if local.get(j) > 0]
                if present:
                    values = np.array([local.get(j) for j in present], dtype=np.int64)
                    outbox.append(MessageBatch('exact-count', np.array(present), values, np.full(len(present), level)))
            return outbox

        outbox = []
        for level, mask in enumerate(self.masks):
            level_items, level_counts = self.masked(items, counts, mask)
            Fp_local = sum(int(c) ** self.p for c in level_counts.astype(np.int64).tolist())
            outbox.append(Message('local-moment', site, payload=Fp_local, tag=level))
            outbox.extend(one_round_site_batches(
                level_items, level_counts, self.hh_eps, self.l2_eps, self.k,
                self.max_exponent, self.reps, rng.child('level', level), label=level,
            ))
        if self.deep_mask is not None:
            deep_items, deep_counts = self.masked(items, counts, self.deep_mask)
            if len(deep_items):
                outbox.append(MessageBatch('deep', deep_items, deep_counts.astype(np.int64)))
        return outbox

    def coordinator_step(self, round_no, inboxes):
        messages = [m for outbox in inboxes for m in outbox]
        if round_no == 2:
            exact = [defaultdict(int) for _ in self.masks]
            for batch in messages:
                for j, c, level in zip(batch.items.tolist(), batch.payloads.tolist(), batch.tags.tolist()):
                    exact[level][j] += int(c)
            covers = [
                CoverSet({j: c ** self.p for j, c in level_counts.items()}, self.alpha, 0.0, True)
                for level_counts in exact
            ]
            return RoundOutcome.finish(LevelCoverResult(covers, self.deep_counts))

        if self.deep_mask is not None:
            self.deep_counts = defaultdict(int)
            for batch in messages:
                if batch.kind == 'deep':
                    for j, c in zip(batch.items.tolist(), batch.payloads.tolist()):
                        self.deep_counts[j] += int(c)
            self.deep_counts = dict(self.deep_counts)

        moments_by_level = defaultdict(int)
        for message in messages:
            if message.kind == 'local-moment':
                moments_by_level[message.tag] += message.payload
        samples = [m for m in messages if m.kind == 'sample']

        selections = {}
        for level in range(len(self.masks)):
            t = select_tau(moments_by_level[level], self.p, self.max_exponent)
            estimates = {} if t < 0 else one_round_medians(samples, t, self.reps, label=level)
            ranked = sorted(((v, j) for j, v in estimates.items() if v > 0), key=lambda pair: (-pair[0], pair[1]))
            selections[level] = {j: v for v, j in ranked[:self.capacity]}

        if not self.exact:
            covers = [
                CoverSet({j: v ** self.p for j, v in selections[level].items()}, self.alpha, self.value_eps, False)
                for level in range(len(self.masks))
            ]
            return RoundOutcome.finish(LevelCoverResult(covers, self.deep_counts))

        words = sum(len(chosen) for chosen in selections.values())
        if words == 0:
            covers = [CoverSet({}, self.alpha, 0.0, True) for _ in self.masks]
            return RoundOutcome.finish(LevelCoverResult(covers, self.deep_counts))
        log(f"📊 {self.name}: broadcasting {words} candidate items over {len(self.masks)} level(s)")
        return RoundOutcome.send({level: sorted(chosen) for level, chosen in selections.items() if chosen}, words)


def cover_hh_eps(alpha, p):
    """alpha^(1/p) / 4"""
    return alpha ** (1 / p) / 4


def cover_two_round(inp, p, alpha, rng, ledger=None, reps=None, m=None):
    """
    (alpha, 0)-cover of v^p in two rounds, with exact values v_j^p.

    Args:
        reps: boosting repetitions (default ⌈48 ln n⌉, failure 1/n^2)
    """
    ledger = ledger or CommLedger(inp.k, inp.n)
    proto = LevelCoverProtocol(
        p, alpha, cover_hh_eps(alpha, p), inp.k, m or max(inp.total(), 1),
        reps or boost_reps(inp.n), [None], exact=True,
    )
    proto.name = 'cover-two-round'
    return run_rounds(inp, proto, rng, ledger).covers[0]


def cover_one_round(inp, p, alpha, eps, rng, ledger=None, reps=None, m=None):
    """(alpha, eps)-cover of v^p in one round, values v̂_j^p"""
    check_eps(eps)
    ledger = ledger or CommLedger(inp.k, inp.n)
    hh_eps = alpha ** (1 / p) * eps / (ONE_ROUND_VALUE_FACTOR * p)
    proto = LevelCoverProtocol(
        p, alpha, hh_eps, inp.k, m or max(inp.total(), 1),
        reps or boost_reps(inp.n), [None], exact=False, value_eps=eps,
    )
    proto.name = 'cover-one-round'
    return run_rounds(inp, proto, rng, ledger).covers[0]


# ============================================================================
# STATIC Fp
# ============================================================================

def fp_static_levels(inp, p, eps, rng, rounds=2, ledger=None, reps=None, printed_sign=False):
    """
    Recursive sketch over u = v^p with every level's cover computed in
    the same one or two communication rounds.

    Returns:
        SketchLevels (estimate of Fp in .estimate)
    """
    check_p(p)
    check_eps(eps)
    if rounds not in (1, 2):
        raise ParameterError(f"❌ rounds must be 1 or 2, got {rounds}")
    ledger = ledger or CommLedger(inp.k, inp.n)

    phi = sketch_depth(inp.n)
    alpha = eps * eps / phi ** 3
    h = draw_levels(inp.n, phi, rng.child('public', 'levels'))
    masks = [level_mask(h, level) for level in range(phi)]
    m = max(inp.total(), 1)
    reps = reps or boost_reps(inp.n)

    if rounds == 2:
        proto = LevelCoverProtocol(p, alpha, cover_hh_eps(alpha, p), inp.k, m, reps, masks,
                                   exact=True, deep_mask=level_mask(h, phi))
    else:
        hh_eps = alpha ** (1 / p) * eps / (ONE_ROUND_VALUE_FACTOR * p)
        proto = LevelCoverProtocol(p, alpha, hh_eps, inp.k, m, reps, masks,
                                   exact=False, value_eps=eps, deep_mask=level_mask(h, phi))
    proto.name = f'fp-static-{rounds}r'
    result = run_rounds(inp, proto, rng.child('protocol'), ledger)

    deep = {j: c ** p for j, c in result.deep_counts.items()}
    levels = recursive_sketch(
        lambda level, _h: result.covers[level],
        lambda _mask: deep,
        phi, rng, inp.n, printed_sign=printed_sign, h=h,
    )
    log(f"📊 fp_static ({rounds} round): phi = {phi}, estimate {float(levels.estimate):.1f}")
    return levels


def fp_static(inp, p, eps, rng, rounds=2, ledger=None, reps=None, printed_sign=False):
    """(1±eps)·Fp with probability ≥ 0.9"""
    return float(fp_static_levels(inp, p, eps, rng, rounds, ledger, reps, printed_sign).estimate)
