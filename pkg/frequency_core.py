"""
Frequency Core Module
Shared arithmetic, randomness and communication accounting for every protocol

This module provides:
1. Sparse non-negative frequency vectors and k-way partitioned inputs
2. Exact moment computations (Fp, F'p) and their p-th roots
3. Sparsification helpers used by the lp heavy hitter reductions
4. The communication ledger every protocol charges its messages to
5. Seeded, counter-based random streams (public and private randomness)
"""

import math
import os
import zlib
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from dotenv import load_dotenv

load_dotenv()

# Check if logging is enabled via environment variable
ENABLE_LOGGING = os.environ.get('ENABLE_LOGGING', 'false').lower() in ('true', '1', 'yes')


def log(message):
    """Print message only if logging is enabled"""
    if ENABLE_LOGGING:
        print(message)


# ============================================================================
# CONFIGURATION
# ============================================================================

# One 64-bit payload per message, on top of the item id and the site id
PAYLOAD_BITS = 64


# ============================================================================
# ERRORS
# ============================================================================

class ParameterError(ValueError):
    """A protocol parameter (eps, p, alpha, reps, ...) is out of range"""


class ConfigError(ValueError):
    """An experiment configuration is invalid"""


class ProtocolError(RuntimeError):
    """A protocol received a message it cannot handle"""


class ProtocolDivergenceError(ProtocolError):
    """A round protocol did not produce an output within its round limit"""


class ArithmeticCapacityError(OverflowError):
    """An exact moment is too large to convert to a float"""


def check_eps(eps, name='eps'):
    if not 0 < eps < 1:
        raise ParameterError(f"❌ {name} must lie in (0, 1), got {eps}")


def check_p(p, minimum=2):
    if int(p) != p or p < minimum:
        raise ParameterError(f"❌ p must be an integer ≥ {minimum}, got {p}")


def ceil_log2(x):
    """⌈log2 x⌉ for a positive integer x (0 for x ≤ 1)"""
    x = int(x)
    if x <= 1:
        return 0
    return (x - 1).bit_length()


def floor_log2_root(value, p):
    """
    Largest integer t ≥ 0 with (2^t)^p ≤ value, computed exactly.

    Used to pick the power-of-two guess τ with τ ≤ value^(1/p) < 2τ.
    Returns -1 when value < 1.
    """
    if value < 1:
        return -1
    if isinstance(value, int):
        t = (value.bit_length() - 1) // p
    else:
        t = int(math.floor(math.log2(value) / p))
    t = max(t, 0)
    while 2 ** ((t + 1) * p) <= value:
        t += 1
    while t > 0 and 2 ** (t * p) > value:
        t -= 1
    return t


# ============================================================================
# FREQUENCY VECTORS
# ============================================================================

class FrequencyVector:
    """
    Sparse non-negative vector over the universe [0, n).

    Zero entries are never stored. Values are integers for real frequency
    vectors; shifted sparsification may produce fractional values.
    """

    __slots__ = ('n', 'counts')

    def __init__(self, n, counts=None):
        if n < 1:
            raise ParameterError(f"❌ universe size n must be ≥ 1, got {n}")
        self.n = int(n)
        self.counts = {}
        if counts:
            for item, value in dict(counts).items():
                if not 0 <= item < self.n:
                    raise ParameterError(f"❌ item id {item} outside universe [0, {self.n})")
                if value < 0:
                    raise ParameterError(f"❌ negative frequency {value} for item {item}")
                if value > 0:
                    self.counts[int(item)] = value

    @classmethod
    def from_items(cls, n, items):
        """Build a vector by counting occurrences in an iterable of item ids"""
        return cls(n, Counter(items))

    def get(self, item):
        return self.counts.get(item, 0)

    def add(self, item, by=1):
        if not 0 <= item < self.n:
            raise ParameterError(f"❌ item id {item} outside universe [0, {self.n})")
        value = self.counts.get(item, 0) + by
        if value < 0:
            raise ParameterError(f"❌ update would make item {item} negative")
        if value == 0:
            self.counts.pop(item, None)
        else:
            self.counts[item] = value
        return value

    def items(self):
        return self.counts.items()

    def support(self):
        return sorted(self.counts)

    def total(self):
        """ℓ1 norm (stream length for a real frequency vector)"""
        return sum(self.counts.values())

    def restrict(self, mask):
        """Sub-vector keeping items whose entry in the boolean mask is set"""
        return FrequencyVector(self.n, {j: c for j, c in self.counts.items() if mask[j]})

    def power(self, p):
        """The vector u with u_j = x_j^p"""
        return FrequencyVector(self.n, {j: c ** p for j, c in self.counts.items()})

    def as_array(self, dtype=np.int64):
        dense = np.zeros(self.n, dtype=dtype)
        for j, c in self.counts.items():
            dense[j] = c
        return dense

    def copy(self):
        vector = FrequencyVector(self.n)
        vector.counts = dict(self.counts)
        return vector

    def __len__(self):
        return len(self.counts)

    def __iter__(self):
        return iter(sorted(self.counts))

    def __eq__(self, other):
        if not isinstance(other, FrequencyVector):
            return NotImplemented
        return self.n == other.n and self.counts == other.counts

    def __repr__(self):
        preview = dict(sorted(self.counts.items())[:6])
        more = '' if len(self.counts) <= 6 else f', ... +{len(self.counts) - 6}'
        return f"FrequencyVector(n={self.n}, {preview}{more})"


@dataclass
class PartitionedInput:
    """k local frequency vectors; the global vector is their entrywise sum"""
    k: int
    n: int
    locals: list

    def __post_init__(self):
        if self.k < 1:
            raise ParameterError(f"❌ number of sites k must be ≥ 1, got {self.k}")
        if len(self.locals) != self.k:
            raise ParameterError(f"❌ expected {self.k} local vectors, got {len(self.locals)}")
        for local in self.locals:
            if local.n != self.n:
                raise ParameterError("❌ every local vector must share the universe size n")

    @classmethod
    def from_events(cls, events, k, n):
        locals_ = [FrequencyVector(n) for _ in range(k)]
        for event in events:
            locals_[event.site].add(event.item)
        return cls(k, n, locals_)

    @classmethod
    def from_lists(cls, rows):
        """Build from dense per-site lists, e.g. [[3, 0], [1, 2]]"""
        n = len(rows[0])
        return cls(len(rows), n, [FrequencyVector(n, dict(enumerate(row))) for row in rows])

    def global_vector(self):
        merged = Counter()
        for local in self.locals:
            merged.update(local.counts)
        return FrequencyVector(self.n, merged)

    def restrict(self, mask):
        return PartitionedInput(self.k, self.n, [local.restrict(mask) for local in self.locals])

    def total(self):
        return sum(local.total() for local in self.locals)


@dataclass(frozen=True)
class MomentSummary:
    p: int
    Fp: int
    Fp_prime: int
    lp: float
    lp_prime: float


# ============================================================================
# MOMENTS AND SPARSIFICATION
# ============================================================================

def moments(x, p):
    """
    Exact p-th moment of a frequency vector and its p-th root.

    Returns:
        Tuple (Fp, lp) with Fp = Σ_j x_j^p (exact for integer entries)
    """
    if p < 1:
        raise ParameterError(f"❌ moment order p must be ≥ 1, got {p}")
    Fp = sum(value ** p for value in x.counts.values())
    return Fp, root(Fp, p)


def root(value, p):
    if value <= 0:
        return 0.0
    try:
        return float(value) ** (1.0 / p)
    except OverflowError as e:
        raise ArithmeticCapacityError(f"❌ moment too large for a float root: {e}")


def partition_moments(inp, p):
    """Fp, F'p and their roots for a partitioned input"""
    check_p(p)
    Fp, lp = moments(inp.global_vector(), p)
    Fp_prime = sum(moments(local, p)[0] for local in inp.locals)
    return MomentSummary(p=p, Fp=Fp, Fp_prime=Fp_prime, lp=lp, lp_prime=root(Fp_prime, p))


def sparsify(x, threshold):
    """Keep entry j iff x_j ≥ threshold; kept entries unchanged"""
    if threshold < 0:
        raise ParameterError(f"❌ sparsify threshold must be ≥ 0, got {threshold}")
    return FrequencyVector(x.n, {j: c for j, c in x.counts.items() if c >= threshold})


def sparsify_shifted(x, threshold):
    """Entry j becomes x_j − threshold if x_j ≥ threshold, else it is dropped"""
    if threshold < 0:
        raise ParameterError(f"❌ sparsify threshold must be ≥ 0, got {threshold}")
    return FrequencyVector(x.n, {j: c - threshold for j, c in x.counts.items() if c >= threshold})


# ============================================================================
# COMMUNICATION LEDGER
# ============================================================================

@dataclass
class CommLedger:
    """Bits and messages charged by a protocol run"""
    k: int
    n: int
    total_bits: int = 0
    total_messages: int = 0
    per_site_bits: list = field(default_factory=list)
    per_round_bits: dict = field(default_factory=dict)
    messages_by_kind: Counter = field(default_factory=Counter)

    def __post_init__(self):
        if not self.per_site_bits:
            self.per_site_bits = [0] * self.k

    @property
    def message_bits(self):
        """⌈log2 n⌉ + ⌈log2 k⌉ + 64: item id, site id and one payload"""
        return ceil_log2(self.n) + ceil_log2(self.k) + PAYLOAD_BITS

    def charge(self, site, bits=None, round_id=0, kind='data'):
        self.charge_many(site, 1, round_id=round_id, kind=kind, bits=bits)

    def charge_many(self, site, count, round_id=0, kind='data', bits=None):
        if not 0 <= site < self.k:
            raise ParameterError(f"❌ site {site} outside [0, {self.k})")
        if count <= 0:
            return
        cost = (self.message_bits if bits is None else int(bits)) * int(count)
        self.total_bits += cost
        self.total_messages += int(count)
        self.per_site_bits[site] += cost
        self.per_round_bits[round_id] = self.per_round_bits.get(round_id, 0) + cost
        self.messages_by_kind[kind] += int(count)

    def check(self):
        """Completeness: total equals the per-site sum"""
        return self.total_bits == sum(self.per_site_bits)

    def snapshot(self):
        return {
            'bits': self.total_bits,
            'messages': self.total_messages,
            'rounds': len(self.per_round_bits),
        }


def charge(ledger, site, bits=None):
    """Charge one message from/to `site` to the ledger"""
    ledger.charge(site, bits)


# ============================================================================
# SEEDED RANDOMNESS
# ============================================================================

def _key_part(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode('utf-8'))
    return int(part)


class SeededRng:
    """
    Reproducible random stream keyed by (seed, stream id).

    Backed by numpy's counter-based Philox generator; `child(...)` derives
    an independent stream, so e.g. `rng.child('site', 3)` is the private
    randomness of site 3 and `rng.child('public')` the shared randomness.
    """

    def __init__(self, seed, stream=()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = tuple(_key_part(part) for part in stream)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream)
        self.generator = np.random.Generator(np.random.Philox(sequence))

    def child(self, *key):
        return SeededRng(self.seed, self.stream + tuple(_key_part(part) for part in key))

    def random(self, size=None):
        return self.generator.random(size)

    def uniform(self, low, high):
        return float(self.generator.uniform(low, high))

    def integers(self, low, high):
        """Uniform integer in [low, high] (both inclusive)"""
        return int(self.generator.integers(low, high, endpoint=True))

    def bits(self, size):
        return self.generator.integers(0, 2, size=size).astype(bool)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, stream={self.stream})"
