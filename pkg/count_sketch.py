"""
Count Sketch Module
Linear-sketch baseline for heavy hitter estimation

Every site sketches its local vector with the shared hash functions and
ships the whole table; the coordinator adds the tables and estimates each
item by the median over rows.
"""

import math

import numpy as np

from frequency_core import CommLedger, check_eps, log
from network_simulator import MessageBatch, RoundOutcome, RoundProtocol, run_rounds
from static_heavy_hitters import HHEstimate, local_arrays


# ============================================================================
# CONFIGURATION
# ============================================================================

SKETCH_DEPTH = 5


def sketch_width(eps):
    """⌈2 / eps²⌉"""
    return math.ceil(2 / (eps * eps))


class CountSketch:
    """depth × width table with bucket and sign hashes over [0, n)"""

    def __init__(self, n, width, depth, rng):
        self.n = n
        self.width = width
        self.depth = depth
        self.buckets = rng.generator.integers(0, width, size=(depth, n))
        self.signs = np.where(rng.bits((depth, n)), 1, -1)
        self.table = np.zeros((depth, width))

    def add_vector(self, items, counts):
        for row in range(self.depth):
            np.add.at(self.table[row], self.buckets[row, items], self.signs[row, items] * counts)

    def merge(self, table):
        self.table += table

    def estimate_all(self):
        """Median estimate for every item in the universe"""
        rows = np.arange(self.depth)[:, None]
        return np.median(self.signs * self.table[rows, self.buckets], axis=0)


class CountSketchProtocol(RoundProtocol):
    round_limit = 1
    name = 'count-sketch'

    def __init__(self, n, eps, rng, depth=SKETCH_DEPTH):
        check_eps(eps)
        self.eps = eps
        self.n = n
        self.width = sketch_width(eps)
        self.depth = depth
        # shared hash functions come from public randomness
        self.hash_rng = rng.child('public', 'count-sketch')

    def fresh_sketch(self):
        return CountSketch(self.n, self.width, self.depth, self.hash_rng.child('hashes'))

    def site_step(self, round_no, site, local, state, broadcasts, rng):
        sketch = self.fresh_sketch()
        items, counts = local_arrays(local)
        if len(items):
            sketch.add_vector(items, counts)
        cells = np.arange(self.depth * self.width)
        return [MessageBatch('sketch-cell', cells, sketch.table.ravel().copy())]

    def coordinator_step(self, round_no, inboxes):
        sketch = self.fresh_sketch()
        for outbox in inboxes:
            for batch in outbox:
                sketch.merge(batch.payloads.reshape(self.depth, self.width))
        estimates = sketch.estimate_all()
        nonzero = {int(j): float(v) for j, v in enumerate(estimates) if v != 0}
        log(f"📊 count sketch: {self.depth}×{self.width} table, {len(nonzero)} nonzero estimates")
        return RoundOutcome.finish(HHEstimate(nonzero, self.eps, 'l2', 2))


def count_sketch_static(inp, eps, rng, ledger=None, depth=SKETCH_DEPTH):
    """Count sketch estimates of the global vector (error ~ eps·‖v‖2)"""
    ledger = ledger or CommLedger(inp.k, inp.n)
    return run_rounds(inp, CountSketchProtocol(inp.n, eps, rng, depth), rng, ledger)
