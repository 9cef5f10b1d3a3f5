#!/usr/bin/env python3
"""
Tests for the exact oracles
"""

import pytest

from frequency_core import ParameterError, PartitionedInput
from ground_truth import PrefixOracle, oracle
from network_simulator import iter_events


def test_oracle_on_partitioned_input():
    result = oracle(PartitionedInput.from_lists([[3, 0], [1, 2]]), 2)
    assert result.summary.Fp == 20
    assert result.summary.Fp_prime == 14
    assert result.top(1) == [0]
    # 16 > 0.5·20, 4 is not
    assert result.heavy_hitters(0.5) == [0]
    assert result.heavy_hitters(0.1) == [0, 1]


def test_oracle_on_event_prefix():
    events = list(iter_events([0, 1, 1, 0], [2, 2, 0, 2]))
    result = oracle(events, 3, k=2, n=4, prefix=2)
    assert result.vector.counts == {2: 2}
    assert result.summary.Fp == 8
    assert result.summary.Fp_prime == 2
    with pytest.raises(ParameterError):
        oracle(events, 3)


def test_prefix_oracle_matches_one_shot_oracle():
    sites = [0, 1, 2, 0, 0, 1, 2, 2, 1, 0]
    items = [1, 1, 3, 1, 2, 3, 3, 1, 1, 2]
    events = list(iter_events(sites, items))
    prefix = PrefixOracle(events, 3, 4, 3, [0, 4, 7, 10, 12])
    for t in (0, 4, 7, 10, 12):
        expected = oracle(events, 3, k=3, n=4, prefix=t)
        snapshot = prefix.snapshot(t)
        assert snapshot.counts == expected.vector.counts
        assert snapshot.Fp == expected.summary.Fp
        assert snapshot.Fp_prime == expected.summary.Fp_prime
        assert snapshot.lp_prime == pytest.approx(expected.summary.lp_prime)
    assert prefix.snapshot(10).F0() == 3


def test_prefix_oracle_unknown_checkpoint():
    prefix = PrefixOracle([], 1, 2, 2, [5])
    assert prefix.snapshot(5).Fp == 0
    with pytest.raises(ParameterError):
        prefix.snapshot(6)
