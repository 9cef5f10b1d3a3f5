#!/usr/bin/env python3
"""
Tests for generator strings and synthetic streams
"""

from collections import Counter
from types import SimpleNamespace

import pytest

from frequency_core import ConfigError
from stream_generator import generate, generate_input, parse_generator


def config(**overrides):
    values = dict(k=4, n=64, m=1000, generator='zipf(1.1)', seed=3)
    values.update(overrides)
    return SimpleNamespace(**values)


def test_parse_generator():
    assert parse_generator('zipf(1.1)') == ('zipf', (1.1,))
    assert parse_generator(' uniform ') == ('uniform', ())
    assert parse_generator('planted_hh(2, 0.25)') == ('planted_hh', (2, 0.25))
    assert parse_generator('equal_split') == ('equal_split', ())


@pytest.mark.parametrize('text', [
    '', 'gauss(1)', 'zipf', 'zipf(-1)', 'zipf(a)', 'uniform(3)',
    'planted_hh(1)', 'planted_hh(1.5,0.1)', 'planted_hh(3,0.5)', 'planted_hh(0,0.5)',
])
def test_bad_generators_are_rejected(text):
    with pytest.raises(ConfigError):
        parse_generator(text)


def test_stream_shape():
    events = generate(config())
    assert [e.time for e in events] == list(range(1, 1001))
    assert all(0 <= e.site < 4 and 0 <= e.item < 64 for e in events)


def test_same_trial_same_stream():
    assert generate(config(), 2) == generate(config(), 2)
    assert generate(config(), 2) != generate(config(), 3)


def test_planted_item_frequency():
    events = generate(config(generator='planted_hh(1,0.5)'))
    counts = Counter(e.item for e in events)
    assert counts[0] == 500
    assert sum(counts.values()) == 1000


def test_equal_split_spreads_each_item_evenly():
    inp = generate_input(config(generator='equal_split'))
    for item in inp.global_vector().support():
        per_site = [local.get(item) for local in inp.locals]
        assert max(per_site) - min(per_site) <= 1


def test_zipf_head_is_heavy():
    counts = Counter(e.item for e in generate(config(generator='zipf(1.5)', m=5000)))
    assert counts.most_common(1)[0][0] == 0


def test_planted_without_noise_items_is_rejected():
    with pytest.raises(ConfigError):
        generate(config(generator='planted_hh(1,0.5)', n=1))
