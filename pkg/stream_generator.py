"""
Stream Generator Module
Deterministic synthetic streams and partitions for experiments

Generators:
    zipf(s)                 items drawn ∝ rank^(-s); item 0 is the heaviest
    uniform                 items drawn uniformly from [0, n)
    planted_hh(count,share) items 0..count-1 hold `share`·m arrivals each,
                            the rest is zipf(1.1) noise over the other items
    equal_split             zipf(1.1) items, occurrence r of an item goes to
                            site r mod k (each item spread evenly)

Outside equal_split every arrival goes to a uniformly random site. All
draws come from SeededRng(seed, ('stream', trial)).
"""

import re

import numpy as np

from frequency_core import ConfigError, PartitionedInput, SeededRng, log
from network_simulator import iter_events


# ============================================================================
# CONFIGURATION
# ============================================================================

NOISE_ZIPF_S = 1.1

GENERATOR_PATTERN = re.compile(r'^\s*([a-z_]+)\s*(?:\(([^)]*)\))?\s*$')


# ============================================================================
# GENERATOR PARSING
# ============================================================================

def parse_generator(text):
    """
    Parse a generator string such as 'zipf(1.1)'.

    Returns:
        Tuple (name, params) e.g. ('zipf', (1.1,)) or ('planted_hh', (1, 0.5))

    Raises:
        ConfigError: unknown generator or malformed parameters
    """
    match = GENERATOR_PATTERN.match(text or '')
    if not match:
        raise ConfigError(f"❌ cannot parse generator '{text}' (try zipf(1.1), uniform, planted_hh(1,0.5) or equal_split)")
    name, raw = match.group(1), match.group(2)
    try:
        values = [float(part) for part in raw.split(',')] if raw and raw.strip() else []
    except ValueError:
        raise ConfigError(f"❌ non-numeric parameter in generator '{text}'")

    if name == 'zipf':
        if len(values) != 1 or values[0] <= 0:
            raise ConfigError(f"❌ zipf needs one positive exponent, got '{text}'")
        return name, (values[0],)
    if name in ('uniform', 'equal_split'):
        if values:
            raise ConfigError(f"❌ {name} takes no parameters, got '{text}'")
        return name, ()
    if name == 'planted_hh':
        if len(values) != 2 or values[0] < 1 or int(values[0]) != values[0]:
            raise ConfigError(f"❌ planted_hh needs (count, share) with integer count ≥ 1, got '{text}'")
        count, share = int(values[0]), values[1]
        if not 0 < share or count * share > 1:
            raise ConfigError(f"❌ planted_hh shares must be positive and sum to at most 1, got '{text}'")
        return name, (count, share)
    raise ConfigError(f"❌ unknown generator '{name}' (choose zipf, uniform, planted_hh or equal_split)")


# ============================================================================
# ITEM SEQUENCES
# ============================================================================

def zipf_items(n, m, s, rng, offset=0):
    """m draws from ranks 1..n with P(rank r) ∝ r^(-s), as item ids offset+r-1"""
    weights = np.arange(1, n + 1, dtype=float) ** (-s)
    return offset + rng.generator.choice(n, size=m, p=weights / weights.sum())


def planted_items(n, m, count, share, rng):
    per_item = int(round(share * m))
    planted = np.repeat(np.arange(count), per_item)[:m]
    rest = m - len(planted)
    if rest > 0:
        if n <= count:
            raise ConfigError(f"❌ planted_hh leaves {rest} noise arrivals but no free items (n = {n})")
        noise = zipf_items(n - count, rest, NOISE_ZIPF_S, rng, offset=count)
        planted = np.concatenate([planted, noise])
    return rng.generator.permutation(planted)


def item_sequence(name, params, n, m, rng):
    if name == 'zipf':
        return zipf_items(n, m, params[0], rng)
    if name == 'uniform':
        return rng.generator.integers(0, n, size=m)
    if name == 'planted_hh':
        return planted_items(n, m, params[0], params[1], rng)
    return zipf_items(n, m, NOISE_ZIPF_S, rng)


def site_sequence(name, items, k, rng):
    if name != 'equal_split':
        return rng.generator.integers(0, k, size=len(items))
    seen = {}
    sites = np.zeros(len(items), dtype=np.int64)
    for position, item in enumerate(items.tolist()):
        occurrence = seen.get(item, 0)
        sites[position] = occurrence % k
        seen[item] = occurrence + 1
    return sites


# ============================================================================
# PUBLIC API
# ============================================================================

def generate(config, trial=0):
    """
    Stream of `config.m` StreamEvents (times 1..m) for one trial.

    Args:
        config: anything with k, n, m, generator and seed attributes
        trial: trial index; each trial gets its own stream
    """
    name, params = parse_generator(config.generator)
    rng = SeededRng(config.seed, ('stream', trial))
    items = item_sequence(name, params, config.n, config.m, rng)
    if len(items) and items.max() >= config.n:
        raise ConfigError(f"❌ generator produced item {items.max()} outside [0, {config.n})")
    sites = site_sequence(name, items, config.k, rng)
    events = list(iter_events(sites, items))
    log(f"📊 generated {len(events)} events ({config.generator}, k={config.k}, n={config.n}, trial {trial})")
    return events


def generate_input(config, trial=0):
    """The same stream, aggregated into k local frequency vectors"""
    return PartitionedInput.from_events(generate(config, trial), config.k, config.n)
