"""
Network Simulator Module
Execution engines for coordinator-model and tracking-model protocols

This module provides:
1. A round-synchronous driver for one-shot coordinator protocols
2. An event-sequential driver for continuous tracking protocols
3. A zero-latency metered channel shared by the tracking protocols
4. Stream file reading/writing (`time site item` per line)

Sites only ever see their own local vector, their own state, the
broadcasts of earlier rounds and their private random stream. Every
message in either direction is charged to the CommLedger; a broadcast
costs k individual messages.
"""

from dataclasses import dataclass

import numpy as np
import pandas as pd

from frequency_core import (
    FrequencyVector,
    ParameterError,
    ProtocolDivergenceError,
    log,
)


# ============================================================================
# MESSAGES AND EVENTS
# ============================================================================

@dataclass(frozen=True)
class StreamEvent:
    """One arrival: item `item` reaches site `site` at time `time`"""
    time: int
    site: int
    item: int


@dataclass(frozen=True)
class Message:
    kind: object
    site: int
    item: int = -1
    payload: float = 0.0
    tag: object = None

    def __len__(self):
        return 1


@dataclass
class MessageBatch:
    """
    Vectorised batch of messages of one kind from one site.

    A batch of length L is charged as L individual messages.
    """
    kind: str
    items: np.ndarray
    payloads: np.ndarray
    tags: np.ndarray = None

    def __len__(self):
        return int(len(self.items))

    def same_as(self, other):
        return (
            self.kind == other.kind
            and np.array_equal(self.items, other.items)
            and np.array_equal(self.payloads, other.payloads)
            and (self.tags is None) == (other.tags is None)
            and (self.tags is None or np.array_equal(self.tags, other.tags))
        )


@dataclass
class RoundOutcome:
    """What the coordinator does at the end of a round"""
    output: object = None
    broadcast: object = None
    words: int = 1
    done: bool = False

    @classmethod
    def finish(cls, output):
        return cls(output=output, done=True)

    @classmethod
    def send(cls, payload, words=1):
        return cls(broadcast=payload, words=max(int(words), 0))


# ============================================================================
# ROUND (COORDINATOR MODEL) DRIVER
# ============================================================================

class RoundProtocol:
    """
    Base class of a one-shot coordinator-model protocol.

    Subclasses implement `site_step` (returns a list of Message /
    MessageBatch) and `coordinator_step` (returns a RoundOutcome).
    """

    round_limit = 1
    name = 'round-protocol'

    def initial_site_state(self, site):
        return {}

    def site_step(self, round_no, site, local, state, broadcasts, rng):
        return []

    def coordinator_step(self, round_no, inboxes):
        raise NotImplementedError


def run_rounds(inp, proto, rng, ledger, transcript=None):
    """
    Execute a RoundProtocol until the coordinator outputs.

    Args:
        inp: PartitionedInput (site i only sees inp.locals[i])
        proto: RoundProtocol instance
        rng: SeededRng; site i draws from rng.child('site', i)
        ledger: CommLedger charged for every message and broadcast
        transcript: optional list receiving (round, site, message) tuples

    Returns:
        The coordinator's output
    """
    site_rngs = [rng.child('site', i) for i in range(inp.k)]
    states = [proto.initial_site_state(i) for i in range(inp.k)]
    broadcasts = []

    for round_no in range(1, proto.round_limit + 1):
        inboxes = []
        for i in range(inp.k):
            outbox = proto.site_step(round_no, i, inp.locals[i], states[i], tuple(broadcasts), site_rngs[i]) or []
            for message in outbox:
                ledger.charge_many(i, len(message), round_id=round_no, kind=message.kind)
                if transcript is not None:
                    transcript.append((round_no, i, message))
            inboxes.append(list(outbox))

        outcome = proto.coordinator_step(round_no, inboxes)
        if outcome.done:
            log(f"✅ {proto.name}: finished after {round_no} round(s), {ledger.total_messages} messages")
            return outcome.output

        if outcome.broadcast is not None and outcome.words > 0:
            for i in range(inp.k):
                ledger.charge_many(i, outcome.words, round_id=round_no, kind='broadcast')
        broadcasts.append(outcome.broadcast)

    raise ProtocolDivergenceError(
        f"❌ {proto.name} produced no output within {proto.round_limit} round(s)"
    )


# ============================================================================
# TRACKING MODEL
# ============================================================================

class Channel:
    """
    Zero-latency, loss-free, ordered link between k sites and the coordinator.

    A call returns only after the message has been charged and delivered,
    so the receiver acts on it before the next stream event.
    """

    def __init__(self, ledger, record=False):
        self.ledger = ledger
        self.round_id = 0
        self.transcript = [] if record else None

    @property
    def k(self):
        return self.ledger.k

    def upload(self, site, kind, item=-1, payload=0.0, tag=None):
        message = Message(kind, site, item, payload, tag)
        self.ledger.charge(site, round_id=self.round_id, kind=kind)
        if self.transcript is not None:
            self.transcript.append(('up', message))
        return message

    def download(self, site, kind, item=-1, payload=0.0, tag=None):
        message = Message(kind, site, item, payload, tag)
        self.ledger.charge(site, round_id=self.round_id, kind=kind)
        if self.transcript is not None:
            self.transcript.append(('down', message))
        return message

    def broadcast(self, kind, payload=None, words=1):
        for site in range(self.k):
            self.ledger.charge_many(site, words, round_id=self.round_id, kind=kind)
        if self.transcript is not None:
            self.transcript.append(('broadcast', Message(kind, -1, -1, payload)))

    def poll(self, kind, values):
        """Coordinator asks every site for one value; each site replies"""
        for site in range(self.k):
            self.download(site, f'{kind}-request')
            self.upload(site, kind, payload=values[site])
        return list(values)

    def collect(self, kind, values):
        """Every site sends one value unprompted (k messages, no request leg)"""
        for site in range(self.k):
            self.upload(site, kind, payload=values[site])
        return list(values)


class TrackingProtocol:
    """
    Base class of a continuous tracking protocol.

    `on_arrival` is the site-side handler: it may only use the arriving
    site's own state and sends through `self.channel`. `query` is the
    coordinator-side answer and may only use what the coordinator received.
    """

    name = 'tracking-protocol'

    def start(self, channel, rng):
        self.channel = channel
        self.rng = rng

    def on_arrival(self, event):
        raise NotImplementedError

    def query(self, time):
        raise NotImplementedError


def run_tracking(events, proto, query_times, rng, ledger, channel=None):
    """
    Replay a stream through a tracking protocol.

    Args:
        events: StreamEvents sorted by strictly increasing time
        proto: TrackingProtocol instance
        query_times: times at which the coordinator answer is recorded; the
            answer for time t reflects every event with time ≤ t
        rng: SeededRng handed to the protocol
        ledger: CommLedger charged by the protocol's channel

    Returns:
        dict mapping query time → coordinator output
    """
    channel = channel or Channel(ledger)
    proto.start(channel, rng)

    pending = sorted(set(query_times))
    answers = {}
    cursor = 0
    last_time = 0

    for event in events:
        if event.time <= last_time:
            raise ParameterError(f"❌ events must have strictly increasing times (saw {event.time} after {last_time})")
        while cursor < len(pending) and pending[cursor] < event.time:
            answers[pending[cursor]] = proto.query(pending[cursor])
            cursor += 1
        proto.on_arrival(event)
        last_time = event.time

    while cursor < len(pending):
        answers[pending[cursor]] = proto.query(pending[cursor])
        cursor += 1

    log(f"📊 {proto.name}: {last_time} events, {ledger.total_messages} messages, {ledger.total_bits} bits")
    return answers


class ExactForwarding(TrackingProtocol):
    """Every arrival is forwarded; the coordinator keeps exact counts"""

    name = 'exact-forwarding'

    def __init__(self, k, n):
        self.k = k
        self.n = n
        self.counts = FrequencyVector(n)

    def on_arrival(self, event):
        message = self.channel.upload(event.site, 'arrival', event.item, 1)
        self.counts.add(message.item)

    def query(self, time):
        return dict(self.counts.items())


# ============================================================================
# STREAM FILES
# ============================================================================

STREAM_COLUMNS = ['time', 'site', 'item']


def iter_events(sites, items, start_time=1):
    """Yield StreamEvents for parallel site/item sequences, times start_time, start_time+1, ..."""
    for offset, (site, item) in enumerate(zip(sites, items)):
        yield StreamEvent(start_time + offset, int(site), int(item))


def write_stream_file(path, events):
    """Write events as whitespace-separated `time site item` records"""
    frame = pd.DataFrame(
        [(e.time, e.site, e.item) for e in events],
        columns=STREAM_COLUMNS,
    )
    with open(path, 'w') as handle:
        handle.write('# time site item\n')
        frame.to_csv(handle, sep=' ', header=False, index=False)
    log(f"💾 Wrote {len(frame)} events to {path}")


def read_stream_file(path):
    """Read a stream file written by write_stream_file (or by hand)"""
    try:
        frame = pd.read_csv(path, sep=r'\s+', comment='#', header=None, names=STREAM_COLUMNS, dtype=int)
    except pd.errors.EmptyDataError:
        return []
    log(f"📂 Loaded {len(frame)} events from {path}")
    return [StreamEvent(int(t), int(s), int(j)) for t, s, j in frame.itertuples(index=False)]
