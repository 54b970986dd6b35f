"""Discrete-event kernel.

One global queue keyed by (fire_cycle, sequence) orders every action in the
machine; the sequence counter breaks same-cycle ties in scheduling order, so
a run is a single auditable total order and repeat runs are bit-identical.
Components register a handler under a string id and exchange events only
through the queue (or through synchronous calls that happen inside one
event's delivery, which inherit its position in the order).

Event payloads are built from ints/strings/None/bytes and tuples of those,
plus registered wire classes, so the whole queue can round-trip through a
JSON checkpoint.
"""

import heapq
import random
from enum import Enum


class RunOutcome(Enum):
    ALL_HALTED = "all_halted"
    MAX_CYCLES = "max_cycles"
    PREDICATE = "predicate"


class SchedulingInPast(RuntimeError):
    pass


class DeadlockDetected(RuntimeError):
    """No pending events while work remains unfinished.

    Carries one human-readable line per stalled component saying what it
    is waiting for.
    """

    def __init__(self, cycle, waiting):
        self.cycle = cycle
        self.waiting = list(waiting)
        lines = "\n  ".join(self.waiting) or "(no component reported a reason)"
        super().__init__(f"deadlock at cycle {cycle}; waiting:\n  {lines}")


class VersionMismatch(RuntimeError):
    pass


class CorruptCheckpoint(RuntimeError):
    pass


CHECKPOINT_VERSION = 1

_WIRE_CLASSES = {}


def register_wire_class(cls):
    """Make a payload dataclass checkpointable (needs to_wire/from_wire)."""
    _WIRE_CLASSES[cls.__name__] = cls
    return cls


def encode_payload(p):
    if p is None or isinstance(p, (int, str, bool)):
        return p
    if isinstance(p, bytes):
        return ["@b", p.hex()]
    if isinstance(p, tuple):
        return ["@t", [encode_payload(x) for x in p]]
    if isinstance(p, dict):
        if not all(isinstance(k, str) for k in p):
            raise CorruptCheckpoint("dict payload keys must be strings")
        return ["@d", [[k, encode_payload(v)] for k, v in sorted(p.items())]]
    cls = type(p).__name__
    if cls in _WIRE_CLASSES:
        return ["@o", cls, encode_payload(p.to_wire())]
    raise CorruptCheckpoint(f"unserializable event payload of type {cls}")


def decode_payload(p):
    if p is None or isinstance(p, (int, str, bool)):
        return p
    if isinstance(p, list):
        tag = p[0]
        if tag == "@b":
            return bytes.fromhex(p[1])
        if tag == "@t":
            return tuple(decode_payload(x) for x in p[1])
        if tag == "@d":
            return {k: decode_payload(v) for k, v in p[1]}
        if tag == "@o":
            return _WIRE_CLASSES[p[1]].from_wire(decode_payload(p[2]))
    raise CorruptCheckpoint(f"unrecognized payload encoding: {p!r}")


class Engine:
    """The event queue, the clock, and run control."""

    def __init__(self, rng_seed: int = 1):
        self.cycle = 0
        self._seq = 0
        self._heap = []
        self._handlers = {}
        self.rng = random.Random(rng_seed)
        self.events_delivered = 0
        self._unhalted = 0
        self._describe_waiting = None

    # -- wiring -----------------------------------------------------------

    def register(self, target: str, handler) -> None:
        if target in self._handlers:
            raise ValueError(f"duplicate component id {target!r}")
        self._handlers[target] = handler

    def set_liveness(self, unhalted_cores: int, describe_waiting) -> None:
        """Install the halt condition: a core count that note_halt decrements,
        and a callback yielding per-component waiting reasons for deadlocks."""
        self._unhalted = unhalted_cores
        self._describe_waiting = describe_waiting

    def note_halt(self) -> None:
        self._unhalted -= 1

    @property
    def unhalted_cores(self) -> int:
        return self._unhalted

    # -- scheduling ---------------------------------------------------------

    def schedule(self, cycle: int, target: str, kind: str, payload=None) -> None:
        if cycle < self.cycle:
            raise SchedulingInPast(f"cycle {cycle} < current {self.cycle}")
        heapq.heappush(self._heap, (cycle, self._seq, target, kind, payload))
        self._seq += 1

    def schedule_in(self, delay: int, target: str, kind: str, payload=None) -> None:
        self.schedule(self.cycle + delay, target, kind, payload)

    # -- run control --------------------------------------------------------

    def run_until(self, stop_cycle=None, stop_when=None) -> RunOutcome:
        """Deliver events in (cycle, seq) order until a stop.

        stop_cycle=N simulates cycles < N (an event at N stays queued and the
        clock rests at N). stop_when(engine) is checked after each delivery.
        With neither given, runs until all cores halt or the queue drains.
        """
        heap = self._heap
        handlers = self._handlers
        while True:
            if stop_cycle is not None and (not heap or heap[0][0] >= stop_cycle):
                self.cycle = max(self.cycle, stop_cycle)
                return RunOutcome.MAX_CYCLES
            if not heap:
                if self._unhalted <= 0:
                    return RunOutcome.ALL_HALTED
                waiting = self._describe_waiting() if self._describe_waiting else []
                raise DeadlockDetected(self.cycle, waiting)
            cycle, _seq, target, kind, payload = heapq.heappop(heap)
            self.cycle = cycle
            handlers[target](kind, payload)
            self.events_delivered += 1
            if self._unhalted <= 0 and self._describe_waiting is not None:
                return RunOutcome.ALL_HALTED
            if stop_when is not None and stop_when(self):
                return RunOutcome.PREDICATE

    def drain(self) -> None:
        """Deliver every remaining event (in-flight memory effects after all
        cores halt); the clock advances to the last event delivered."""
        heap = self._heap
        while heap:
            cycle, _seq, target, kind, payload = heapq.heappop(heap)
            self.cycle = cycle
            self._handlers[target](kind, payload)
            self.events_delivered += 1

    # -- checkpoint ----------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "cycle": self.cycle,
            "seq": self._seq,
            "events_delivered": self.events_delivered,
            "unhalted": self._unhalted,
            "rng": _rng_to_jsonable(self.rng.getstate()),
            "events": [[c, s, t, k, encode_payload(p)]
                       for (c, s, t, k, p) in sorted(self._heap)],
        }

    def load_state(self, d: dict) -> None:
        self.cycle = d["cycle"]
        self._seq = d["seq"]
        self.events_delivered = d["events_delivered"]
        self._unhalted = d["unhalted"]
        self.rng.setstate(_rng_from_jsonable(d["rng"]))
        self._heap = [(c, s, t, k, decode_payload(p))
                      for (c, s, t, k, p) in d["events"]]
        heapq.heapify(self._heap)


def _rng_to_jsonable(state):
    version, internal, gauss = state
    return [version, list(internal), gauss]


def _rng_from_jsonable(j):
    version, internal, gauss = j
    return (version, tuple(internal), gauss)
