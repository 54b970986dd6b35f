"""Set-associative cache storage and miss-status handling registers.

This module is policy-free mechanism: bookkeeping for lines (with true LRU
per set) and for outstanding misses. The owners decide everything else —
the tile controller in coherence.py drives the L1D (write-through,
no-allocate, states restricted to S/I), the L1.5 (write-back MESI
endpoint) and the L2 slice storage; the core drives its private
instruction cache. Latencies are likewise charged by the owners.

Block data is kept as immutable `bytes` of block_size length; stores
replace the affected slice. All structures round-trip through
state_dict()/load_state() for checkpoints, with deterministic ordering.
"""

from dataclasses import dataclass, field
from typing import Optional

from . import protocol as pr

MSHR_KINDS = ("load", "store", "ifetch")


class FillWithoutMshr(RuntimeError):
    """A fill arrived for a block no MSHR is tracking (protocol bug)."""


@dataclass
class CacheLine:
    block_addr: int
    state: str          # one of protocol.I/S/E/M ("I" never stored)
    data: bytes
    lru_stamp: int

    @property
    def dirty(self) -> bool:
        return self.state == pr.M


class SetAssocCache:
    """Lines indexed by set with true-LRU replacement.

    `sets` and `assoc` define geometry; a line's set is
    (block_addr // block_size) % sets. Lookup is O(1) via a by-block map.
    """

    def __init__(self, name: str, sets: int, assoc: int, block_size: int):
        self.name = name
        self.sets = sets
        self.assoc = assoc
        self.block_size = block_size
        self._by_block = {}           # block_addr -> CacheLine
        self._by_set = [dict() for _ in range(sets)]  # set -> {block_addr: line}
        self._stamp = 0
        self.stats = {"hits": 0, "misses": 0, "merges": 0,
                      "blocked": 0, "writebacks": 0, "evictions": 0}

    def set_of(self, block_addr: int) -> int:
        return (block_addr // self.block_size) % self.sets

    def probe(self, block_addr: int) -> Optional[CacheLine]:
        """Presence check; does not touch LRU."""
        return self._by_block.get(block_addr)

    def touch(self, line: CacheLine) -> None:
        self._stamp += 1
        line.lru_stamp = self._stamp

    def lookup(self, block_addr: int) -> Optional[CacheLine]:
        """Probe and, on presence, promote to most-recently-used."""
        line = self._by_block.get(block_addr)
        if line is not None:
            self.touch(line)
        return line

    def victim_for(self, block_addr: int) -> Optional[CacheLine]:
        """The line that install() would evict right now, if any."""
        ways = self._by_set[self.set_of(block_addr)]
        if block_addr in ways or len(ways) < self.assoc:
            return None
        return min(ways.values(), key=lambda l: l.lru_stamp)

    def install(self, block_addr: int, state: str, data: bytes):
        """Insert or update a line; returns (line, evicted_line_or_None)."""
        assert len(data) == self.block_size
        assert state in (pr.M, pr.E, pr.S)
        line = self._by_block.get(block_addr)
        if line is not None:
            line.state = state
            line.data = data
            self.touch(line)
            return line, None
        victim = self.victim_for(block_addr)
        if victim is not None:
            self.remove(victim.block_addr)
            self.stats["evictions"] += 1
        line = CacheLine(block_addr, state, data, 0)
        self.touch(line)
        self._by_block[block_addr] = line
        self._by_set[self.set_of(block_addr)][block_addr] = line
        return line, victim

    def remove(self, block_addr: int) -> Optional[CacheLine]:
        """Drop a line (to I); returns it for the caller to inspect/forward."""
        line = self._by_block.pop(block_addr, None)
        if line is not None:
            del self._by_set[self.set_of(block_addr)][block_addr]
        return line

    def write_bytes(self, line: CacheLine, offset: int, data: bytes) -> None:
        line.data = (line.data[:offset] + data
                     + line.data[offset + len(data):])

    def lines(self):
        return sorted(self._by_block.values(), key=lambda l: l.block_addr)

    def __len__(self):
        return len(self._by_block)

    # -- checkpoint ---------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "stamp": self._stamp,
            "stats": dict(self.stats),
            "lines": [[l.block_addr, l.state, l.data.hex(), l.lru_stamp]
                      for l in self.lines()],
        }

    def load_state(self, d: dict) -> None:
        self._stamp = d["stamp"]
        self.stats = dict(d["stats"])
        self._by_block.clear()
        self._by_set = [dict() for _ in range(self.sets)]
        for baddr, state, hexdata, stamp in d["lines"]:
            line = CacheLine(baddr, state, bytes.fromhex(hexdata), stamp)
            self._by_block[baddr] = line
            self._by_set[self.set_of(baddr)][baddr] = line


@dataclass
class MshrEntry:
    block_addr: int
    kind: str                      # "load" | "store" | "ifetch"
    waiters: list = field(default_factory=list)
    issued_cycle: int = 0


class MshrFile:
    """Outstanding-miss table: at most one entry per block, bounded count.

    allocate() returns "new" when an entry was created, "merged" when the
    access joined an existing same-block entry, and "blocked" when the file
    is full (the caller retries and charges its stall counter). Waiters are
    plain tuples of primitives so they survive checkpoints.
    """

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.entries = {}            # block_addr -> MshrEntry

    def allocate(self, block_addr: int, kind: str, waiter, cycle: int) -> str:
        if kind not in MSHR_KINDS:
            raise ValueError(f"bad MSHR kind {kind!r}")
        entry = self.entries.get(block_addr)
        if entry is not None:
            if waiter is not None:
                entry.waiters.append(tuple(waiter))
            return "merged"
        if len(self.entries) >= self.capacity:
            return "blocked"
        entry = MshrEntry(block_addr, kind, issued_cycle=cycle)
        if waiter is not None:
            entry.waiters.append(tuple(waiter))
        self.entries[block_addr] = entry
        return "new"

    def get(self, block_addr: int) -> Optional[MshrEntry]:
        return self.entries.get(block_addr)

    def require(self, block_addr: int) -> MshrEntry:
        entry = self.entries.get(block_addr)
        if entry is None:
            raise FillWithoutMshr(f"no MSHR for block {block_addr:#x}")
        return entry

    def free(self, block_addr: int) -> list:
        """Release the entry; returns its waiters in arrival order."""
        entry = self.require(block_addr)
        del self.entries[block_addr]
        return entry.waiters

    @property
    def full(self) -> bool:
        return len(self.entries) >= self.capacity

    def __len__(self):
        return len(self.entries)

    def __contains__(self, block_addr: int) -> bool:
        return block_addr in self.entries

    # -- checkpoint ---------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "entries": [[e.block_addr, e.kind, [list(w) for w in e.waiters],
                         e.issued_cycle]
                        for e in sorted(self.entries.values(),
                                        key=lambda e: e.block_addr)],
        }

    def load_state(self, d: dict) -> None:
        self.entries.clear()
        for baddr, kind, waiters, cyc in d["entries"]:
            e = MshrEntry(baddr, kind, [tuple(w) for w in waiters], cyc)
            self.entries[baddr] = e
