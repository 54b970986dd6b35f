"""Timed cache hierarchy: per-tile coherence controllers and the memory side.

Each tile runs one TileController, a single engine target that plays two
roles at once:

* the private side — a write-through, no-write-allocate L1 data cache in
  front of the tile-level cache (the coherence endpoint holding MESI
  state), with miss-handling registers that merge same-block requests and
  writeback buffers that let evictions overlap new fills;
* the home side — the directory slice plus shared-L2 data slice for every
  block this tile is home to.

All protocol decisions are delegated to the pure tables in protocol.py;
this module adds the data movement, SRAM latencies, buffer capacities and
network plumbing around them. Block data travels inside messages as hex
strings so every message (and therefore every checkpoint) is JSON-safe.

Ordering is the one thing the protocol tables assume of the transport:
delivery is FIFO per (source, destination, network). Message emission
preserves it with a per-channel monotone release clock: a message is
released no earlier than the last one queued for the same channel.
Home-side messages carry an SRAM latency (directory tag, or tag+data for
block-carrying replies), private-side ones leave at once.

Per-address data ordering is observable through an optional access log:
every load, store and atomic appends one record at its serialization
point (hits at issue, misses when the fill completes, stores and atomics
when they update the tile-level copy). Replaying the log against a flat
memory model is the strongest functional check the test suite runs.
"""

from typing import Optional

from . import protocol as pr
from .cache import MshrFile, SetAssocCache

# Message kinds that terminate at a home slice; the rest terminate at the
# private side of the addressed tile. The two sets are disjoint.
HOME_KINDS = frozenset({
    pr.GETS, pr.GETX, pr.UPGRADE, pr.PUTS, pr.PUTE, pr.PUTM,
    pr.INV_ACK, pr.OWNER_DATA, pr.MEM_DATA,
})

_GRANTS = frozenset({pr.DATA_S, pr.DATA_E, pr.DATA_M, pr.ACK_M})
_FILL_STATE = {pr.DATA_S: pr.S, pr.DATA_E: pr.E, pr.DATA_M: pr.M}
# Home-side replies that carry a block payload and therefore pay the data
# SRAM access on top of the directory tag lookup.
_HOME_DATA_SENDS = frozenset({pr.DATA_S, pr.DATA_E, pr.DATA_M, pr.MEM_WRITE})


class AddressOutOfRange(RuntimeError):
    """An access fell outside the configured main-memory size."""


class MainMemory:
    """Sparse block-granular backing store (absent blocks read as zero)."""

    def __init__(self, vcfg):
        self.block_size = vcfg.block_size_bytes
        self.size = vcfg.cfg.memory_size_bytes
        self.blocks = {}                    # block_addr -> bytes

    def _check(self, addr: int, size: int) -> None:
        if addr < 0 or addr + size > self.size:
            raise AddressOutOfRange(f"[{addr:#x}, +{size}) outside memory of "
                                    f"{self.size:#x} bytes")

    def read_block(self, block_addr: int) -> bytes:
        self._check(block_addr, self.block_size)
        return self.blocks.get(block_addr, bytes(self.block_size))

    def write_block(self, block_addr: int, data: bytes) -> None:
        assert len(data) == self.block_size
        self._check(block_addr, self.block_size)
        self.blocks[block_addr] = bytes(data)

    def read_bytes(self, addr: int, size: int) -> bytes:
        self._check(addr, size)
        out = bytearray()
        while size:
            base = addr - addr % self.block_size
            off = addr - base
            take = min(size, self.block_size - off)
            out += self.read_block(base)[off:off + take]
            addr, size = addr + take, size - take
        return bytes(out)

    def write_bytes(self, addr: int, data: bytes) -> None:
        self._check(addr, len(data))
        pos = 0
        while pos < len(data):
            base = (addr + pos) - (addr + pos) % self.block_size
            off = addr + pos - base
            take = min(len(data) - pos, self.block_size - off)
            blk = bytearray(self.read_block(base))
            blk[off:off + take] = data[pos:pos + take]
            self.blocks[base] = bytes(blk)
            pos += take

    def state_dict(self) -> dict:
        return {"blocks": [[a, b.hex()] for a, b in sorted(self.blocks.items())]}

    def load_state(self, d: dict) -> None:
        self.blocks = {a: bytes.fromhex(h) for a, h in d["blocks"]}


class Chipset:
    """Memory-controller node: turns MemRead into MemData after the memory
    latency and applies MemWrite immediately (a later read of the same
    block is always separated from the write by the home's serialization,
    so only read latency is architecturally visible)."""

    def __init__(self, engine, vcfg, noc, memory: MainMemory):
        self.engine = engine
        self.vcfg = vcfg
        self.noc = noc
        self.memory = memory
        self.node = vcfg.chipset_node
        self.stats = {"reads": 0, "writes": 0}
        engine.register("chipset", self._on_event)

    def _on_event(self, kind, payload) -> None:
        if kind == "msg":
            m = payload
            if m["kind"] == pr.MEM_READ:
                self.stats["reads"] += 1
                data = self.memory.read_block(m["block"])
                self.engine.schedule_in(self.vcfg.latencies.memory, "chipset",
                                        "reply", (m["src"], m["block"], data.hex()))
            elif m["kind"] == pr.MEM_WRITE:
                self.stats["writes"] += 1
                self.memory.write_block(m["block"], bytes.fromhex(m["data"]))
            else:
                raise pr.UnexpectedMessage("chipset", "-", m["kind"])
        elif kind == "reply":
            dst, block, hexdata = payload
            self.noc.send(3, self.node, dst,
                          {"kind": pr.MEM_DATA, "block": block,
                           "data": hexdata, "dirty": False})
        else:
            raise ValueError(f"unknown chipset event {kind!r}")

    def state_dict(self) -> dict:
        return {"stats": dict(self.stats)}

    def load_state(self, d: dict) -> None:
        self.stats = dict(d["stats"])


class TileController:
    """Private caches plus home slice for one tile (engine target tile<id>).

    Core-facing port (see the core for the waiter convention):

        load_bytes(addr, size, waiter) -> ("hit", bytes) | ("pending", None)
                                          | ("blocked", None)
        store_bytes(addr, data)        -> "ok" | "blocked"
        amo_add(addr, size, addend, w) -> ("hit", old) | ("pending", None)
                                          | ("blocked", None)

    Loads that hit the L1 or the tile-level cache are logged and captured
    at issue (the linearization point) and, for tile-level hits, delivered
    after the tile-cache latency. A store retires as soon as it is
    accepted: it applies synchronously when the tile holds the block in E
    or M and otherwise rides the block's miss entry until write permission
    arrives. Atomics are stores that also return the old value.

    Miss entries keep their queued operations in one arrival-ordered
    action list so a fill replays loads and stores in program order for
    this tile. A load entry upgraded by a later store refetches write
    permission in a second phase (Upgrade after a shared fill) without
    giving up the entry. Evictions move the line into a writeback buffer
    (freeing the way immediately) that answers forwards and invalidations
    as if the line were still held, exactly as the protocol tables expect.

    If a fill arrives and every way in its set is pinned by in-flight
    writebacks, the granted block is parked in its miss entry (it behaves
    like an installed line for every protocol purpose) and moves into the
    cache when a writeback acknowledgment frees a way.
    """

    def __init__(self, tile_id: int, engine, vcfg, noc,
                 access_log: Optional[list] = None, mutations=frozenset(),
                 tracer=None, trace_blocks=None):
        self.tile_id = tile_id
        self.name = f"tile{tile_id}"
        self.engine = engine
        self.vcfg = vcfg
        self.noc = noc
        self.core = None                    # attached by the machine
        self.log = access_log
        self.mutations = frozenset(mutations)
        self.tracer = tracer
        self.trace_blocks = None if trace_blocks is None else set(trace_blocks)

        cfg = vcfg.cfg
        bs = cfg.block_size_bytes
        self.l1d = SetAssocCache(f"l1d{tile_id}", vcfg.l1d_sets, cfg.l1d_assoc, bs)
        self.l1d_mshr = MshrFile(cfg.l1d_mshrs)
        self.l15 = SetAssocCache(f"l15c{tile_id}", vcfg.l15_sets, cfg.l15_assoc, bs)
        self.mshr = MshrFile(cfg.l15_mshrs)
        # block -> miss bookkeeping:
        #   pstate: protocol state of the outstanding entry
        #   actions: [["load", addr, size, waiter] | ["store", addr, hex]
        #             | ["amo", addr, size, addend, waiter]] in arrival order
        #   has_store: a store/atomic is (or was) queued -> loads must merge
        #   l1d: an L1 miss register is held for this block
        #   gdata/gstate: granted copy parked here while no way is free
        self.pend = {}
        # block -> {"pstate", "data" (hex), "dirty"} for lines given up but
        # not yet acknowledged; they answer Inv/Fwd as if still held.
        self.wb = {}

        # extra L1.5 bookkeeping: fill latency feeds the mean-memory-latency
        # report metric (sum over completed misses of fill minus issue cycle)
        self.l15.stats.update({"fills": 0, "fill_latency_sum": 0})

        self.l2 = SetAssocCache(f"l2s{tile_id}", vcfg.l2_slice_sets,
                                cfg.l2_assoc, bs)
        self.home = {}            # block -> pr.HomeBlock (live entries only)
        self.set_waiters = {}     # l2 set -> [[kind, src, block], ...]
        self.home_stats = {"requests": 0, "deferred": 0, "stale_puts": 0,
                           "evictions": 0, "parked_allocs": 0}

        self._last_rel = {}       # (dst, net) -> last outbox release cycle
        # transient re-entrancy guards, always False between events
        self._in_retry = False
        self._in_unpark = False
        engine.register(self.name, self._on_event)

    # -- transport ------------------------------------------------------------------

    def _send(self, kind: str, dst: int, block: int, data: Optional[bytes] = None,
              dirty: bool = False, delay: int = 0) -> None:
        """Queue one message, preserving per-(dst, net) FIFO order."""
        net = pr.NET_OF_KIND[kind]
        if dst == pr.CHIPSET:
            dst = self.vcfg.chipset_node
        msg = {"kind": kind, "block": block,
               "data": None if data is None else data.hex(), "dirty": bool(dirty)}
        ch = (dst, net)
        release = max(self.engine.cycle + delay, self._last_rel.get(ch, 0))
        self._last_rel[ch] = release
        if release <= self.engine.cycle:
            self.noc.send(net, self.tile_id, dst, msg)
        else:
            self.engine.schedule(release, self.name, "push", (net, dst, msg))

    def _home_of(self, block: int) -> int:
        return self.vcfg.home_tile(block)

    def _trace(self, side: str, kind: str, block: int, before, after) -> None:
        if self.tracer is not None and (self.trace_blocks is None
                                        or block in self.trace_blocks):
            self.tracer(f"{self.engine.cycle} {side}{self.tile_id} {kind} "
                        f"block={block:#x} {before}->{after}")

    # -- engine events --------------------------------------------------------------

    def _on_event(self, kind, payload) -> None:
        if kind == "msg":
            if payload["kind"] in HOME_KINDS:
                self._home_deliver(payload)
            else:
                self._l15_deliver(payload)
        elif kind == "push":
            net, dst, msg = payload
            self.noc.send(net, self.tile_id, dst, msg)
        elif kind == "lhit":
            waiter, hexdata = payload
            self.core.deliver(tuple(waiter), bytes.fromhex(hexdata))
        else:
            raise ValueError(f"unknown tile event {kind!r}")

    # =================================================================================
    # Private side: core port
    # =================================================================================

    def _log(self, rec: tuple) -> None:
        if self.log is not None:
            self.log.append(rec)

    def load_bytes(self, addr: int, size: int, waiter):
        block = self.vcfg.block_addr(addr)
        off = addr - block
        pend = self.pend.get(block)
        if pend is not None:
            if pend["gdata"] is not None and not pend["actions"]:
                # Parked granted copy with nothing queued: a plain hit.
                data = bytes.fromhex(pend["gdata"])
                val = data[off:off + size]
                self._log(("load", self.tile_id, addr, size, val.hex()))
                return ("hit", val)
            # Ride the outstanding entry; order against queued stores.
            if not pend["l1d"]:
                if self.l1d_mshr.full:
                    self.l1d.stats["blocked"] += 1
                    return ("blocked", None)
                self.l1d_mshr.allocate(block, "load", None, self.engine.cycle)
                pend["l1d"] = True
            self.mshr.allocate(block, "load", None, self.engine.cycle)
            self.l15.stats["merges"] += 1
            pend["actions"].append(["load", addr, size, list(waiter)])
            return ("pending", None)

        line = self.l1d.lookup(block)
        if line is not None:
            self.l1d.stats["hits"] += 1
            val = line.data[off:off + size]
            self._log(("load", self.tile_id, addr, size, val.hex()))
            return ("hit", val)
        self.l1d.stats["misses"] += 1

        line = self.l15.lookup(block)
        if line is not None:
            # Tile-level hit: capture now (linearization point), deliver
            # after the tile-cache access latency.
            self.l15.stats["hits"] += 1
            val = line.data[off:off + size]
            self._log(("load", self.tile_id, addr, size, val.hex()))
            self.l1d.install(block, pr.S, line.data)
            self.engine.schedule_in(self.vcfg.l15_hit_latency(), self.name,
                                    "lhit", [list(waiter), val.hex()])
            return ("pending", None)

        # Full miss (a block mid-eviction is refetched like any other).
        if self.mshr.full or self.l1d_mshr.full:
            self.l15.stats["blocked"] += 1
            return ("blocked", None)
        self.l15.stats["misses"] += 1
        self.l1d_mshr.allocate(block, "load", None, self.engine.cycle)
        self.mshr.allocate(block, "load", None, self.engine.cycle)
        res = pr.l15_core_op(pr.I, "load", self.mutations)
        self._trace("tile", "load-miss", block, pr.I, res.state)
        self.pend[block] = {"pstate": res.state,
                            "actions": [["load", addr, size, list(waiter)]],
                            "has_store": False, "l1d": True,
                            "gdata": None, "gstate": None}
        for k, dirty in res.sends:
            self._send(k, self._home_of(block), block, dirty=dirty)
        return ("pending", None)

    def store_bytes(self, addr: int, data: bytes) -> str:
        block = self.vcfg.block_addr(addr)
        pend = self.pend.get(block)
        if pend is not None:
            self.mshr.allocate(block, "store", None, self.engine.cycle)
            self.l15.stats["merges"] += 1
            pend["actions"].append(["store", addr, data.hex()])
            pend["has_store"] = True
            if pend["gdata"] is not None:
                self._run_actions(block, pend)   # parked copy may be writable
            return "ok"

        line = self.l15.lookup(block)
        if line is not None and line.state in (pr.E, pr.M):
            res = pr.l15_core_op(line.state, "store", self.mutations)
            self.l15.stats["hits"] += 1
            line.state = res.state
            self._apply_store(block, line, None, addr, data)
            return "ok"

        if self.mshr.full:
            self.l15.stats["blocked"] += 1
            return "blocked"
        state = pr.S if line is not None else pr.I
        self.l15.stats["hits" if line is not None else "misses"] += 1
        res = pr.l15_core_op(state, "store", self.mutations)
        self._trace("tile", "store-miss", block, state, res.state)
        self.mshr.allocate(block, "store", None, self.engine.cycle)
        self.pend[block] = {"pstate": res.state,
                            "actions": [["store", addr, data.hex()]],
                            "has_store": True, "l1d": False,
                            "gdata": None, "gstate": None}
        for k, dirty in res.sends:
            self._send(k, self._home_of(block), block, dirty=dirty)
        return "ok"

    def amo_add(self, addr: int, size: int, addend: int, waiter):
        block = self.vcfg.block_addr(addr)
        pend = self.pend.get(block)
        if pend is None:
            line = self.l15.lookup(block)
            if line is not None and line.state in (pr.E, pr.M):
                res = pr.l15_core_op(line.state, "store", self.mutations)
                self.l15.stats["hits"] += 1
                line.state = res.state
                old = self._apply_amo(block, line, None, addr, size, addend)
                return ("hit", old)
            if self.mshr.full:
                self.l15.stats["blocked"] += 1
                return ("blocked", None)
            state = pr.S if line is not None else pr.I
            self.l15.stats["hits" if line is not None else "misses"] += 1
            res = pr.l15_core_op(state, "store", self.mutations)
            self._trace("tile", "amo-miss", block, state, res.state)
            self.mshr.allocate(block, "store", None, self.engine.cycle)
            self.pend[block] = {"pstate": res.state,
                                "actions": [["amo", addr, size, addend,
                                             list(waiter)]],
                                "has_store": True, "l1d": False,
                                "gdata": None, "gstate": None}
            for k, dirty in res.sends:
                self._send(k, self._home_of(block), block, dirty=dirty)
            return ("pending", None)
        if (pend["gdata"] is not None and not pend["actions"]
                and pend["gstate"] in (pr.E, pr.M)):
            # Writable copy parked in the entry: a synchronous hit, like the
            # cache-resident case (returning the old value directly avoids
            # re-entering the core while it is still issuing).
            res = pr.l15_core_op(pend["gstate"], "store", self.mutations)
            pend["gstate"] = pend["pstate"] = res.state
            old = self._apply_amo(block, None, pend, addr, size, addend)
            return ("hit", old)
        self.mshr.allocate(block, "store", None, self.engine.cycle)
        self.l15.stats["merges"] += 1
        pend["actions"].append(["amo", addr, size, addend, list(waiter)])
        pend["has_store"] = True
        if pend["gdata"] is not None:
            self._run_actions(block, pend)
        return ("pending", None)

    # -- data application helpers ----------------------------------------------------

    def _copy_read(self, pend, line) -> bytes:
        return line.data if line is not None else bytes.fromhex(pend["gdata"])

    def _copy_write(self, pend, line, data: bytes) -> None:
        if line is not None:
            line.data = bytes(data)
        else:
            pend["gdata"] = bytes(data).hex()

    def _apply_store(self, block, line, pend, addr, data: bytes) -> None:
        buf = bytearray(self._copy_read(pend, line))
        off = addr - block
        buf[off:off + len(data)] = data
        self._copy_write(pend, line, buf)
        self.l1d.remove(block)         # write-through policy: no L1 allocate
        self._log(("store", self.tile_id, addr, len(data), data.hex()))

    def _apply_amo(self, block, line, pend, addr, size, addend) -> bytes:
        buf = bytearray(self._copy_read(pend, line))
        off = addr - block
        old = bytes(buf[off:off + size])
        new = (int.from_bytes(old, "little") + addend) % (1 << (8 * size))
        buf[off:off + size] = new.to_bytes(size, "little")
        self._copy_write(pend, line, buf)
        self.l1d.remove(block)
        self._log(("amo", self.tile_id, addr, size, old.hex(),
                   new.to_bytes(size, "little").hex()))
        return old

    # =================================================================================
    # Private side: network messages
    # =================================================================================

    def _l15_deliver(self, msg: dict) -> None:
        kind, block = msg["kind"], msg["block"]
        if kind in _GRANTS:
            self._on_grant(msg)
        elif kind == pr.PUT_ACK:
            self._on_putack(block)
        elif kind in (pr.INV, pr.FWD_GETS, pr.FWD_GETX):
            self._on_inv_or_fwd(kind, block)
        else:
            raise pr.UnexpectedMessage("l15", "-", kind)

    def _on_grant(self, msg: dict) -> None:
        kind, block = msg["kind"], msg["block"]
        self.mshr.require(block)            # a grant without an entry is fatal
        pend = self.pend[block]
        res = pr.l15_msg(pend["pstate"], kind, self.mutations)
        self._trace("tile", kind, block, pend["pstate"], res.state)
        pend["pstate"] = res.state
        if "fill" in res.effects:
            data = bytes.fromhex(msg["data"])
            line = self._install_line(block, res.state, data)
            if line is None:                # no way free: park in the entry
                pend["gdata"], pend["gstate"] = data.hex(), res.state
        elif "grant_in_place" in res.effects:
            line = self.l15.probe(block)
            if line is not None:
                line.state = res.state
            else:
                pend["gstate"] = res.state  # parked copy gains write permission
        self._run_actions(block, pend)

    def _run_actions(self, block: int, pend: dict) -> None:
        """Replay queued operations in arrival order against the block copy.

        Stops early if a store needs write permission the copy does not
        have yet (second request phase). Completes the entry when the list
        drains and the copy lives in the cache proper.
        """
        if pend["pstate"] in (pr.IS_D, pr.IM_D, pr.IM_W):
            return                           # no copy yet
        line = self.l15.probe(block)
        while pend["actions"]:
            act = pend["actions"][0]
            state = line.state if line is not None else pend["gstate"]
            if act[0] == "load":
                _, addr, size, waiter = act
                data = self._copy_read(pend, line)
                off = addr - block
                val = data[off:off + size]
                self._log(("load", self.tile_id, addr, size, val.hex()))
                self.core.deliver(tuple(waiter), val)
            else:
                if state == pr.S:
                    if pend["pstate"] == pr.SM_W:
                        return               # upgrade already on its way
                    res = pr.l15_core_op(pr.S, "store", self.mutations)
                    self._trace("tile", "upgrade", block, pr.S, res.state)
                    pend["pstate"] = res.state
                    for k, dirty in res.sends:
                        self._send(k, self._home_of(block), block, dirty=dirty)
                    return
                if state == pr.E:
                    res = pr.l15_core_op(pr.E, "store", self.mutations)
                    if line is not None:
                        line.state = res.state
                    else:
                        pend["gstate"] = res.state
                    pend["pstate"] = res.state
                if act[0] == "store":
                    _, addr, hexdata = act
                    self._apply_store(block, line, pend, addr,
                                      bytes.fromhex(hexdata))
                else:
                    _, addr, size, addend, waiter = act
                    old = self._apply_amo(block, line, pend, addr, size, addend)
                    self.core.deliver(tuple(waiter), old)
            pend["actions"].pop(0)
        if line is not None:
            self._complete(block, pend, line)

    def _complete(self, block: int, pend: dict, line) -> None:
        if pend["l1d"]:
            self.l1d_mshr.free(block)
            self.l1d.install(block, pr.S, line.data)
        entry = self.mshr.require(block)
        self.l15.stats["fills"] += 1
        self.l15.stats["fill_latency_sum"] += \
            self.engine.cycle - entry.issued_cycle
        self.mshr.free(block)
        del self.pend[block]
        if self.core is not None:
            self.core.wake()
        # The completed entry no longer pins its line against eviction, so a
        # parked grant in the same set may be able to land now.
        self._retry_parked(self.l15.set_of(block))

    def _install_line(self, block: int, state: str, data: bytes):
        """Install a fill, evicting if needed; None if every way is pinned."""
        victim = self.l15.victim_for(block)
        if victim is None:
            line, _ = self.l15.install(block, state, data)
            return line
        ways = self.l15._by_set[self.l15.set_of(block)]
        for cand in sorted(ways.values(), key=lambda l: l.lru_stamp):
            if cand.block_addr in self.wb or cand.block_addr in self.pend:
                continue                     # eviction already in flight /
            self._evict_line(cand)           # entry pinned by an upgrade
            line, _ = self.l15.install(block, state, data)
            return line
        return None

    def _evict_line(self, line) -> None:
        block = line.block_addr
        res = pr.l15_core_op(line.state, "evict", self.mutations)
        self._trace("tile", "evict", block, line.state, res.state)
        self.l15.remove(block)
        self.l15.stats["evictions"] += 1
        if line.dirty:
            self.l15.stats["writebacks"] += 1
        self.l1d.remove(block)               # keep the L1 strictly included
        self.wb[block] = {"pstate": res.state, "data": line.data.hex(),
                          "dirty": line.dirty}
        for k, d in res.sends:
            self._send(k, self._home_of(block), block,
                       data=line.data if k in pr.DATA_KINDS else None, dirty=d)

    def _on_putack(self, block: int) -> None:
        wbe = self.wb[block]
        res = pr.l15_msg(wbe["pstate"], pr.PUT_ACK, self.mutations)
        self._trace("tile", pr.PUT_ACK, block, wbe["pstate"], res.state)
        assert "evict_done" in res.effects
        del self.wb[block]
        self._retry_parked(self.l15.set_of(block))

    def _retry_parked(self, set_idx: int) -> None:
        """A way may have become evictable: land parked grants in this set."""
        if self._in_unpark:
            return
        self._in_unpark = True
        try:
            for block in sorted(self.pend):
                pend = self.pend.get(block)
                if (pend is None or pend["gdata"] is None
                        or self.l15.set_of(block) != set_idx):
                    continue
                line = self._install_line(block, pend["gstate"],
                                          bytes.fromhex(pend["gdata"]))
                if line is None:
                    continue
                pend["gdata"], pend["gstate"] = None, None
                if not pend["actions"]:
                    self._complete(block, pend, line)
        finally:
            self._in_unpark = False

    def _on_inv_or_fwd(self, kind: str, block: int) -> None:
        home = self._home_of(block)
        wbe = self.wb.get(block)
        if wbe is not None:
            res = pr.l15_msg(wbe["pstate"], kind, self.mutations)
            self._trace("tile", kind, block, wbe["pstate"], res.state)
            wbe["pstate"] = res.state
            data = bytes.fromhex(wbe["data"])
            for k, dirty in res.sends:
                self._send(k, home, block,
                           data=data if k in pr.DATA_KINDS else None, dirty=dirty)
            return

        pend = self.pend.get(block)
        line = self.l15.probe(block)
        if pend is not None:
            state = pend["pstate"]
        elif line is not None:
            state = line.state
        else:
            state = pr.I                     # the table rejects this, as it must
        res = pr.l15_msg(state, kind, self.mutations)
        self._trace("tile", kind, block, state, res.state)
        copy = (line.data if line is not None
                else bytes.fromhex(pend["gdata"]) if pend and pend["gdata"]
                else None)
        for k, dirty in res.sends:
            self._send(k, home, block,
                       data=copy if k in pr.DATA_KINDS else None, dirty=dirty)

        if "invalidate" in res.effects:
            if line is not None:
                self.l15.remove(block)
            self.l1d.remove(block)
            if pend is not None:
                pend["gdata"], pend["gstate"] = None, None
                pend["pstate"] = res.state
                if res.state == pr.I:        # parked copy killed outright
                    assert not pend["actions"]
                    if pend["l1d"]:
                        self.l1d_mshr.free(block)
                    self.mshr.free(block)
                    del self.pend[block]
                    if self.core is not None:
                        self.core.wake()
            if line is not None:             # the freed way can host a parked grant
                self._retry_parked(self.l15.set_of(block))
        elif "demote" in res.effects or res.state != state:
            if line is not None:
                line.state = res.state
            if pend is not None:
                pend["pstate"] = res.state
                if pend["gdata"] is not None:
                    pend["gstate"] = res.state

    # =================================================================================
    # Home side
    # =================================================================================

    def _home_deliver(self, msg: dict) -> None:
        kind, block, src = msg["kind"], msg["block"], msg["src"]
        payload = None if msg.get("data") is None else bytes.fromhex(msg["data"])
        if kind in (pr.INV_ACK, pr.OWNER_DATA, pr.MEM_DATA):
            event = ("resp", kind, src, bool(msg.get("dirty")))
        else:
            self.home_stats["requests"] += 1
            if self._park_if_no_way(block, kind, src):
                return
            event = ("req", kind, src)
        self._home_exec(block, event, payload)

    def _home_exec(self, block: int, event: tuple, payload) -> None:
        hb = self.home.get(block, pr.HomeBlock.empty())
        before = hb.entry.state if hb.entry else "U"
        hb2, sends, effects = pr.home_drive(hb, event, self.mutations)
        after = hb2.entry.state if hb2.entry else "U"
        self._trace("home", event[1] if len(event) > 1 else "evict",
                    block, before, after)

        if hb2.entry is None and not hb2.queue:
            self.home.pop(block, None)
        else:
            self.home[block] = hb2

        for eff in effects:
            if eff == "alloc":
                line, evicted = self.l2.install(block, pr.S,
                                                bytes(self.vcfg.block_size_bytes))
                assert evicted is None, "allocation must have found a free way"
                self.l2.stats["misses"] += 1
            elif eff == "store_data":
                line = self.l2.probe(block)
                if line is not None:         # may follow 'free' in a Put drive
                    line.data = bytes(payload)
            elif eff == "free":
                self.l2.remove(block)
            elif eff == "deferred":
                self.home_stats["deferred"] += 1
            elif eff == "stale_put":
                self.home_stats["stale_puts"] += 1

        if self.l2.probe(block) is not None:
            self.l2.lookup(block)            # keep LRU order current

        for kind, dst, data_src in sends:
            if data_src == "l2":
                line = self.l2.probe(block)
                self.l2.stats["hits"] += 1
                data = line.data
            elif data_src == "arrived":
                assert payload is not None, "payload-carrying step required"
                data = bytes(payload)
            else:
                data = None
            delay = (self.vcfg.l2_hit_latency() if kind in _HOME_DATA_SENDS
                     else self.vcfg.latencies.l2_tag)
            self._send(kind, dst, block, data=data, delay=delay)

        self._retry_set(self.l2.set_of(block))

    # -- slice capacity --------------------------------------------------------------

    def _park_if_no_way(self, block: int, kind: str, src: int) -> bool:
        """True if a would-allocate request had to wait for a free way."""
        if kind not in (pr.GETS, pr.GETX, pr.UPGRADE):
            return False
        if block in self.home:               # entry (or deferral queue) exists
            return False
        if self.l2.victim_for(block) is None:
            return False
        set_idx = self.l2.set_of(block)
        self.set_waiters.setdefault(set_idx, []).append([kind, src, block])
        self.home_stats["parked_allocs"] += 1
        self._kick_evict(set_idx)
        return True

    def _kick_evict(self, set_idx: int) -> None:
        """Start an inclusive eviction in this set unless one is running."""
        lines = sorted(self.l2._by_set[set_idx].values(),
                       key=lambda l: l.lru_stamp)
        candidates = []
        for line in lines:
            hb = self.home.get(line.block_addr)
            if hb is None or hb.entry is None:
                continue
            if hb.entry.busy is not None:
                if hb.entry.busy[0] == pr.WAIT_EVICT:
                    return                   # one already in flight
                continue
            candidates.append(line.block_addr)
        if candidates:
            self.home_stats["evictions"] += 1
            self._home_exec(candidates[0], ("evict",), None)

    def _retry_set(self, set_idx: int) -> None:
        if self._in_retry:      # nested drives retry through the outer loop
            return
        self._in_retry = True
        try:
            while True:
                waiters = self.set_waiters.get(set_idx)
                if not waiters:
                    self.set_waiters.pop(set_idx, None)
                    return
                kind, src, block = waiters[0]
                if (block not in self.home
                        and self.l2.victim_for(block) is not None):
                    break                    # still no way for this one
                waiters.pop(0)
                self._home_exec(block, ("req", kind, src), None)
            self._kick_evict(set_idx)
        finally:
            self._in_retry = False

    # =================================================================================
    # Introspection, invariants, checkpointing
    # =================================================================================

    def copies(self):
        """Yield (block, state, data) for every valid copy this tile holds,
        including granted-but-parked copies and writeback buffers that still
        answer as if held."""
        for line in self.l15.lines():
            yield line.block_addr, line.state, line.data
        for block in sorted(self.pend):
            pend = self.pend[block]
            if pend["gdata"] is not None:
                yield block, pend["gstate"], bytes.fromhex(pend["gdata"])
        for block in sorted(self.wb):
            wbe = self.wb[block]
            if wbe["pstate"] in (pr.SI_A, pr.EI_A, pr.MI_A):
                yield block, {"SI_A": pr.S, "EI_A": pr.E,
                              "MI_A": pr.M}[wbe["pstate"]], \
                      bytes.fromhex(wbe["data"])

    def waiting_summary(self) -> str:
        bits = []
        if self.pend:
            bits.append("miss " + ",".join(
                f"{b:#x}:{p['pstate']}" for b, p in sorted(self.pend.items())))
        if self.wb:
            bits.append("wb " + ",".join(
                f"{b:#x}:{w['pstate']}" for b, w in sorted(self.wb.items())))
        busy = {b: hb.entry.busy for b, hb in sorted(self.home.items())
                if hb.entry is not None and hb.entry.busy is not None}
        if busy:
            bits.append("home " + ",".join(
                f"{b:#x}:{w[0]}" for b, w in busy.items()))
        if self.set_waiters:
            bits.append(f"parked_allocs={sum(map(len, self.set_waiters.values()))}")
        return f"{self.name}({'; '.join(bits)})" if bits else ""

    def quiescent(self) -> bool:
        return not self.pend and not self.wb and not self.set_waiters and all(
            hb.entry is None or hb.entry.busy is None
            for hb in self.home.values())

    def stats(self) -> dict:
        return {
            "l1d": dict(self.l1d.stats),
            "l15": dict(self.l15.stats),
            "l2": dict(self.l2.stats),
            "home": dict(self.home_stats),
        }

    def state_dict(self) -> dict:
        home = []
        for block in sorted(self.home):
            hb = self.home[block]
            e = hb.entry
            entry = None if e is None else [e.state, sorted(e.sharers), e.owner,
                                            None if e.busy is None else list(e.busy)]
            home.append([block, entry, [list(q) for q in hb.queue]])
        return {
            "l1d": self.l1d.state_dict(),
            "l1d_mshr": self.l1d_mshr.state_dict(),
            "l15": self.l15.state_dict(),
            "mshr": self.mshr.state_dict(),
            "pend": [[b, dict(p, actions=[list(a) for a in p["actions"]])]
                     for b, p in sorted(self.pend.items())],
            "wb": [[b, dict(w)] for b, w in sorted(self.wb.items())],
            "l2": self.l2.state_dict(),
            "home": home,
            "set_waiters": [[s, [list(w) for w in ws]]
                            for s, ws in sorted(self.set_waiters.items())],
            "home_stats": dict(self.home_stats),
            "last_rel": [[list(ch), cyc]
                         for ch, cyc in sorted(self._last_rel.items())],
        }

    def load_state(self, d: dict) -> None:
        self.l1d.load_state(d["l1d"])
        self.l1d_mshr.load_state(d["l1d_mshr"])
        self.l15.load_state(d["l15"])
        self.mshr.load_state(d["mshr"])
        self.pend = {}
        for b, p in d["pend"]:
            self.pend[b] = {"pstate": p["pstate"],
                            "actions": [list(a) for a in p["actions"]],
                            "has_store": p["has_store"], "l1d": p["l1d"],
                            "gdata": p["gdata"], "gstate": p["gstate"]}
        self.wb = {b: dict(w) for b, w in d["wb"]}
        self.l2.load_state(d["l2"])
        self.home = {}
        for block, entry, queue in d["home"]:
            e = None
            if entry is not None:
                st, sharers, owner, busy = entry
                e = pr.DirEntry(st, frozenset(sharers), owner,
                                None if busy is None else tuple(busy))
            self.home[block] = pr.HomeBlock(e, tuple(tuple(q) for q in queue))
        self.set_waiters = {s: [list(w) for w in ws]
                            for s, ws in d["set_waiters"]}
        self.home_stats = dict(d["home_stats"])
        self._last_rel = {tuple(ch): cyc for ch, cyc in d["last_rel"]}
