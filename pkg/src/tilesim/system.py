"""Whole-machine assembly and experiment plumbing.

A Machine wires the event engine, the three mesh networks, the tiles
(private caches + home slice), the memory-controller node, and one client
per participating core: either an ISA core running a program or a trace
driver replaying raw memory operations. It owns the run loop (including
the post-halt drain that lets in-flight stores and writebacks land), the
coherent view of final memory, oracle verification, the statistics
report, and whole-machine checkpoint save/restore.

Workloads are described by small JSON-able dicts so a checkpoint can
rebuild its own program or trace deterministically:

    {"kind": "kernel", "name": "ep_parallel", "n": 65536, "ncores": 4,
     "seed": 1}
    {"kind": "asm", "path": "prog.s", "ncores": 1}
    {"kind": "asm_text", "text": "...", "ncores": 1}
    {"kind": "trace", "path": "ops.csv", "cores": 4}
    {"kind": "random_trace", "cores": 4, "ops": 200, "seed": 7,
     "blocks": 4, "max_gap": 3}
"""

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from . import isa
from . import protocol as pr
from . import workload as wl
from .coherence import Chipset, MainMemory, TileController
from .config import SimConfig, ValidatedConfig
from .core import Core
from .engine import (CHECKPOINT_VERSION, CorruptCheckpoint, Engine,
                     RunOutcome, VersionMismatch)
from .noc import Noc


class OracleMismatch(RuntimeError):
    """Simulated results differ from the workload's expected results."""


class SwmrViolation(RuntimeError):
    """Two tiles held write permission (or writer plus reader) at once."""


class DirectoryMismatch(RuntimeError):
    """At rest, a directory entry disagreed with the copies tiles hold."""


# -- workload resolution --------------------------------------------------------

@dataclass
class ResolvedWorkload:
    """A workload descriptor turned into something a Machine can run."""

    desc: dict
    kind: str                                # "program" | "trace"
    program: Optional[wl.Program] = None
    ncores: int = 1
    streams: Optional[List[List[wl.TraceRecord]]] = None
    expected_memory: Dict[int, bytes] = field(default_factory=dict)
    kernel: Optional[wl.Kernel] = None

    @property
    def workload_id(self) -> str:
        if self.kernel is not None:
            return self.kernel.workload_id
        d = self.desc
        inner = ",".join(f"{k}={d[k]}" for k in sorted(d) if k != "kind")
        return f"{d['kind']}({inner})"


_DESC_DEFAULTS = {
    "kernel": {"name": None, "n": None, "ncores": None, "seed": 1},
    "asm": {"path": None, "ncores": 1},
    "asm_text": {"text": None, "ncores": 1},
    "trace": {"path": None, "cores": None},
    "random_trace": {"cores": None, "ops": 100, "seed": 1, "blocks": 4,
                     "max_gap": 3},
}


def workload_fields(kind: str) -> frozenset:
    """Parameter names a workload descriptor of this kind accepts."""
    if kind not in _DESC_DEFAULTS:
        raise wl.UnknownKernel(f"unknown workload kind {kind!r}")
    return frozenset(_DESC_DEFAULTS[kind])


def normalize_desc(desc: dict, vcfg: ValidatedConfig) -> dict:
    """Fill descriptor defaults; unknown kinds and fields are rejected."""
    d = dict(desc)
    kind = d.pop("kind", None)
    if kind not in _DESC_DEFAULTS:
        raise wl.UnknownKernel(f"unknown workload kind {kind!r}")
    merged = dict(_DESC_DEFAULTS[kind])
    unknown = sorted(set(d) - set(merged))
    if unknown:
        raise wl.ParamOutOfRange(
            f"unknown {kind} workload fields: {', '.join(unknown)}")
    merged.update(d)
    if kind == "kernel" and merged["ncores"] is None:
        merged["ncores"] = vcfg.num_tiles
    if kind in ("trace", "random_trace") and merged.get("cores") is None:
        merged["cores"] = vcfg.num_tiles
    missing = sorted(k for k, v in merged.items() if v is None)
    if missing:
        raise wl.ParamOutOfRange(
            f"{kind} workload needs fields: {', '.join(missing)}")
    merged["kind"] = kind
    return merged


def resolve_workload(desc: dict, vcfg: ValidatedConfig) -> ResolvedWorkload:
    desc = normalize_desc(desc, vcfg)
    kind = desc["kind"]
    if kind == "kernel":
        kernel = wl.gen_kernel(desc["name"], desc["n"],
                               ncores=desc["ncores"], seed=desc["seed"])
        return ResolvedWorkload(desc, "program", program=kernel.program,
                                ncores=desc["ncores"],
                                expected_memory=dict(kernel.expected_memory),
                                kernel=kernel)
    if kind in ("asm", "asm_text"):
        text = desc["text"] if kind == "asm_text" else _read_file(desc["path"])
        return ResolvedWorkload(desc, "program", program=wl.assemble(text),
                                ncores=desc["ncores"])
    if kind == "trace":
        streams = wl.load_trace(desc["path"], desc["cores"],
                                vcfg.cfg.memory_size_bytes)
        return ResolvedWorkload(desc, "trace", ncores=desc["cores"],
                                streams=streams)
    records = wl.gen_random_trace(
        desc["cores"], desc["ops"], desc["seed"], num_blocks=desc["blocks"],
        block_size_bytes=vcfg.block_size_bytes, max_gap=desc["max_gap"])
    streams = [[r for r in records if r.core == c]
               for c in range(desc["cores"])]
    return ResolvedWorkload(desc, "trace", ncores=desc["cores"],
                            streams=streams)


def _read_file(path: str) -> str:
    with open(path) as f:
        return f.read()


# -- the machine -----------------------------------------------------------------

class Machine:
    """One simulated chip plus its workload, ready to run."""

    def __init__(self, config, workload_desc: dict, tracer=None,
                 trace_blocks=None, mutations=frozenset()):
        self.vcfg = (config if isinstance(config, ValidatedConfig)
                     else config.validate())
        cfg = self.vcfg.cfg
        self.workload = resolve_workload(workload_desc, self.vcfg)
        self.desc = self.workload.desc
        if self.workload.ncores > self.vcfg.num_tiles:
            raise wl.ParamOutOfRange(
                f"workload wants {self.workload.ncores} cores but the mesh "
                f"has {self.vcfg.num_tiles} tiles")

        self.engine = Engine(cfg.rng_seed)
        self.noc = Noc(self.engine, self.vcfg)
        self.memory = MainMemory(self.vcfg)
        self.chipset = Chipset(self.engine, self.vcfg, self.noc, self.memory)
        self.access_log: list = []
        self.tiles = [
            TileController(t, self.engine, self.vcfg, self.noc,
                           access_log=self.access_log, mutations=mutations,
                           tracer=tracer, trace_blocks=trace_blocks)
            for t in range(self.vcfg.num_tiles)]
        for t in range(self.vcfg.num_tiles):
            self.noc.set_receiver(t, f"tile{t}")
        self.noc.set_receiver(self.vcfg.chipset_node, "chipset")

        self.clients = []
        if self.workload.kind == "program":
            program = self.workload.program
            if program.data:
                self.memory.write_bytes(program.data_address, program.data)
            for k in range(self.workload.ncores):
                core = Core(k, self.engine, self.vcfg,
                            program.instructions, port=self.tiles[k])
                core.pc = isa.IBASE + program.entry * isa.ILEN
                if program.core_id_reg:
                    core.regs[program.core_id_reg] = k
                if program.core_count_reg:
                    core.regs[program.core_count_reg] = self.workload.ncores
                self.tiles[k].core = core
                self.clients.append(core)
        else:
            for k, records in enumerate(self.workload.streams):
                driver = wl.TraceDriver(k, self.engine, self.vcfg, records,
                                        port=self.tiles[k])
                self.tiles[k].core = driver
                self.clients.append(driver)
        self.engine.set_liveness(len(self.clients), self._describe_waiting)
        self.outcome: Optional[RunOutcome] = None
        self._started = False

    # -- run control -------------------------------------------------------------

    def _describe_waiting(self) -> list:
        out = []
        for c in self.clients:
            reason = c.waiting_reason
            if reason:
                out.append(reason)
        for t in self.tiles:
            summary = t.waiting_summary()
            if summary:
                out.append(summary)
        return out

    def run(self, max_cycles: Optional[int] = None) -> RunOutcome:
        """Advance to halt (then drain in-flight effects) or to max_cycles."""
        if not self._started:
            self._started = True
            for c in self.clients:
                c.start()
        outcome = self.engine.run_until(stop_cycle=max_cycles)
        if outcome is RunOutcome.ALL_HALTED:
            self.engine.drain()
            self.noc.drain_check()
            stuck = [t.waiting_summary() for t in self.tiles
                     if not t.quiescent()]
            if stuck:
                raise OracleMismatch(
                    "machine drained but tiles still hold unfinished work: "
                    + "; ".join(stuck))
        self.outcome = outcome
        return outcome

    def step(self, cycles: int = 1) -> RunOutcome:
        """Advance the clock by a bounded amount (for invariant sweeps)."""
        if not self._started:
            self._started = True
            for c in self.clients:
                c.start()
        return self.engine.run_until(stop_cycle=self.engine.cycle + cycles)

    @property
    def total_cycles(self) -> int:
        return self.engine.cycle

    # -- coherent memory view -------------------------------------------------------

    def _modified_copies(self) -> Dict[int, bytes]:
        mods = {}
        for tile in self.tiles:
            for block, state, data in tile.copies():
                if state == pr.M:
                    mods[block] = bytes(data)
        return mods

    def read_block(self, block: int, _mods: Optional[dict] = None) -> bytes:
        """The architectural content of one block right now (M copy wins,
        then the home slice's line, then backing memory)."""
        mods = self._modified_copies() if _mods is None else _mods
        if block in mods:
            return mods[block]
        home = self.tiles[self.vcfg.home_tile(block)]
        line = home.l2.probe(block)
        if line is not None:
            return bytes(line.data)
        return self.memory.read_block(block)

    def read_bytes(self, addr: int, size: int,
                   _mods: Optional[dict] = None) -> bytes:
        mods = self._modified_copies() if _mods is None else _mods
        bs = self.vcfg.block_size_bytes
        out = bytearray()
        while size:
            base = addr - addr % bs
            take = min(size, bs - (addr - base))
            out += self.read_block(base, mods)[addr - base:addr - base + take]
            addr, size = addr + take, size - take
        return bytes(out)

    # -- oracles ----------------------------------------------------------------------

    def verify_oracle(self, check_expected: bool = True) -> None:
        """End-to-end data checks; raises OracleMismatch on the first group
        of failures.

        1. Replay the access log (every load/store/atomic in coherence
           serialization order) against a flat memory model: each load and
           atomic must have observed exactly the flat value.
        2. The coherent final memory must equal the flat replay result for
           every block the run wrote.
        3. For kernels: the coherent final memory must equal the host-side
           expected image.
        """
        errors = []
        flat = MainMemory(self.vcfg)
        program = self.workload.program
        if program is not None and program.data:
            flat.write_bytes(program.data_address, program.data)
        for i, rec in enumerate(self.access_log):
            op = rec[0]
            if op == "load":
                _, _tile, addr, size, hexv = rec
                want = flat.read_bytes(addr, size).hex()
                if hexv != want:
                    errors.append(f"log[{i}]: load {addr:#x}+{size} observed "
                                  f"{hexv}, serial replay says {want}")
            elif op == "store":
                _, _tile, addr, _size, hexv = rec
                flat.write_bytes(addr, bytes.fromhex(hexv))
            else:
                _, _tile, addr, size, old_hex, new_hex = rec
                want = flat.read_bytes(addr, size).hex()
                if old_hex != want:
                    errors.append(f"log[{i}]: atomic {addr:#x}+{size} read "
                                  f"{old_hex}, serial replay says {want}")
                flat.write_bytes(addr, bytes.fromhex(new_hex))
        mods = self._modified_copies()
        for block in sorted(flat.blocks):
            got = self.read_block(block, mods)
            want = flat.read_block(block)
            if got != want:
                errors.append(f"block {block:#x}: final memory {got.hex()} "
                              f"!= serial replay {want.hex()}")
        if check_expected:
            for addr in sorted(self.workload.expected_memory):
                want = self.workload.expected_memory[addr]
                got = self.read_bytes(addr, len(want), mods)
                if got != want:
                    off = next(i for i in range(len(want))
                               if got[i] != want[i])
                    errors.append(
                        f"expected image at {addr:#x}+{len(want)}: first "
                        f"difference at +{off}: got {got[off]:#04x}, "
                        f"want {want[off]:#04x}")
        if errors:
            preview = "\n  ".join(errors[:20])
            raise OracleMismatch(
                f"{len(errors)} mismatch(es) for {self.workload.workload_id}:"
                f"\n  {preview}")

    # -- protocol invariants (debug sweeps) ---------------------------------------------

    def check_swmr(self) -> None:
        """At most one writable copy; a writable copy excludes all others."""
        per_block: Dict[int, list] = {}
        for t, tile in enumerate(self.tiles):
            for block, state, _data in tile.copies():
                per_block.setdefault(block, []).append((t, state))
        for block, holders in sorted(per_block.items()):
            writers = [t for t, s in holders if s == pr.M]
            exclusive = [t for t, s in holders if s in (pr.M, pr.E)]
            if len(writers) > 1 or (exclusive and len(holders) > 1):
                raise SwmrViolation(
                    f"block {block:#x} held as {holders} at cycle "
                    f"{self.engine.cycle}")

    def check_directory(self) -> None:
        """At quiescence every directory entry must match reality exactly."""
        holders: Dict[int, Dict[int, str]] = {}
        for t, tile in enumerate(self.tiles):
            for block, state, _data in tile.copies():
                holders.setdefault(block, {})[t] = state
        for home_tile in self.tiles:
            for block, hb in sorted(home_tile.home.items()):
                e = hb.entry
                if e is None:
                    continue
                if e.busy is not None:
                    raise DirectoryMismatch(
                        f"block {block:#x} busy {e.busy} at rest")
                have = holders.get(block, {})
                if e.state == pr.S:
                    actual = {t for t, s in have.items() if s == pr.S}
                    if set(e.sharers) != actual:
                        raise DirectoryMismatch(
                            f"block {block:#x}: directory sharers "
                            f"{sorted(e.sharers)} vs actual {sorted(actual)}")
                elif e.state in (pr.E, pr.M):
                    if set(have) != {e.owner} or not all(
                            s in (pr.E, pr.M) for s in have.values()):
                        raise DirectoryMismatch(
                            f"block {block:#x}: directory owner {e.owner} "
                            f"({e.state}) vs actual {have}")
                elif have:
                    raise DirectoryMismatch(
                        f"block {block:#x}: directory {e.state} but copies "
                        f"{have} exist")

    def quiescent(self) -> bool:
        return all(t.quiescent() for t in self.tiles)

    # -- reporting ---------------------------------------------------------------------

    def stats_report(self) -> dict:
        cores = {}
        derived_ipc = {}
        for c in self.clients:
            if isinstance(c, Core):
                counters = c.read_counters().as_dict()
                counters["l1i"] = dict(c.l1i.stats)
                derived_ipc[c.name] = (
                    counters["instructions_retired"]
                    / max(counters["cycles"], 1))
            else:
                counters = {"trace": dict(c.counters),
                            "records_done": c.idx}
            cores[c.name] = counters
        caches = {}
        fills = latency = 0
        for t in self.tiles:
            stats = t.stats()
            caches[t.name] = stats
            fills += stats["l15"]["fills"]
            latency += stats["l15"]["fill_latency_sum"]

        def rate(s):
            return s["misses"] / max(s["hits"] + s["misses"], 1)

        report = {
            "report_version": 1,
            "workload": self.workload.workload_id,
            "workload_desc": dict(self.desc),
            "config": self.vcfg.cfg.to_json_dict(),
            "outcome": None if self.outcome is None else self.outcome.value,
            "total_cycles": self.engine.cycle,
            "events_delivered": self.engine.events_delivered,
            "cores": cores,
            "caches": caches,
            "chipset": dict(self.chipset.stats),
            "noc": self.noc.stats(),
            "derived": {
                "ipc": derived_ipc,
                "l1d_miss_rate": {t.name: rate(t.stats()["l1d"])
                                  for t in self.tiles},
                "l15_miss_rate": {t.name: rate(t.stats()["l15"])
                                  for t in self.tiles},
                "mean_memory_latency": latency / max(fills, 1),
            },
        }
        return report

    # -- checkpointing -----------------------------------------------------------------

    def save_checkpoint(self, path: str) -> None:
        doc = {
            "format_version": CHECKPOINT_VERSION,
            "cycle": self.engine.cycle,
            "config": self.vcfg.cfg.to_json_dict(),
            "workload": dict(self.desc),
            "started": self._started,
            "outcome": None if self.outcome is None else self.outcome.value,
            "engine": self.engine.state_dict(),
            "memory": self.memory.state_dict(),
            "chipset": self.chipset.state_dict(),
            "noc": self.noc.state_dict(),
            "tiles": [t.state_dict() for t in self.tiles],
            "clients": [c.state_dict() for c in self.clients],
            "access_log": [list(rec) for rec in self.access_log],
        }
        with open(path, "w") as f:
            json.dump(doc, f, sort_keys=True, separators=(",", ":"))

    @classmethod
    def restore_checkpoint(cls, path: str) -> "Machine":
        with open(path) as f:            # missing file propagates as-is
            try:
                doc = json.load(f)
            except ValueError as e:
                raise CorruptCheckpoint(f"{path}: not valid JSON: {e}") \
                    from None
        version = doc.get("format_version")
        if version != CHECKPOINT_VERSION:
            raise VersionMismatch(
                f"{path}: format {version}, expected {CHECKPOINT_VERSION}")
        try:
            machine = cls(SimConfig.from_json_dict(doc["config"]),
                          doc["workload"])
            machine.engine.load_state(doc["engine"])
            machine.memory.load_state(doc["memory"])
            machine.chipset.load_state(doc["chipset"])
            machine.noc.load_state(doc["noc"])
            for tile, st in zip(machine.tiles, doc["tiles"]):
                tile.load_state(st)
            for client, st in zip(machine.clients, doc["clients"]):
                client.load_state(st)
            machine.access_log[:] = [tuple(rec) for rec in doc["access_log"]]
            machine._started = doc["started"]
            out = doc.get("outcome")
            machine.outcome = None if out is None else RunOutcome(out)
        except (KeyError, IndexError, TypeError, ValueError) as e:
            raise CorruptCheckpoint(f"{path}: {e!r}") from None
        return machine


# -- one-call experiment --------------------------------------------------------------

def run_experiment(config, workload_desc: dict, max_cycles=None,
                   save_at=None, checkpoint_path=None, restore_from=None,
                   tracer=None, verify=True) -> dict:
    """Run one workload to completion and return its verified report."""
    if restore_from is not None:
        machine = Machine.restore_checkpoint(restore_from)
    else:
        machine = Machine(config, workload_desc, tracer=tracer)
    if save_at is not None:
        machine.run(max_cycles=save_at)
        machine.save_checkpoint(checkpoint_path or "checkpoint.json")
    outcome = machine.run(max_cycles=max_cycles)
    if verify:
        machine.verify_oracle(check_expected=outcome is RunOutcome.ALL_HALTED)
        if outcome is RunOutcome.ALL_HALTED:
            machine.check_swmr()
            machine.check_directory()
    return machine.stats_report()
