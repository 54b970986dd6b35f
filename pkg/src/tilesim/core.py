"""Single-issue in-order core: functional + cycle-level timing model.

Execution model
---------------
The core is event-driven: it receives "tick" events from the engine and
executes at most one instruction per cycle. When issue is blocked (operand
pending in the scoreboard, miss-handling registers full, instruction-cache
fill in flight, or a vector-config drain), the core parks without
self-ticking; completions and resource releases call wake(), and the
blocked interval is charged to the matching stall counter when the core
resumes. This keeps event counts proportional to useful work while
producing exact per-cycle accounting.

Memory access goes through a tile data port (the coherence controller)
with three entry points:

    load_bytes(addr, size, waiter) -> ("hit", bytes) | ("pending", None)
                                      | ("blocked", None)
    store_bytes(addr, data)        -> "ok" | "blocked"
    amo_add(addr, size, addend, w) -> ("hit", old_bytes) | ("pending", None)
                                      | ("blocked", None)

Waiters are plain tuples the port hands back to deliver() with the data;
they contain only primitives so they survive checkpoints. Scalar loads
that hit complete at issue; misses mark the destination register pending
(non-blocking) and in-order issue stalls only when a later instruction
actually needs the register. Stores are write-through fire-and-forget;
atomics behave like scoreboarded loads that also write memory and are
counted with the stores.

The private instruction cache is direct-mapped, fill-on-miss straight
from memory (programs are immutable, so it stays outside coherence).
"""

from dataclasses import dataclass, asdict, replace

from . import isa
from .cache import MshrFile, SetAssocCache
from . import protocol as pr

DRAIN_PENALTY = 5          # extra cycles a vector-config stall costs
MASK64 = (1 << 64) - 1


@dataclass
class PerfCounters:
    cycles: int = 0
    instructions_retired: int = 0
    scalar_loads: int = 0
    scalar_stores: int = 0
    vector_instructions: int = 0
    l1d_misses: int = 0
    stall_cycles_raw_hazard: int = 0
    stall_cycles_mshr_full: int = 0
    stall_cycles_vsetvl: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


class Core:
    """One hardware thread: registers, pipeline-front timing, vector unit."""

    def __init__(self, core_id: int, engine, vcfg, program, port,
                 name: str = None):
        self.core_id = core_id
        self.engine = engine
        self.vcfg = vcfg
        self.program = list(program)
        self.port = port
        self.name = name or f"core{core_id}"

        self.pc = isa.IBASE
        self.regs = [0] * 32
        vbytes = vcfg.cfg.vlen_bits // 8
        self.vregs = [bytearray(vbytes) for _ in range(32)]
        self.vl = 0
        self.sew = 8
        self.vill = True            # no vector type configured yet
        self.halted = False

        self.counters = PerfCounters()
        self._halt_cycles = None    # total cycles once halted
        self.pend_x = set()         # x-register indexes with a fill in flight
        self.pend_v = {}            # v-register -> outstanding fill pieces

        self._park_reason = None    # None|"raw"|"mshr"|"ifetch"|"vsetvl"
        self._park_start = 0
        self._drain_until = None    # vector-config stall: cycle it may issue
        self._vmem = None           # partially issued vector memory op
        self._tick_scheduled = False

        bs = vcfg.block_size_bytes
        self.l1i = SetAssocCache(f"l1i{core_id}", vcfg.l1i_sets, 1, bs)
        self._l1i_mshr = MshrFile(1)

        engine.register(self.name, self._on_event)

    # -- public surface ------------------------------------------------------

    def start(self) -> None:
        """Schedule the first tick (cycle 0)."""
        self._schedule_tick(self.engine.cycle)

    def read_counters(self) -> PerfCounters:
        """Pure snapshot; cycles reads as total elapsed (frozen at halt)."""
        cyc = self._halt_cycles if self.halted else self.engine.cycle
        return replace(self.counters, cycles=cyc)

    @property
    def waiting_reason(self):
        if self.halted or self._park_reason is None:
            return None
        return (f"{self.name} parked on {self._park_reason} "
                f"at pc={self.pc:#x} since cycle {self._park_start}")

    def deliver(self, waiter, data: bytes) -> None:
        """A memory reply for one of this core's waiters."""
        kind = waiter[0]
        if kind in ("x", "amo"):
            _, rd, size, signed = waiter
            val = int.from_bytes(data[:size], "little", signed=bool(signed))
            if rd != 0:
                self.regs[rd] = val & MASK64
            self.pend_x.discard(rd)
        elif kind == "v":
            _, vd, off = waiter
            self.vregs[vd][off:off + len(data)] = data
            left = self.pend_v.get(vd, 0) - 1
            if left > 0:
                self.pend_v[vd] = left
            else:
                self.pend_v.pop(vd, None)
        else:
            raise ValueError(f"unknown waiter {waiter!r}")
        self.wake()

    def wake(self) -> None:
        """Re-attempt issue this cycle (completions and freed resources)."""
        if self.halted or self._tick_scheduled:
            return
        self._schedule_tick(self.engine.cycle)

    # -- event plumbing --------------------------------------------------------

    def _schedule_tick(self, cycle: int) -> None:
        self._tick_scheduled = True
        self.engine.schedule(cycle, self.name, "tick")

    def _on_event(self, kind, payload) -> None:
        if kind == "tick":
            self._tick_scheduled = False
            self._step()
        elif kind == "ifill":
            block = payload
            self.l1i.install(block, pr.S, bytes(self.l1i.block_size))
            self._l1i_mshr.free(block)
            self._tick_scheduled = False
            self._step()
        else:
            raise ValueError(f"unknown core event {kind!r}")

    def _park(self, reason: str) -> None:
        self._park_reason = reason
        self._park_start = self.engine.cycle

    def _unpark(self) -> None:
        if self._park_reason is None:
            return
        delta = self.engine.cycle - self._park_start
        if delta:
            c = self.counters
            if self._park_reason == "raw":
                c.stall_cycles_raw_hazard += delta
            elif self._park_reason == "mshr":
                c.stall_cycles_mshr_full += delta
            elif self._park_reason == "vsetvl":
                c.stall_cycles_vsetvl += delta
            else:                      # instruction-fetch fill
                self.l1i.stats["blocked"] += delta
        self._park_reason = None

    # -- pipeline ---------------------------------------------------------------

    def _step(self) -> None:
        if self.halted:
            return
        self._unpark()
        if self._vmem is not None:     # resume a split vector memory op
            if self._issue_vmem_pieces():
                self._retire_vector()
                self._next_cycle()
            else:
                self._park("mshr")
            return
        instr = self._fetch()
        if instr is None:
            return                      # parked on instruction fill
        self._issue(instr)

    def _fetch(self):
        idx, rem = divmod(self.pc - isa.IBASE, isa.ILEN)
        if rem or idx < 0 or idx >= len(self.program):
            raise isa.TrapInvalidInstruction(
                self.core_id, self.pc, "fetch outside program")
        block = self.vcfg.block_addr(self.pc)
        line = self.l1i.lookup(block)
        if line is not None:
            self.l1i.stats["hits"] += 1
            return self.program[idx]
        self.l1i.stats["misses"] += 1
        self._l1i_mshr.allocate(block, "ifetch", None, self.engine.cycle)
        self._park("ifetch")
        self.engine.schedule_in(self.vcfg.latencies.memory, self.name,
                                "ifill", block)
        self._tick_scheduled = True    # the fill event resumes the pipeline
        return None

    def _next_cycle(self) -> None:
        if not self.halted:
            self._schedule_tick(self.engine.cycle + 1)

    def _retire(self, next_pc=None) -> None:
        self.counters.instructions_retired += 1
        self.pc = (self.pc + isa.ILEN) if next_pc is None else next_pc

    # -- hazards ------------------------------------------------------------------

    def _xsrcs(self, i: isa.Instruction):
        regs = []
        if i.rs1 is not None:
            regs.append(i.rs1)
        if i.rs2 is not None:
            regs.append(i.rs2)
        if i.rd is not None:
            regs.append(i.rd)           # in-order writeback: block on WAW too
        return regs

    def _hazard(self, i: isa.Instruction) -> bool:
        if self.pend_x and any(r in self.pend_x for r in self._xsrcs(i)):
            return True
        if self.pend_v:
            for v in (i.vd, i.vs1, i.vs2):
                if v is not None and v in self.pend_v:
                    return True
        return False

    # -- issue ---------------------------------------------------------------------

    def _issue(self, i: isa.Instruction) -> None:
        if self._hazard(i):
            self._park("raw")
            return
        m = i.mnemonic
        if m in isa.ALU_RR or m in isa.ALU_RI:
            self._write_x(i.rd, self._alu(i))
        elif m == "li":
            self._write_x(i.rd, i.imm & MASK64)
        elif m == "lui":
            self._write_x(i.rd, isa.to_unsigned64(
                isa.sign_extend(i.imm << 12, 32)))
        elif m == "auipc":
            self._write_x(i.rd, (self.pc + isa.sign_extend(i.imm << 12, 32))
                          & MASK64)
        elif m in isa.LOADS:
            if not self._issue_load(i):
                return
        elif m in isa.STORES:
            if not self._issue_store(i):
                return
        elif m in isa.AMOS:
            if not self._issue_amo(i):
                return
        elif m in isa.BRANCHES:
            self._retire(self._branch_target(i))
            self._next_cycle()
            return
        elif m == "jal":
            link = (self.pc + isa.ILEN) & MASK64
            self._retire(isa.IBASE + i.imm * isa.ILEN)
            self._write_x_late(i.rd, link)
            self._next_cycle()
            return
        elif m == "jalr":
            link = (self.pc + isa.ILEN) & MASK64
            target = (self.regs[i.rs1] + i.imm) & MASK64 & ~1
            self._retire(target)
            self._write_x_late(i.rd, link)
            self._next_cycle()
            return
        elif m == "fence":
            pass                        # sequentially consistent model: no-op
        elif m == "halt":
            self.counters.instructions_retired += 1
            self.halted = True
            self._halt_cycles = self.engine.cycle + 1
            self.engine.note_halt()
            return
        elif m == "vsetvli":
            if not self._issue_vsetvli(i):
                return
        elif m in isa.VECTOR:
            if not self._issue_vector(i):
                return
        else:                           # pragma: no cover - table is closed
            raise isa.TrapInvalidInstruction(self.core_id, self.pc, m)
        self._retire()
        self._next_cycle()

    def _write_x(self, rd, val) -> None:
        if rd:
            self.regs[rd] = val & MASK64

    # identical, but named for sites where pc already moved (jumps)
    _write_x_late = _write_x

    _RI_TO_RR = {"addi": "add", "andi": "and", "ori": "or", "xori": "xor",
                 "slti": "slt", "sltiu": "sltu", "slli": "sll",
                 "srli": "srl", "srai": "sra"}

    def _alu(self, i: isa.Instruction) -> int:
        a = self.regs[i.rs1]
        b = self.regs[i.rs2] if i.rs2 is not None else i.imm & MASK64
        m = self._RI_TO_RR.get(i.mnemonic, i.mnemonic)
        if m == "add":
            return (a + b) & MASK64
        if m == "sub":
            return (a - b) & MASK64
        if m == "and":
            return a & b
        if m == "or":
            return a | b
        if m == "xor":
            return a ^ b
        if m == "slt":
            return 1 if isa.to_signed64(a) < isa.to_signed64(b) else 0
        if m == "sltu":
            return 1 if a < (b & MASK64) else 0
        if m == "sll":
            return (a << (b & 63)) & MASK64
        if m == "srl":
            return a >> (b & 63)
        if m == "sra":
            return isa.to_unsigned64(isa.to_signed64(a) >> (b & 63))
        if m == "mul":
            return (a * b) & MASK64
        raise AssertionError(m)

    def _branch_target(self, i: isa.Instruction):
        a, b = self.regs[i.rs1], self.regs[i.rs2]
        sa, sb = isa.to_signed64(a), isa.to_signed64(b)
        m = i.mnemonic
        taken = ((m == "beq" and a == b) or (m == "bne" and a != b)
                 or (m == "blt" and sa < sb) or (m == "bge" and sa >= sb)
                 or (m == "bltu" and a < b) or (m == "bgeu" and a >= b))
        return isa.IBASE + i.imm * isa.ILEN if taken else self.pc + isa.ILEN

    # -- scalar memory -----------------------------------------------------------

    def _check_align(self, addr: int, size: int) -> None:
        if size > 1 and addr % size:
            raise isa.TrapMisalignedAccess(
                self.core_id, self.pc,
                f"{size}-byte scalar access at {addr:#x}")

    def _issue_load(self, i) -> bool:
        size, signed = isa.LOADS[i.mnemonic]
        addr = (self.regs[i.rs1] + i.imm) & MASK64
        self._check_align(addr, size)
        waiter = ("x", i.rd, size, int(signed))
        status, data = self.port.load_bytes(addr, size, waiter)
        if status == "blocked":
            self._park("mshr")
            return False
        self.counters.scalar_loads += 1
        if status == "hit":
            val = int.from_bytes(data, "little", signed=signed)
            self._write_x(i.rd, val & MASK64)
        else:
            self.counters.l1d_misses += 1
            if i.rd:
                self.pend_x.add(i.rd)
        return True

    def _issue_store(self, i) -> bool:
        size = isa.STORES[i.mnemonic]
        addr = (self.regs[i.rs1] + i.imm) & MASK64
        self._check_align(addr, size)
        data = (self.regs[i.rs2] & ((1 << (8 * size)) - 1)).to_bytes(
            size, "little")
        if self.port.store_bytes(addr, data) == "blocked":
            self._park("mshr")
            return False
        self.counters.scalar_stores += 1
        return True

    def _issue_amo(self, i) -> bool:
        size = isa.AMOS[i.mnemonic]
        addr = self.regs[i.rs1] & MASK64
        self._check_align(addr, size)
        addend = self.regs[i.rs2] & ((1 << (8 * size)) - 1)
        waiter = ("amo", i.rd, size, 1)   # old value sign-extends into rd
        status, data = self.port.amo_add(addr, size, addend, waiter)
        if status == "blocked":
            self._park("mshr")
            return False
        self.counters.scalar_stores += 1
        if status == "hit":
            if i.rd:
                self.regs[i.rd] = isa.sign_extend(
                    int.from_bytes(data, "little"), 8 * size) & MASK64
        elif i.rd:
            self.pend_x.add(i.rd)
        return True

    # -- vector ---------------------------------------------------------------------

    def _issue_vsetvli(self, i) -> bool:
        if self.vcfg.cfg.vsetvl_mode == "stall":
            if self.pend_x or self.pend_v:
                self._park("vsetvl")     # wait for in-flight completion
                return False
            cyc = self.engine.cycle
            if self._drain_until is None:
                self._drain_until = cyc + DRAIN_PENALTY
            if cyc < self._drain_until:
                self._park("vsetvl")
                if not self._tick_scheduled:
                    self._schedule_tick(self._drain_until)
                return False
            self._drain_until = None
        avl = self.regs[i.rs1] if i.rs1 != 0 else (
            self.vcfg.vlmax(i.sew) if i.rd != 0 else self.vl)
        if i.sew in isa.SEWS and i.lmul == 1:
            self.vill = False
            self.sew = i.sew
            self.vl = min(avl, self.vcfg.vlmax(i.sew))
        else:                            # unsupported type: flagged, not a trap
            self.vill = True
            self.vl = 0
        self._write_x(i.rd, self.vl)
        return True

    def _issue_vector(self, i) -> bool:
        if self.vill:
            raise isa.TrapIllegalVtype(
                self.core_id, self.pc,
                f"{i.mnemonic} with no valid vector configuration")
        self.counters.vector_instructions += 1
        if i.mnemonic == "vadd.vv":
            self._vadd(i.vd, self._lanes(i.vs2), self._lanes(i.vs1))
            return True
        if i.mnemonic == "vadd.vx":
            x = self.regs[i.rs1] & ((1 << self.sew) - 1)
            self._vadd(i.vd, self._lanes(i.vs2), [x] * self.vl)
            return True
        # unit-stride byte load/store: one port access per block covered
        base = self.regs[i.rs1] & MASK64
        kind = "load" if i.mnemonic == "vle8.v" else "store"
        pieces = []
        off = 0
        addr = base
        end = base + self.vl
        while addr < end:
            step = min(self.vcfg.block_addr(addr) + self.vcfg.block_size_bytes,
                       end) - addr
            if kind == "load":
                pieces.append([addr, step, off])
            else:
                data = bytes(self.vregs[i.vd][off:off + step])
                pieces.append([addr, data.hex(), off])
            addr += step
            off += step
        self._vmem = {"kind": kind, "vd": i.vd, "pieces": pieces}
        if self._issue_vmem_pieces():
            self._vmem = None
            return True
        self.counters.vector_instructions -= 1   # counted on retire instead
        self._park("mshr")
        return False

    def _lanes(self, v) -> list:
        sb = self.sew // 8
        reg = self.vregs[v]
        return [int.from_bytes(reg[k * sb:(k + 1) * sb], "little")
                for k in range(self.vl)]

    def _vadd(self, vd, a, b) -> None:
        sb = self.sew // 8
        mask = (1 << self.sew) - 1
        out = self.vregs[vd]             # tail beyond vl*sb stays undisturbed
        for k in range(self.vl):
            out[k * sb:(k + 1) * sb] = ((a[k] + b[k]) & mask).to_bytes(
                sb, "little")

    def _issue_vmem_pieces(self) -> bool:
        """Push remaining block pieces to the port; False if it blocked."""
        op = self._vmem
        vd = op["vd"]
        pieces = op["pieces"]
        while pieces:
            piece = pieces[0]
            if op["kind"] == "load":
                addr, size, off = piece
                status, data = self.port.load_bytes(addr, size, ("v", vd, off))
                if status == "blocked":
                    return False
                if status == "hit":
                    self.vregs[vd][off:off + size] = data
                else:
                    self.counters.l1d_misses += 1
                    self.pend_v[vd] = self.pend_v.get(vd, 0) + 1
            else:
                addr, hexdata, _off = piece
                if self.port.store_bytes(addr, bytes.fromhex(hexdata)) \
                        == "blocked":
                    return False
            pieces.pop(0)
        return True

    def _retire_vector(self) -> None:
        self._vmem = None
        self.counters.vector_instructions += 1
        self._retire()

    # -- checkpoint --------------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "pc": self.pc,
            "regs": list(self.regs),
            "vregs": [bytes(v).hex() for v in self.vregs],
            "vl": self.vl,
            "sew": self.sew,
            "vill": self.vill,
            "halted": self.halted,
            "halt_cycles": self._halt_cycles,
            "counters": self.counters.as_dict(),
            "pend_x": sorted(self.pend_x),
            "pend_v": sorted(self.pend_v.items()),
            "park": [self._park_reason, self._park_start],
            "drain_until": self._drain_until,
            "vmem": self._vmem,
            "tick_scheduled": self._tick_scheduled,
            "l1i": self.l1i.state_dict(),
            "l1i_mshr": self._l1i_mshr.state_dict(),
        }

    def load_state(self, d: dict) -> None:
        self.pc = d["pc"]
        self.regs = list(d["regs"])
        self.vregs = [bytearray(bytes.fromhex(h)) for h in d["vregs"]]
        self.vl = d["vl"]
        self.sew = d["sew"]
        self.vill = d["vill"]
        self.halted = d["halted"]
        self._halt_cycles = d["halt_cycles"]
        self.counters = PerfCounters(**d["counters"])
        self.pend_x = set(d["pend_x"])
        self.pend_v = {k: v for k, v in d["pend_v"]}
        self._park_reason, self._park_start = d["park"]
        self._drain_until = d["drain_until"]
        self._vmem = d["vmem"]
        if self._vmem is not None:
            self._vmem = {"kind": self._vmem["kind"], "vd": self._vmem["vd"],
                          "pieces": [list(p) for p in self._vmem["pieces"]]}
        self._tick_scheduled = d["tick_scheduled"]
        self.l1i.load_state(d["l1i"])
        self._l1i_mshr.load_state(d["l1i_mshr"])
