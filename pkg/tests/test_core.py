"""Core semantics and timing against a scriptable flat memory port."""

import pytest
from hypothesis import given, settings, strategies as st

from tilesim import isa
from tilesim.config import Latencies, standalone_config
from tilesim.core import Core, PerfCounters
from tilesim.engine import Engine
from tilesim.workload import assemble

MASK64 = (1 << 64) - 1


class FlatPort:
    """Always-hit memory port; misses and back-pressure are scriptable."""

    def __init__(self, engine, name="port0", size=1 << 16, delay=6):
        self.engine = engine
        self.mem = bytearray(size)
        self.delay = delay
        self.core = None
        self.name = name
        self.accesses = []
        self.miss_blocks = set()    # block addresses that miss (once each)
        self.block_next = 0         # make the next N operations block
        engine.register(name, self._fill)

    def _fill(self, kind, payload):
        waiter, addr, size = payload
        self.core.deliver(tuple(waiter), bytes(self.mem[addr:addr + size]))

    def load_bytes(self, addr, size, waiter):
        self.accesses.append(("load", addr, size))
        if self.block_next:
            self.block_next -= 1
            return "blocked", None
        blk = addr - addr % 64
        if blk in self.miss_blocks:
            self.miss_blocks.discard(blk)
            self.engine.schedule_in(self.delay, self.name, "fill",
                                    (tuple(waiter), addr, size))
            return "pending", None
        return "hit", bytes(self.mem[addr:addr + size])

    def store_bytes(self, addr, data):
        self.accesses.append(("store", addr, len(data)))
        if self.block_next:
            self.block_next -= 1
            return "blocked"
        self.mem[addr:addr + len(data)] = data
        return "ok"

    def amo_add(self, addr, size, addend, waiter):
        self.accesses.append(("amo", addr, size))
        old = int.from_bytes(self.mem[addr:addr + size], "little")
        new = (old + addend) & ((1 << (8 * size)) - 1)
        self.mem[addr:addr + size] = new.to_bytes(size, "little")
        return "hit", old.to_bytes(size, "little")


def make_core(text, mode="renaming", mem_latency=1, delay=6, vlen=128):
    cfg = standalone_config(vsetvl_mode=mode, vlen_bits=vlen,
                            latencies=Latencies(memory=mem_latency))
    engine = Engine()
    port = FlatPort(engine, delay=delay)
    core = Core(0, engine, cfg.validate(), assemble(text).instructions, port)
    port.core = core
    engine.set_liveness(1, lambda: [])
    return engine, core, port


def run(engine, core):
    core.start()
    outcome = engine.run_until()
    engine.drain()
    return outcome


def test_addi_issues_and_writes_next_cycle():
    engine, core, _ = make_core("addi x1, x0, 5\nhalt\n")
    run(engine, core)
    assert core.regs[1] == 5
    assert core.read_counters().instructions_retired == 2


def test_x0_is_hardwired_zero():
    engine, core, _ = make_core("addi x0, x0, 5\nadd x1, x0, x0\nhalt\n")
    run(engine, core)
    assert core.regs[0] == 0
    assert core.regs[1] == 0


def test_one_hundred_addi_take_one_hundred_issue_cycles():
    text = "\n".join("addi x1, x1, 1" for _ in range(100)) + "\nhalt\n"
    engine, core, _ = make_core(text)
    run(engine, core)
    c = core.read_counters()
    assert core.regs[1] == 100
    assert c.instructions_retired == 101
    # single-issue 1 IPC: every non-fetch-blocked cycle issues exactly once
    issue_cycles = (c.cycles - core.l1i.stats["blocked"]
                    - c.stall_cycles_raw_hazard - c.stall_cycles_mshr_full
                    - c.stall_cycles_vsetvl)
    assert issue_cycles == 101


def test_load_miss_scoreboard_stalls_dependent_then_independent():
    text = """
            li   x3, 0x2000
            ld   x2, 0(x3)
            add  x4, x2, x2
            addi x5, x0, 1
            halt
    """
    engine, core, port = make_core(text, delay=6)
    port.mem[0x2000:0x2008] = (21).to_bytes(8, "little")
    port.miss_blocks.add(0x2000)
    run(engine, core)
    c = core.read_counters()
    assert core.regs[2] == 21
    assert core.regs[4] == 42          # computed only after the fill
    assert core.regs[5] == 1           # in-order: issued after the add
    assert c.l1d_misses == 1
    assert c.stall_cycles_raw_hazard == 5    # 6-cycle fill, 1 issue overlap


def test_load_hit_completes_at_issue():
    engine, core, port = make_core("li x3, 0x2000\nld x2, 0(x3)\n"
                                   "add x4, x2, x2\nhalt\n")
    port.mem[0x2000:0x2008] = (7).to_bytes(8, "little")
    run(engine, core)
    assert core.regs[4] == 14
    assert core.read_counters().stall_cycles_raw_hazard == 0


def test_waw_on_pending_destination_stalls():
    text = """
            li   x3, 0x2000
            ld   x2, 0(x3)
            li   x2, 5
            halt
    """
    engine, core, port = make_core(text, delay=6)
    port.mem[0x2000:0x2008] = (99).to_bytes(8, "little")
    port.miss_blocks.add(0x2000)
    run(engine, core)
    assert core.regs[2] == 5           # the li waited for the fill, then won


def test_signed_and_unsigned_loads():
    text = """
            li   x3, 0x2000
            lb   x1, 0(x3)
            lbu  x2, 0(x3)
            lw   x4, 4(x3)
            halt
    """
    engine, core, port = make_core(text)
    port.mem[0x2000] = 0xFF
    port.mem[0x2004:0x2008] = (0x8000_0000).to_bytes(4, "little")
    run(engine, core)
    assert core.regs[1] == MASK64                 # -1 sign-extended
    assert core.regs[2] == 0xFF
    assert core.regs[4] == isa.to_unsigned64(-0x8000_0000)


def test_misaligned_scalar_access_traps():
    engine, core, port = make_core("li x3, 0x2001\nld x2, 0(x3)\nhalt\n")
    core.start()
    with pytest.raises(isa.TrapMisalignedAccess):
        engine.run_until()


def test_store_and_amo():
    text = """
            li   x3, 0x2000
            li   x4, 300
            sd   x4, 0(x3)
            li   x5, 42
            amoadd.d x6, x5, (x3)
            ld   x7, 0(x3)
            halt
    """
    engine, core, port = make_core(text)
    run(engine, core)
    assert core.regs[6] == 300          # amo returns the old value
    assert core.regs[7] == 342
    c = core.read_counters()
    assert c.scalar_stores == 2         # sd + amo
    assert c.scalar_loads == 1


def test_amo_word_sign_extends_old_value():
    text = """
            li   x3, 0x2000
            li   x5, 1
            amoadd.w x6, x5, (x3)
            halt
    """
    engine, core, port = make_core(text)
    port.mem[0x2000:0x2004] = (0xFFFF_FFFF).to_bytes(4, "little")
    run(engine, core)
    assert core.regs[6] == MASK64       # -1 as a signed word


def test_mshr_blocked_charges_stall_counter():
    engine, core, port = make_core("li x3, 0x2000\nld x2, 0(x3)\nhalt\n")
    port.block_next = 1
    core.start()
    engine.run_until(stop_cycle=40)
    assert core.waiting_reason is not None
    core.wake()                         # resource freed
    engine.run_until()
    assert core.read_counters().stall_cycles_mshr_full > 0
    assert core.halted


def test_branches_and_jumps():
    text = """
            li   x1, 3
            li   x2, 0
    loop:
            addi x2, x2, 10
            addi x1, x1, -1
            bne  x1, x0, loop
            jal  x5, over
            addi x2, x2, 100
    over:
            halt
    """
    engine, core, _ = make_core(text)
    run(engine, core)
    assert core.regs[2] == 30
    assert core.regs[1] == 0
    # link register holds the byte address after the jal
    assert core.regs[5] == isa.IBASE + 6 * isa.ILEN


def test_jalr_returns():
    text = """
            jal  x1, sub
            addi x3, x3, 1
            halt
    sub:
            addi x4, x4, 7
            jalr x0, 0(x1)
    """
    engine, core, _ = make_core(text)
    run(engine, core)
    assert core.regs[3] == 1
    assert core.regs[4] == 7


def test_vsetvli_avl_cases():
    text = """
            li   t0, 100
            vsetvli t1, t0, e8, m1
            li   t2, 10
            vsetvli t3, t2, e8, m1
            vsetvli t4, x0, e8, m1
            li   t5, 0
            vsetvli t6, t5, e8, m1
            halt
    """
    engine, core, _ = make_core(text, vlen=128)
    run(engine, core)
    assert core.regs[isa.xreg("t1")] == 16     # min(100, 128/8)
    assert core.regs[isa.xreg("t3")] == 10     # avl < VLMAX
    assert core.regs[isa.xreg("t4")] == 16     # rs1=x0, rd!=x0: VLMAX
    assert core.regs[isa.xreg("t6")] == 0      # zero request


def test_unsupported_vtype_sets_vill_then_traps_on_use():
    text = """
            li   t0, 8
            vsetvli t1, t0, e8, m2
            vadd.vv v1, v2, v3
            halt
    """
    engine, core, _ = make_core(text)
    core.start()
    with pytest.raises(isa.TrapIllegalVtype):
        engine.run_until()
    assert core.vill
    assert core.vl == 0
    assert core.regs[isa.xreg("t1")] == 0


def test_vadd_vv_elementwise_with_tail_undisturbed():
    text = """
            li   t0, 16
            vsetvli t1, t0, e8, m1
            li   a0, 0x2000
            li   a1, 0x2100
            vle8.v v1, (a0)
            vle8.v v2, (a1)
            li   t0, 12
            vsetvli t1, t0, e8, m1
            vadd.vv v3, v1, v2
            halt
    """
    engine, core, port = make_core(text, vlen=128)
    port.mem[0x2000:0x2010] = bytes(range(16))
    port.mem[0x2100:0x2110] = bytes([1] * 16)
    core.vregs[3][:] = bytes([0xEE] * 16)
    run(engine, core)
    assert list(core.vregs[3][:12]) == list(range(1, 13))
    assert list(core.vregs[3][12:16]) == [0xEE] * 4     # tail untouched


def test_vadd_vx_broadcast_wraps_mod_256():
    text = """
            li   t0, 4
            vsetvli t1, t0, e8, m1
            li   a0, 0x2000
            vle8.v v1, (a0)
            li   t2, 250
            vadd.vx v2, v1, t2
            halt
    """
    engine, core, port = make_core(text)
    port.mem[0x2000:0x2004] = bytes([10, 20, 30, 40])
    run(engine, core)
    assert list(core.vregs[2][:4]) == [(x + 250) % 256
                                       for x in (10, 20, 30, 40)]


def test_vle8_block_touch_counts():
    aligned = """
            li   t0, 16
            vsetvli t1, t0, e8, m1
            li   a0, 0x2040
            vle8.v v1, (a0)
            halt
    """
    engine, core, port = make_core(aligned)
    run(engine, core)
    assert [a for a in port.accesses if a[0] == "load"] == [
        ("load", 0x2040, 16)]

    straddling = """
            li   t0, 16
            vsetvli t1, t0, e8, m1
            li   a0, 0x2038
            vle8.v v1, (a0)
            halt
    """
    engine, core, port = make_core(straddling)
    port.mem[0x2038:0x2048] = bytes(range(16))
    run(engine, core)
    assert [a for a in port.accesses if a[0] == "load"] == [
        ("load", 0x2038, 8), ("load", 0x2040, 8)]
    assert list(core.vregs[1][:16]) == list(range(16))


def test_vse8_writes_vl_bytes():
    text = """
            li   t0, 16
            vsetvli t1, t0, e8, m1
            li   a0, 0x2000
            vle8.v v1, (a0)
            li   a1, 0x2105
            vse8.v v1, (a1)
            halt
    """
    engine, core, port = make_core(text)
    port.mem[0x2000:0x2010] = bytes(range(100, 116))
    run(engine, core)
    assert bytes(port.mem[0x2105:0x2115]) == bytes(range(100, 116))
    assert bytes(port.mem[0x2115:0x2117]) == b"\x00\x00"


def test_stall_mode_slower_and_charges_vsetvl_counter():
    text = """
            li   t0, 16
            vsetvli t1, t0, e8, m1
            vadd.vv v1, v1, v1
            vsetvli t1, t0, e8, m1
            vadd.vv v1, v1, v1
            halt
    """
    results = {}
    for mode in ("renaming", "stall"):
        engine, core, _ = make_core(text, mode=mode)
        run(engine, core)
        results[mode] = core.read_counters()
    assert results["renaming"].stall_cycles_vsetvl == 0
    assert results["stall"].stall_cycles_vsetvl > 0
    assert results["renaming"].cycles < results["stall"].cycles
    assert (results["renaming"].instructions_retired
            == results["stall"].instructions_retired)


def test_halt_freezes_cycle_counter():
    engine, core, _ = make_core("addi x1, x0, 1\nhalt\n")
    run(engine, core)
    frozen = core.read_counters().cycles
    engine.register("noise", lambda *_: None)
    engine.schedule(frozen + 500, "noise", "tick")
    engine.drain()
    assert core.read_counters().cycles == frozen


def test_read_counters_is_a_pure_snapshot():
    engine, core, _ = make_core("addi x1, x0, 1\nhalt\n")
    run(engine, core)
    a = core.read_counters()
    b = core.read_counters()
    assert a == b
    assert isinstance(a, PerfCounters)


def test_state_round_trip_mid_run():
    text = """
            li   x3, 0x2000
            ld   x2, 0(x3)
            add  x4, x2, x2
            halt
    """
    engine, core, port = make_core(text, delay=6)
    port.mem[0x2000:0x2008] = (5).to_bytes(8, "little")
    port.miss_blocks.add(0x2000)
    core.start()
    engine.run_until(stop_cycle=4)      # fill still in flight
    snap = core.state_dict()

    engine2 = Engine()
    port2 = FlatPort(engine2, delay=6)
    port2.mem[:] = port.mem
    core2 = Core(0, engine2, core.vcfg, core.program, port2)
    port2.core = core2
    engine2.set_liveness(1, lambda: [])
    core2.load_state(snap)
    assert core2.pend_x == core.pend_x
    assert core2.regs == core.regs
    assert core2.counters == core.counters


@settings(max_examples=40, deadline=None)
@given(ops=st.lists(st.tuples(
    st.sampled_from(["add", "sub", "and", "or", "xor", "slt", "sltu",
                     "sll", "srl", "sra", "mul"]),
    st.integers(1, 7), st.integers(1, 7), st.integers(1, 7)),
    min_size=1, max_size=12),
    seeds=st.lists(st.integers(-2**31, 2**31), min_size=7, max_size=7))
def test_alu_matches_python_reference(ops, seeds):
    lines = [f"li x{k + 1}, {v}" for k, v in enumerate(seeds)]
    lines += [f"{m} x{rd}, x{ra}, x{rb}" for m, rd, ra, rb in ops]
    engine, core, _ = make_core("\n".join(lines) + "\nhalt\n")
    run(engine, core)

    regs = [0] * 32
    for k, v in enumerate(seeds):
        regs[k + 1] = v & MASK64

    def s64(x):
        return x - (1 << 64) if x >= (1 << 63) else x

    for m, rd, ra, rb in ops:
        a, b = regs[ra], regs[rb]
        val = {
            "add": a + b, "sub": a - b, "and": a & b, "or": a | b,
            "xor": a ^ b, "slt": int(s64(a) < s64(b)), "sltu": int(a < b),
            "sll": a << (b & 63), "srl": a >> (b & 63),
            "sra": s64(a) >> (b & 63), "mul": a * b,
        }[m]
        regs[rd] = val & MASK64
    assert core.regs[1:8] == regs[1:8]
