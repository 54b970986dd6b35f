"""Workload front end: mini-assembler, built-in kernels, and trace replay.

Programs are lists of decoded instructions (see isa.Instruction) produced
either by the textual assembler or by a built-in kernel generator. Every
generator also computes, purely on the host, the memory image the run must
end with, so a simulation can be checked end to end against an oracle that
never touches the simulator. The trace loader replays a CSV of raw memory
operations through the tile port, bypassing the cores entirely, for
memory-system stress that needs no program at all.

Assembly grammar (one statement per line):

    label:                ; a label line (may precede an instruction)
        addi x1, x0, 5    ; comments run from ';' to end of line
        lbu  t0, 4(a1)    ; loads/stores take an offset(base) operand
        beq  t0, x1, label
        amoadd.d t1, t2, (a2)
        vsetvli t0, a5, e8, m1, ta, ma

Registers may be written x0..x31/v0..v31 or with ABI names. Branch and
jump targets are labels (or bare instruction indices); the assembler
resolves them to absolute instruction indices in a second pass.
"""

import random
import re
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from . import isa

MASK64 = (1 << 64) - 1

# where generated kernels place their arrays; far below the instruction
# space so the data segment can never collide with code addresses
DATA_BASE = 0x1000

# registers the machine loads before releasing the cores
CORE_ID_REG = 10       # a0: this core's index
CORE_COUNT_REG = 11    # a1: number of participating cores

_GOLD = 0x9E3779B97F4A7C15   # odd 64-bit multiplier for per-core seeding


# -- errors ------------------------------------------------------------------

class AsmError(ValueError):
    """Assembly rejected; .line is the 1-based source line when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class UnknownMnemonic(AsmError, isa.UnknownMnemonic):
    pass


class OperandArity(AsmError):
    pass


class BadOperand(AsmError):
    pass


class UnresolvedLabel(AsmError):
    def __init__(self, name: str, line: Optional[int] = None):
        self.name = name
        super().__init__(f"unresolved label {name!r}", line)


class ParamOutOfRange(ValueError):
    pass


class UnknownKernel(ValueError):
    pass


class TraceError(ValueError):
    pass


class MalformedTraceLine(TraceError):
    def __init__(self, lineno: int, message: str):
        self.lineno = lineno
        super().__init__(f"trace line {lineno}: {message}")


class AddressOutOfBounds(TraceError):
    pass


class CoreIdOutOfRange(TraceError):
    pass


# -- program -----------------------------------------------------------------

@dataclass
class Program:
    """A decoded program plus its static data and entry conventions.

    Instructions live in a virtual code space starting at isa.IBASE; the
    data segment is an initial byte image at data_address. Every core runs
    the same code and learns its role from the designated argument
    registers (core id / core count), set by the machine before cycle 0.
    """

    instructions: Tuple[isa.Instruction, ...]
    labels: Dict[str, int]
    entry: int = 0
    data_address: int = DATA_BASE
    data: bytes = b""
    core_id_reg: int = CORE_ID_REG
    core_count_reg: int = CORE_COUNT_REG

    def __post_init__(self):
        self.instructions = tuple(self.instructions)
        self.data = bytes(self.data)

    def validate(self) -> "Program":
        n = len(self.instructions)
        if not 0 <= self.entry <= max(n - 1, 0):
            raise AsmError(f"entry index {self.entry} outside program")
        for idx, ins in enumerate(self.instructions):
            if ins.mnemonic in isa.BRANCHES or ins.mnemonic == "jal":
                if not 0 <= ins.imm < n:
                    raise AsmError(
                        f"instruction {idx}: target index {ins.imm} "
                        f"outside program of {n} instructions")
        code_lo, code_hi = isa.IBASE, isa.IBASE + n * isa.ILEN
        data_lo, data_hi = self.data_address, self.data_address + len(self.data)
        if self.data_address < 0:
            raise AsmError("data segment at negative address")
        if data_lo < code_hi and code_lo < data_hi:
            raise AsmError("data segment overlaps the instruction space")
        return self


# -- assembler ----------------------------------------------------------------

_LABEL_RE = re.compile(r"^([A-Za-z_.][A-Za-z0-9_.]*)\s*:\s*(.*)$")

_IMM12_MIN, _IMM12_MAX = -2048, 2047


def _int_operand(tok: str, lineno: int, lo: int, hi: int) -> int:
    try:
        val = int(tok, 0)
    except ValueError:
        raise BadOperand(f"expected an integer, got {tok!r}", lineno) from None
    if not lo <= val <= hi:
        raise BadOperand(f"immediate {val} outside [{lo}, {hi}]", lineno)
    return val


def _xreg(tok: str, lineno: int) -> int:
    try:
        return isa.xreg(tok)
    except isa.BadRegister as e:
        raise BadOperand(str(e), lineno) from None


def _vreg(tok: str, lineno: int) -> int:
    try:
        return isa.vreg(tok)
    except isa.BadRegister as e:
        raise BadOperand(str(e), lineno) from None


def _mem_operand(tok: str, lineno: int, zero_only: bool = False):
    """Parse 'offset(base)'; the offset may be omitted (then 0)."""
    tok = tok.strip()
    if "(" not in tok or not tok.endswith(")"):
        raise BadOperand(f"expected offset(reg), got {tok!r}", lineno)
    off_s, reg_s = tok[:-1].split("(", 1)
    off_s = off_s.strip()
    off = _int_operand(off_s, lineno, _IMM12_MIN, _IMM12_MAX) if off_s else 0
    if zero_only and off != 0:
        raise BadOperand(f"this form takes no offset, got {off}", lineno)
    return off, _xreg(reg_s, lineno)


def _need(ops: List[str], count: int, lineno: int) -> None:
    if len(ops) != count:
        raise OperandArity(
            f"expected {count} operand(s), got {len(ops)}", lineno)


def _expand_pseudo(mnem: str, ops: List[str], lineno: int):
    if mnem == "mv":
        _need(ops, 2, lineno)
        return "addi", [ops[0], ops[1], "0"]
    if mnem == "j":
        _need(ops, 1, lineno)
        return "jal", ["x0", ops[0]]
    if mnem == "nop":
        _need(ops, 0, lineno)
        return "addi", ["x0", "x0", "0"]
    if mnem == "ret":
        _need(ops, 0, lineno)
        return "jalr", ["x0", "0(x1)"]
    raise AssertionError(mnem)          # pragma: no cover - table is closed


def _parse_vtype(ops: List[str], lineno: int):
    """vsetvli tail tokens: eN (element width), mN (group), ta/tu/ma/mu."""
    sew = lmul = None
    for tok in ops:
        t = tok.strip().lower()
        if t in ("ta", "tu", "ma", "mu"):
            continue                     # tail/mask policy: accepted, inert
        if t.startswith("e") and t[1:].isdigit():
            sew = int(t[1:])
        elif t.startswith("m") and t[1:].isdigit():
            lmul = int(t[1:])
        else:
            raise BadOperand(f"bad vector-type token {tok!r}", lineno)
    if sew is None:
        raise BadOperand("vector type needs an eN element-width token", lineno)
    return sew, 1 if lmul is None else lmul


def _branch_target(tok: str, labels: Dict[str, int], lineno: int) -> int:
    tok = tok.strip()
    try:
        return int(tok, 0)
    except ValueError:
        pass
    if tok not in labels:
        raise UnresolvedLabel(tok, lineno)
    return labels[tok]


def _parse_instruction(mnem: str, ops: List[str], labels: Dict[str, int],
                       lineno: int) -> isa.Instruction:
    I = isa.Instruction
    if mnem in isa.ALU_RR:
        _need(ops, 3, lineno)
        return I(mnem, rd=_xreg(ops[0], lineno), rs1=_xreg(ops[1], lineno),
                 rs2=_xreg(ops[2], lineno))
    if mnem in isa.ALU_RI:
        _need(ops, 3, lineno)
        lo, hi = (0, 63) if mnem in isa.SHIFTS_RI else (_IMM12_MIN, _IMM12_MAX)
        return I(mnem, rd=_xreg(ops[0], lineno), rs1=_xreg(ops[1], lineno),
                 imm=_int_operand(ops[2], lineno, lo, hi))
    if mnem == "li":
        _need(ops, 2, lineno)
        return I(mnem, rd=_xreg(ops[0], lineno),
                 imm=_int_operand(ops[1], lineno, -(1 << 63), (1 << 64) - 1))
    if mnem in ("lui", "auipc"):
        _need(ops, 2, lineno)
        return I(mnem, rd=_xreg(ops[0], lineno),
                 imm=_int_operand(ops[1], lineno, 0, 0xFFFFF))
    if mnem in isa.LOADS:
        _need(ops, 2, lineno)
        off, base = _mem_operand(ops[1], lineno)
        return I(mnem, rd=_xreg(ops[0], lineno), rs1=base, imm=off)
    if mnem in isa.STORES:
        _need(ops, 2, lineno)
        off, base = _mem_operand(ops[1], lineno)
        return I(mnem, rs2=_xreg(ops[0], lineno), rs1=base, imm=off)
    if mnem in isa.AMOS:
        _need(ops, 3, lineno)
        _off, base = _mem_operand(ops[2], lineno, zero_only=True)
        return I(mnem, rd=_xreg(ops[0], lineno), rs2=_xreg(ops[1], lineno),
                 rs1=base)
    if mnem in isa.BRANCHES:
        _need(ops, 3, lineno)
        return I(mnem, rs1=_xreg(ops[0], lineno), rs2=_xreg(ops[1], lineno),
                 imm=_branch_target(ops[2], labels, lineno))
    if mnem == "jal":
        _need(ops, 2, lineno)
        return I(mnem, rd=_xreg(ops[0], lineno),
                 imm=_branch_target(ops[1], labels, lineno))
    if mnem == "jalr":
        if len(ops) == 2:
            off, base = _mem_operand(ops[1], lineno)
            return I(mnem, rd=_xreg(ops[0], lineno), rs1=base, imm=off)
        _need(ops, 3, lineno)
        return I(mnem, rd=_xreg(ops[0], lineno), rs1=_xreg(ops[1], lineno),
                 imm=_int_operand(ops[2], lineno, _IMM12_MIN, _IMM12_MAX))
    if mnem in ("fence", "halt"):
        _need(ops, 0, lineno)
        return I(mnem)
    if mnem == "vsetvli":
        if len(ops) < 3:
            raise OperandArity(
                f"expected rd, rs1, vtype..., got {len(ops)} operand(s)",
                lineno)
        sew, lmul = _parse_vtype(ops[2:], lineno)
        return I(mnem, rd=_xreg(ops[0], lineno), rs1=_xreg(ops[1], lineno),
                 sew=sew, lmul=lmul)
    if mnem in ("vle8.v", "vse8.v"):
        _need(ops, 2, lineno)
        _off, base = _mem_operand(ops[1], lineno, zero_only=True)
        return I(mnem, vd=_vreg(ops[0], lineno), rs1=base)
    if mnem == "vadd.vv":
        _need(ops, 3, lineno)
        return I(mnem, vd=_vreg(ops[0], lineno), vs2=_vreg(ops[1], lineno),
                 vs1=_vreg(ops[2], lineno))
    if mnem == "vadd.vx":
        _need(ops, 3, lineno)
        return I(mnem, vd=_vreg(ops[0], lineno), vs2=_vreg(ops[1], lineno),
                 rs1=_xreg(ops[2], lineno))
    raise AssertionError(mnem)          # pragma: no cover - table is closed


def _tokenize(text: str):
    """Yield (lineno, labels_on_line, mnemonic, operand list) per statement."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0].strip()
        labels = []
        m = _LABEL_RE.match(line)
        while m:
            labels.append(m.group(1))
            line = m.group(2).strip()
            m = _LABEL_RE.match(line)
        if not line:
            if labels:
                yield lineno, labels, None, None
            continue
        parts = line.split(None, 1)
        mnem = parts[0].lower()
        if len(parts) == 1:
            ops = []
        else:
            ops = [o.strip() for o in parts[1].split(",")]
            if any(not o for o in ops):
                raise BadOperand("empty operand", lineno)
        yield lineno, labels, mnem, ops


def assemble(text: str) -> Program:
    """Two-pass assembly of the documented grammar into a Program."""
    statements = []                      # (lineno, mnemonic, operands)
    labels: Dict[str, int] = {}
    for lineno, labs, mnem, ops in _tokenize(text):
        for lab in labs:
            if lab in labels:
                raise AsmError(f"duplicate label {lab!r}", lineno)
            labels[lab] = len(statements)
        if mnem is None:
            continue
        if mnem in isa.PSEUDOS:
            mnem, ops = _expand_pseudo(mnem, ops, lineno)
        if mnem not in isa.MNEMONICS:
            raise UnknownMnemonic(f"unsupported mnemonic {mnem!r}", lineno)
        statements.append((lineno, mnem, ops))
    instructions = tuple(_parse_instruction(mnem, ops, labels, lineno)
                         for lineno, mnem, ops in statements)
    return Program(instructions, labels).validate()


# -- pretty-printer ------------------------------------------------------------

def _fmt_operands(ins: isa.Instruction, names_at: Dict[int, str]) -> str:
    m = ins.mnemonic
    x = isa.xreg_name
    if m in isa.ALU_RR:
        return f"{x(ins.rd)}, {x(ins.rs1)}, {x(ins.rs2)}"
    if m in isa.ALU_RI:
        return f"{x(ins.rd)}, {x(ins.rs1)}, {ins.imm}"
    if m in ("li", "lui", "auipc"):
        return f"{x(ins.rd)}, {ins.imm}"
    if m in isa.LOADS:
        return f"{x(ins.rd)}, {ins.imm}({x(ins.rs1)})"
    if m in isa.STORES:
        return f"{x(ins.rs2)}, {ins.imm}({x(ins.rs1)})"
    if m in isa.AMOS:
        return f"{x(ins.rd)}, {x(ins.rs2)}, ({x(ins.rs1)})"
    if m in isa.BRANCHES:
        return (f"{x(ins.rs1)}, {x(ins.rs2)}, "
                f"{names_at.get(ins.imm, ins.imm)}")
    if m == "jal":
        return f"{x(ins.rd)}, {names_at.get(ins.imm, ins.imm)}"
    if m == "jalr":
        return f"{x(ins.rd)}, {ins.imm}({x(ins.rs1)})"
    if m in ("fence", "halt"):
        return ""
    if m == "vsetvli":
        return (f"{x(ins.rd)}, {x(ins.rs1)}, e{ins.sew}, m{ins.lmul}, "
                f"ta, ma")
    if m in ("vle8.v", "vse8.v"):
        return f"v{ins.vd}, ({x(ins.rs1)})"
    if m == "vadd.vv":
        return f"v{ins.vd}, v{ins.vs2}, v{ins.vs1}"
    if m == "vadd.vx":
        return f"v{ins.vd}, v{ins.vs2}, {x(ins.rs1)}"
    raise AssertionError(m)             # pragma: no cover - table is closed


def pretty_print(program: Program) -> str:
    """Canonical text whose re-assembly reproduces the program exactly."""
    by_index: Dict[int, List[str]] = {}
    for name, idx in program.labels.items():
        by_index.setdefault(idx, []).append(name)
    names_at = {idx: min(names) for idx, names in by_index.items()}
    lines = []
    for idx, ins in enumerate(program.instructions):
        for name in sorted(by_index.get(idx, ())):
            lines.append(f"{name}:")
        ops = _fmt_operands(ins, names_at)
        lines.append(f"    {ins.mnemonic} {ops}".rstrip())
    for name in sorted(by_index.get(len(program.instructions), ())):
        lines.append(f"{name}:")
    return "\n".join(lines) + "\n"


# -- kernel generators ----------------------------------------------------------

@dataclass
class Kernel:
    """A generated program plus its host-computed expected results.

    expected_memory maps address -> the exact bytes the run must leave
    there; retired_fn (when the kernel has no data-dependent spinning)
    maps the machine's vector length to the exact per-core retired
    instruction counts.
    """

    name: str
    params: Dict[str, int]
    program: Program
    expected_memory: Dict[int, bytes]
    retired_fn: Optional[Callable[[int], Dict[int, int]]] = \
        field(default=None, repr=False, compare=False)

    @property
    def workload_id(self) -> str:
        p = ",".join(f"{k}={self.params[k]}" for k in sorted(self.params))
        return f"{self.name}({p})"


KERNEL_NAMES = ("vecadd_scalar", "vecadd_vector", "ep_parallel",
                "shared_reduce")


def _check_params(n: int, ncores: int) -> None:
    if not isinstance(n, int) or n < 1:
        raise ParamOutOfRange(f"n must be a positive integer, got {n!r}")
    if not isinstance(ncores, int) or ncores < 1:
        raise ParamOutOfRange(f"ncores must be >= 1, got {ncores!r}")


def _pad256(n: int) -> int:
    return (n + 255) // 256 * 256


def _chunk_bounds(n: int, ncores: int, core: int):
    """Contiguous slice [start, end) core gets under ceil-sized chunks."""
    chunk = -(-n // ncores)
    start = core * chunk
    end = min(start + chunk, n)
    return chunk, start, max(start, end)


def _vecadd_layout(n: int):
    a = DATA_BASE
    b = a + _pad256(n)
    c = b + _pad256(n)
    if c + _pad256(n) >= isa.IBASE:
        raise ParamOutOfRange(f"n={n} arrays would reach the code space")
    return a, b, c


def _vecadd_data(n: int, seed: int):
    rng = random.Random(seed)
    a = bytes(rng.randrange(256) for _ in range(n))
    b = bytes(rng.randrange(256) for _ in range(n))
    c = bytes((a[i] + b[i]) & 0xFF for i in range(n))
    return a, b, c


def _vecadd_prologue(n: int, ncores: int, a: int, b: int, c: int) -> str:
    chunk = -(-n // ncores)
    return f"""\
; c[i] = a[i] + b[i] over {n} byte elements, core slice of {chunk}
        li   t0, {chunk}
        mul  t1, a0, t0          ; start = id * chunk
        add  t2, t1, t0          ; end, not yet clamped
        li   t3, {n}
        blt  t2, t3, noclamp
        mv   t2, t3
noclamp:
        bge  t1, t2, done        ; empty slice: straight to the end
        li   a2, {a}
        li   a3, {b}
        li   a4, {c}
"""


def _vecadd_counts(n: int, ncores: int, setup: int, per_iter: int,
                   elems_per_iter_fn):
    """Closed-form retired counts shared by the two vecadd variants."""
    def counts(core: int) -> int:
        chunk, start, end = _chunk_bounds(n, ncores, core)
        cnt = end - start
        clamp = 0 if start + chunk < n else 1     # mv executed when clamped
        if cnt == 0:
            return 5 + clamp + 1 + 1              # setup, bge, halt
        iters = elems_per_iter_fn(cnt)
        return 5 + clamp + 1 + setup + per_iter * iters + 1
    return counts


def gen_vecadd_scalar(n: int, ncores: int = 1, seed: int = 1) -> Kernel:
    """Byte-wise c = a + b with scalar loads/stores, one element per pass."""
    _check_params(n, ncores)
    a_addr, b_addr, c_addr = _vecadd_layout(n)
    a, b, c = _vecadd_data(n, seed)
    text = _vecadd_prologue(n, ncores, a_addr, b_addr, c_addr) + """\
        add  a2, a2, t1
        add  a3, a3, t1
        add  a4, a4, t1
loop:
        lbu  t4, 0(a2)
        lbu  t5, 0(a3)
        add  t4, t4, t5
        sb   t4, 0(a4)
        addi a2, a2, 1
        addi a3, a3, 1
        addi a4, a4, 1
        addi t1, t1, 1           ; element index
        bne  t1, t2, loop
done:
        halt
"""
    program = _with_data(assemble(text), a_addr, a, b_addr, b)
    per_core = _vecadd_counts(n, ncores, 6, 9, lambda cnt: cnt)
    return Kernel(
        "vecadd_scalar", {"n": n, "ncores": ncores, "seed": seed}, program,
        {a_addr: a, b_addr: b, c_addr: c},
        retired_fn=lambda vlen_bits: {k: per_core(k) for k in range(ncores)})


def gen_vecadd_vector(n: int, ncores: int = 1, seed: int = 1) -> Kernel:
    """Byte-wise c = a + b, strip-mined with a vsetvli every iteration."""
    _check_params(n, ncores)
    a_addr, b_addr, c_addr = _vecadd_layout(n)
    a, b, c = _vecadd_data(n, seed)
    text = _vecadd_prologue(n, ncores, a_addr, b_addr, c_addr) + """\
        add  a2, a2, t1
        add  a3, a3, t1
        add  a4, a4, t1
        sub  a5, t2, t1          ; elements remaining
loop:
        vsetvli t0, a5, e8, m1, ta, ma
        vle8.v  v1, (a2)
        vle8.v  v2, (a3)
        vadd.vv v3, v1, v2
        vse8.v  v3, (a4)
        add  a2, a2, t0
        add  a3, a3, t0
        add  a4, a4, t0
        sub  a5, a5, t0
        bne  a5, x0, loop
done:
        halt
"""
    program = _with_data(assemble(text), a_addr, a, b_addr, b)

    def retired(vlen_bits: int) -> Dict[int, int]:
        vlmax = vlen_bits // 8
        per_core = _vecadd_counts(n, ncores, 7, 10,
                                  lambda cnt: -(-cnt // vlmax))
        return {k: per_core(k) for k in range(ncores)}

    return Kernel(
        "vecadd_vector", {"n": n, "ncores": ncores, "seed": seed}, program,
        {a_addr: a, b_addr: b, c_addr: c}, retired_fn=retired)


def _with_data(program: Program, a_addr: int, a: bytes,
               b_addr: int, b: bytes) -> Program:
    image = bytearray(b_addr + len(b) - a_addr)
    image[:len(a)] = a
    image[b_addr - a_addr:] = b
    program.data_address = a_addr
    program.data = bytes(image)
    return program.validate()


def _xorshift_steps(state: int, count: int):
    """The exact register-for-register mirror of the generated PRNG loop."""
    acc = 0
    for _ in range(count):
        state ^= (state << 13) & MASK64
        state ^= state >> 7
        state ^= (state << 17) & MASK64
        acc = (acc + state) & MASK64
    return acc


def _ep_core_seed(seed: int, core: int) -> int:
    return ((((core + 1) * _GOLD) & MASK64) ^ (seed & MASK64)) | 1


def gen_ep_parallel(n: int, ncores: int = 1, seed: int = 1) -> Kernel:
    """Independent per-core PRNG sums joined by an atomic-counter barrier.

    Each core draws its share of n pseudo-random numbers entirely in
    registers, adds its partial sum into a shared accumulator with one
    atomic, then passes a sense barrier: an atomic arrival counter whose
    last arriver publishes a flag the others spin on.
    """
    _check_params(n, ncores)
    acc_addr = DATA_BASE
    bar_addr = DATA_BASE + 0x40
    flag_addr = DATA_BASE + 0x80
    base, rem = n // ncores, n % ncores
    text = f"""\
; per-core share of {n} items, then sum + barrier through atomics
        li   t0, {base}
        li   t1, {rem}
        sltu t2, a0, t1
        add  t0, t0, t2          ; my item count
        addi t3, a0, 1
        li   t4, {_GOLD}
        mul  t3, t3, t4
        li   t5, {seed & MASK64}
        xor  t3, t3, t5
        ori  t3, t3, 1           ; nonzero per-core generator state
        li   t6, 0
        beq  t0, x0, accum
loop:
        slli t4, t3, 13
        xor  t3, t3, t4
        srli t4, t3, 7
        xor  t3, t3, t4
        slli t4, t3, 17
        xor  t3, t3, t4
        add  t6, t6, t3
        addi t0, t0, -1
        bne  t0, x0, loop
accum:
        li   a2, {acc_addr}
        amoadd.d x0, t6, (a2)    ; publish the partial sum
        li   a3, {bar_addr}
        li   t4, 1
        amoadd.d t5, t4, (a3)    ; barrier arrival; t5 = old count
        li   t4, {ncores - 1}
        li   a4, {flag_addr}
        beq  t5, t4, last
spin:
        ld   t5, 0(a4)
        beq  t5, x0, spin
        j    done
last:
        li   t5, 1
        sd   t5, 0(a4)           ; release the others
done:
        halt
"""
    total = 0
    for k in range(ncores):
        count = base + (1 if k < rem else 0)
        total = (total + _xorshift_steps(_ep_core_seed(seed, k), count)) \
            & MASK64
    expected = {acc_addr: total.to_bytes(8, "little"),
                bar_addr: ncores.to_bytes(8, "little"),
                flag_addr: (1).to_bytes(8, "little")}
    return Kernel("ep_parallel", {"n": n, "ncores": ncores, "seed": seed},
                  assemble(text), expected)


def gen_shared_reduce(n: int, ncores: int = 1, seed: int = 1) -> Kernel:
    """All cores atomically count into one shared block: peak contention."""
    _check_params(n, ncores)
    counter_addr = DATA_BASE
    base, rem = n // ncores, n % ncores
    text = f"""\
; every core hammers the same counter with atomic adds
        li   t0, {base}
        li   t1, {rem}
        sltu t2, a0, t1
        add  t0, t0, t2          ; my share of the {n} increments
        li   a2, {counter_addr}
        li   t3, 1
        beq  t0, x0, done
loop:
        amoadd.d x0, t3, (a2)
        addi t0, t0, -1
        bne  t0, x0, loop
done:
        halt
"""
    expected = {counter_addr: (n & MASK64).to_bytes(8, "little")}
    return Kernel("shared_reduce", {"n": n, "ncores": ncores, "seed": seed},
                  assemble(text), expected)


_GENERATORS = {
    "vecadd_scalar": gen_vecadd_scalar,
    "vecadd_vector": gen_vecadd_vector,
    "ep_parallel": gen_ep_parallel,
    "shared_reduce": gen_shared_reduce,
}


def gen_kernel(name: str, n: int, ncores: int = 1, seed: int = 1) -> Kernel:
    """Build one of the built-in kernels with its expected-result oracle."""
    if name not in _GENERATORS:
        raise UnknownKernel(
            f"unknown kernel {name!r}; choose from {KERNEL_NAMES}")
    return _GENERATORS[name](n, ncores=ncores, seed=seed)


# -- trace replay -----------------------------------------------------------------

_TRACE_OPS = ("load", "store")
_TRACE_SIZES = (1, 2, 4, 8)


@dataclass(frozen=True)
class TraceRecord:
    """One raw memory operation: core, op, addr, size, think-time gap."""

    core: int
    op: str
    addr: int
    size: int
    gap: int = 0


def parse_trace(lines, num_cores: int, memory_size_bytes: int
                ) -> List[List[TraceRecord]]:
    """Parse CSV records 'core,op,addr,size[,gap]' into per-core streams."""
    streams: List[List[TraceRecord]] = [[] for _ in range(num_cores)]
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) not in (4, 5):
            raise MalformedTraceLine(lineno,
                                     f"expected 4 or 5 fields, got {len(fields)}")
        try:
            core = int(fields[0], 0)
            addr = int(fields[2], 0)
            size = int(fields[3], 0)
            gap = int(fields[4], 0) if len(fields) == 5 else 0
        except ValueError:
            raise MalformedTraceLine(lineno, f"bad number in {line!r}") \
                from None
        op = fields[1].lower()
        if op not in _TRACE_OPS:
            raise MalformedTraceLine(lineno, f"op must be load|store, got {op!r}")
        if size not in _TRACE_SIZES:
            raise MalformedTraceLine(lineno, f"size must be one of "
                                     f"{_TRACE_SIZES}, got {size}")
        if addr % size:
            raise MalformedTraceLine(lineno,
                                     f"address {addr:#x} not {size}-byte aligned")
        if gap < 0:
            raise MalformedTraceLine(lineno, f"negative gap {gap}")
        if not 0 <= core < num_cores:
            raise CoreIdOutOfRange(
                f"line {lineno}: core {core} outside 0..{num_cores - 1}")
        if addr < 0 or addr + size > memory_size_bytes:
            raise AddressOutOfBounds(
                f"line {lineno}: [{addr:#x}, +{size}) outside "
                f"{memory_size_bytes}-byte memory")
        streams[core].append(TraceRecord(core, op, addr, size, gap))
    return streams


def load_trace(path: str, num_cores: int, memory_size_bytes: int
               ) -> List[List[TraceRecord]]:
    """Read a CSV trace file into per-core record streams."""
    with open(path) as f:
        return parse_trace(f, num_cores, memory_size_bytes)


def format_trace(records) -> str:
    """Render records back to the CSV form load_trace reads."""
    return "".join(f"{r.core},{r.op},{r.addr:#x},{r.size},{r.gap}\n"
                   for r in records)


def gen_random_trace(num_cores: int, ops_per_core: int, seed: int,
                     num_blocks: int = 4, block_size_bytes: int = 64,
                     base: int = DATA_BASE, max_gap: int = 3,
                     store_ratio: float = 0.5) -> List[TraceRecord]:
    """A seeded random trace over a small hot set of blocks (high conflict)."""
    rng = random.Random(seed)
    records = []
    for core in range(num_cores):
        for _ in range(ops_per_core):
            size = rng.choice(_TRACE_SIZES)
            block = rng.randrange(num_blocks)
            offset = rng.randrange(block_size_bytes // size) * size
            op = "store" if rng.random() < store_ratio else "load"
            records.append(TraceRecord(
                core, op, base + block * block_size_bytes + offset,
                size, rng.randrange(max_gap + 1)))
    return records


class TraceDriver:
    """Replays one core's trace stream through the tile port.

    Stands in for a core: the tile controller calls deliver()/wake() on
    it, and the machine counts it toward the all-halted condition. One
    record issues per tick; a load that misses waits for its data, a
    store retires on acceptance, and each record's gap adds idle cycles
    before the next issue. Store values are a deterministic function of
    (core, record index) so any two runs of the same trace write the
    same bytes.
    """

    def __init__(self, core_id: int, engine, vcfg, records, port,
                 name: Optional[str] = None):
        self.core_id = core_id
        self.engine = engine
        self.vcfg = vcfg
        self.records = list(records)
        self.port = port
        self.name = name or f"core{core_id}"
        self.idx = 0
        self.halted = False
        self._waiting_gap = None      # pending load: the record's gap
        self._tick_scheduled = False
        self.counters = {"loads": 0, "stores": 0, "load_hits": 0,
                         "blocked": 0}
        engine.register(self.name, self._on_event)

    def start(self) -> None:
        if self.idx >= len(self.records):
            self._halt()
        else:
            self._schedule_tick(self.engine.cycle)

    # -- engine plumbing ---------------------------------------------------

    def _schedule_tick(self, cycle: int) -> None:
        self._tick_scheduled = True
        self.engine.schedule(cycle, self.name, "tick")

    def _on_event(self, kind, payload) -> None:
        if kind != "tick":
            raise ValueError(f"unknown driver event {kind!r}")
        self._tick_scheduled = False
        self._step()

    def _halt(self) -> None:
        self.halted = True
        self.engine.note_halt()

    @property
    def waiting_reason(self):
        if self.halted or self._tick_scheduled:
            return None
        r = self.records[self.idx]
        what = "load data" if self._waiting_gap is not None else "a retry"
        return (f"{self.name} waiting on {what} for record {self.idx} "
                f"({r.op} {r.addr:#x})")

    # -- replay ------------------------------------------------------------

    def _store_value(self, size: int) -> bytes:
        v = ((self.core_id + 1) * _GOLD
             + (self.idx + 1) * 0xBF58476D1CE4E5B9) & MASK64
        return (v & ((1 << (8 * size)) - 1)).to_bytes(size, "little")

    def _step(self) -> None:
        if self.halted or self._waiting_gap is not None:
            return
        r = self.records[self.idx]
        if r.op == "load":
            status, data = self.port.load_bytes(
                r.addr, r.size, ("t", self.core_id, self.idx))
            if status == "blocked":
                self.counters["blocked"] += 1
                return                   # wake() retries
            self.counters["loads"] += 1
            if status == "hit":
                self.counters["load_hits"] += 1
                self._advance(r.gap)
            else:
                self._waiting_gap = r.gap
        else:
            if self.port.store_bytes(r.addr,
                                     self._store_value(r.size)) == "blocked":
                self.counters["blocked"] += 1
                return
            self.counters["stores"] += 1
            self._advance(r.gap)

    def _advance(self, gap: int) -> None:
        self.idx += 1
        if self.idx >= len(self.records):
            self._halt()
        else:
            self._schedule_tick(self.engine.cycle + 1 + gap)

    # -- port client surface (what the tile controller calls) ---------------

    def deliver(self, waiter, data: bytes) -> None:
        gap, self._waiting_gap = self._waiting_gap, None
        self._advance(gap or 0)

    def wake(self) -> None:
        if self.halted or self._tick_scheduled or self._waiting_gap is not None:
            return
        self._schedule_tick(self.engine.cycle)

    # -- checkpoint ----------------------------------------------------------

    def state_dict(self) -> dict:
        return {"idx": self.idx, "halted": self.halted,
                "waiting_gap": self._waiting_gap,
                "tick_scheduled": self._tick_scheduled,
                "counters": dict(self.counters)}

    def load_state(self, d: dict) -> None:
        self.idx = d["idx"]
        self.halted = d["halted"]
        self._waiting_gap = d["waiting_gap"]
        self._tick_scheduled = d["tick_scheduled"]
        self.counters = dict(d["counters"])
