"""Instruction set for the simulated cores.

A deliberately small RV64 integer subset plus the handful of RVV 1.0
instructions the bundled kernels need. Instructions are kept as decoded
records (no binary encoding layer): the assembler in workload.py produces
them and the core executes them directly.

Scalar: add sub and or xor slt sltu sll srl sra mul, the immediate forms,
li lui auipc, lb lbu lw ld sb sw sd, beq bne blt bge bltu bgeu, jal jalr,
amoadd.w amoadd.d, fence (a no-op under the sequentially consistent memory
model) and a custom halt. Vector: vsetvli, vle8.v, vse8.v, vadd.vv,
vadd.vx. li with an arbitrary 64-bit immediate is treated as a first-class
single instruction rather than a lui/addi expansion.

Pseudo-instructions accepted by the assembler: mv, j, nop, ret.
"""

from dataclasses import dataclass
from typing import Optional

# Instruction memory is modeled separately from data memory; programs are
# placed at this virtual base, one 4-byte slot per instruction.
IBASE = 0x0100_0000
ILEN = 4

XLEN_MASK = (1 << 64) - 1

# -- register names ----------------------------------------------------------

ABI_NAMES = {
    "zero": 0, "ra": 1, "sp": 2, "gp": 3, "tp": 4,
    "t0": 5, "t1": 6, "t2": 7,
    "s0": 8, "fp": 8, "s1": 9,
    "a0": 10, "a1": 11, "a2": 12, "a3": 13,
    "a4": 14, "a5": 15, "a6": 16, "a7": 17,
    "s2": 18, "s3": 19, "s4": 20, "s5": 21, "s6": 22,
    "s7": 23, "s8": 24, "s9": 25, "s10": 26, "s11": 27,
    "t3": 28, "t4": 29, "t5": 30, "t6": 31,
}
X_NAMES = {f"x{i}": i for i in range(32)}
V_NAMES = {f"v{i}": i for i in range(32)}


class BadRegister(ValueError):
    pass


def xreg(name: str) -> int:
    """Parse a scalar register name (x-form or ABI)."""
    n = name.strip().lower()
    if n in X_NAMES:
        return X_NAMES[n]
    if n in ABI_NAMES:
        return ABI_NAMES[n]
    raise BadRegister(f"not a scalar register: {name!r}")


def vreg(name: str) -> int:
    n = name.strip().lower()
    if n in V_NAMES:
        return V_NAMES[n]
    raise BadRegister(f"not a vector register: {name!r}")


def xreg_name(i: int) -> str:
    return f"x{i}"


# -- mnemonic tables -----------------------------------------------------------

# form -> assembly operand shape (used by the assembler and pretty-printer)
ALU_RR = {"add", "sub", "and", "or", "xor", "slt", "sltu",
          "sll", "srl", "sra", "mul"}
ALU_RI = {"addi", "andi", "ori", "xori", "slti", "sltiu",
          "slli", "srli", "srai"}
SHIFTS_RI = {"slli", "srli", "srai"}
LOADS = {"lb": (1, True), "lbu": (1, False), "lw": (4, True), "ld": (8, True)}
STORES = {"sb": 1, "sw": 4, "sd": 8}
BRANCHES = {"beq", "bne", "blt", "bge", "bltu", "bgeu"}
AMOS = {"amoadd.w": 4, "amoadd.d": 8}
VECTOR = {"vsetvli", "vle8.v", "vse8.v", "vadd.vv", "vadd.vx"}
OTHER = {"li", "lui", "auipc", "jal", "jalr", "fence", "halt"}

MNEMONICS = (ALU_RR | ALU_RI | set(LOADS) | set(STORES) | BRANCHES
             | set(AMOS) | VECTOR | OTHER)

PSEUDOS = {"mv", "j", "nop", "ret"}

SEWS = (8, 16, 32, 64)


class UnknownMnemonic(ValueError):
    pass


@dataclass(frozen=True)
class Instruction:
    """One decoded instruction. Unused fields are None.

    rd/rs1/rs2 are scalar register indices; vd/vs1/vs2 vector indices (for
    vse8.v, vd holds the store-data register). For vsetvli, imm is unused
    and sew/lmul carry the requested type. Branch/jump targets are resolved
    to absolute instruction indices (imm = target index) by the assembler.
    """
    mnemonic: str
    rd: Optional[int] = None
    rs1: Optional[int] = None
    rs2: Optional[int] = None
    vd: Optional[int] = None
    vs1: Optional[int] = None
    vs2: Optional[int] = None
    imm: Optional[int] = None
    sew: Optional[int] = None
    lmul: Optional[int] = None

    def __post_init__(self):
        if self.mnemonic not in MNEMONICS:
            raise UnknownMnemonic(f"unsupported mnemonic: {self.mnemonic!r}")


# -- traps ---------------------------------------------------------------------

class Trap(RuntimeError):
    """Fatal architectural error raised by a core."""

    def __init__(self, core_id, pc, message):
        self.core_id = core_id
        self.pc = pc
        super().__init__(f"core {core_id} at pc={pc:#x}: {message}")


class TrapInvalidInstruction(Trap):
    pass


class TrapIllegalVtype(Trap):
    """A vector instruction executed while vill is set."""


class TrapMisalignedAccess(Trap):
    """A scalar word/doubleword access (or AMO) not naturally aligned.

    Byte-granular vector accesses have no alignment requirement, so the
    supported vle8.v/vse8.v never raise this.
    """


def sign_extend(value: int, bits: int) -> int:
    value &= (1 << bits) - 1
    if value & (1 << (bits - 1)):
        value -= 1 << bits
    return value


def to_signed64(value: int) -> int:
    return sign_extend(value, 64)


def to_unsigned64(value: int) -> int:
    return value & XLEN_MASK
