"""Instruction set tables, register naming, and helpers."""

import pytest
from hypothesis import given, strategies as st

from tilesim import isa


def test_subset_is_closed():
    expected = {
        "add", "sub", "and", "or", "xor", "slt", "sltu", "sll", "srl",
        "sra", "mul",
        "addi", "andi", "ori", "xori", "slti", "sltiu", "slli", "srli",
        "srai",
        "lb", "lbu", "lw", "ld", "sb", "sw", "sd",
        "beq", "bne", "blt", "bge", "bltu", "bgeu",
        "amoadd.w", "amoadd.d",
        "vsetvli", "vle8.v", "vse8.v", "vadd.vv", "vadd.vx",
        "li", "lui", "auipc", "jal", "jalr", "fence", "halt",
    }
    assert set(isa.MNEMONICS) == expected
    assert "vmul.vv" not in isa.MNEMONICS
    assert isa.PSEUDOS == {"mv", "j", "nop", "ret"}


def test_access_sizes():
    assert isa.LOADS["lbu"] == (1, False)
    assert isa.LOADS["lb"] == (1, True)
    assert isa.LOADS["ld"] == (8, True)
    assert isa.STORES == {"sb": 1, "sw": 4, "sd": 8}
    assert isa.AMOS == {"amoadd.w": 4, "amoadd.d": 8}


def test_register_names():
    assert isa.xreg("x7") == 7
    assert isa.xreg("a0") == 10
    assert isa.xreg("t0") == 5
    assert isa.xreg("zero") == 0
    assert isa.xreg("sp") == 2
    assert isa.xreg_name(10) == "x10"
    assert isa.vreg("v31") == 31
    with pytest.raises(isa.BadRegister):
        isa.xreg("x32")
    with pytest.raises(isa.BadRegister):
        isa.xreg("q1")
    with pytest.raises(isa.BadRegister):
        isa.vreg("x1")


def test_instruction_is_frozen_and_tagged():
    i = isa.Instruction(mnemonic="addi", rd=1, rs1=0, imm=5)
    assert i.rd == 1
    with pytest.raises(AttributeError):
        i.rd = 2


@given(st.integers(-2**63, 2**63 - 1))
def test_sign_extend_64_round_trip(v):
    assert isa.to_signed64(isa.to_unsigned64(v)) == v


@given(st.integers(0, 255))
def test_sign_extend_byte(v):
    out = isa.sign_extend(v, 8)
    assert out == (v if v < 128 else v - 256)


def test_layout_constants():
    assert isa.IBASE == 0x0100_0000
    assert isa.ILEN == 4
    assert isa.SEWS == (8, 16, 32, 64)
