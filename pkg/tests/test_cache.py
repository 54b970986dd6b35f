"""Set-associative cache bookkeeping and the outstanding-miss file."""

import pytest
from hypothesis import given, strategies as st

from tilesim import protocol as pr
from tilesim.cache import FillWithoutMshr, MshrFile, SetAssocCache

BS = 64


def blk(i):
    return i * BS


def make(sets=4, assoc=2):
    return SetAssocCache("c", sets, assoc, BS)


def data(tag=0):
    return bytes([tag]) * BS


def test_set_mapping():
    c = make(sets=4)
    assert c.set_of(blk(0)) == 0
    assert c.set_of(blk(5)) == 1
    assert c.set_of(blk(4)) == c.set_of(blk(0))


def test_install_lookup_and_update():
    c = make()
    line, victim = c.install(blk(1), pr.S, data(1))
    assert victim is None
    assert c.lookup(blk(1)) is line
    assert line.state == pr.S and not line.dirty
    # re-install same block updates in place, no eviction
    line2, victim = c.install(blk(1), pr.M, data(2))
    assert line2 is line and victim is None
    assert line.dirty and line.data == data(2)
    assert len(c) == 1


def test_lru_eviction_order():
    c = make(sets=1, assoc=2)
    c.install(blk(0), pr.S, data(0))
    c.install(blk(1), pr.S, data(1))
    c.lookup(blk(0))                      # 0 becomes most recent
    assert c.victim_for(blk(2)).block_addr == blk(1)
    _, victim = c.install(blk(2), pr.S, data(2))
    assert victim.block_addr == blk(1)
    assert c.probe(blk(1)) is None
    assert c.probe(blk(0)) is not None
    assert c.stats["evictions"] == 1


def test_probe_does_not_touch_lru():
    c = make(sets=1, assoc=2)
    c.install(blk(0), pr.S, data(0))
    c.install(blk(1), pr.S, data(1))
    c.probe(blk(0))                       # no promotion
    assert c.victim_for(blk(2)).block_addr == blk(0)


def test_no_eviction_while_set_has_room():
    c = make(sets=1, assoc=4)
    for i in range(4):
        _, victim = c.install(blk(i), pr.S, data(i))
        assert victim is None
    assert c.victim_for(blk(9)).block_addr == blk(0)


def test_remove_returns_line():
    c = make()
    c.install(blk(3), pr.E, data(3))
    line = c.remove(blk(3))
    assert line.state == pr.E
    assert c.remove(blk(3)) is None
    assert len(c) == 0


def test_write_bytes_patches_line():
    c = make()
    line, _ = c.install(blk(0), pr.M, data(0))
    c.write_bytes(line, 5, b"\xaa\xbb")
    assert line.data[4:8] == b"\x00\xaa\xbb\x00"
    assert len(line.data) == BS


def test_state_round_trip():
    c = make(sets=2, assoc=2)
    c.install(blk(0), pr.S, data(1))
    c.install(blk(1), pr.M, data(2))
    c.lookup(blk(0))
    c.stats["hits"] += 3
    snap = c.state_dict()
    c2 = make(sets=2, assoc=2)
    c2.load_state(snap)
    assert c2.state_dict() == snap
    assert c2.victim_for(blk(3)) is None  # geometry preserved
    assert c2.probe(blk(1)).data == data(2)


def test_mshr_allocate_merge_block():
    m = MshrFile(2)
    assert m.allocate(blk(0), "load", ("x", 1, 8, 1), cycle=5) == "new"
    assert m.allocate(blk(0), "load", ("x", 2, 8, 1), cycle=6) == "merged"
    assert m.allocate(blk(1), "store", None, cycle=7) == "new"
    assert m.full
    assert m.allocate(blk(2), "load", None, cycle=8) == "blocked"
    assert blk(0) in m and blk(2) not in m
    assert m.get(blk(0)).issued_cycle == 5    # merge keeps first issue time
    waiters = m.free(blk(0))
    assert waiters == [("x", 1, 8, 1), ("x", 2, 8, 1)]
    assert not m.full


def test_mshr_require_raises_without_entry():
    m = MshrFile(1)
    with pytest.raises(FillWithoutMshr):
        m.require(blk(0))
    with pytest.raises(ValueError):
        m.allocate(blk(0), "flush", None, cycle=0)


def test_mshr_state_round_trip():
    m = MshrFile(4)
    m.allocate(blk(0), "load", ("x", 3, 4, 0), cycle=2)
    m.allocate(blk(5), "ifetch", None, cycle=9)
    snap = m.state_dict()
    m2 = MshrFile(4)
    m2.load_state(snap)
    assert m2.state_dict() == snap
    assert m2.get(blk(0)).waiters == [("x", 3, 4, 0)]
    assert m2.get(blk(5)).issued_cycle == 9


@given(st.lists(st.integers(0, 30), min_size=1, max_size=120))
def test_occupancy_never_exceeds_ways(blocks):
    c = make(sets=4, assoc=2)
    for b in blocks:
        c.install(blk(b), pr.S, data(b % 251))
    for ways in c._by_set:
        assert len(ways) <= 2
    # every present block is found in the right set
    for line in c.lines():
        assert c.probe(line.block_addr) is line
