"""Unit tests for the pure coherence tables.

Each test walks a concrete request/response sequence through the L1.5 and
home-directory transition functions and checks the resulting states, the
messages emitted, and the effect tags, against hand-worked expectations.
"""

import pytest
from hypothesis import given, strategies as st

import tilesim.protocol as pr
from tilesim.protocol import (
    DirEntry, HomeBlock, L15Result, UnexpectedMessage,
    dir_evict, dir_request, dir_response, home_drive, l15_core_op, l15_msg,
)


# -- kinds and constants -----------------------------------------------------------


def test_every_kind_has_a_net():
    assert set(pr.NET_OF_KIND.values()) == {1, 2, 3}
    assert pr.DATA_KINDS <= set(pr.NET_OF_KIND)
    # requests go on net 1, home-originated traffic on net 2, acks on net 3
    assert pr.NET_OF_KIND[pr.GETS] == 1
    assert pr.NET_OF_KIND[pr.FWD_GETX] == 2
    assert pr.NET_OF_KIND[pr.PUT_ACK] == 2
    assert pr.NET_OF_KIND[pr.INV_ACK] == 3
    assert pr.NET_OF_KIND[pr.MEM_DATA] == 3


def test_mutation_names_are_stable():
    assert pr.MUTATIONS == ("skip_invack_wait", "fwdgets_no_demote", "drop_invack")


# -- L1.5 core-op table ------------------------------------------------------------


def test_load_miss_requests_shared_copy():
    res = l15_core_op(pr.I, "load")
    assert res == L15Result(pr.IS_D, ((pr.GETS, False),), ("miss",))


@pytest.mark.parametrize("state", [pr.S, pr.E, pr.M])
def test_load_hit_keeps_state(state):
    res = l15_core_op(state, "load")
    assert res == L15Result(state, (), ("hit_load",))


def test_store_miss_requests_exclusive_copy():
    assert l15_core_op(pr.I, "store") == L15Result(
        pr.IM_D, ((pr.GETX, False),), ("miss",))


def test_store_on_shared_upgrades_in_place():
    res = l15_core_op(pr.S, "store")
    assert res.state == pr.SM_W
    assert res.sends == ((pr.UPGRADE, False),)


def test_store_on_exclusive_is_a_silent_promotion():
    for state in (pr.E, pr.M):
        res = l15_core_op(state, "store")
        assert res == L15Result(pr.M, (), ("hit_store",))


def test_evictions_send_the_matching_put():
    assert l15_core_op(pr.S, "evict").sends == ((pr.PUTS, False),)
    assert l15_core_op(pr.E, "evict").sends == ((pr.PUTE, False),)
    dirty = l15_core_op(pr.M, "evict")
    assert dirty.state == pr.MI_A
    assert dirty.sends == ((pr.PUTM, True),)


def test_evicting_an_invalid_block_is_unreachable():
    with pytest.raises(UnexpectedMessage) as exc:
        l15_core_op(pr.I, "evict")
    assert exc.value.state == pr.I


# -- L1.5 message table ------------------------------------------------------------


def test_fills_land_in_the_granted_state():
    assert l15_msg(pr.IS_D, pr.DATA_S).state == pr.S
    assert l15_msg(pr.IS_D, pr.DATA_E).state == pr.E
    assert l15_msg(pr.IM_D, pr.DATA_M).state == pr.M
    assert l15_msg(pr.IM_W, pr.DATA_M).state == pr.M
    assert l15_msg(pr.SM_W, pr.ACK_M) == L15Result(pr.M, (), ("grant_in_place",))


def test_invalidation_acks_or_hands_over_data():
    for state in (pr.S, pr.E):
        res = l15_msg(state, pr.INV)
        assert res == L15Result(pr.I, ((pr.INV_ACK, False),), ("invalidate",))
    res = l15_msg(pr.M, pr.INV)
    assert res == L15Result(pr.I, ((pr.OWNER_DATA, True),), ("invalidate",))


def test_invalidation_racing_an_upgrade_downgrades_the_wait():
    res = l15_msg(pr.SM_W, pr.INV)
    assert res.state == pr.IM_W
    assert res.sends == ((pr.INV_ACK, False),)
    assert "pending_needs_data" in res.effects
    # ...and the home then answers with full data
    assert l15_msg(pr.IM_W, pr.DATA_M).state == pr.M


def test_invalidation_during_eviction_keeps_the_ack_wait():
    assert l15_msg(pr.SI_A, pr.INV).state == pr.II_A
    assert l15_msg(pr.EI_A, pr.INV).state == pr.II_A
    res = l15_msg(pr.MI_A, pr.INV)
    assert res.state == pr.II_A
    assert res.sends == ((pr.OWNER_DATA, True),)


def test_forwarded_read_demotes_the_owner():
    res = l15_msg(pr.M, pr.FWD_GETS)
    assert res == L15Result(pr.S, ((pr.OWNER_DATA, True),), ("demote",))
    res = l15_msg(pr.E, pr.FWD_GETS)
    assert res == L15Result(pr.S, ((pr.OWNER_DATA, False),), ("demote",))
    # during an eviction the tile answers as if it still held the block
    assert l15_msg(pr.MI_A, pr.FWD_GETS).state == pr.SI_A
    assert l15_msg(pr.EI_A, pr.FWD_GETS).sends == ((pr.OWNER_DATA, False),)


def test_forwarded_write_invalidates_the_owner():
    res = l15_msg(pr.M, pr.FWD_GETX)
    assert res == L15Result(pr.I, ((pr.OWNER_DATA, True),), ("invalidate",))
    assert l15_msg(pr.E, pr.FWD_GETX).state == pr.I
    assert l15_msg(pr.MI_A, pr.FWD_GETX).state == pr.II_A


def test_put_ack_completes_every_eviction_state():
    for state in pr.L15_EVICTING:
        assert l15_msg(state, pr.PUT_ACK) == L15Result(pr.I, (), ("evict_done",))
    with pytest.raises(UnexpectedMessage):
        l15_msg(pr.S, pr.PUT_ACK)


def test_unexpected_fill_raises_with_context():
    with pytest.raises(UnexpectedMessage) as exc:
        l15_msg(pr.S, pr.DATA_M)
    assert exc.value.where == "l15"
    assert exc.value.event == pr.DATA_M


def test_mutated_tables_misbehave_on_purpose():
    # dropped ack: the invalidation happens but nothing is sent home
    res = l15_msg(pr.S, pr.INV, mutations={"drop_invack"})
    assert res.state == pr.I and res.sends == ()
    # missing demotion: the owner stays writable after sharing its data
    res = l15_msg(pr.M, pr.FWD_GETS, mutations={"fwdgets_no_demote"})
    assert res.state == pr.M
    assert res.sends == ((pr.OWNER_DATA, True),)


# -- home directory: worked sequences ----------------------------------------------


def drive(block, *events, mutations=frozenset()):
    """Apply events in order, returning (block, list of per-event sends)."""
    sent = []
    for ev in events:
        block, sends, _effects = home_drive(block, ev, mutations)
        sent.append(sends)
    return block, sent


def test_cold_read_goes_through_memory():
    block, sends, effects = home_drive(HomeBlock.empty(), ("req", pr.GETS, 0))
    assert effects == ("alloc",)
    assert sends == ((pr.MEM_READ, pr.CHIPSET, None),)
    assert block.entry.busy == (pr.WAIT_MEM, 0, pr.DATA_E, 0)

    block, sends, effects = home_drive(block, ("resp", pr.MEM_DATA, pr.CHIPSET, False))
    assert sends == ((pr.DATA_E, 0, "arrived"),)
    assert block.entry == DirEntry("E", frozenset(), 0, None)
    assert "store_data" in effects


def test_second_reader_is_served_by_the_owner():
    block, _ = drive(HomeBlock.empty(),
                     ("req", pr.GETS, 0),
                     ("resp", pr.MEM_DATA, pr.CHIPSET, False))
    block, sends, _ = home_drive(block, ("req", pr.GETS, 1))
    assert sends == ((pr.FWD_GETS, 0, None),)
    assert block.entry.busy == (pr.WAIT_OWNER, 1, pr.DATA_S, 0)

    block, sends, effects = home_drive(block, ("resp", pr.OWNER_DATA, 0, True))
    # dirty owner data is both granted onward and written back
    assert sends == ((pr.DATA_S, 1, "arrived"), (pr.MEM_WRITE, pr.CHIPSET, "arrived"))
    assert block.entry == DirEntry("S", frozenset({0, 1}), pr.NOBODY, None)
    assert "store_data" in effects


def test_upgrade_collects_acks_before_granting():
    block = HomeBlock(DirEntry("S", frozenset({0, 1, 2}), pr.NOBODY, None), ())
    block, sends, _ = home_drive(block, ("req", pr.UPGRADE, 0))
    assert sends == ((pr.INV, 1, None), (pr.INV, 2, None))
    assert block.entry.busy == (pr.WAIT_ACKS, 0, pr.ACK_M, 2)

    block, sends, _ = home_drive(block, ("resp", pr.INV_ACK, 1, False))
    assert sends == ()
    block, sends, _ = home_drive(block, ("resp", pr.INV_ACK, 2, False))
    assert sends == ((pr.ACK_M, 0, None),)
    assert block.entry == DirEntry("E", frozenset(), 0, None)


def test_upgrade_from_an_invalidated_sharer_needs_data():
    # tile 0 already fell out of the sharer list when its Upgrade arrives
    block = HomeBlock(DirEntry("S", frozenset({1}), pr.NOBODY, None), ())
    block, sends, _ = home_drive(block, ("req", pr.UPGRADE, 0))
    assert sends == ((pr.INV, 1, None),)
    assert block.entry.busy == (pr.WAIT_ACKS, 0, pr.DATA_M, 1)
    block, sends, _ = home_drive(block, ("resp", pr.INV_ACK, 1, False))
    assert sends == ((pr.DATA_M, 0, "l2"),)


def test_sole_sharer_upgrade_grants_immediately():
    block = HomeBlock(DirEntry("S", frozenset({3}), pr.NOBODY, None), ())
    block, sends, _ = home_drive(block, ("req", pr.UPGRADE, 3))
    assert sends == ((pr.ACK_M, 3, None),)
    assert block.entry.busy is None
    assert block.entry.owner == 3


def test_dirty_writeback_frees_the_entry():
    block = HomeBlock(DirEntry("E", frozenset(), 2, None), ())
    block, sends, effects = home_drive(block, ("req", pr.PUTM, 2))
    assert sends == ((pr.PUT_ACK, 2, None), (pr.MEM_WRITE, pr.CHIPSET, "arrived"))
    assert block.entry is None
    assert effects == ("store_data", "free")


def test_stale_puts_are_acked_without_state_change():
    # to a vanished entry
    block, sends, effects = home_drive(HomeBlock.empty(), ("req", pr.PUTS, 1))
    assert sends == ((pr.PUT_ACK, 1, None),) and "stale_put" in effects
    # from a tile that is not a sharer
    entry = DirEntry("S", frozenset({0}), pr.NOBODY, None)
    block, sends, effects = home_drive(HomeBlock(entry, ()), ("req", pr.PUTE, 5))
    assert block.entry == entry and "stale_put" in effects
    # from a non-owner while exclusive
    entry = DirEntry("E", frozenset(), 0, None)
    block, _, effects = home_drive(HomeBlock(entry, ()), ("req", pr.PUTM, 4))
    assert block.entry == entry and "stale_put" in effects


def test_owner_never_sends_a_shared_put():
    entry = DirEntry("E", frozenset(), 0, None)
    with pytest.raises(UnexpectedMessage):
        dir_request(entry, pr.PUTS, 0)


def test_last_sharer_put_frees_the_entry():
    block = HomeBlock(DirEntry("S", frozenset({0, 1}), pr.NOBODY, None), ())
    block, _, effects = home_drive(block, ("req", pr.PUTS, 0))
    assert block.entry.sharers == frozenset({1}) and "free" not in effects
    block, _, effects = home_drive(block, ("req", pr.PUTS, 1))
    assert block.entry is None and "free" in effects


# -- deferral and replay -----------------------------------------------------------


def test_requests_against_a_busy_entry_are_deferred_then_replayed():
    block, sends, effects = home_drive(HomeBlock.empty(), ("req", pr.GETS, 0))
    block, sends, effects = home_drive(block, ("req", pr.GETX, 1))
    assert effects == ("deferred",)
    assert sends == ()
    assert block.queue == ((pr.GETX, 1),)

    # memory data completes the first request and immediately replays the
    # second, which forwards to the new owner
    block, sends, effects = home_drive(block, ("resp", pr.MEM_DATA, pr.CHIPSET, False))
    assert sends == ((pr.DATA_E, 0, "arrived"), (pr.FWD_GETX, 0, None))
    assert block.queue == ()
    assert block.entry.busy == (pr.WAIT_OWNER, 1, pr.DATA_M, 0)


def test_replay_stops_when_the_entry_goes_busy_again():
    block = HomeBlock.empty()
    block, _, _ = home_drive(block, ("req", pr.GETS, 0))
    for tile in (1, 2):
        block, _, _ = home_drive(block, ("req", pr.GETX, tile))
    assert block.queue == ((pr.GETX, 1), (pr.GETX, 2))
    block, _, _ = home_drive(block, ("resp", pr.MEM_DATA, pr.CHIPSET, False))
    # first deferred request replayed, second still waiting
    assert block.queue == ((pr.GETX, 2),)


def test_home_eviction_invalidates_all_holders():
    block = HomeBlock(DirEntry("S", frozenset({0, 2}), pr.NOBODY, None), ())
    block, sends, _ = home_drive(block, ("evict",))
    assert sends == ((pr.INV, 0, None), (pr.INV, 2, None))
    assert block.entry.busy == (pr.WAIT_EVICT, pr.NOBODY, "", 2)
    block, sends, _ = home_drive(block, ("resp", pr.INV_ACK, 0, False))
    block, sends, effects = home_drive(block, ("resp", pr.INV_ACK, 2, False))
    assert block.entry is None and "free" in effects


def test_home_eviction_of_a_dirty_owner_writes_back():
    block = HomeBlock(DirEntry("E", frozenset(), 1, None), ())
    block, sends, _ = home_drive(block, ("evict",))
    assert sends == ((pr.INV, 1, None),)
    block, sends, effects = home_drive(block, ("resp", pr.OWNER_DATA, 1, True))
    assert sends == ((pr.MEM_WRITE, pr.CHIPSET, "arrived"),)
    assert block.entry is None and "free" in effects


def test_evicting_a_busy_entry_is_unreachable():
    entry = DirEntry("E", frozenset(), 0, (pr.WAIT_OWNER, 1, pr.DATA_S, 0))
    with pytest.raises(UnexpectedMessage):
        dir_evict(entry)


def test_skip_invack_wait_grants_without_collecting_acks():
    block = HomeBlock(DirEntry("S", frozenset({0, 1}), pr.NOBODY, None), ())
    block, sends, _ = home_drive(block, ("req", pr.GETX, 2),
                                 mutations={"skip_invack_wait"})
    assert sends == ((pr.INV, 0, None), (pr.INV, 1, None), (pr.DATA_M, 2, "l2"))
    assert block.entry.busy is None      # never waits
    assert block.entry.owner == 2


def test_responses_to_an_idle_entry_are_unreachable():
    with pytest.raises(UnexpectedMessage):
        dir_response(None, pr.INV_ACK, 0)
    with pytest.raises(UnexpectedMessage):
        dir_response(DirEntry("E", frozenset(), 0, None), pr.MEM_DATA, pr.CHIPSET)


def test_bad_home_event_tag_rejected():
    with pytest.raises(ValueError):
        home_drive(HomeBlock.empty(), ("poke", 1))


# -- table closure (property) ------------------------------------------------------

ALL_L15_STATES = pr.STABLE + pr.L15_PENDING + pr.L15_EVICTING
L15_EVENTS = ("load", "store", "evict", pr.DATA_S, pr.DATA_E, pr.DATA_M,
              pr.ACK_M, pr.INV, pr.FWD_GETS, pr.FWD_GETX, pr.PUT_ACK)


@given(state=st.sampled_from(ALL_L15_STATES),
       event=st.sampled_from(L15_EVENTS),
       muts=st.sets(st.sampled_from(pr.MUTATIONS)))
def test_l15_tables_stay_inside_the_state_space(state, event, muts):
    fn = l15_core_op if event in ("load", "store", "evict") else l15_msg
    try:
        res = fn(state, event, mutations=frozenset(muts))
    except UnexpectedMessage:
        return
    assert res.state in ALL_L15_STATES
    for kind, dirty in res.sends:
        assert kind in pr.NET_OF_KIND
        assert isinstance(dirty, bool)
