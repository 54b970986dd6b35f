"""MESI transition tables, shared by the timed simulator and the model checker.

The protocol is home-centric and directory-based. Per block there is one home
tile (its shared-L2 slice) and up to one private L1.5 copy per tile. All data
headed to a new holder flows through the home; invalidation acks are collected
at the home. Messages ride three networks: requests (net 1), forwards/grants
from the home (net 2), and acks/owner-data/memory replies (net 3). Delivery
is FIFO per (src, dst, net); the tables rely on exactly one consequence of
that: a grant sent by the home reaches the requester before any later forward
or Inv the home sends it, so a tile never sees a forward for a block it is
still waiting to receive.

Everything here is pure: a (state, event) pair maps to a new state, messages
to emit, and effect tags the caller interprets (with real data and timing in
the simulator, with version tokens in the checker). Named mutations each break
one table entry so detection can be demonstrated.
"""

from typing import NamedTuple, Optional

# Message kinds. Net assignment is a total function of the kind.
GETS, GETX, UPGRADE, PUTS, PUTE, PUTM = "GetS", "GetX", "Upgrade", "PutS", "PutE", "PutM"
FWD_GETS, FWD_GETX, INV = "FwdGetS", "FwdGetX", "Inv"
DATA_S, DATA_E, DATA_M, ACK_M, PUT_ACK = "DataS", "DataE", "DataM", "AckM", "PutAck"
MEM_READ, MEM_WRITE = "MemRead", "MemWrite"
INV_ACK, OWNER_DATA, MEM_DATA = "InvAck", "OwnerData", "MemData"

NET_OF_KIND = {
    GETS: 1, GETX: 1, UPGRADE: 1, PUTS: 1, PUTE: 1, PUTM: 1,
    FWD_GETS: 2, FWD_GETX: 2, INV: 2, DATA_S: 2, DATA_E: 2, DATA_M: 2,
    ACK_M: 2, PUT_ACK: 2, MEM_READ: 2, MEM_WRITE: 2,
    INV_ACK: 3, OWNER_DATA: 3, MEM_DATA: 3,
}

DATA_KINDS = frozenset({DATA_S, DATA_E, DATA_M, PUTM, MEM_DATA, MEM_WRITE, OWNER_DATA})

MUTATIONS = ("skip_invack_wait", "fwdgets_no_demote", "drop_invack")

# L1.5 per-block protocol states.
I, S, E, M = "I", "S", "E", "M"
IS_D = "IS_D"    # GetS sent, data pending
IM_D = "IM_D"    # GetX sent, data pending
SM_W = "SM_W"    # Upgrade sent, copy still valid, AckM pending
IM_W = "IM_W"    # Upgrade raced with an Inv; DataM now expected
SI_A, EI_A, MI_A = "SI_A", "EI_A", "MI_A"   # Put sent, ack pending, respond as-if-held
II_A = "II_A"    # Put sent, holder role already consumed by a forward/Inv

STABLE = (I, S, E, M)
L15_PENDING = (IS_D, IM_D, SM_W, IM_W)
L15_EVICTING = (SI_A, EI_A, MI_A, II_A)


class UnexpectedMessage(RuntimeError):
    """A (state, event) pair the protocol declares unreachable."""

    def __init__(self, where, state, event):
        self.where, self.state, self.event = where, state, event
        super().__init__(f"{where}: state {state} cannot take {event}")


class L15Result(NamedTuple):
    state: str
    sends: tuple     # of (kind, dirty) — destination is always the block's home
    effects: tuple   # tags for the caller


def l15_core_op(state: str, op: str, mutations=frozenset()) -> L15Result:
    """Core-side op ('load' | 'store' | 'evict') against a block's state.

    Callers only present ops to stable states: transient blocks merge into
    the outstanding entry instead (simulator MSHRs / checker one-op cores).
    """
    if op == "load":
        if state == I:
            return L15Result(IS_D, ((GETS, False),), ("miss",))
        if state in (S, E, M):
            return L15Result(state, (), ("hit_load",))
    elif op == "store":
        if state == I:
            return L15Result(IM_D, ((GETX, False),), ("miss",))
        if state == S:
            return L15Result(SM_W, ((UPGRADE, False),), ("miss",))
        if state in (E, M):
            return L15Result(M, (), ("hit_store",))   # E->M is silent
    elif op == "evict":
        if state == S:
            return L15Result(SI_A, ((PUTS, False),), ("evict_start",))
        if state == E:
            return L15Result(EI_A, ((PUTE, False),), ("evict_start",))
        if state == M:
            return L15Result(MI_A, ((PUTM, True),), ("evict_start",))
    raise UnexpectedMessage("l15", state, op)


def l15_msg(state: str, kind: str, mutations=frozenset()) -> L15Result:
    """Network message arriving at an L1.5 for one block."""
    if kind == DATA_S:
        if state == IS_D:
            return L15Result(S, (), ("fill",))
    elif kind == DATA_E:
        if state == IS_D:
            return L15Result(E, (), ("fill",))
    elif kind == DATA_M:
        if state in (IM_D, IM_W):
            return L15Result(M, (), ("fill",))
    elif kind == ACK_M:
        if state == SM_W:
            return L15Result(M, (), ("grant_in_place",))
    elif kind == INV:
        dropped = "drop_invack" in mutations
        if state in (S, E):
            return L15Result(I, () if dropped else ((INV_ACK, False),), ("invalidate",))
        if state == M:
            return L15Result(I, () if dropped else ((OWNER_DATA, True),), ("invalidate",))
        if state == SM_W:
            # Our Upgrade lost the race; the home will answer it with DataM.
            return L15Result(IM_W, () if dropped else ((INV_ACK, False),),
                             ("invalidate", "pending_needs_data"))
        if state in (SI_A, EI_A):
            return L15Result(II_A, () if dropped else ((INV_ACK, False),), ("invalidate",))
        if state == MI_A:
            return L15Result(II_A, () if dropped else ((OWNER_DATA, True),), ("invalidate",))
    elif kind == FWD_GETS:
        if state == M:
            if "fwdgets_no_demote" in mutations:
                return L15Result(M, ((OWNER_DATA, True),), ())
            return L15Result(S, ((OWNER_DATA, True),), ("demote",))
        if state == E:
            return L15Result(S, ((OWNER_DATA, False),), ("demote",))
        if state == MI_A:   # respond as if still held; stay a nominal sharer
            return L15Result(SI_A, ((OWNER_DATA, True),), ())
        if state == EI_A:
            return L15Result(SI_A, ((OWNER_DATA, False),), ())
    elif kind == FWD_GETX:
        if state == M:
            return L15Result(I, ((OWNER_DATA, True),), ("invalidate",))
        if state == E:
            return L15Result(I, ((OWNER_DATA, False),), ("invalidate",))
        if state == MI_A:
            return L15Result(II_A, ((OWNER_DATA, True),), ("invalidate",))
        if state == EI_A:
            return L15Result(II_A, ((OWNER_DATA, False),), ("invalidate",))
    elif kind == PUT_ACK:
        if state in L15_EVICTING:
            return L15Result(I, (), ("evict_done",))
    raise UnexpectedMessage("l15", state, kind)


# ---------------------------------------------------------------------------
# Home directory. Stable states per block: U (no entry), S (readers with the
# L2 copy current and memory clean), E (one owner tile, possibly dirty).
# A busy entry defers later requests into a FIFO replayed on completion; the
# FIFO lives beside the entry so it survives deallocation (last Put frees the
# entry while deferred requests may still want the block back).

WAIT_MEM, WAIT_ACKS, WAIT_OWNER, WAIT_EVICT = "mem", "acks", "owner", "evict"

NOBODY = -1
CHIPSET = -2   # send-destination sentinel; callers map it to the memory node


class DirEntry(NamedTuple):
    state: str             # 'S' or 'E'
    sharers: frozenset
    owner: int
    # busy = (wait, requester, grant, acks_left); grant is the completion
    # message kind for the waited-on requester, '' for evictions.
    busy: Optional[tuple]


class DirResult(NamedTuple):
    entry: Optional[DirEntry]
    sends: tuple           # of (kind, dst, data_src); data_src in {None,'l2','arrived'}
    effects: tuple
    deferred: bool = False


def dir_request(entry: Optional[DirEntry], kind: str, src: int,
                mutations=frozenset()) -> DirResult:
    if entry is not None and entry.busy is not None:
        return DirResult(entry, (), (), deferred=True)

    if entry is None:   # state U
        if kind in (GETS, GETX, UPGRADE):
            grant = DATA_E if kind == GETS else DATA_M
            busy = (WAIT_MEM, src, grant, 0)
            return DirResult(DirEntry(E, frozenset(), NOBODY, busy),
                             ((MEM_READ, CHIPSET, None),), ("alloc",))
        if kind in (PUTS, PUTE, PUTM):
            return DirResult(None, ((PUT_ACK, src, None),), ("stale_put",))
        raise UnexpectedMessage("dir", "U", kind)

    if entry.state == S:
        if kind == GETS:
            return DirResult(entry._replace(sharers=entry.sharers | {src}),
                             ((DATA_S, src, "l2"),), ())
        if kind in (GETX, UPGRADE):
            # An Upgrade from a tile no longer in the sharer list raced with
            # an earlier invalidation and needs data like a GetX.
            grant = ACK_M if (kind == UPGRADE and src in entry.sharers) else DATA_M
            targets = sorted(entry.sharers - {src})
            grant_send = (grant, src, "l2" if grant == DATA_M else None)
            if not targets:
                return DirResult(DirEntry(E, frozenset(), src, None), (grant_send,), ())
            sends = tuple((INV, t, None) for t in targets)
            if "skip_invack_wait" in mutations:
                # Broken table: grant without collecting the acks.
                return DirResult(DirEntry(E, frozenset(), src, None),
                                 sends + (grant_send,), ())
            busy = (WAIT_ACKS, src, grant, len(targets))
            return DirResult(entry._replace(busy=busy), sends, ())
        if kind in (PUTS, PUTE, PUTM):
            if src not in entry.sharers:
                return DirResult(entry, ((PUT_ACK, src, None),), ("stale_put",))
            left = entry.sharers - {src}
            # A racing PutM payload is stale here: the forward that demoted the
            # writer already brought its data home. Never write it back.
            if not left:
                return DirResult(None, ((PUT_ACK, src, None),), ("free",))
            return DirResult(entry._replace(sharers=left), ((PUT_ACK, src, None),), ())
        raise UnexpectedMessage("dir", S, kind)

    # entry.state == E
    if kind == GETS:
        busy = (WAIT_OWNER, src, DATA_S, 0)
        return DirResult(entry._replace(busy=busy),
                         ((FWD_GETS, entry.owner, None),), ())
    if kind in (GETX, UPGRADE):
        busy = (WAIT_OWNER, src, DATA_M, 0)
        return DirResult(entry._replace(busy=busy),
                         ((FWD_GETX, entry.owner, None),), ())
    if kind in (PUTS, PUTE, PUTM):
        if src != entry.owner:
            return DirResult(entry, ((PUT_ACK, src, None),), ("stale_put",))
        if kind == PUTS:
            raise UnexpectedMessage("dir", E, "PutS from owner")
        sends = ((PUT_ACK, src, None),)
        if kind == PUTM:
            return DirResult(None, sends + ((MEM_WRITE, CHIPSET, "arrived"),),
                             ("store_data", "free"))
        return DirResult(None, sends, ("free",))
    raise UnexpectedMessage("dir", E, kind)


def dir_response(entry: Optional[DirEntry], kind: str, src: int, dirty: bool = False,
                 mutations=frozenset()) -> DirResult:
    """InvAck / OwnerData / MemData arriving at a busy entry."""
    if entry is None or entry.busy is None:
        raise UnexpectedMessage("dir", "idle", kind)
    wait, requester, grant, acks_left = entry.busy

    if kind == INV_ACK or (kind == OWNER_DATA and wait == WAIT_EVICT):
        if wait not in (WAIT_ACKS, WAIT_EVICT):
            raise UnexpectedMessage("dir", entry.state, kind)
        sends = ()
        if kind == OWNER_DATA and dirty:
            sends = ((MEM_WRITE, CHIPSET, "arrived"),)
        acks_left -= 1
        if acks_left > 0:
            return DirResult(entry._replace(busy=(wait, requester, grant, acks_left)),
                             sends, ())
        if wait == WAIT_EVICT:
            return DirResult(None, sends, ("free",))
        grant_send = (grant, requester, "l2" if grant == DATA_M else None)
        return DirResult(DirEntry(E, frozenset(), requester, None),
                         sends + (grant_send,), ())

    if kind == OWNER_DATA:
        if wait != WAIT_OWNER:
            raise UnexpectedMessage("dir", entry.state, kind)
        if grant == DATA_S:
            sends = ((DATA_S, requester, "arrived"),)
            if dirty:
                sends += ((MEM_WRITE, CHIPSET, "arrived"),)
            new = DirEntry(S, frozenset({entry.owner, requester}), NOBODY, None)
            return DirResult(new, sends, ("store_data",))
        new = DirEntry(E, frozenset(), requester, None)
        return DirResult(new, ((DATA_M, requester, "arrived"),), ("store_data",))

    if kind == MEM_DATA:
        if wait != WAIT_MEM:
            raise UnexpectedMessage("dir", entry.state, kind)
        new = DirEntry(E, frozenset(), requester, None)
        return DirResult(new, ((grant, requester, "arrived"),), ("store_data",))

    raise UnexpectedMessage("dir", entry.state, kind)


def dir_evict(entry: DirEntry) -> DirResult:
    """Home-initiated inclusive eviction of a non-busy entry."""
    if entry.busy is not None:
        raise UnexpectedMessage("dir", entry.state, "evict while busy")
    targets = sorted(entry.sharers) if entry.state == S else [entry.owner]
    if not targets:
        return DirResult(None, (), ("free",))
    busy = (WAIT_EVICT, NOBODY, "", len(targets))
    return DirResult(entry._replace(busy=busy),
                     tuple((INV, t, None) for t in targets), ())


class HomeBlock(NamedTuple):
    """Directory entry plus its deferred-request FIFO."""

    entry: Optional[DirEntry]
    queue: tuple               # of (kind, src)

    @classmethod
    def empty(cls):
        return cls(None, ())


def home_drive(block: HomeBlock, event: tuple, mutations=frozenset()):
    """Apply one home-side event and replay deferred requests to completion.

    event: ('req', kind, src) | ('resp', kind, src, dirty) | ('evict',).
    Returns (HomeBlock, sends, effects) where sends/effects concatenate those
    of the event and of every replayed request, in order. data_src tags in
    sends refer to the payload situation at that step: 'arrived' means the
    payload of the message that produced the step.
    """
    entry, queue = block
    sends = []
    effects = []

    def apply(res: DirResult):
        nonlocal entry
        entry = res.entry
        sends.extend(res.sends)
        effects.extend(res.effects)

    tag, *rest = event
    if tag == "req":
        kind, src = rest
        res = dir_request(entry, kind, src, mutations)
        if res.deferred:
            return HomeBlock(entry, queue + ((kind, src),)), (), ("deferred",)
        apply(res)
    elif tag == "resp":
        kind, src, dirty = rest
        apply(dir_response(entry, kind, src, dirty, mutations))
    elif tag == "evict":
        apply(dir_evict(entry))
    else:
        raise ValueError(f"bad home event {event!r}")

    # Replay deferred requests now that the entry is quiescent. A replayed
    # request may make it busy again (or re-allocate a freed entry), which
    # stops the loop with the remainder still queued.
    while queue and (entry is None or entry.busy is None):
        kind, src = queue[0]
        res = dir_request(entry, kind, src, mutations)
        if res.deferred:
            break
        queue = queue[1:]
        apply(res)
    return HomeBlock(entry, queue), tuple(sends), tuple(effects)
