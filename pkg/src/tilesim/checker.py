"""Exhaustive model checker for the coherence protocol.

Explores every interleaving of core requests, invalidation/forward
deliveries, and home-side evictions against the transition tables in
protocol.py, with latencies abstracted away: messages travel in FIFO order
per (source, destination, network, block) - the ordering the NoC guarantees
that the protocol actually relies on - and the nondeterminism is which
enabled action fires next. Data values are per-block store version tokens,
so the data-value invariant is checked exactly. Capacity pressure is
modeled by explicit budgeted eviction actions rather than cache geometry.

Checks, on every reachable state:
  * single-writer/multiple-reader over the request-side states,
  * every readable copy carries the latest serialized store token (this is
    the value any load hit would observe), and every load miss fills with it,
  * no UnexpectedMessage (the tables' unreachability claims hold),
  * directory accuracy whenever a block is quiescent,
  * no deadlock: every terminal state has all ops done and nothing in flight.

A breadth-first search with parent links yields a minimal counterexample
trace when a check fails.

State-space reductions, each argued via commutation with every other
enabled action so the checked properties are preserved:

* Responses to a home (net 3) and chipset messages only mutate home/memory
  bookkeeping, never an L1.5 state; requests racing them are deferred to
  the same per-block FIFO either way. Drained eagerly in a fixed order.
* Grants and PutAck (net 2) are drained eagerly too: the receiving tile has
  a pending op or completed eviction (no competing local issue), any Inv or
  forward for the same block sits behind the grant in the same FIFO channel,
  and no store to the block can serialize elsewhere while a grant is in
  flight, so the completion's value check is interleaving-independent.
  Invs and forwards stay branched - their order against local issues is the
  hit-versus-miss race that must be explored.
* Requests are delivered to the home at issue time ("fused"): a tile with a
  request in flight has no other observable behavior, so arrival orders
  beyond issue order are covered by issue interleaving; per-channel FIFO is
  preserved because fusion keeps the tile's request channel empty. Races
  against a busy home still branch through the home's per-block FIFO queue.
* Loads that would hit are not enumerated as actions; the freshness check
  above subsumes them and frees op budget for deeper protocol behavior.
* Stores that hit Modified are not enumerated either: after token
  renumbering they leave every checked component unchanged except a lower
  remaining-op budget, and a lower budget only removes behaviors.
* Store version tokens are renumbered order-preservingly per block, merging
  states that differ only in absolute serial values.
* States are canonicalized under the renamings of tiles and blocks that
  preserve the home assignment; counterexample traces are mapped back to
  the original frame when reported.
"""

import itertools
import pickle
from array import array
from dataclasses import dataclass
from hashlib import blake2b
from typing import Optional

from . import protocol as pr

# Index tables keep states as small tuples of ints.
RS = [pr.I, pr.S, pr.E, pr.M, pr.IS_D, pr.IM_D, pr.SM_W, pr.IM_W]
RS_IDX = {s: i for i, s in enumerate(RS)}
WS = [None, pr.SI_A, pr.EI_A, pr.MI_A, pr.II_A]
WS_IDX = {s: i for i, s in enumerate(WS)}
KINDS = [pr.GETS, pr.GETX, pr.UPGRADE, pr.PUTS, pr.PUTE, pr.PUTM,
         pr.FWD_GETS, pr.FWD_GETX, pr.INV, pr.DATA_S, pr.DATA_E, pr.DATA_M,
         pr.ACK_M, pr.PUT_ACK, pr.MEM_READ, pr.MEM_WRITE,
         pr.INV_ACK, pr.OWNER_DATA, pr.MEM_DATA]
KIND_IDX = {k: i for i, k in enumerate(KINDS)}
REQUEST_KINDS = frozenset((pr.GETS, pr.GETX, pr.UPGRADE,
                           pr.PUTS, pr.PUTE, pr.PUTM))
WAITS = [None, pr.WAIT_MEM, pr.WAIT_ACKS, pr.WAIT_OWNER, pr.WAIT_EVICT]
WAIT_IDX = {w: i for i, w in enumerate(WAITS)}
GRANTS = ["", pr.DATA_S, pr.DATA_E, pr.DATA_M, pr.ACK_M]
GRANT_IDX = {g: i for i, g in enumerate(GRANTS)}

NO_TOKEN = -1
OPS = [None, "load", "store", "evict"]
# Net-2 kinds that are safe to deliver eagerly (see module docstring).
URGENT_NET2 = frozenset((KIND_IDX[pr.DATA_S], KIND_IDX[pr.DATA_E],
                         KIND_IDX[pr.DATA_M], KIND_IDX[pr.ACK_M],
                         KIND_IDX[pr.PUT_ACK]))


def _pack_act(act) -> int:
    """Squeeze an action tuple into one small int (search bookkeeping)."""
    if act[0] == "issue":
        _, t, op_i, b = act
        return 0 | t << 2 | op_i << 6 | b << 10
    if act[0] == "hevict":
        return 1 | act[1] << 2
    _, src, dst, net, block = act
    return 2 | src << 2 | dst << 6 | net << 10 | block << 12


def _unpack_act(n: int):
    tag = n & 3
    if tag == 0:
        return ("issue", n >> 2 & 15, n >> 6 & 15, n >> 10 & 3)
    if tag == 1:
        return ("hevict", n >> 2)
    return ("deliver", n >> 2 & 15, n >> 6 & 15, n >> 10 & 3, n >> 12)


class StateSpaceBoundExceeded(RuntimeError):
    pass


@dataclass
class Violation:
    kind: str          # swmr | data_value | unexpected_message | deadlock | directory
    message: str
    trace: list        # human-readable action lines from the initial state


@dataclass
class CheckResult:
    ok: bool
    states: int
    transitions: int
    violation: Optional[Violation]
    config: dict

    def __bool__(self):
        return self.ok


class _Model:
    """Mutable working copy of one state."""

    __slots__ = ("cores", "l15", "homes", "queues", "l2tok", "memtok", "cur",
                 "hbudget", "chan", "pushed")

    def __init__(self, state):
        cores, l15, homes, chan = state
        self.pushed = []
        self.cores = [list(c) for c in cores]
        self.l15 = [[list(b) for b in t] for t in l15]
        self.homes = []
        self.queues = []
        self.l2tok = []
        self.memtok = []
        self.cur = []
        self.hbudget = []
        for (entry, queue, l2t, memt, cur, hb) in homes:
            self.homes.append(entry)      # encoded tuple or None
            self.queues.append(list(queue))
            self.l2tok.append(l2t)
            self.memtok.append(memt)
            self.cur.append(cur)
            self.hbudget.append(hb)
        self.chan = {key: list(msgs) for key, msgs in chan}

    def encode(self):
        B = len(self.homes)
        # Renumber live tokens per block, order-preservingly.
        live = [set() for _ in range(B)]
        for tile in self.l15:
            for b in range(B):
                slot = tile[b]
                if slot[1] >= 0:
                    live[b].add(slot[1])
                if slot[3] >= 0:
                    live[b].add(slot[3])
        for b in range(B):
            if self.l2tok[b] >= 0:
                live[b].add(self.l2tok[b])
            live[b].add(self.memtok[b])
            live[b].add(self.cur[b])
        for key, msgs in self.chan.items():
            for msg in msgs:
                if msg[3] >= 0:
                    live[key[3]].add(msg[3])
        rank = [{tok: i for i, tok in enumerate(sorted(s))} for s in live]

        def rk(b, tok):
            return rank[b][tok] if tok >= 0 else NO_TOKEN

        l15 = tuple(tuple((s[0], rk(b, s[1]), s[2], rk(b, s[3]))
                          for b, s in enumerate(tile)) for tile in self.l15)
        homes = tuple((self.homes[b], tuple(self.queues[b]),
                       rk(b, self.l2tok[b]), rk(b, self.memtok[b]),
                       rk(b, self.cur[b]), self.hbudget[b])
                      for b in range(B))
        chan = tuple(sorted(
            (key, tuple((m[0], m[1], m[2], rk(key[3], m[3]), m[4]) for m in msgs))
            for key, msgs in self.chan.items() if msgs))
        return (tuple(tuple(c) for c in self.cores), l15, homes, chan)

    def push(self, src, dst, net, kind_i, block, token, dirty):
        key = (src, dst, net, block)
        msg = (kind_i, block, src, token, dirty)
        lst = self.chan.get(key)
        if lst is None:
            self.chan[key] = [msg]
            self.pushed.append(key)   # new head: may become urgent
        else:
            lst.append(msg)


# Directory entry states as ints (keys must be identity-free for stable
# serialization; see the determinism test in the suite).
ESTATES = [None, pr.S, pr.E]
ESTATE_IDX = {pr.S: 1, pr.E: 2}


def _entry_decode(enc):
    if enc is None:
        return None
    estate, sharers, owner, bwait, breq, bgrant, backs = enc
    busy = None
    if bwait:
        busy = (WAITS[bwait], breq, GRANTS[bgrant], backs)
    return pr.DirEntry(ESTATES[estate], frozenset(sharers), owner, busy)


def _entry_encode(entry):
    if entry is None:
        return None
    if entry.busy is None:
        bwait, breq, bgrant, backs = 0, pr.NOBODY, 0, 0
    else:
        wait, breq, grant, backs = entry.busy
        bwait, bgrant = WAIT_IDX[wait], GRANT_IDX[grant]
    return (ESTATE_IDX[entry.state], tuple(sorted(entry.sharers)), entry.owner,
            bwait, breq, bgrant, backs)


class _Checker:
    def __init__(self, tiles, blocks, max_ops, mutations, include_evicts,
                 home_evicts, max_states, use_symmetry=True, progress=None):
        self.T = tiles
        self.B = blocks
        self.max_ops = max_ops
        self.mut = frozenset(mutations)
        self.include_evicts = include_evicts
        self.home_evicts = home_evicts
        self.max_states = max_states
        self.chipset = tiles
        self.progress = progress
        self.perms = self._automorphisms() if use_symmetry else \
            [(tuple(range(tiles)), tuple(range(blocks)))]

    def home_of(self, block):
        return block % self.T

    def _automorphisms(self):
        """Tile/block renamings that commute with the home assignment."""
        out = []
        for pt in itertools.permutations(range(self.T)):
            for pb in itertools.permutations(range(self.B)):
                if all(pt[b % self.T] == pb[b] % self.T for b in range(self.B)):
                    out.append((pt, pb))
        return out

    def initial(self):
        cores = tuple((self.max_ops, 0, 0) for _ in range(self.T))
        l15 = tuple(tuple((RS_IDX[pr.I], NO_TOKEN, 0, NO_TOKEN)
                          for _ in range(self.B)) for _ in range(self.T))
        homes = tuple((None, (), NO_TOKEN, 0, 0, self.home_evicts)
                      for _ in range(self.B))
        return (cores, l15, homes, ())

    # -- symmetry ----------------------------------------------------------

    def _node(self, perm_t, node):
        return node if node == self.chipset else perm_t[node]

    def _permute(self, state, perm):
        pt, pb = perm
        cores, l15, homes, chan = state
        ncores = [None] * self.T
        nl15 = [None] * self.T
        for t in range(self.T):
            bud, op, blk = cores[t]
            ncores[pt[t]] = (bud, op, pb[blk] if op else 0)
            row = [None] * self.B
            for b in range(self.B):
                row[pb[b]] = l15[t][b]
            nl15[pt[t]] = tuple(row)
        nhomes = [None] * self.B
        for b in range(self.B):
            entry, queue, l2t, memt, cur, hb = homes[b]
            if entry is not None:
                estate, sharers, owner, bwait, breq, bgrant, backs = entry
                entry = (estate, tuple(sorted(pt[s] for s in sharers)),
                         pt[owner] if owner >= 0 else owner, bwait,
                         pt[breq] if breq >= 0 else breq, bgrant, backs)
            queue = tuple((k, pt[src]) for k, src in queue)
            nhomes[pb[b]] = (entry, queue, l2t, memt, cur, hb)
        nchan = []
        for (src, dst, net, blk), msgs in chan:
            key = (self._node(pt, src), self._node(pt, dst), net, pb[blk])
            nchan.append((key, tuple((m[0], pb[m[1]], self._node(pt, m[2]),
                                      m[3], m[4]) for m in msgs)))
        return (tuple(ncores), tuple(nl15), tuple(nhomes), tuple(sorted(nchan)))

    def canonical(self, raw):
        """Minimal serialized form over the automorphism group."""
        best = pickle.dumps(raw, 5)
        best_i = 0
        for i in range(1, len(self.perms)):
            cand = pickle.dumps(self._permute(raw, self.perms[i]), 5)
            if cand < best:
                best, best_i = cand, i
        return best, best_i

    # -- successor generation ------------------------------------------------

    def actions(self, state):
        cores, l15, homes, chan = state
        acts = []
        for t in range(self.T):
            budget, pend_op, _ = cores[t]
            if budget <= 0 or pend_op:
                continue
            for b in range(self.B):
                rs = RS[l15[t][b][0]]
                ws = l15[t][b][2]
                if rs == pr.I:
                    acts.append(("issue", t, 1, b))   # load (would miss)
                if rs != pr.M:
                    acts.append(("issue", t, 2, b))   # store (absorbed on M)
                if self.include_evicts and ws == 0 and rs in (pr.S, pr.E, pr.M):
                    acts.append(("issue", t, 3, b))
        for b in range(self.B):
            entry = homes[b][0]
            if homes[b][5] > 0 and entry is not None and entry[3] == 0:
                acts.append(("hevict", b))
        for key, _msgs in chan:
            acts.append(("deliver",) + key)
        return acts

    def apply(self, state, act):
        """Returns (new_state, violation_or_None). UnexpectedMessage surfaces
        as a violation."""
        m = _Model(state)
        try:
            if act[0] == "issue":
                v = self._issue(m, act[1], act[2], act[3])
            elif act[0] == "hevict":
                m.hbudget[act[1]] -= 1
                v = self._home_event(m, self.home_of(act[1]), act[1],
                                     ("evict",), NO_TOKEN)
            else:
                v = self._deliver(m, act[1:])
            if v is None:
                v = self._drain_urgent(m)
        except pr.UnexpectedMessage as e:
            return None, ("unexpected_message", str(e))
        if v:
            return None, v
        new = m.encode()
        v = self._check_state(new)
        return new, v

    def _drain_urgent(self, m):
        """Deliver commuting responses/grants until none remain at any head."""
        work = [k for k in m.chan if self._urgent_head(m, k)]
        while work:
            work.sort()
            key = work.pop(0)
            if key not in m.chan or not self._urgent_head(m, key):
                continue
            m.pushed.clear()
            v = self._deliver(m, key)
            if v:
                return v
            work.extend(m.pushed)
            if key in m.chan:
                work.append(key)   # next message on this channel
        return None

    def _urgent_head(self, m, key):
        if key[1] == self.chipset or key[2] == 3:
            return True
        return key[2] == 2 and m.chan[key][0][0] in URGENT_NET2

    def _l15_sends(self, m, tile, block, sends, data_token):
        """Emit an L1.5's outgoing messages; requests go straight to the home
        unless an older message for the same block is still queued (fusion,
        see module docstring)."""
        home = self.home_of(block)
        for kind, dirty in sends:
            tok = data_token if kind in pr.DATA_KINDS else NO_TOKEN
            if kind in REQUEST_KINDS and not m.chan.get((tile, home, 1, block)):
                v = self._home_event(m, home, block, ("req", kind, tile), tok)
                if v:
                    raise AssertionError("request processing cannot bind values")
                continue
            m.push(tile, home, pr.NET_OF_KIND[kind], KIND_IDX[kind], block,
                   tok, 1 if dirty else 0)

    def _issue(self, m, t, op_i, b):
        op = OPS[op_i]
        slot = m.l15[t][b]
        rs = RS[slot[0]]
        res = pr.l15_core_op(rs, op, self.mut)
        m.cores[t][0] -= 1
        if "hit_load" in res.effects:
            if slot[1] != m.cur[b]:
                return ("data_value",
                        f"tile {t} load of block {b} returned token {slot[1]}, "
                        f"latest serialized store is {m.cur[b]}")
            return None
        if "hit_store" in res.effects:
            m.cur[b] += 1
            slot[1] = m.cur[b]
            slot[0] = RS_IDX[res.state]
            return None
        if op == "evict":
            # Line moves into the writeback buffer; request side goes I.
            data_token = slot[1]
            slot[2] = WS_IDX[res.state]
            slot[3] = data_token if res.state in (pr.EI_A, pr.MI_A) else NO_TOKEN
            slot[0] = RS_IDX[pr.I]
            slot[1] = NO_TOKEN
            self._l15_sends(m, t, b, res.sends, data_token)
            return None
        # miss: request goes pending
        m.cores[t][1] = op_i
        m.cores[t][2] = b
        slot[0] = RS_IDX[res.state]
        self._l15_sends(m, t, b, res.sends, slot[1])
        return None

    def _deliver(self, m, key):
        src, dst, net, block = key
        msgs = m.chan[key]
        kind_i, _blk, msrc, token, dirty = msgs.pop(0)
        if not msgs:
            del m.chan[key]
        kind = KINDS[kind_i]
        if dst == self.chipset:
            if kind == pr.MEM_READ:
                m.push(self.chipset, src, 3, KIND_IDX[pr.MEM_DATA], block,
                       m.memtok[block], 0)
            elif kind == pr.MEM_WRITE:
                m.memtok[block] = token
            else:
                raise pr.UnexpectedMessage("chipset", "-", kind)
            return None
        if kind in REQUEST_KINDS:
            return self._home_event(m, dst, block, ("req", kind, msrc), token)
        if kind in (pr.INV_ACK, pr.OWNER_DATA, pr.MEM_DATA):
            return self._home_event(m, dst, block,
                                    ("resp", kind, msrc, bool(dirty)), token)
        return self._l15_deliver(m, dst, block, kind, token)

    def _l15_deliver(self, m, tile, block, kind, token):
        slot = m.l15[tile][block]
        wb = WS[slot[2]]
        # Forwards, Invs and PutAck resolve against an in-flight writeback
        # first; grants always target the request side.
        use_wb = wb is not None and kind in (pr.INV, pr.FWD_GETS, pr.FWD_GETX,
                                             pr.PUT_ACK)
        state = wb if use_wb else RS[slot[0]]
        res = pr.l15_msg(state, kind, self.mut)
        data_token = slot[3] if use_wb else slot[1]
        self._l15_sends(m, tile, block, res.sends, data_token)
        if use_wb:
            slot[2] = WS_IDX[res.state] if res.state != pr.I else 0
            if res.state in (pr.II_A, pr.I):
                slot[3] = NO_TOKEN
            return None
        slot[0] = RS_IDX[res.state]
        if "fill" in res.effects:
            return self._complete(m, tile, block, token)
        if "grant_in_place" in res.effects:
            return self._complete(m, tile, block, slot[1])
        if "invalidate" in res.effects:
            slot[1] = NO_TOKEN
        return None

    def _complete(self, m, tile, block, arriving_token):
        """A grant finished the tile's pending op on (tile, block)."""
        slot = m.l15[tile][block]
        op_i, b = m.cores[tile][1], m.cores[tile][2]
        if not op_i or b != block:
            raise pr.UnexpectedMessage("l15", RS[slot[0]],
                                       f"grant for block {block} with no pending op")
        m.cores[tile][1] = 0
        m.cores[tile][2] = 0
        if OPS[op_i] == "load":
            slot[1] = arriving_token
            if arriving_token != m.cur[block]:
                return ("data_value",
                        f"tile {tile} load of block {block} filled token "
                        f"{arriving_token}, latest serialized store is {m.cur[block]}")
            return None
        m.cur[block] += 1
        slot[1] = m.cur[block]
        return None

    def _home_event(self, m, home, block, event, token):
        hb = pr.HomeBlock(_entry_decode(m.homes[block]),
                          tuple((KINDS[k], src) for k, src in m.queues[block]))
        new_hb, sends, effects = pr.home_drive(hb, event, self.mut)
        m.homes[block] = _entry_encode(new_hb.entry)
        m.queues[block] = [(KIND_IDX[k], src) for k, src in new_hb.queue]
        for eff in effects:
            if eff == "store_data":
                m.l2tok[block] = token
            elif eff == "free":
                m.l2tok[block] = NO_TOKEN
        for kind, dst, data_src in sends:
            tok = NO_TOKEN
            if data_src == "l2":
                tok = m.l2tok[block]
            elif data_src == "arrived":
                tok = token
            node = self.chipset if dst == pr.CHIPSET else dst
            m.push(home, node, pr.NET_OF_KIND[kind], KIND_IDX[kind], block, tok, 0)
        return None

    # -- invariants ------------------------------------------------------------

    def _check_state(self, state):
        cores, l15, homes, chan = state
        for b in range(self.B):
            owners = [t for t in range(self.T)
                      if RS[l15[t][b][0]] in (pr.E, pr.M)]
            readers = [t for t in range(self.T)
                       if RS[l15[t][b][0]] in (pr.S, pr.SM_W)]
            if len(owners) > 1 or (owners and readers):
                return ("swmr", f"block {b}: exclusive at {owners}, "
                                f"readable at {readers}")
            cur = homes[b][4]
            for t in owners + readers:
                tok = l15[t][b][1]
                if tok != cur:
                    return ("data_value",
                            f"tile {t} holds block {b} readable with token "
                            f"{tok}, latest serialized store is {cur}")
            if not self._quiescent(state, b):
                continue
            entry = homes[b][0]
            holders = set(owners) | set(readers)
            if entry is None:
                if holders:
                    return ("directory",
                            f"block {b}: no entry but held by {sorted(holders)}")
            else:
                estate, sharers, owner = ESTATES[entry[0]], set(entry[1]), entry[2]
                if estate == pr.S and (set(readers) != sharers or owners):
                    return ("directory",
                            f"block {b}: directory sharers {sorted(sharers)} "
                            f"!= actual {sorted(readers)}")
                if estate == pr.E and (owners != [owner] or readers):
                    return ("directory", f"block {b}: directory owner {owner}, "
                                         f"actual exclusive {owners} readers {readers}")
        return None

    def _quiescent(self, state, b):
        cores, l15, homes, chan = state
        entry, queue = homes[b][0], homes[b][1]
        if queue:
            return False
        if entry is not None and entry[3]:   # busy
            return False
        for t in range(self.T):
            if WS[l15[t][b][2]] is not None:
                return False
            if RS[l15[t][b][0]] in pr.L15_PENDING:
                return False
        for key, _msgs in chan:
            if key[3] == b:
                return False
        return True

    def _terminal_ok(self, state):
        cores, l15, homes, chan = state
        if chan:
            return False
        for budget, pend_op, _ in cores:
            if budget > 0 or pend_op:
                return False
        for b in range(self.B):
            entry, queue = homes[b][0], homes[b][1]
            if queue or (entry is not None and entry[3]):
                return False
        for t in range(self.T):
            for b in range(self.B):
                if WS[l15[t][b][2]] is not None or RS[l15[t][b][0]] in pr.L15_PENDING:
                    return False
        return True

    # -- search -----------------------------------------------------------------

    def run(self):
        # Memory layout: the visited set keeps 16-byte digests of canonical
        # state encodings (collision odds are ~n^2/2^129, far below any
        # practical concern); full encodings live in the frontier only until
        # expanded; parent links and actions are packed into flat arrays.
        init = self.initial()
        init_key, _ = self.canonical(init)
        seen = {blake2b(init_key, digest_size=16).digest()}
        frontier = [init_key]
        par_sid = array("q", [-1])
        par_act = array("q", [-1])
        par_perm = array("i", [0])
        parents = (par_sid, par_act, par_perm)
        transitions = 0
        i = 0
        loads = pickle.loads
        while i < len(frontier):
            state = loads(frontier[i])
            frontier[i] = None
            sid = i
            i += 1
            if self.progress and i % 100_000 == 0:
                self.progress(len(seen), transitions)
            acts = self.actions(state)
            if not acts:
                if not self._terminal_ok(state):
                    return self._report(
                        ("deadlock", self._stuck_reason(state)), parents, sid, None,
                        len(seen), transitions)
                continue
            for act in acts:
                transitions += 1
                new, viol = self.apply(state, act)
                if viol:
                    return self._report(viol, parents, sid, act, len(seen),
                                        transitions)
                key, perm_i = self.canonical(new)
                dig = blake2b(key, digest_size=16).digest()
                if dig not in seen:
                    if len(seen) >= self.max_states:
                        raise StateSpaceBoundExceeded(
                            f"more than {self.max_states} states")
                    seen.add(dig)
                    par_sid.append(sid)
                    par_act.append(_pack_act(act))
                    par_perm.append(perm_i)
                    frontier.append(key)
        return CheckResult(True, len(seen), transitions, None, self._config())

    def _stuck_reason(self, state):
        cores, l15, homes, chan = state
        stuck = [f"tile {t} waiting on {OPS[op]} of block {b}"
                 for t, (_bud, op, b) in enumerate(cores) if op]
        for b in range(self.B):
            entry, queue = homes[b][0], homes[b][1]
            if entry is not None and entry[3]:
                stuck.append(f"home of block {b} busy in {WAITS[entry[3]]} "
                             f"(acks left {entry[6]})")
            if queue:
                stuck.append(f"home of block {b} has {len(queue)} deferred requests")
        return "terminal state with unfinished work: " + "; ".join(stuck)

    def _trace(self, parents, sid, last_act):
        par_sid, par_act, par_perm = parents
        edges = []
        while True:
            psid, actn, perm_i = par_sid[sid], par_act[sid], par_perm[sid]
            if actn < 0:
                break
            edges.append((_unpack_act(actn), perm_i))
            sid = psid
        edges.reverse()
        if last_act:
            edges.append((last_act, 0))
        # Map every action back to the initial (identity) frame: each stored
        # state is frame(concrete) with frame composed of the edge renamings.
        ft = list(range(self.T))
        fb = list(range(self.B))
        lines = []
        for n, (act, perm_i) in enumerate(edges):
            inv_t = [0] * self.T
            inv_b = [0] * self.B
            for x in range(self.T):
                inv_t[ft[x]] = x
            for x in range(self.B):
                inv_b[fb[x]] = x
            lines.append(self._fmt_action(act, inv_t, inv_b, n))
            pt, pb = self.perms[perm_i]
            ft = [pt[f] for f in ft]
            fb = [pb[f] for f in fb]
        return lines

    def _fmt_action(self, act, inv_t, inv_b, n):
        if act[0] == "issue":
            _, t, op_i, b = act
            return f"{n}: tile {inv_t[t]} issues {OPS[op_i]} block {inv_b[b]}"
        if act[0] == "hevict":
            return f"{n}: home evicts directory entry of block {inv_b[act[1]]}"
        _, src, dst, net, block = act
        name = lambda x: "chipset" if x == self.chipset else f"node {inv_t[x]}"
        return (f"{n}: deliver next message {name(src)} -> {name(dst)} "
                f"on net {net} for block {inv_b[block]}")

    def _report(self, viol, parents, sid, act, states, transitions):
        kind, msg = viol
        v = Violation(kind, msg, self._trace(parents, sid, act))
        return CheckResult(False, states, transitions, v, self._config())

    def _config(self):
        return {"tiles": self.T, "blocks": self.B, "max_ops": self.max_ops,
                "mutations": sorted(self.mut), "evicts": self.include_evicts,
                "home_evicts": self.home_evicts}


def model_check(tiles=2, blocks=1, max_ops=2, block_size_bytes=64,
                mutations=(), include_evicts=True, home_evicts=1,
                max_states=5_000_000, symmetry=True,
                progress=None) -> CheckResult:
    """Exhaustively check the protocol at the given bounds.

    block_size_bytes is accepted (and echoed in the result config) for parity
    with simulator configurations; the protocol tables are block-size
    independent, which running the grid per size demonstrates. home_evicts
    bounds how many times each block's directory entry may be spontaneously
    evicted (exercising the entry-recall path). With symmetry enabled,
    states are merged across home-preserving tile/block renamings; when a
    violation is found under symmetry the search reruns without it so the
    reported trace and message share one frame.
    """
    if not (0 <= tiles <= 8 and 0 <= blocks <= 4 and 0 <= max_ops <= 8):
        raise ValueError("bounds out of range: tiles<=8, blocks<=4, max_ops<=8")
    for mname in mutations:
        if mname not in pr.MUTATIONS:
            raise ValueError(f"unknown mutation {mname!r}")
    if tiles == 0 or blocks == 0 or max_ops == 0:
        # Empty system: the initial state is the whole reachable space.
        return CheckResult(ok=True, states=1, transitions=0, violation=None,
                           config={"tiles": tiles, "blocks": blocks,
                                   "max_ops": max_ops,
                                   "mutations": sorted(mutations),
                                   "evicts": include_evicts,
                                   "home_evicts": home_evicts,
                                   "block_size_bytes": block_size_bytes})
    ck = _Checker(tiles, blocks, max_ops, frozenset(mutations), include_evicts,
                  home_evicts, max_states, use_symmetry=symmetry,
                  progress=progress)
    res = ck.run()
    if not res.ok and symmetry:
        ck = _Checker(tiles, blocks, max_ops, frozenset(mutations),
                      include_evicts, home_evicts, max_states,
                      use_symmetry=False, progress=progress)
        res = ck.run()
    res.config["block_size_bytes"] = block_size_bytes
    return res
