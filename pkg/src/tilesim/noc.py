"""Three mesh networks: XY wormhole routers with bounded input queues.

Each coherence message class rides its own physical network (requests,
forwards/grants, responses), which together with XY dimension-ordered
routing keeps the channel-dependency graph cycle-free. A network is one
engine component that ticks itself only while flits are in flight.

Messages serialize to 1 header flit plus ceil(payload_bits/width) body
flits, payload_bits being 8*block_size for data-carrying kinds and 0
otherwise. Flits of one message never interleave with another message's
flits on a link: a header that wins an output port locks it until the
tail passes. Per output, contending inputs are served round-robin.

Queue bounds act as credit-based flow control: a flit moves only if the
downstream input queue has a free slot at the start of the tick. Links
are point-to-point and at most one flit crosses a link per cycle, so the
occupancy bound (queue depth) is exactly what explicit credit counters
would enforce.

Timing: a flit becomes eligible to leave a router router_hop cycles after
entering it, and a move costs link cycles. A flit whose target is its
destination node ejects on arrival (no queueing at the destination), so
an H-hop message's head arrives after H*(router_hop+link) cycles.
Delivery hands the message to the destination component as an engine
event at the tail's arrival cycle.

Senders enqueue into an unbounded per-node injection FIFO (coherence
controllers never block on injection); router queues stay bounded.
Per-(source, destination, network) FIFO delivery follows from single-path
XY routing plus FIFO queues and packet locking.
"""

from typing import Optional

from . import protocol as pr

QUEUE_DEPTH = 4                    # flits per router input queue
INPUT_DIRS = ("L", "E", "W", "N", "S")
OUTPUT_DIRS = ("E", "W", "N", "S", "L")
_OPPOSITE = {"E": "W", "W": "E", "N": "S", "S": "N"}
_PORT_DELTA = {"E": (0, 1), "W": (0, -1), "N": (-1, 0), "S": (1, 0)}


class IncompleteMessage(RuntimeError):
    """The network drained while a message was missing body flits."""


def flits_of(kind: str, block_size_bytes: int, width_bits: int) -> int:
    """Flit count for one message: header + serialized payload."""
    payload_bits = 8 * block_size_bytes if kind in pr.DATA_KINDS else 0
    return 1 + -(-payload_bits // width_bits)


class MeshNet:
    """One physical network plane."""

    def __init__(self, net_no: int, engine, vcfg):
        self.net_no = net_no
        self.engine = engine
        self.vcfg = vcfg
        self.name = f"noc{net_no}"
        self.rows = vcfg.cfg.mesh_rows
        self.cols = vcfg.cfg.mesh_cols
        self.chipset = vcfg.chipset_node
        self.depth = QUEUE_DEPTH
        self.width = vcfg.cfg.noc_width_bits
        self.receivers = {}          # node -> engine target name
        self.drop_hook = None        # test-only: fn(msg) -> bool, True drops

        att_row, att_col = vcfg.tile_coord(vcfg.chipset_tile)
        dr, dc = _PORT_DELTA[vcfg.chipset_port]
        self._coords = {t: vcfg.tile_coord(t) for t in range(vcfg.num_tiles)}
        self._coords[self.chipset] = (att_row + dr, att_col + dc)
        self._attach_coord = (att_row, att_col)

        # node -> dir -> neighbor node id, for the links that exist
        self.links = {}
        for t in range(vcfg.num_tiles):
            r, c = self._coords[t]
            nb = {}
            for d, (ddr, ddc) in _PORT_DELTA.items():
                rr, cc = r + ddr, c + ddc
                if 0 <= rr < self.rows and 0 <= cc < self.cols:
                    nb[d] = rr * self.cols + cc
            self.links[t] = nb
        self.links[vcfg.chipset_tile][vcfg.chipset_port] = self.chipset
        self.links[self.chipset] = {
            _OPPOSITE[vcfg.chipset_port]: vcfg.chipset_tile}

        # queues[(node, in_dir)] = [[ready_cycle, msg_id, is_header], ...]
        self.queues = {(n, d): [] for n in self.links for d in INPUT_DIRS}
        self.locks = {}              # (node, out_dir) -> [in_dir, body_left]
        self.rr = {}                 # (node, out_dir) -> next input index
        self.inject_q = {n: [] for n in self.links}   # unbounded FIFOs
        self.msgs = {}               # msg_id -> [msg_dict, inject_cycle, left]
        self.next_msg_id = 0
        self.active = set()          # nodes with queued or injectable flits
        self._tick_scheduled = False
        self.stats = {"msgs_injected": 0, "msgs_delivered": 0,
                      "msgs_dropped": 0, "flits_injected": 0,
                      "flits_delivered": 0, "latency_sum": 0,
                      "latency_max": 0, "link_flits": {}}

        engine.register(self.name, self._on_event)

    # -- sending ---------------------------------------------------------------

    def set_receiver(self, node: int, target: str) -> None:
        self.receivers[node] = target

    def send(self, src: int, dst: int, msg: dict) -> None:
        """Queue a message; it is delivered to dst's component later as an
        engine event ("msg", message) carrying net and timing metadata."""
        if self.drop_hook is not None and self.drop_hook(msg):
            self.stats["msgs_dropped"] += 1
            return
        nflits = flits_of(msg["kind"], self.vcfg.block_size_bytes, self.width)
        mid = self.next_msg_id
        self.next_msg_id += 1
        # entry: [message, inject_cycle, total_flits, flits_left_to_eject]
        self.msgs[mid] = [dict(msg, src=src, dst=dst, net=self.net_no),
                          self.engine.cycle, nflits, nflits]
        self.stats["msgs_injected"] += 1
        self.stats["flits_injected"] += nflits
        q = self.inject_q[src]
        q.append([mid, 1])
        q.extend([mid, 0] for _ in range(nflits - 1))
        self.active.add(src)
        self._wake()

    def _wake(self) -> None:
        if not self._tick_scheduled:
            self._tick_scheduled = True
            self.engine.schedule(self.engine.cycle, self.name, "tick")

    # -- routing -----------------------------------------------------------------

    def _route(self, node: int, dst: int) -> str:
        if dst == node:
            return "L"
        if node == self.chipset:             # single link back to the mesh
            return next(iter(self.links[node]))
        r, c = self._coords[node]
        # traffic to the chipset first crosses the mesh to the attach tile
        tr, tc = self._attach_coord if dst == self.chipset else self._coords[dst]
        if dst == self.chipset and (r, c) == (tr, tc):
            return self.vcfg.chipset_port
        if tc != c:
            return "E" if tc > c else "W"
        if tr != r:
            return "S" if tr > r else "N"
        return "L"

    # -- the tick -------------------------------------------------------------------

    def _on_event(self, kind, payload) -> None:
        if kind != "tick":
            raise ValueError(f"unknown NoC event {kind!r}")
        self._tick_scheduled = False
        cyc = self.engine.cycle
        lat = self.vcfg.latencies
        deliveries = []

        for node in sorted(self.active):
            # refill the local input from the injection FIFO
            inj = self.inject_q[node]
            lq = self.queues[(node, "L")]
            while inj and len(lq) < self.depth:
                mid, hdr = inj.pop(0)
                lq.append([cyc + lat.router_hop, mid, hdr])
            for out in OUTPUT_DIRS:
                self._arbitrate(node, out, cyc, lat, deliveries)
            if not inj and all(not self.queues[(node, d)]
                               for d in INPUT_DIRS):
                self.active.discard(node)

        for arrive_cycle, mid in deliveries:
            msg, inject_cycle, _total, _left = self.msgs.pop(mid)
            s = self.stats
            s["msgs_delivered"] += 1
            d = arrive_cycle - inject_cycle
            s["latency_sum"] += d
            s["latency_max"] = max(s["latency_max"], d)
            self.engine.schedule(arrive_cycle, self.receivers[msg["dst"]],
                                 "msg", msg)
        if self.active:
            self._tick_scheduled = True
            self.engine.schedule(cyc + 1, self.name, "tick")

    def _arbitrate(self, node, out, cyc, lat, deliveries) -> None:
        key = (node, out)
        lock = self.locks.get(key)
        if lock is not None:
            in_dir, _left = lock
            q = self.queues[(node, in_dir)]
            if q and q[0][0] <= cyc and q[0][2] == 0 \
                    and self._has_room(node, out, self.msgs[q[0][1]][0]["dst"]):
                self._move(node, in_dir, out, cyc, lat, deliveries)
                lock[1] -= 1
                if lock[1] == 0:
                    del self.locks[key]
            return
        start = self.rr.get(key, 0)
        n = len(INPUT_DIRS)
        for k in range(n):
            idx = (start + k) % n
            in_dir = INPUT_DIRS[idx]
            if in_dir == out and out != "L":
                continue                      # no U-turns on a mesh
            q = self.queues[(node, in_dir)]
            if not (q and q[0][0] <= cyc and q[0][2] == 1):
                continue
            mid = q[0][1]
            dst = self.msgs[mid][0]["dst"]
            if self._route(node, dst) != out:
                continue
            if not self._has_room(node, out, dst):
                continue
            self._move(node, in_dir, out, cyc, lat, deliveries)
            body = self.msgs[mid][2] - 1      # total flits minus the header
            if body > 0:
                self.locks[key] = [in_dir, body]
            self.rr[key] = (idx + 1) % n
            return

    def _has_room(self, node, out, dst) -> bool:
        if out == "L":
            return True                       # ejection is never blocked
        nxt = self.links[node].get(out)
        if nxt is None:
            return False
        if nxt == dst:
            return True                       # ejects on arrival, no queueing
        return len(self.queues[(nxt, _OPPOSITE[out])]) < self.depth

    def _move(self, node, in_dir, out, cyc, lat, deliveries) -> None:
        _ready, mid, is_header = self.queues[(node, in_dir)].pop(0)
        s = self.stats
        if out == "L":
            arrive = cyc
        else:
            lk = s["link_flits"]
            lkey = f"{node}.{out}"
            lk[lkey] = lk.get(lkey, 0) + 1
            arrive = cyc + lat.link
        entry = self.msgs[mid]
        dst = entry[0]["dst"]
        nxt = self.links[node][out] if out != "L" else node
        if out == "L" or nxt == dst:
            s["flits_delivered"] += 1
            if self._is_tail(mid, entry):
                deliveries.append((arrive, mid))
        else:
            self.queues[(nxt, _OPPOSITE[out])].append(
                [arrive + lat.router_hop, mid, is_header])
            self.active.add(nxt)

    def _is_tail(self, mid, entry) -> bool:
        entry[3] -= 1
        return entry[3] == 0

    # -- inspection --------------------------------------------------------------

    def flits_in_flight(self) -> int:
        n = sum(len(q) for q in self.queues.values())
        n += sum(len(q) for q in self.inject_q.values())
        return n

    def drain_check(self) -> None:
        """With nothing in flight, every message must be fully delivered."""
        if self.flits_in_flight() == 0 and self.msgs:
            mids = sorted(self.msgs)
            raise IncompleteMessage(
                f"net {self.net_no}: messages {mids} lost body flits")

    # -- checkpoint ----------------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "queues": [[list(k), [list(f) for f in q]]
                       for k, q in sorted(self.queues.items()) if q],
            "locks": [[list(k), list(v)]
                      for k, v in sorted(self.locks.items())],
            "rr": [[list(k), v] for k, v in sorted(self.rr.items())],
            "inject": [[n, [list(f) for f in q]]
                       for n, q in sorted(self.inject_q.items()) if q],
            "msgs": [[mid, [m, ic, total, left]]
                     for mid, (m, ic, total, left) in sorted(self.msgs.items())],
            "next_msg_id": self.next_msg_id,
            "active": sorted(self.active),
            "tick_scheduled": self._tick_scheduled,
            "stats": {k: (dict(sorted(v.items())) if isinstance(v, dict)
                          else v)
                      for k, v in sorted(self.stats.items())},
        }

    def load_state(self, d: dict) -> None:
        for q in self.queues.values():
            q.clear()
        for k, q in d["queues"]:
            self.queues[tuple(k)] = [list(f) for f in q]
        self.locks = {tuple(k): list(v) for k, v in d["locks"]}
        self.rr = {tuple(k): v for k, v in d["rr"]}
        self.inject_q = {n: [] for n in self.links}
        for n, q in d["inject"]:
            self.inject_q[n] = [list(f) for f in q]
        self.msgs = {mid: [m, ic, total, left]
                     for mid, (m, ic, total, left) in d["msgs"]}
        self.next_msg_id = d["next_msg_id"]
        self.active = set(d["active"])
        self._tick_scheduled = d["tick_scheduled"]
        self.stats = dict(d["stats"])
        self.stats["link_flits"] = dict(d["stats"]["link_flits"])


class Noc:
    """The three planes bundled, with one send() keyed by network number."""

    def __init__(self, engine, vcfg):
        self.nets = {n: MeshNet(n, engine, vcfg) for n in (1, 2, 3)}

    def set_receiver(self, node: int, target: str) -> None:
        for net in self.nets.values():
            net.set_receiver(node, target)

    def send(self, net_no: int, src: int, dst: int, msg: dict) -> None:
        self.nets[net_no].send(src, dst, msg)

    def drain_check(self) -> None:
        for net in self.nets.values():
            net.drain_check()

    def stats(self) -> dict:
        return {f"net{n}": dict(net.stats) for n, net in
                sorted(self.nets.items())}

    def state_dict(self) -> dict:
        return {str(n): net.state_dict() for n, net in
                sorted(self.nets.items())}

    def load_state(self, d: dict) -> None:
        for n, net in self.nets.items():
            net.load_state(d[str(n)])
