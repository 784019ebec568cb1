"""Discrete-event simulation of a swarm with one always-on publisher.

Transfers move one sub-block at a time.  Rates are recomputed whenever the
set of flows changes: each uploader splits its capacity equally among its
flows, or, with a download cap, rates are max-min fair under both caps.
Only the earliest completion sits in the event heap, stamped with a version
that invalidates it once the flows change.
"""

from __future__ import annotations

import heapq
import math
from typing import Dict, List, Optional

import numpy as np

from ..errors import NumericalCheckError
from ..params import make_rng
from .config import SimConfig
from .trace import BLOCK_COMPLETE, DEPART, JOIN, SAMPLE, Trace

PUBLISHER = 0

_ARRIVAL, _XFER, _ROUND, _LINGER, _SAMPLE = range(5)
_CHUNK = 4096


class _Stream:
    """Buffered uniform and exponential draws from one generator."""

    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self._u = rng.random(_CHUNK)
        self._e = rng.standard_exponential(_CHUNK)
        self._iu = 0
        self._ie = 0

    def u(self) -> float:
        if self._iu == _CHUNK:
            self._u = self._rng.random(_CHUNK)
            self._iu = 0
        x = self._u[self._iu]
        self._iu += 1
        return float(x)

    def exp(self) -> float:
        if self._ie == _CHUNK:
            self._e = self._rng.standard_exponential(_CHUNK)
            self._ie = 0
        x = self._e[self._ie]
        self._ie += 1
        return float(x)

    def index(self, n: int) -> int:
        return min(int(self.u() * n), n - 1)

    def sample(self, items: list, k: int) -> list:
        """``k`` distinct items, uniformly, by partial Fisher-Yates."""
        pool = list(items)
        k = min(k, len(pool))
        for i in range(k):
            j = i + self.index(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]


class _Node:
    __slots__ = (
        "pid",
        "have",
        "nhave",
        "alive",
        "partial",
        "neighbors",
        "active",
        "unchoked_by",
        "recv",
        "downloads",
        "cap",
        "transfers",
    )

    def __init__(self, pid: int, cap: float, have: int = 0, nhave: int = 0):
        self.pid = pid
        self.have = have
        self.nhave = nhave
        self.alive = True
        # block -> [sub-blocks not yet requested, sub-blocks received]
        self.partial: Dict[int, List[int]] = {}
        self.neighbors: set = set()
        self.active: set = set()
        self.unchoked_by: set = set()
        self.recv: Dict[int, float] = {}
        # uploader pid -> block of the one outstanding sub-block
        self.downloads: Dict[int, int] = {}
        self.cap = cap
        # pids this node is uploading to
        self.transfers: set = set()


class SwarmSimulator:
    """One replication; call :meth:`run` once."""

    def __init__(self, config: SimConfig, *, audit: bool = False, seed=None):
        """``seed`` (int, sequence or SeedSequence) overrides ``config.rng_seed``."""
        self.cfg = config
        self.B = config.n_blocks
        self.full = (1 << self.B) - 1
        self.sub = config.subblock_bytes
        self.audit = audit
        self.rand = _Stream(make_rng(config.rng_seed if seed is None else seed))
        self.now = 0.0
        self.heap: list = []
        self._seq = 0
        self.nodes: Dict[int, _Node] = {}
        self.publisher = _Node(PUBLISHER, float(config.publisher_upload_Bps), self.full, self.B)
        self.next_pid = 1
        self.trace = Trace(self.B, config.horizon_seconds, config.warmup_seconds)
        self._hexw = max(1, (self.B + 3) // 4)
        # (uploader, downloader) -> [bytes left, current rate]
        self.flows: Dict[tuple, list] = {}
        self._t_sync = 0.0
        self._dirty = False
        self._xfer_version = 0

    # -- bookkeeping ---------------------------------------------------------

    def _push(self, t: float, kind: int, a: int = 0, b: int = 0) -> None:
        self._seq += 1
        heapq.heappush(self.heap, (t, self._seq, kind, a, b))

    def _sig(self, mask: int) -> str:
        return format(mask, f"0{self._hexw}x")

    def _log(self, event: str, pid: int, block: int, mask: int) -> None:
        self.trace.records.append((self.now, event, pid, block, self._sig(mask)))

    def _node(self, pid: int) -> Optional[_Node]:
        if pid == PUBLISHER:
            return self.publisher
        return self.nodes.get(pid)

    # -- bandwidth sharing -------------------------------------------------

    def _sync(self) -> None:
        dt = self.now - self._t_sync
        if dt > 0.0:
            for f in self.flows.values():
                f[0] -= f[1] * dt
        self._t_sync = self.now

    def _start(self, up: _Node, down: _Node, block: int) -> None:
        self.flows[(up.pid, down.pid)] = [self.sub, 0.0]
        up.transfers.add(down.pid)
        down.downloads[up.pid] = block
        self._dirty = True

    def _drop(self, upid: int, dpid: int) -> None:
        del self.flows[(upid, dpid)]
        self._dirty = True

    def _allocate(self) -> None:
        """Max-min fair rates under upload (and optional download) caps."""
        flows = self.flows
        if not flows:
            return
        by_up: Dict[int, list] = {}
        for key in flows:
            by_up.setdefault(key[0], []).append(key)
        dcap = self.cfg.peer_download_Bps
        if dcap is None:
            for u, keys in by_up.items():
                r = self._node(u).cap / len(keys)
                for key in keys:
                    flows[key][1] = r
            return
        by_down: Dict[int, list] = {}
        for key in flows:
            by_down.setdefault(key[1], []).append(key)
        rem = {("u", u): self._node(u).cap for u in by_up}
        rem.update({("d", d): float(dcap) for d in by_down})
        live = {("u", u): set(keys) for u, keys in by_up.items()}
        live.update({("d", d): set(keys) for d, keys in by_down.items()})
        while live:
            node = min(live, key=lambda n: (rem[n] / len(live[n]), n))
            share = rem[node] / len(live[node])
            for key in sorted(live.pop(node)):
                flows[key][1] = share
                other = ("d", key[1]) if node[0] == "u" else ("u", key[0])
                rem[other] -= share
                peers = live[other]
                peers.discard(key)
                if not peers:
                    del live[other]

    def _reschedule(self) -> None:
        self._allocate()
        self._dirty = False
        self._xfer_version += 1
        best = math.inf
        for rem, rate in self.flows.values():
            if rate > 0.0:
                t = rem / rate
                if t < best:
                    best = t
        if best < math.inf:
            self._push(self.now + max(best, 0.0), _XFER, 0, self._xfer_version)

    def _on_xfer(self, version: int) -> None:
        if version != self._xfer_version:
            return
        limit = 1e-9 * self.sub
        done = [key for key, f in self.flows.items() if f[0] <= limit]
        finished = []
        for key in done:
            del self.flows[key]
            up = self._node(key[0])
            up.transfers.discard(key[1])
            finished.append((up, key[1]))
        self._dirty = True
        # the uploader may leave while an earlier completion is handled; its
        # sub-block has been delivered all the same
        for up, dpid in finished:
            down = self.nodes.get(dpid)
            if down is not None and down.alive:
                self._receive(up, down)

    def _receive(self, up: _Node, down: _Node) -> None:
        block = down.downloads.pop(up.pid)
        down.recv[up.pid] = down.recv.get(up.pid, 0.0) + self.sub
        part = down.partial[block]
        part[1] += 1
        if part[1] == self.cfg.subblocks_per_block:
            del down.partial[block]
            self._complete_block(down, block)
        if down.alive and up.alive:
            self._try_request(down, up)

    # -- piece selection -----------------------------------------------------

    def _pick(self, down: _Node, up: _Node) -> Optional[int]:
        uh = up.have
        started = 0
        for b, part in down.partial.items():
            if part[0] > 0 and uh >> b & 1:
                return b
            started |= 1 << b
        cand = uh & ~down.have & ~started & self.full
        if not cand:
            return None
        blocks = [b for b in range(self.B) if cand >> b & 1]
        if down.nhave < self.cfg.first_random_blocks or len(blocks) == 1:
            return blocks[self.rand.index(len(blocks))]
        nodes = self.nodes
        haves = [nodes[x].have for x in down.neighbors]
        best: list = []
        best_count = math.inf
        for b in blocks:
            c = 0
            for h in haves:
                c += h >> b & 1
            if c < best_count:
                best_count = c
                best = [b]
            elif c == best_count:
                best.append(b)
        return best[self.rand.index(len(best))]

    def _try_request(self, down: _Node, up: _Node) -> None:
        if not (down.alive and up.alive) or up.pid in down.downloads or down.nhave == self.B:
            return
        # the publisher never chokes
        if up.pid != PUBLISHER and down.pid not in up.active:
            return
        b = self._pick(down, up)
        if b is None:
            return
        part = down.partial.get(b)
        if part is None:
            part = down.partial[b] = [self.cfg.subblocks_per_block, 0]
        part[0] -= 1
        self._start(up, down, b)

    def _fill_requests(self, down: _Node) -> None:
        self._try_request(down, self.publisher)
        for u in sorted(down.unchoked_by):
            self._try_request(down, self._node(u))

    # -- peer lifecycle ------------------------------------------------------

    def _complete_block(self, node: _Node, block: int) -> None:
        if self.audit and node.have >> block & 1:
            raise NumericalCheckError(f"peer {node.pid} received block {block} twice")
        node.have |= 1 << block
        node.nhave += 1
        self._log(BLOCK_COMPLETE, node.pid, block, node.have)
        if node.nhave == self.B:
            if math.isinf(self.cfg.seed_linger_rate):
                self._depart(node)
                return
            self._push(self.now + self.rand.exp() / self.cfg.seed_linger_rate, _LINGER, node.pid)
        for x in sorted(node.active):
            self._try_request(self.nodes[x], node)

    def _connect(self, node: _Node, want: int) -> None:
        known = node.neighbors
        pool = [p for p in self.nodes if p != node.pid and p not in known]
        for p in self.rand.sample(pool, want):
            node.neighbors.add(p)
            self.nodes[p].neighbors.add(node.pid)

    def _on_arrival(self) -> None:
        node = _Node(self.next_pid, float(self.cfg.peer_upload_Bps))
        self.next_pid += 1
        self.nodes[node.pid] = node
        self._log(JOIN, node.pid, -1, 0)
        self._connect(node, self.cfg.peer_set_target)
        self._round(node)
        self._push(self.now + self.cfg.round_seconds, _ROUND, node.pid)
        self._try_request(node, self.publisher)
        self._push(self.now + self.rand.exp() / self.cfg.arrival_rate, _ARRIVAL)

    def _depart(self, node: _Node) -> None:
        node.alive = False
        self._log(DEPART, node.pid, -1, node.have)
        nodes = self.nodes
        # downloads in flight towards the departing peer are dropped
        for upid in node.downloads:
            self._drop(upid, node.pid)
            self._node(upid).transfers.discard(node.pid)
        node.downloads.clear()
        # uploads from it return their sub-block to the unrequested pool
        orphans = []
        for d in sorted(node.transfers):
            self._drop(node.pid, d)
            down = nodes[d]
            b = down.downloads.pop(node.pid)
            down.partial[b][0] += 1
            orphans.append(down)
        node.transfers.clear()
        for x in node.active:
            nodes[x].unchoked_by.discard(node.pid)
        for u in node.unchoked_by:
            self._node(u).active.discard(node.pid)
        for x in node.neighbors:
            other = nodes[x]
            other.neighbors.discard(node.pid)
            other.recv.pop(node.pid, None)
        del nodes[node.pid]
        for down in orphans:
            self._fill_requests(down)
        for x in sorted(node.neighbors):
            other = nodes.get(x)
            if other is not None and len(other.neighbors) < self.cfg.peer_set_min:
                self._connect(other, self.cfg.peer_set_target - len(other.neighbors))

    # -- choking rounds ------------------------------------------------------

    def _round(self, node: _Node) -> None:
        cfg = self.cfg
        nodes = self.nodes
        interested = [x for x in sorted(node.neighbors) if node.have & ~nodes[x].have]
        contrib = [x for x in interested if node.recv.get(x, 0.0) > 0.0]
        keyed = sorted(contrib, key=lambda x: (-node.recv[x], self.rand.u()))
        chosen = keyed[: cfg.reciprocated_slots_max]
        rest = [x for x in interested if x not in chosen]
        chosen += self.rand.sample(rest, cfg.active_set_size - cfg.reciprocated_slots_max)
        new = set(chosen)
        old = node.active
        node.active = new
        node.recv = {}
        for x in sorted(old - new):
            nodes[x].unchoked_by.discard(node.pid)
        for x in sorted(new - old):
            other = nodes[x]
            other.unchoked_by.add(node.pid)
            self._try_request(other, node)

    def _on_round(self, pid: int) -> None:
        node = self.nodes.get(pid)
        if node is None:
            return
        self._round(node)
        self._push(self.now + self.cfg.round_seconds, _ROUND, pid)

    def _on_sample(self) -> None:
        union = 0
        for node in self.nodes.values():
            union |= node.have
        self._log(SAMPLE, -1, -1, union)
        self._push(self.now + self.cfg.round_seconds, _SAMPLE)

    def _check_capacity(self) -> None:
        out: Dict[int, float] = {}
        inc: Dict[int, float] = {}
        for (u, d), (_, rate) in self.flows.items():
            out[u] = out.get(u, 0.0) + rate
            inc[d] = inc.get(d, 0.0) + rate
        for u, total in out.items():
            if total > self._node(u).cap * (1 + 1e-9):
                raise NumericalCheckError(f"node {u} uploads {total} B/s above its capacity")
        dcap = self.cfg.peer_download_Bps
        if dcap is not None:
            for d, total in inc.items():
                if total > dcap * (1 + 1e-9):
                    raise NumericalCheckError(f"node {d} downloads {total} B/s above its capacity")

    # -- main loop -----------------------------------------------------------

    def run(self) -> Trace:
        horizon = self.cfg.horizon_seconds
        if self.cfg.arrival_rate > 0:
            self._push(self.rand.exp() / self.cfg.arrival_rate, _ARRIVAL)
        self._push(0.0, _SAMPLE)
        heap = self.heap
        while heap:
            t, _, kind, a, b = heapq.heappop(heap)
            if t > horizon:
                break
            self.now = t
            self._sync()
            if kind == _XFER:
                self._on_xfer(b)
            elif kind == _ROUND:
                self._on_round(a)
            elif kind == _ARRIVAL:
                self._on_arrival()
            elif kind == _SAMPLE:
                self._on_sample()
            else:
                node = self.nodes.get(a)
                if node is not None:
                    self._depart(node)
            if self._dirty:
                self._reschedule()
            if self.audit:
                self._check_capacity()
        return self.trace


def simulate(config: SimConfig, *, audit: bool = False, seed=None) -> Trace:
    """Run one replication and return its event trace."""
    return SwarmSimulator(config, audit=audit, seed=seed).run()
