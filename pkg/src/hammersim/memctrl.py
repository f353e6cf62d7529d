"""Memory-controller model.

Bounded read/write pending queues, a look-ahead reordering window with
starvation avoidance, write-major mode with hysteresis, write-to-read
forwarding, underfill reads, and DRAM command generation.

Scheduling policy over the W oldest *uncommitted* entries of the active
queue:

  1. if the oldest entry's age reached the starvation cap, serve it;
  2. else serve the oldest row-buffer hit;
  3. else serve the entry whose bank can activate soonest, ties by arrival.

A selection is committed at the instant its first DRAM command can issue;
until then any arrival re-plans, so a fresher row hit can win the slot.  The
queue entry is deallocated (and its link credit released) when its column
command is committed to the bank, which bounds how far any request can be
displaced: never past more than W-1 earlier arrivals.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

from .dram import Dram, Geometry
from .engine import Simulator
from .tlp import Tlp, TlpKind
from .units import US

_INF = 1 << 62


def _log2(n: int, what: str) -> int:
    if n & (n - 1):
        raise ValueError(f"{what}={n} must be a power of two for the address map")
    return n.bit_length() - 1


class AddressMap:
    """Bijective map between physical addresses and decoded coordinates.

    Layout from the LSB up: 64-byte line offset, column, bank, bank group,
    rank, channel, row.  With xor_fold enabled the bank and group fields are
    XORed with low row bits so that row-sequential traffic spreads over
    banks; the fold cancels in decode, so encode and decode stay inverses.
    """

    def __init__(self, geometry: Geometry, xor_fold: bool = True,
                 line_bytes: int = 64):
        self.geometry = geometry
        self.xor_fold = xor_fold
        self.off_bits = _log2(line_bytes, "line_bytes")
        self.col_bits = _log2(geometry.columns, "columns")
        self.bank_bits = _log2(geometry.banks_per_group, "banks_per_group")
        self.group_bits = _log2(geometry.bank_groups, "bank_groups")
        self.rank_bits = _log2(geometry.ranks, "ranks")
        self.chan_bits = _log2(geometry.channels, "channels")
        self.row_bits = _log2(geometry.rows_per_bank, "rows_per_bank")

    def encode(self, channel: int, rank: int, group: int, bank: int,
               row: int, col: int) -> int:
        g = self.geometry
        if not (0 <= channel < g.channels and 0 <= rank < g.ranks
                and 0 <= group < g.bank_groups and 0 <= bank < g.banks_per_group
                and 0 <= row < g.rows_per_bank and 0 <= col < g.columns):
            raise ValueError("decoded address out of geometry bounds")
        if self.xor_fold:
            bank ^= row & ((1 << self.bank_bits) - 1)
            group ^= (row >> self.bank_bits) & ((1 << self.group_bits) - 1)
        addr = row
        for value, bits in ((channel, self.chan_bits), (rank, self.rank_bits),
                            (group, self.group_bits), (bank, self.bank_bits),
                            (col, self.col_bits), (0, self.off_bits)):
            addr = (addr << bits) | value
        return addr

    def decode(self, addr: int) -> tuple[int, int, int, int, int, int]:
        addr >>= self.off_bits
        col = addr & ((1 << self.col_bits) - 1)
        addr >>= self.col_bits
        bank = addr & ((1 << self.bank_bits) - 1)
        addr >>= self.bank_bits
        group = addr & ((1 << self.group_bits) - 1)
        addr >>= self.group_bits
        rank = addr & ((1 << self.rank_bits) - 1)
        addr >>= self.rank_bits
        channel = addr & ((1 << self.chan_bits) - 1)
        addr >>= self.chan_bits
        row = addr
        if row >= self.geometry.rows_per_bank:
            raise ValueError("address beyond geometry")
        if self.xor_fold:
            group ^= (row >> self.bank_bits) & ((1 << self.group_bits) - 1)
            bank ^= row & ((1 << self.bank_bits) - 1)
        return channel, rank, group, bank, row, col

    def flat_bank(self, channel: int, rank: int, group: int, bank: int) -> int:
        g = self.geometry
        return ((channel * g.ranks + rank) * g.bank_groups + group) \
            * g.banks_per_group + bank


@dataclass
class McConfig:
    rpq_depth: int = 32
    wpq_depth: int = 16
    window: int = 21
    starvation_age_cap: int = 2 * US
    write_major_watermark: float = 0.75
    underfill_reads: bool = True

    def __post_init__(self):
        if not 1 <= self.window <= self.rpq_depth:
            raise ValueError("window must satisfy 1 <= W <= rpq_depth")
        if not 0 < self.write_major_watermark <= 1:
            raise ValueError("watermark must be in (0, 1]")


class MajorMode(Enum):
    READ_MAJOR = "ReadMajor"
    WRITE_MAJOR = "WriteMajor"


class ForwardHit:
    pass


class Miss:
    pass


PENDING, COMMITTED, FREED = 0, 1, 2


class QueueEntry:
    __slots__ = ("seq", "tag", "bank", "row", "col", "arrival", "state",
                 "is_write", "length_dw")

    def __init__(self, seq, tag, bank, row, col, arrival, is_write, length_dw):
        self.seq = seq
        self.tag = tag
        self.bank = bank
        self.row = row
        self.col = col
        self.arrival = arrival
        self.state = PENDING
        self.is_write = is_write
        self.length_dw = length_dw


class _SchedQueue:
    """Arrival-ordered entries with per-bank and per-row indexes.

    An entry is PENDING until the scheduler commits it, COMMITTED while its
    commands are in flight, and FREED (slot deallocated) when its column
    command issues.  The look-ahead window covers the W oldest slot-occupying
    entries (pending or committed); only pending ones are selectable.  The
    boundary index is maintained incrementally: slots free in column-command
    order, always at or before the boundary, so it only moves forward.
    """

    __slots__ = ("window", "order", "sel_idx", "slot_idx", "bidx", "rowq",
                 "bankq", "pending", "occupying", "dead", "hit_bound")

    def __init__(self, window: int):
        self.window = window
        self.order: list = []
        self.sel_idx = 0        # scan start for the oldest pending entry
        self.slot_idx = 0       # scan start for the oldest occupied slot
        self.bidx = -1          # index of the W-th oldest occupied slot
        self.rowq: dict = {}
        self.bankq: dict = {}
        self.pending = 0
        self.occupying = 0
        self.dead = 0
        self.hit_bound: dict = {}   # bank -> window edge at last decision

    def add(self, entry: QueueEntry) -> None:
        order = self.order
        order.append(entry)
        key = (entry.bank, entry.row)
        dq = self.rowq.get(key)
        if dq is None:
            self.rowq[key] = deque((entry,))
        else:
            dq.append(entry)
        dq = self.bankq.get(entry.bank)
        if dq is None:
            self.bankq[entry.bank] = deque((entry,))
        else:
            dq.append(entry)
        self.pending += 1
        self.occupying += 1
        if self.occupying == self.window + 1:
            i = len(order) - 2
            while i >= self.slot_idx and order[i].state == FREED:
                i -= 1
            self.bidx = i

    def commit(self, entry: QueueEntry) -> None:
        entry.state = COMMITTED
        self.pending -= 1
        dq = self.rowq.get((entry.bank, entry.row))
        while dq and dq[0].state != PENDING:
            dq.popleft()

    def release(self, entry: QueueEntry) -> None:
        entry.state = FREED
        self.occupying -= 1
        self.dead += 1
        if self.occupying > self.window:
            order = self.order
            i = self.bidx + 1
            n = len(order)
            while i < n and order[i].state == FREED:
                i += 1
            self.bidx = i
        else:
            self.bidx = -1
        if self.dead > 128 and self.dead * 2 > len(self.order):
            self._compact()

    def _compact(self) -> None:
        self.order = [e for e in self.order[self.slot_idx:]
                      if e.state != FREED]
        self.slot_idx = 0
        self.sel_idx = 0
        self.dead = 0
        self.bidx = self.window - 1 if self.occupying > self.window else -1

    def head(self) -> Optional[QueueEntry]:
        """Oldest pending entry."""
        order = self.order
        i = self.sel_idx
        n = len(order)
        while i < n and order[i].state != PENDING:
            i += 1
        self.sel_idx = i
        return order[i] if i < n else None

    def boundary_seq(self) -> int:
        """Sequence number of the window's newest admissible entry."""
        if self.occupying <= self.window:
            return _INF
        return self.order[self.bidx].seq

    def row_head(self, bank: int, row: int) -> Optional[QueueEntry]:
        dq = self.rowq.get((bank, row))
        if not dq:
            return None
        while dq and dq[0].state != PENDING:
            dq.popleft()
        return dq[0] if dq else None

    def bank_heads(self):
        for bank, dq in self.bankq.items():
            while dq and dq[0].state != PENDING:
                dq.popleft()
            if dq:
                yield bank, dq[0]


class MemController:
    """One channel's controller: RPQ/WPQ plus the bank command pipeline."""

    def __init__(self, sim: Simulator, cfg: McConfig, dram: Dram,
                 addr_map: AddressMap,
                 on_release: Optional[Callable[[bool], None]] = None,
                 on_read_done: Optional[Callable[[QueueEntry, int], None]] = None,
                 cmd_trace: Optional[list] = None,
                 stats: bool = False):
        self.sim = sim
        self.cfg = cfg
        self.dram = dram
        self.map = addr_map
        self.on_release = on_release
        self.on_read_done = on_read_done
        self.cmd_trace = cmd_trace
        self.rpq = _SchedQueue(cfg.window)
        self.wpq = _SchedQueue(cfg.window)
        self._wmap: dict = {}          # (bank, row, col) -> pending write
        self._write_major = False
        self._gen = 0
        self._seq = 0
        self._pending_commit_at = _INF
        self._free_q: deque = deque()  # (column-command time, entry)
        self._decode_cache: dict = {}
        self.served = 0
        self.forwarded = 0
        self.underfill_rds = 0
        self.displacement_hist: Optional[dict] = {} if stats else None

    # --- admission -----------------------------------------------------------

    def _decode(self, address: int):
        hit = self._decode_cache.get(address)
        if hit is None:
            channel, rank, group, bank, row, col = self.map.decode(address)
            hit = (self.map.flat_bank(channel, rank, group, bank), row, col)
            self._decode_cache[address] = hit
        return hit

    def _admit(self, tlp: Tlp, at: int) -> Optional[QueueEntry]:
        bank, row, col = self._decode(tlp.address)
        if tlp.kind is TlpKind.MEM_READ64:
            if self.rpq.occupying >= self.cfg.rpq_depth:
                return None
            self._seq += 1
            entry = QueueEntry(self._seq, tlp.tag, bank, row, col, at,
                               False, tlp.length_dw)
            self.rpq.add(entry)
            return entry
        if tlp.kind is TlpKind.MEM_WRITE64:
            key = (bank, row, col)
            existing = self._wmap.get(key)
            if existing is not None and existing.state == PENDING:
                existing.length_dw = tlp.length_dw   # write merges in place
                return existing
            if self.wpq.occupying >= self.cfg.wpq_depth:
                return None
            self._seq += 1
            entry = QueueEntry(self._seq, tlp.tag, bank, row, col, at,
                               True, tlp.length_dw)
            self.wpq.add(entry)
            self._wmap[key] = entry
            self._update_mode()
            return entry
        raise ValueError("only memory reads/writes enter the controller")

    def enqueue(self, tlp: Tlp, at: int) -> str:
        """Admit a read or write; 'accepted' or 'backpressure'."""
        self._drain_frees(at)
        return "accepted" if self._admit(tlp, at) is not None else "backpressure"

    def on_arrival(self, tlp: Tlp, at: int) -> None:
        self._drain_frees(at)
        entry = self._admit(tlp, at)
        if entry is None:
            raise AssertionError("credit flow control admitted into a full queue")
        # a pending commit re-plans at its own fire time, so a fresh arrival
        # only forces a re-plan when it could commit earlier than that
        if self._first_cmd_time(entry, at) < self._pending_commit_at:
            self._replan()

    # --- modes ----------------------------------------------------------------

    def _update_mode(self) -> None:
        depth = self.cfg.wpq_depth
        high = math.ceil(self.cfg.write_major_watermark * depth)
        low = int(max(self.cfg.write_major_watermark - 0.25, 0.0) * depth)
        occ = self.wpq.occupying
        if not self._write_major and occ >= high:
            self._write_major = True
        elif self._write_major and occ <= low:
            self._write_major = False

    def major_mode(self, at: int) -> MajorMode:
        return MajorMode.WRITE_MAJOR if self._write_major else MajorMode.READ_MAJOR

    def wpq_lookup(self, address: int):
        bank, row, col = self._decode(address)
        entry = self._wmap.get((bank, row, col))
        if entry is not None and entry.state == PENDING:
            return ForwardHit()
        return Miss()

    # --- planning -------------------------------------------------------------

    def _first_cmd_time(self, entry: QueueEntry, now: int) -> int:
        b = self.dram.banks[entry.bank]
        if b.open_row == entry.row:
            t = b.rd_ready
            ch = self.dram.channel_rd_ready
            if ch > t:
                t = ch
        elif b.open_row is None:
            t = b.act_ready
        else:
            t = b.pre_ready
        return t if t > now else now

    def _plan(self, now: int):
        if self._write_major and self.wpq.pending:
            q = self.wpq
        else:
            q = self.rpq
        head = q.head()
        if head is None:
            return None
        if now - head.arrival >= self.cfg.starvation_age_cap:
            return head, self._first_cmd_time(head, now)
        # A hit merges into an open-row episode only if it arrived within W
        # requests of the entry that opened the row: the scan never reaches
        # deeper than W entries past the episode head, regardless of how
        # other banks' slots drain meanwhile.  Misses follow the live window.
        boundary = q.boundary_seq()
        banks = self.dram.banks
        rowq = q.rowq
        hit_bound = q.hit_bound
        best_hit = None
        for bank_id in q.bankq:
            open_row = banks[bank_id].open_row
            if open_row is None:
                continue
            dq = rowq.get((bank_id, open_row))
            if not dq:
                continue
            while dq and dq[0].state != PENDING:
                dq.popleft()
            if not dq:
                continue
            e = dq[0]
            bound = hit_bound.get(bank_id, _INF)
            if bound > boundary:
                bound = boundary
            if e.seq <= bound and (best_hit is None or e.seq < best_hit.seq):
                best_hit = e
        if best_hit is not None:
            return best_hit, self._first_cmd_time(best_hit, now)
        trp = self.dram.timings.trp
        best = None
        best_act = 0
        for bank_id, dq in q.bankq.items():
            while dq and dq[0].state != PENDING:
                dq.popleft()
            if not dq:
                continue
            e = dq[0]
            if e.seq > boundary:
                continue
            b = banks[bank_id]
            if b.open_row is None:
                act = b.act_ready
                if act < now:
                    act = now
            else:
                pre = b.pre_ready
                if pre < now:
                    pre = now
                act = pre + trp
                if act < b.act_ready:
                    act = b.act_ready
            if best is None or act < best_act \
                    or (act == best_act and e.seq < best.seq):
                best = e
                best_act = act
        if best is None:
            return None
        return best, self._first_cmd_time(best, now)

    def select_next(self, at: int) -> Optional[QueueEntry]:
        """The entry the scheduler would commit at `at`."""
        self._drain_frees(at)
        plan = self._plan(at)
        return plan[0] if plan else None

    # --- commit and slot release ----------------------------------------------

    def _drain_frees(self, now: int) -> None:
        fq = self._free_q
        while fq and fq[0][0] <= now:
            done_at, entry = fq.popleft()
            q = self.wpq if entry.is_write else self.rpq
            q.release(entry)
            if entry.is_write:
                self._update_mode()
            if self.on_release is not None:
                self.on_release(entry.is_write)
            if not entry.is_write and self.on_read_done is not None:
                self.on_read_done(entry, done_at)

    def _on_free_event(self, _arg) -> None:
        self._drain_frees(self.sim.now)
        if self.rpq.pending or (self._write_major and self.wpq.pending):
            self._replan()

    def _replan(self) -> None:
        self._gen += 1
        self._pending_commit_at = _INF
        self._commit_loop()

    def _on_commit_event(self, gen: int) -> None:
        if gen == self._gen:
            self._pending_commit_at = _INF
            self._commit_loop()

    def _commit_loop(self) -> None:
        sim = self.sim
        while True:
            self._drain_frees(sim.now)
            plan = self._plan(sim.now)
            if plan is None:
                return
            entry, fc = plan
            if fc > sim.now:
                self._gen += 1
                self._pending_commit_at = fc
                sim.post(fc, self._on_commit_event, self._gen,
                         target="memctrl", kind="commit")
                return
            self._execute(entry)

    def _low_credit(self) -> bool:
        # elision is only safe while the transmitter cannot be near credit
        # exhaustion: a blocked device generates no events to drain frees
        return (self.rpq.occupying + 8 >= self.cfg.rpq_depth
                or self.wpq.occupying + 4 >= self.cfg.wpq_depth)

    def _cmd(self, at: int, bank: int, op: str, row: int) -> None:
        if self.cmd_trace is not None:
            self.cmd_trace.append((at, bank, op, row))

    def _execute(self, entry: QueueEntry) -> None:
        now = self.sim.now
        dram = self.dram
        t = dram.timings
        b = dram.banks[entry.bank]
        q = self.wpq if entry.is_write else self.rpq
        if self.displacement_hist is not None:
            disp = 0
            for e in q.order[q.sel_idx:]:
                if e is entry:
                    break
                if e.state == PENDING:
                    disp += 1
            self.displacement_hist[disp] = self.displacement_hist.get(disp, 0) + 1

        if not entry.is_write:
            fwd = self._wmap.get((entry.bank, entry.row, entry.col))
            if fwd is not None and fwd.state == PENDING:
                # served straight from the write queue: no DRAM commands,
                # and the slot frees immediately
                self.forwarded += 1
                self.served += 1
                q.commit(entry)
                q.release(entry)
                if self.on_release is not None:
                    self.on_release(False)
                if self.on_read_done is not None:
                    self.on_read_done(entry, now)
                return

        if b.open_row == entry.row:
            col_at = b.rd_ready
            ch = dram.channel_rd_ready
            if ch > col_at:
                col_at = ch
            if now > col_at:
                col_at = now
            dram.notify_hit(entry.bank, entry.row, col_at)
        else:
            if b.open_row is not None:
                pre = b.pre_ready if b.pre_ready > now else now
                self._cmd(pre, entry.bank, "PRE", b.open_row)
                b.open_row = None
                if b.act_ready < pre + t.trp:
                    b.act_ready = pre + t.trp
            act = b.act_ready if b.act_ready > now else now
            self._cmd(act, entry.bank, "ACT", entry.row)
            b.open_row = entry.row
            b.last_act = act
            b.act_ready = act + t.trc
            b.rd_ready = act + t.trcd
            b.pre_ready = act + t.tras
            b.last_cmd = act
            # merge reach: at most W entries past the episode head
            q.hit_bound[entry.bank] = entry.seq + self.cfg.window
            dram.notify_act(entry.bank, entry.row, act)
            col_at = b.rd_ready
            ch = dram.channel_rd_ready
            if ch > col_at:
                col_at = ch

        if entry.is_write and self.cfg.underfill_reads and entry.length_dw < 16:
            # partial write: one underfill read fills out the 64-byte line
            self._cmd(col_at, entry.bank, "RD", entry.row)
            self.underfill_rds += 1
            b.rd_ready = col_at + t.tccd
            dram.channel_rd_ready = col_at + t.tccd
            col_at = col_at + t.tccd

        self._cmd(col_at, entry.bank, "WR" if entry.is_write else "RD",
                  entry.row)
        b.rd_ready = col_at + t.tccd
        dram.channel_rd_ready = col_at + t.tccd
        if b.pre_ready < col_at + t.tccd:
            b.pre_ready = col_at + t.tccd
        b.last_cmd = col_at
        self.served += 1
        q.commit(entry)
        if entry.is_write:
            self._wmap.pop((entry.bank, entry.row, entry.col), None)
        # the queue slot deallocates when the column command issues; the
        # wake-up event is elided when nothing can depend on it promptly
        # (idle queue, ample credits, no completion consumer): the release
        # then happens at the next controller activity, which is at or
        # before the next time anything could observe the difference
        self._free_q.append((col_at, entry))
        if col_at > now:
            if (q.pending or q.occupying > self.cfg.window
                    or self.on_read_done is not None or self._low_credit()):
                self.sim.post(col_at, self._on_free_event, None,
                              target="memctrl", kind="free")
