"""Bandwidth-, encoding- and credit-limited link model.

The serializer drains one packet per transmit time; a small egress buffer
(``tx_fifo_depth`` packets) sits in front of it, so offers throttle with
``lane_capacity`` once the buffer is full.  Non-posted/posted credits are
wired to the controller queue depths and throttle with ``credit_exhausted``
when the downstream queue is full.  The link never reorders: delivery order
equals acceptance order.

A Thunderbolt-tunnelled attachment is just another LinkConfig; the tunnel
shows up as an efficiency factor on the achievable bit rate.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, Optional, Union

from .engine import Simulator
from .tlp import Tlp, TlpKind, wire_size
from .units import NS

Overhead = Union[int, Fraction]


class ThrottleCause(Enum):
    LANE_CAPACITY = "lane_capacity"
    CREDIT_EXHAUSTED = "credit_exhausted"


@dataclass(frozen=True)
class Accepted:
    delivery: int


@dataclass(frozen=True)
class Throttled:
    cause: ThrottleCause


@dataclass
class LinkConfig:
    lane_rate_gbps: Fraction = Fraction(5)
    lanes: int = 4
    encoding_efficiency: Fraction = Fraction(4, 5)   # 8b/10b
    framing_overhead_bytes: Overhead = Fraction(82, 5)
    tx_granularity: int = 8 * NS
    latency: int = 0
    tunnel_efficiency: Fraction = Fraction(1)
    tx_fifo_depth: int = 2

    def __post_init__(self):
        if self.lane_rate_gbps <= 0:
            raise ValueError("lane_rate_gbps must be positive")
        if self.lanes not in (1, 2, 4, 8, 16):
            raise ValueError(f"unsupported lane count {self.lanes}")
        if not 0 < self.encoding_efficiency <= 1:
            raise ValueError("encoding_efficiency must be in (0, 1]")
        if not 0 < self.tunnel_efficiency <= 1:
            raise ValueError("tunnel_efficiency must be in (0, 1]")
        if self.tx_granularity <= 0 or self.tx_granularity % NS:
            raise ValueError("tx_granularity must be a positive multiple of 1 ns")
        if self.framing_overhead_bytes < 0:
            raise ValueError("framing overhead cannot be negative")
        if self.tx_fifo_depth < 1:
            raise ValueError("tx_fifo_depth must be >= 1")

    def bits_per_ns(self) -> Fraction:
        return (Fraction(self.lane_rate_gbps) * self.lanes
                * self.encoding_efficiency * self.tunnel_efficiency)


def transmit_time(tlp: Tlp, cfg: LinkConfig) -> int:
    """Serialization time in ps, rounded up to the 1 ps model tick."""
    bits = Fraction(wire_size(tlp, cfg.framing_overhead_bytes)) * 8
    dur = bits * NS / cfg.bits_per_ns()
    return -(-dur.numerator // dur.denominator)


def calibrate_framing_overhead(cfg: LinkConfig, target_period: int) -> Fraction:
    """Overhead bytes that make a minimal read TLP serialize in target_period.

    Inverts the transmit-time arithmetic exactly; raises if the target is
    below the zero-overhead serialization time.
    """
    read = Tlp(TlpKind.MEM_READ64, address=0, length_dw=1)
    target_bits = Fraction(target_period) * cfg.bits_per_ns() / NS
    overhead = target_bits / 8 - Fraction(read.header_bits, 8)
    if overhead < 0:
        floor = transmit_time(read, LinkConfig(
            cfg.lane_rate_gbps, cfg.lanes, cfg.encoding_efficiency, 0,
            cfg.tx_granularity, cfg.latency, cfg.tunnel_efficiency,
            cfg.tx_fifo_depth))
        raise ValueError(
            f"target {target_period} ps below zero-overhead time {floor} ps")
    return overhead


@dataclass
class ThrottleLog:
    """Non-overlapping, time-ordered throttle episodes."""

    episodes: list = field(default_factory=list)  # (start, end, cause)
    _open: Optional[list] = None

    def throttled(self, at: int, cause: ThrottleCause) -> None:
        if self._open is not None and self._open[2] is cause:
            self._open[1] = at
            return
        self._close()
        self._open = [at, at, cause]

    def cleared(self, _at: int) -> None:
        self._close()

    def finish(self, _at: int) -> None:
        self._close()

    def _close(self) -> None:
        # episode end is the last throttled offer, keeping episodes disjoint
        if self._open is not None:
            start, last, cause = self._open
            self.episodes.append((start, last, cause))
            self._open = None

    def count(self, cause: Optional[ThrottleCause] = None) -> int:
        open_extra = 0
        if self._open is not None and (cause is None or self._open[2] is cause):
            open_extra = 1
        if cause is None:
            return len(self.episodes) + open_extra
        return sum(1 for e in self.episodes if e[2] is cause) + open_extra

    def export_csv(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write("start_ps,end_ps,cause\n")
            for start, end, cause in self.episodes:
                fh.write(f"{start},{end},{cause.value}\n")


class CreditState:
    """Per-class flow-control credits; transmission blocks at zero."""

    __slots__ = ("nonposted_max", "posted_max", "nonposted", "posted")

    def __init__(self, nonposted_max: int, posted_max: int):
        self.nonposted_max = nonposted_max
        self.posted_max = posted_max
        self.nonposted = nonposted_max
        self.posted = posted_max

    def release_nonposted(self, n: int = 1) -> None:
        self.nonposted = min(self.nonposted + n, self.nonposted_max)

    def release_posted(self, n: int = 1) -> None:
        self.posted = min(self.posted + n, self.posted_max)


class Link:
    """Request-direction link: serializer, egress buffer and credits."""

    def __init__(self, sim: Simulator, cfg: LinkConfig, name: str = "link"):
        self.sim = sim
        self.cfg = cfg
        self.name = name
        self.sink: Optional[Callable[[Tlp, int], None]] = None
        self.credits = CreditState(1 << 30, 1 << 30)
        self.log = ThrottleLog()
        self.lane_throttles = 0
        self.credit_throttles = 0
        self.first_credit_throttle: Optional[int] = None
        self.accepted = 0
        self._ser_free = 0
        self._fifo_ends: deque = deque()
        self._dur_cache: dict = {}

    def wire_credits(self, nonposted_max: int, posted_max: int) -> None:
        self.credits = CreditState(nonposted_max, posted_max)

    def _duration(self, tlp: Tlp) -> int:
        key = (tlp.kind, tlp.length_dw)
        dur = self._dur_cache.get(key)
        if dur is None:
            dur = transmit_time(tlp, self.cfg)
            self._dur_cache[key] = dur
        return dur

    def offer(self, tlp: Tlp, at: int):
        """Offer one packet at a grid-aligned instant."""
        if at % self.cfg.tx_granularity:
            raise ValueError(f"offer at {at} ps not aligned to tx granularity")
        credits = self.credits
        kind = tlp.kind
        if kind is TlpKind.MEM_READ64:
            if credits.nonposted <= 0:
                return self._throttle(at, ThrottleCause.CREDIT_EXHAUSTED)
        elif kind is TlpKind.MEM_WRITE64:
            if credits.posted <= 0:
                return self._throttle(at, ThrottleCause.CREDIT_EXHAUSTED)
        ends = self._fifo_ends
        while ends and ends[0] <= at:
            ends.popleft()
        if len(ends) >= self.cfg.tx_fifo_depth:
            return self._throttle(at, ThrottleCause.LANE_CAPACITY)
        if kind is TlpKind.MEM_READ64:
            credits.nonposted -= 1
        elif kind is TlpKind.MEM_WRITE64:
            credits.posted -= 1
        start = at if at > self._ser_free else self._ser_free
        dur = self._dur_cache.get((kind, tlp.length_dw))
        if dur is None:
            dur = self._duration(tlp)
        end = start + dur
        self._ser_free = end
        ends.append(end)
        delivery = end + self.cfg.latency
        self.accepted += 1
        if self.log._open is not None:
            self.log.cleared(at)
        self.sim.post(delivery, self._deliver, tlp, target=self.name,
                      kind="deliver")
        return Accepted(delivery)

    def _deliver(self, tlp: Tlp) -> None:
        self.sink(tlp, self.sim.now)

    def _throttle(self, at: int, cause: ThrottleCause):
        if cause is ThrottleCause.LANE_CAPACITY:
            self.lane_throttles += 1
        else:
            self.credit_throttles += 1
            if self.first_credit_throttle is None:
                self.first_credit_throttle = at
        self.log.throttled(at, cause)
        return Throttled(cause)


class ReturnPath:
    """Completion direction: a serializer plus the optional root-complex
    reorder stage (small bounded window, keyed on bank group)."""

    def __init__(self, sim: Simulator, cfg: LinkConfig,
                 deliver: Callable[[int, int, int], None],
                 rc_reorder: bool = False, rc_window: int = 20 * NS):
        self.sim = sim
        self.cfg = cfg
        self.deliver = deliver          # (tag, bank_group, time)
        self.rc_reorder = rc_reorder
        self.rc_window = rc_window
        self._free = 0
        self._held = None               # (tag, bank_group)
        self._held_gen = 0
        comp = Tlp(TlpKind.COMPLETION, length_dw=1)
        self._dur = transmit_time(comp, cfg)

    def send(self, tag: int, bank_group: int, at: int) -> None:
        if not self.rc_reorder:
            self._emit(tag, bank_group, at)
            return
        if self._held is None:
            self._held = (tag, bank_group)
            self._held_gen += 1
            self.sim.post(at + self.rc_window, self._flush, self._held_gen,
                          target="rc", kind="flush")
            return
        htag, hgroup = self._held
        self._held = None
        self._held_gen += 1
        if bank_group != hgroup:
            # cross-group pair swaps; same-group order is preserved
            self._emit(tag, bank_group, at)
            self._emit(htag, hgroup, at)
        else:
            self._emit(htag, hgroup, at)
            self._emit(tag, bank_group, at)

    def _flush(self, gen: int) -> None:
        if self._held is not None and gen == self._held_gen:
            tag, group = self._held
            self._held = None
            self._emit(tag, group, self.sim.now)

    def _emit(self, tag: int, bank_group: int, at: int) -> None:
        start = at if at > self._free else self._free
        end = start + self._dur
        self._free = end
        self.sim.post(end + self.cfg.latency, self._arrive, (tag, bank_group),
                      target="rc", kind="completion")

    def _arrive(self, arg) -> None:
        tag, group = arg
        self.deliver(tag, group, self.sim.now)


class Transmitter:
    """Device-side pacing: offers TLPs on the transmit grid, retrying
    throttled packets at the next grid slot.

    Two pacing modes:
      * mean-paced: cumulative ideal times ``k * mean`` snapped up to the
        grid, which realizes fractional mean periods by mixing two adjacent
        grid gaps;
      * gap-paced: an explicit repeating gap sequence, each gap measured from
        the previous accepted transmission (batch timing survives stalls).
    """

    def __init__(self, sim: Simulator, link: Link, addresses: list[int],
                 mean_period: Optional[Fraction] = None,
                 gaps: Optional[list[int]] = None,
                 stop_on_credit: bool = False,
                 read_length_dw: int = 1,
                 primer: int = 0,
                 name: str = "device"):
        if (mean_period is None) == (gaps is None):
            raise ValueError("exactly one of mean_period/gaps required")
        self.sim = sim
        self.link = link
        self.name = name
        self.gran = link.cfg.tx_granularity
        self.stop_on_credit = stop_on_credit
        self.primer = primer        # best-effort prefix burst before pacing
        self.halted = False
        self.sent = 0
        self.send_times: Optional[list] = None   # enable for diagnostics
        self._k = 0
        self._gaps = gaps
        if mean_period is not None:
            mp = Fraction(mean_period)
            self._num, self._den = mp.numerator, mp.denominator
        else:
            self._num = self._den = 0
            if primer:
                raise ValueError("primer burst applies to mean-paced streams")
            for g in gaps:
                if g < 0 or g % self.gran:
                    raise ValueError("gaps must be non-negative grid multiples")
        # reads in attack and probe streams never set relaxed ordering
        self._pool = [
            Tlp(TlpKind.MEM_READ64, address=a, length_dw=read_length_dw, tag=i)
            for i, a in enumerate(addresses)
        ]

    def start(self, at: int = 0) -> None:
        self.sim.post(at, self._fire, None, target=self.name, kind="send")

    def halt(self) -> None:
        self.halted = True

    def _ideal(self, k: int) -> int:
        # ceil((k - primer) * mean) then ceil to grid
        k -= self.primer
        if k <= 0:
            return 0
        t = -(-k * self._num // self._den)
        return -(-t // self.gran) * self.gran

    def _fire(self, _arg) -> None:
        if self.halted:
            return
        sim = self.sim
        now = sim.now
        k = self._k
        pool = self._pool
        res = self.link.offer(pool[k % len(pool)], now)
        if type(res) is Accepted:
            self.sent += 1
            if self.send_times is not None:
                self.send_times.append(now)
            self._k = k = k + 1
            if self._gaps is not None:
                nxt = now + self._gaps[(k - 1) % len(self._gaps)]
            else:
                nxt = self._ideal(k)
            if nxt <= now:
                nxt = now + self.gran
            sim.post(nxt, self._fire, None, target=self.name, kind="send")
        else:
            if self.stop_on_credit and res.cause is ThrottleCause.CREDIT_EXHAUSTED:
                self.halted = True
                return
            sim.post(now + self.gran, self._fire, None,
                     target=self.name, kind="send")
