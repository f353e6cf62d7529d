"""Per-bank DRAM state machine: timing enforcement, refresh bookkeeping and
the activation-disturbance (bitflip) model.

Command legality follows the usual per-bank constraints (tRC between
activations, tRCD activate-to-read, tCCD between column commands, tRP after
precharge, tRAS before precharge) plus a channel-wide tCCD on the shared data
bus.  Refresh commands are timing-transparent: their modeled effects are the
retention bookkeeping and the TRR hook, not bank stalls.

Bitflips use a deterministic threshold model: a seeded subset of rows is
"flippy"; each flippy row carries a few candidate bits whose thresholds start
at the configured activation count and spread upward, so stronger hammering
flips more bits.  Crossings latch: a flipped bit stays flipped even after the
row's counters reset.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

from .units import MS, NS, US


@dataclass(frozen=True)
class DramTimings:
    trc: int = 46750          # min ACT-to-ACT, same bank
    tras: int = 32250
    trp: int = 14500
    trcd: int = 14500
    tccd: int = 4 * NS        # min RD-to-RD / WR-to-WR
    trefi: int = 7812500      # refresh command interval
    refresh_window: int = 64 * MS

    def __post_init__(self):
        for name in ("trc", "tras", "trp", "trcd", "tccd", "trefi",
                     "refresh_window"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.trc != self.tras + self.trp:
            raise ValueError("tRC must equal tRAS + tRP")


@dataclass(frozen=True)
class Geometry:
    channels: int = 1
    ranks: int = 1
    bank_groups: int = 4
    banks_per_group: int = 4
    rows_per_bank: int = 1 << 16
    columns: int = 1 << 10

    def __post_init__(self):
        for name in ("channels", "ranks", "bank_groups", "banks_per_group",
                     "rows_per_bank", "columns"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def total_banks(self) -> int:
        return self.channels * self.ranks * self.bank_groups * self.banks_per_group

    def bank_group_of(self, bank_id: int) -> int:
        return (bank_id // self.banks_per_group) % self.bank_groups


@dataclass(frozen=True)
class FlipModelConfig:
    mask_seed: int = 1
    flip_threshold: int = 50_000
    flippy_denominator: int = 1024    # about one row in 2**10 can flip
    bits_per_row: int = 8
    threshold_spread: int = 7         # extra bits need up to (1+spread)x
    sum_sides: bool = True
    blast_radius: int = 1

    def __post_init__(self):
        if self.blast_radius != 1:
            raise ValueError("only blast_radius=1 (immediate neighbors) is modeled")
        if self.flip_threshold < 1 or self.flippy_denominator < 1:
            raise ValueError("bad flip model parameters")
        if self.bits_per_row < 1:
            raise ValueError("bits_per_row must be >= 1")


class FlipMask:
    """Seeded ground truth of flippy rows and their per-bit thresholds."""

    def __init__(self, cfg: FlipModelConfig):
        self.cfg = cfg
        self._key = struct.pack("<q", cfg.mask_seed)
        self._cache: dict = {}

    def _hash(self, bank: int, row: int, salt: int) -> int:
        h = hashlib.blake2b(struct.pack("<iqi", bank, row, salt),
                            digest_size=8, key=self._key)
        return int.from_bytes(h.digest(), "little")

    def is_flippy(self, bank: int, row: int) -> bool:
        return self._hash(bank, row, 0) % self.cfg.flippy_denominator == 0

    def profile(self, bank: int, row: int) -> tuple:
        """Sorted (threshold, bit) pairs for a row; empty if it cannot flip."""
        key = (bank, row)
        prof = self._cache.get(key)
        if prof is None:
            if self._hash(bank, row, 0) % self.cfg.flippy_denominator:
                prof = ()
            else:
                base = self.cfg.flip_threshold
                pairs = {}
                for i in range(self.cfg.bits_per_row):
                    h = self._hash(bank, row, 1 + i)
                    bit = h % 512
                    if i == 0:
                        thr = base
                    else:
                        frac = (h >> 9) & ((1 << 40) - 1)
                        thr = base + (base * self.cfg.threshold_spread * frac
                                      >> 40)
                    pairs.setdefault(bit, thr)
                prof = tuple(sorted((t, b) for b, t in pairs.items()))
            self._cache[key] = prof
        return prof

    def flippy_rows(self, bank: int, start_row: int, rows_per_bank: int):
        """Deterministic scan of flippy rows beginning at start_row, wrapping."""
        for off in range(rows_per_bank):
            row = (start_row + off) % rows_per_bank
            if self.is_flippy(bank, row):
                yield row


class BankState:
    """Open-row latch plus next-legal times per command class."""

    __slots__ = ("open_row", "act_ready", "rd_ready", "pre_ready",
                 "last_act", "last_cmd")

    def __init__(self):
        self.open_row: Optional[int] = None
        self.act_ready = 0
        self.rd_ready = 0
        self.pre_ready = 0
        self.last_act = -(1 << 60)
        self.last_cmd = 0


@dataclass
class Done:
    finish: int


@dataclass
class Illegal:
    kind: str      # "timing" | "state"
    detail: str


class DisturbanceState:
    """Per-row adjacent-activation counters and latched flips."""

    __slots__ = ("cfg", "mask", "counters", "next_bit", "flips", "act_counts")

    def __init__(self, cfg: FlipModelConfig, mask: FlipMask):
        self.cfg = cfg
        self.mask = mask
        self.counters: dict = {}      # bank -> {row: [left, right]}
        self.next_bit: dict = {}      # (bank, row) -> index into profile
        self.flips: list = []         # (bank, row, bit, time)
        self.act_counts: dict = {}    # (bank, row) -> ACT count

    def record_act(self, bank: int, row: int, at: int, rows_per_bank: int) -> None:
        key = (bank, row)
        self.act_counts[key] = self.act_counts.get(key, 0) + 1
        per_bank = self.counters.get(bank)
        if per_bank is None:
            per_bank = self.counters[bank] = {}
        if row + 1 < rows_per_bank:
            self._disturb(bank, per_bank, row + 1, 0, at)
        if row > 0:
            self._disturb(bank, per_bank, row - 1, 1, at)

    def _disturb(self, bank: int, per_bank: dict, victim: int, side: int,
                 at: int) -> None:
        cnt = per_bank.get(victim)
        if cnt is None:
            cnt = per_bank[victim] = [0, 0]
        cnt[side] += 1
        prof = self.mask.profile(bank, victim)
        if not prof:
            return
        effective = cnt[0] + cnt[1] if self.cfg.sum_sides else max(cnt)
        key = (bank, victim)
        idx = self.next_bit.get(key, 0)
        while idx < len(prof) and effective >= prof[idx][0]:
            self.flips.append((bank, victim, prof[idx][1], at))
            idx += 1
        if idx:
            self.next_bit[key] = idx

    def effective_count(self, bank: int, row: int) -> int:
        cnt = self.counters.get(bank, {}).get(row)
        if cnt is None:
            return 0
        return cnt[0] + cnt[1] if self.cfg.sum_sides else max(cnt)

    def reset_row(self, bank: int, row: int) -> None:
        per_bank = self.counters.get(bank)
        if per_bank is not None:
            per_bank.pop(row, None)
        self.next_bit.pop((bank, row), None)


class Dram:
    """All banks of one channel plus refresh and disturbance tracking."""

    def __init__(self, geometry: Geometry, timings: DramTimings,
                 flip_cfg: Optional[FlipModelConfig] = None,
                 trr=None, disturbance: bool = True):
        self.geometry = geometry
        self.timings = timings
        self.trr = trr
        self.banks = [BankState() for _ in range(geometry.total_banks)]
        self.channel_rd_ready = 0
        self.ref_index = 0
        refs = timings.refresh_window // timings.trefi
        self.refreshes_per_window = refs
        self.rows_per_ref = -(-geometry.rows_per_bank // refs)
        mask_cfg = flip_cfg or FlipModelConfig()
        self.flip_mask = FlipMask(mask_cfg)
        self.disturb: Optional[DisturbanceState] = (
            DisturbanceState(mask_cfg, self.flip_mask) if disturbance else None)

    # hooks used by the memory controller fast path --------------------------

    def notify_act(self, bank_id: int, row: int, at: int) -> None:
        if self.disturb is not None:
            self.disturb.record_act(bank_id, row, at,
                                    self.geometry.rows_per_bank)
        if self.trr is not None:
            self.trr.observe_act(bank_id, row, at)

    def notify_hit(self, bank_id: int, row: int, at: int) -> None:
        if self.trr is not None:
            self.trr.observe_hit(bank_id, row, at)

    # raw command interface ---------------------------------------------------

    def issue(self, cmd: tuple, bank_id: int, at: int):
        """Apply one command: ("ACT", row) | ("RD", col) | ("WR", col) |
        ("PRE",) | ("REF",).  Timing violations are reported before state
        violations."""
        b = self.banks[bank_id]
        if at < b.last_cmd:
            raise ValueError(
                f"command at {at} ps precedes bank time {b.last_cmd} ps")
        t = self.timings
        op = cmd[0]
        if op == "ACT":
            if at < b.act_ready:
                return Illegal("timing", "tRC/tRP not satisfied")
            if b.open_row is not None:
                return Illegal("state", "a row is already open")
            row = cmd[1]
            b.open_row = row
            b.last_act = at
            b.act_ready = at + t.trc
            b.rd_ready = at + t.trcd
            b.pre_ready = at + t.tras
            b.last_cmd = at
            self.notify_act(bank_id, row, at)
            return Done(at + t.trcd)
        if op in ("RD", "WR"):
            ready = b.rd_ready if b.rd_ready > self.channel_rd_ready \
                else self.channel_rd_ready
            if at < ready:
                return Illegal("timing", "tRCD/tCCD not satisfied")
            if b.open_row is None:
                return Illegal("state", "no open row")
            b.rd_ready = at + t.tccd
            self.channel_rd_ready = at + t.tccd
            if b.pre_ready < at + t.tccd:
                b.pre_ready = at + t.tccd
            b.last_cmd = at
            return Done(at + t.tccd)
        if op == "PRE":
            if at < b.pre_ready:
                return Illegal("timing", "tRAS/read-to-precharge not satisfied")
            if b.open_row is None:
                return Illegal("state", "no open row to precharge")
            b.open_row = None
            if b.act_ready < at + t.trp:
                b.act_ready = at + t.trp
            b.last_cmd = at
            return Done(at + t.trp)
        if op == "REF":
            b.last_cmd = at
            self.refresh_bank(bank_id, at)
            return Done(at)
        raise ValueError(f"unknown command {op!r}")

    # refresh ----------------------------------------------------------------

    def refresh_chunk(self, index: int) -> range:
        start = (index % self.refreshes_per_window) * self.rows_per_ref
        return range(start, min(start + self.rows_per_ref,
                                self.geometry.rows_per_bank))

    def refresh_bank(self, bank_id: int, at: int) -> list[int]:
        """One REF worth of work for a bank: retention chunk reset plus the
        TRR hook; returns the TRR-refreshed victim rows."""
        victims: list[int] = []
        if self.disturb is not None:
            per_bank = self.disturb.counters.get(bank_id)
            if per_bank:
                for row in self.refresh_chunk(self.ref_index):
                    if row in per_bank:
                        self.disturb.reset_row(bank_id, row)
        if self.trr is not None:
            rows = self.geometry.rows_per_bank
            for row in self.trr.on_refresh(bank_id, at):
                if 0 <= row < rows:
                    victims.append(row)
                    if self.disturb is not None:
                        self.disturb.reset_row(bank_id, row)
        return victims

    def refresh_all(self, at: int) -> None:
        """Periodic REF across banks; advances the retention chunk cursor."""
        active = set()
        if self.disturb is not None:
            active.update(b for b, rows in self.disturb.counters.items() if rows)
        if self.trr is not None:
            active.update(self.trr.active_banks())
        for bank_id in sorted(active):
            self.refresh_bank(bank_id, at)
        self.ref_index += 1

    def collect_flips(self, at: int) -> list[tuple]:
        """Latched (bank, row, bit, time) crossings observed so far."""
        if self.disturb is None:
            return []
        return [f for f in self.disturb.flips if f[3] <= at]
