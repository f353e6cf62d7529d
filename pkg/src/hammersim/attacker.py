"""Hammering pattern synthesis, timing schedules and end-to-end runs.

A batch pattern hammers R aggressor rows in each of B banks, interleaved
across banks, paced by an intra-batch gap and an inter-batch gap on the
transmit grid.  Three conditions characterize effective timing against the
controller's reordering (cycle time tRC, bank count B, mean gap m):

  c1  m > tRC / B            request rate below the B-bank serviceable rate
  c2  inter-batch gap > 2 tRC    the queue drains and settles between batches
  c3  intra-batch gap < tRC / B  requests reach the controller as a burst

Flip reports compare against a "native profile": the same aggressor set
driven by direct activations at full per-bank rate, bypassing the link,
which mirrors profiling the target from software.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .config import ExperimentConfig
from .dram import DramTimings, FlipMask
from .link import Transmitter
from .memctrl import AddressMap
from .system import System, SystemOptions
from .units import MS, NS


@dataclass(frozen=True)
class TimingParams:
    """Per-batch pacing: intra-batch gap, inter-batch gap, batch size."""

    delta_p: int
    delta_b: int
    batch_size: int
    grid: int = 8 * NS

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        for name in ("delta_p", "delta_b"):
            v = getattr(self, name)
            if v < 0 or v % self.grid:
                raise ValueError(f"{name} must be a non-negative multiple of "
                                 f"{self.grid} ps")

    @property
    def t_b(self) -> int:
        return self.delta_p * (self.batch_size - 1) + self.delta_b

    @property
    def mean_delta_p(self) -> Fraction:
        return Fraction(self.t_b, self.batch_size)

    def gaps(self) -> list[int]:
        return [self.delta_p] * (self.batch_size - 1) + [self.delta_b]


def check_conditions(t: TimingParams, d: DramTimings, b: int
                     ) -> tuple[bool, bool, bool]:
    per_bank_rate_period = Fraction(d.trc, b)
    c1 = t.mean_delta_p > per_bank_rate_period
    c2 = t.delta_b > 2 * d.trc
    c3 = t.delta_p < per_bank_rate_period
    return c1, c2, c3


@dataclass
class BatchPattern:
    """Aggressor rows flanking known-flippy victims, across B banks."""

    b: int
    r: int
    aggressors: list            # [(bank, row)] in transmission order
    victims: list               # [(bank, row)]
    addresses: list             # encoded, same order as aggressors
    timing: TimingParams

    def rows_by_bank(self) -> dict:
        out: dict = {}
        for bank, row in self.aggressors:
            out.setdefault(bank, []).append(row)
        return out

    def to_json(self) -> dict:
        return {
            "b": self.b,
            "r": self.r,
            "timing": {"delta_p_ps": self.timing.delta_p,
                       "delta_b_ps": self.timing.delta_b,
                       "batch_size": self.timing.batch_size},
            "aggressors": [{"bank": bank, "row": row, "address": addr}
                           for (bank, row), addr
                           in zip(self.aggressors, self.addresses)],
            "victims": [{"bank": bank, "row": row}
                        for bank, row in self.victims],
        }

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, d: dict) -> "BatchPattern":
        try:
            timing = TimingParams(d["timing"]["delta_p_ps"],
                                  d["timing"]["delta_b_ps"],
                                  d["timing"]["batch_size"])
            aggressors = [(a["bank"], a["row"]) for a in d["aggressors"]]
            addresses = [a["address"] for a in d["aggressors"]]
            victims = [(v["bank"], v["row"]) for v in d.get("victims", [])]
            return cls(d["b"], d["r"], aggressors, victims, addresses, timing)
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed pattern file: {exc}") from exc

    @classmethod
    def load(cls, path: str) -> "BatchPattern":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def synthesize(cfg: ExperimentConfig, b: int, r: int,
               timing: TimingParams, rng_seed: Optional[int] = None
               ) -> BatchPattern:
    """Place aggressors around flippy victims: double-sided per victim where
    possible, one single-sided leftover for odd R."""
    geometry = cfg.dimm.geometry
    if b < 1 or r < 1:
        raise ValueError("need B >= 1 and R >= 1")
    if r > geometry.rows_per_bank:
        raise ValueError("R exceeds rows per bank")
    if b > geometry.total_banks:
        raise ValueError("B exceeds bank count")
    if timing.batch_size != b * r:
        raise ValueError("timing batch_size must equal B x R")
    mask = FlipMask(cfg.dimm.flip)
    rng = random.Random(cfg.seed if rng_seed is None else rng_seed)
    banks = rng.sample(range(geometry.total_banks), b)
    n_victims = (r + 1) // 2
    rows_max = geometry.rows_per_bank
    per_bank_rows: dict = {}
    victims: list = []
    for bank in banks:
        start = rng.randrange(rows_max)
        chosen: list[int] = []
        last = None
        for row in mask.flippy_rows(bank, start, rows_max):
            if row < 2 or row > rows_max - 3:
                continue
            if last is not None and abs(row - last) < 6:
                continue
            chosen.append(row)
            last = row
            if len(chosen) == n_victims:
                break
        if len(chosen) < n_victims:
            raise ValueError(
                f"geometry cannot supply {n_victims} spaced flippy victims "
                f"in bank {bank}")
        # double-sided placement; odd R leaves the last victim single-sided
        rows: list[int] = []
        for v in chosen:
            rows.append(v - 1)
            if len(rows) < r:
                rows.append(v + 1)
            if len(rows) >= r:
                break
        per_bank_rows[bank] = rows
        victims.extend((bank, v) for v in chosen)
    aggressors = [(bank, per_bank_rows[bank][i])
                  for i in range(r) for bank in banks]
    addr_map = AddressMap(geometry)
    addresses = []
    per_rank = geometry.bank_groups * geometry.banks_per_group
    for bank, row in aggressors:
        channel, rest = divmod(bank, geometry.ranks * per_rank)
        rank, within = divmod(rest, per_rank)
        group, within_bank = divmod(within, geometry.banks_per_group)
        addresses.append(addr_map.encode(channel, rank, group, within_bank,
                                         row, 0))
    return BatchPattern(b, r, aggressors, victims, addresses, timing)


@dataclass
class FlipReport:
    flips: list = field(default_factory=list)   # (bank, row, bit, time_ps)
    total_acts_per_aggressor: dict = field(default_factory=dict)
    reproduced_fraction: Optional[float] = None
    requests_sent: int = 0
    throttle_episodes: int = 0
    credit_throttles: int = 0
    lane_throttles: int = 0
    displacement_hist: dict = field(default_factory=dict)
    duration: int = 0

    def victim_rows(self) -> set:
        return {(bank, row) for bank, row, _bit, _t in self.flips}

    def flip_bits(self) -> set:
        return {(bank, row, bit) for bank, row, bit, _t in self.flips}

    def to_json(self) -> dict:
        return {
            "duration_ps": self.duration,
            "requests_sent": self.requests_sent,
            "throttle_episodes": self.throttle_episodes,
            "credit_throttles": self.credit_throttles,
            "lane_throttles": self.lane_throttles,
            "reproduced_fraction": self.reproduced_fraction,
            "flip_count": len(self.flips),
            "flips": [{"bank": b, "row": r, "bit": bit, "time_ps": t}
                      for b, r, bit, t in self.flips],
            "acts_per_aggressor": {f"{b}:{r}": n for (b, r), n
                                   in sorted(self.total_acts_per_aggressor.items())},
            "displacement_hist": {str(k): v for k, v
                                  in sorted(self.displacement_hist.items())},
        }

    def save_json(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    def save_csv(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write("bank,row,bit,time_ps\n")
            for bank, row, bit, t in self.flips:
                fh.write(f"{bank},{row},{bit},{t}\n")


def run_hammer(cfg: ExperimentConfig, pattern: BatchPattern, duration: int,
               trr_override: Optional[bool] = None,
               profile: Optional[FlipReport] = None,
               cmd_trace: Optional[list] = None) -> FlipReport:
    """Stream the pattern for `duration`, honoring grid pacing and
    back-pressure (throttled packets retry at the next grid slot)."""
    options = SystemOptions(stats=True, trr_override=trr_override,
                            cmd_trace=cmd_trace is not None)
    system = System(cfg, options)
    tx = Transmitter(system.sim, system.link, pattern.addresses,
                     gaps=pattern.timing.gaps())
    tx.start(0)
    system.run_until(duration)
    system.link.log.finish(duration)
    if cmd_trace is not None:
        cmd_trace.extend(system.cmd_trace)
    report = FlipReport(
        flips=system.dram.collect_flips(duration),
        requests_sent=tx.sent,
        throttle_episodes=system.link.log.count(),
        credit_throttles=system.link.credit_throttles,
        lane_throttles=system.link.lane_throttles,
        displacement_hist=dict(system.mc.displacement_hist or {}),
        duration=duration,
    )
    acts = system.dram.disturb.act_counts
    report.total_acts_per_aggressor = {
        key: acts.get(key, 0) for key in pattern.aggressors}
    if profile is not None:
        report.reproduced_fraction = reproduced_fraction(report, profile)
    return report


def run_profile(cfg: ExperimentConfig, pattern: BatchPattern,
                duration: int) -> FlipReport:
    """Idealized native hammer: per-bank activations at full rate, injected
    directly at the DRAM (no link, no controller queueing)."""
    system = System(cfg, SystemOptions())
    dram = system.dram
    trc = cfg.dimm.timings.trc
    rows_by_bank = pattern.rows_by_bank()
    cursors = {bank: 0 for bank in rows_by_bank}

    def act(bank: int) -> None:
        rows = rows_by_bank[bank]
        idx = cursors[bank]
        cursors[bank] = (idx + 1) % len(rows)
        now = system.sim.now
        dram.notify_act(bank, rows[idx], now)
        system.sim.post(now + trc, act, bank, target="native", kind="act")

    for bank in rows_by_bank:
        system.sim.post(0, act, bank, target="native", kind="act")
    system.run_until(duration)
    report = FlipReport(flips=dram.collect_flips(duration), duration=duration)
    report.total_acts_per_aggressor = {
        key: dram.disturb.act_counts.get(key, 0) for key in pattern.aggressors}
    return report


def reproduced_fraction(report: FlipReport, profile: FlipReport) -> float:
    base = profile.flip_bits()
    if not base:
        return 0.0
    return len(report.flip_bits() & base) / len(base)


@dataclass
class TunePoint:
    b: int
    r: int
    delta_p: int
    delta_b: int
    conditions: tuple = (False, False, False)
    flips: int = 0
    reproduced: float = 0.0


def tune(cfg: ExperimentConfig, grid: list[tuple[int, int, int, int]],
         budget: int, duration: int = 16 * MS,
         jobs: int = 1) -> list[TunePoint]:
    """Evaluate grid points (B, R, delta_p, delta_b) in deterministic
    lexicographic order; rank by reproduced fraction, then flip count, then
    lexicographic parameters."""
    if not grid:
        raise ValueError("empty tuning grid")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    points = sorted(set(grid))[:budget]
    profiles: dict = {}
    results: list[TunePoint] = []
    if jobs > 1:
        import multiprocessing as mp
        with mp.Pool(jobs) as pool:
            results = pool.starmap(
                _tune_point, [(cfg, p, duration) for p in points])
    else:
        for p in points:
            results.append(_tune_point(cfg, p, duration, profiles))
    results.sort(key=lambda tp: (-tp.reproduced, -tp.flips,
                                 (tp.b, tp.r, tp.delta_p, tp.delta_b)))
    return results


def _tune_point(cfg: ExperimentConfig, point: tuple, duration: int,
                profiles: Optional[dict] = None) -> TunePoint:
    b, r, dp, db = point
    timing = TimingParams(dp, db, b * r)
    pattern = synthesize(cfg, b, r, timing)
    key = (b, r)
    profile = profiles.get(key) if profiles is not None else None
    if profile is None:
        profile = run_profile(cfg, pattern, duration)
        if profiles is not None:
            profiles[key] = profile
    report = run_hammer(cfg, pattern, duration, profile=profile)
    return TunePoint(b, r, dp, db,
                     conditions=check_conditions(timing, cfg.dimm.timings, b),
                     flips=len(report.flips),
                     reproduced=report.reproduced_fraction or 0.0)
