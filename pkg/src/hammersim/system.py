"""Assembly of device link, memory controller, DRAM and TRR into one
simulation instance, plus the periodic refresh driver."""

from __future__ import annotations

from dataclasses import dataclass, replace

from .config import ExperimentConfig
from .dram import Dram
from .engine import Simulator
from .link import Link, ReturnPath
from .memctrl import AddressMap, MemController
from .trr import TrrConfig, TrrSampler
from .units import NS


@dataclass
class SystemOptions:
    track_completions: bool = False
    rc_reorder: bool = False
    cmd_trace: bool = False
    stats: bool = False
    disturbance: bool = True
    trr_override: bool | None = None     # force TRR on/off regardless of profile
    event_trace: bool = False
    data_latency: int = 15 * NS


class System:
    """One attacker-device -> link -> controller -> DRAM chain."""

    def __init__(self, cfg: ExperimentConfig,
                 options: SystemOptions | None = None):
        self.cfg = cfg
        self.options = options or SystemOptions()
        opt = self.options
        self.sim = Simulator(trace=opt.event_trace)
        trr_cfg = cfg.dimm.trr
        if opt.trr_override is not None:
            trr_cfg = replace(trr_cfg, enabled=opt.trr_override)
        self.trr = TrrSampler(trr_cfg)
        self.dram = Dram(cfg.dimm.geometry, cfg.dimm.timings,
                         flip_cfg=cfg.dimm.flip,
                         trr=None if self.trr.inert else self.trr,
                         disturbance=opt.disturbance)
        self.addr_map = AddressMap(cfg.dimm.geometry)
        self.link = Link(self.sim, cfg.link)
        self.link.wire_credits(cfg.controller.rpq_depth,
                               cfg.controller.wpq_depth)
        self.cmd_trace: list | None = [] if opt.cmd_trace else None
        self.completion_log: list = []
        on_read_done = None
        self.return_path = None
        if opt.track_completions:
            self.return_path = ReturnPath(
                self.sim, cfg.link, self._completion_arrived,
                rc_reorder=opt.rc_reorder)
            on_read_done = self._read_done
        self.mc = MemController(
            self.sim, cfg.controller, self.dram, self.addr_map,
            on_release=self._release_credit,
            on_read_done=on_read_done,
            cmd_trace=self.cmd_trace,
            stats=opt.stats)
        self.link.sink = self.mc.on_arrival
        self.sim.post(cfg.dimm.timings.trefi, self._refresh_tick, None,
                      target="dram", kind="ref")

    def _release_credit(self, is_write: bool) -> None:
        if is_write:
            self.link.credits.release_posted()
        else:
            self.link.credits.release_nonposted()

    def _read_done(self, entry, at: int) -> None:
        group = self.cfg.dimm.geometry.bank_group_of(entry.bank)
        self.return_path.send(entry.seq, group, at + self.options.data_latency)

    def _completion_arrived(self, tag: int, bank_group: int, at: int) -> None:
        self.completion_log.append((tag, bank_group, at))

    def _refresh_tick(self, _arg) -> None:
        now = self.sim.now
        self.dram.refresh_all(now)
        self.sim.post(now + self.cfg.dimm.timings.trefi, self._refresh_tick,
                      None, target="dram", kind="ref")

    def run_until(self, deadline: int, chunk: int = 100_000 * NS,
                  stop=None) -> None:
        """Advance to `deadline`, checking `stop()` between chunks."""
        sim = self.sim
        while sim.now < deadline:
            sim.run_until(min(sim.now + chunk, deadline))
            if stop is not None and stop():
                return

    def encode_bank_row(self, bank_id: int, row: int, col: int = 0) -> int:
        g = self.cfg.dimm.geometry
        per_rank = g.bank_groups * g.banks_per_group
        channel, rest = divmod(bank_id, g.ranks * per_rank)
        rank, within = divmod(rest, per_rank)
        group, bank = divmod(within, g.banks_per_group)
        return self.addr_map.encode(channel, rank, group, bank, row, col)
