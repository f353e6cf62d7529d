"""Drives the event-driven controller with a fixed arrival trace.

Arrival events are scheduled up front, so at equal timestamps arrivals are
always delivered before scheduler commits; the reference oracle assumes the
same rule.
"""

from __future__ import annotations

from hammersim.dram import Dram, DramTimings, FlipModelConfig, Geometry
from hammersim.engine import Simulator
from hammersim.memctrl import AddressMap, McConfig, MemController
from hammersim.tlp import Tlp, TlpKind


def encode(addr_map: AddressMap, geometry: Geometry, bank_id: int, row: int,
           col: int = 0) -> int:
    group, bank = divmod(bank_id, geometry.banks_per_group)
    return addr_map.encode(0, 0, group, bank, row, col)


def run_controller(arrivals, cfg: McConfig, timings=None, geometry=None,
                   horizon=None):
    """arrivals: [(time, bank, row)] (sorted).  Returns (served order as
    arrival indexes, [(time, bank, cmd, row)])."""
    timings = timings or DramTimings()
    geometry = geometry or Geometry()
    sim = Simulator()
    dram = Dram(geometry, timings, FlipModelConfig(), disturbance=False)
    trace: list = []
    served: list = []
    addr_map = AddressMap(geometry)
    mc = MemController(sim, cfg, dram, addr_map, cmd_trace=trace, stats=True)
    index_of = {}
    mc.on_read_done = lambda entry, at: served.append(index_of[entry.seq])

    def arrive(arg):
        idx, bank, row = arg
        tlp = Tlp(TlpKind.MEM_READ64, address=encode(addr_map, geometry,
                                                     bank, row), tag=idx)
        index_of[mc._seq + 1] = idx      # commit can retire synchronously
        mc.on_arrival(tlp, sim.now)

    for idx, (t, bank, row) in enumerate(arrivals):
        sim.post(t, arrive, (idx, bank, row), target="harness", kind="arrive")
    if horizon is None:
        horizon = (arrivals[-1][0] if arrivals else 0) \
            + (len(arrivals) + 2) * timings.trc + 10_000_000
    sim.run_until(horizon)
    return served, trace, mc
