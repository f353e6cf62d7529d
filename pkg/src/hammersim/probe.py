"""Black-box reverse engineering of the controller through the link.

Probes drive read streams at controlled mean periods and consult only offer
results, throttle logs and completion arrivals; they never read controller
state.  Fractional mean periods are realized by snapping cumulative ideal
send times up to the transmit grid, which mixes two adjacent grid gaps.

"Sustained indefinitely" is operationalized as zero credit-exhaustion
throttle episodes over a horizon scaled to the search resolution: a stream
whose period falls short of the serviceable period by one search-grid step
fills a queue of depth D within about D * period^2 / step, so the horizon
grows quadratically with the probed period and is capped by configuration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .config import ExperimentConfig
from .link import Transmitter
from .system import System, SystemOptions
from .units import MS, NS, US


@dataclass
class ProbeOptions:
    search_grid: int = 50                 # ps resolution on the mean period
    coarse_factor: int = 16               # coarse bisection grid multiplier
    depth_hint: int = 48                  # assumed bound on queue depth
    primer: int = 26                      # queue-priming burst before pacing
    safety: float = 1.3
    horizon_cap: int = 10 * MS
    horizon_floor: int = 200 * US
    chunk: int = 100 * US
    r_large: int = 48                     # batch size used for the cycle-time plateau
    sweep_cap: int = 66                   # upper bound on window sweeps
    base_row: int = 512
    row_stride: int = 8


@dataclass
class ProbeResult:
    max_stable_period: Optional[int] = None
    trc_estimate: Optional[int] = None
    window_estimate: Optional[int] = None
    window_cross_estimate: Optional[int] = None
    cross_check_consistent: Optional[bool] = None
    low_confidence: bool = False
    curves: dict = field(default_factory=dict)   # B -> [(R, min_mean_ps)]

    def to_json(self) -> dict:
        return {
            "max_stable_period_ps": self.max_stable_period,
            "trc_estimate_ps": self.trc_estimate,
            "window_estimate": self.window_estimate,
            "window_cross_estimate": self.window_cross_estimate,
            "cross_check_consistent": self.cross_check_consistent,
            "low_confidence": self.low_confidence,
            "curves": {str(b): curve for b, curve in self.curves.items()},
        }


def write_curve_csv(path: str, b: int, curve: list) -> None:
    with open(path, "w") as fh:
        fh.write("B,R,min_mean_delta_p_ps\n")
        for r, ps in curve:
            fh.write(f"{b},{r},{ps}\n")


class Prober:
    """Stability probing against a fresh simulator instance per data point."""

    def __init__(self, cfg: ExperimentConfig,
                 options: Optional[ProbeOptions] = None):
        self.cfg = cfg
        self.opt = options or ProbeOptions()
        self._max_stable: Optional[int] = None
        g = cfg.link.tx_granularity
        if self.opt.search_grid > g:
            raise ValueError("search grid must not exceed the transmit grid")

    # --- infrastructure -------------------------------------------------------

    def _system(self) -> System:
        # timing-only probing: disturbance bookkeeping cannot change timing
        return System(self.cfg, SystemOptions(disturbance=False,
                                              trr_override=False))

    def _addresses(self, r: int, b: int, banks: Optional[list[int]] = None,
                   system: Optional[System] = None) -> list[int]:
        sys_ = system or self._system()
        if banks is None:
            per_group = self.cfg.dimm.geometry.banks_per_group
            banks = [i * per_group for i in range(b)]   # spread across groups
        if len(banks) != b:
            raise ValueError("bank list length must equal B")
        rows = [self.opt.base_row + self.opt.row_stride * i for i in range(r)]
        return [sys_.encode_bank_row(bank, row)
                for row in rows for bank in banks]

    def _horizon(self, period_ps: int, grid: int,
                 lane_sensitive: bool = False) -> int:
        # a period `grid` below the serviceable one fills the queue's
        # remaining headroom in about headroom * period^2 / grid
        if lane_sensitive:
            headroom = 8                  # egress buffers are a few packets
        else:
            headroom = max(self.opt.depth_hint - self.opt.primer, 8)
        h = int(self.opt.safety * headroom * period_ps * period_ps / grid)
        return min(max(h, self.opt.horizon_floor), self.opt.horizon_cap)

    def _stable(self, mean_period, addresses: list[int], horizon: int,
                lane_sensitive: bool = False) -> bool:
        system = self._system()
        tx = Transmitter(system.sim, system.link, addresses,
                         mean_period=Fraction(mean_period),
                         stop_on_credit=True,
                         primer=0 if lane_sensitive else self.opt.primer)
        tx.start(0)
        link = system.link

        def tripped() -> bool:
            if link.credit_throttles:
                return True
            return lane_sensitive and link.lane_throttles > 0

        system.run_until(horizon, chunk=self.opt.chunk, stop=tripped)
        return not tripped()

    def _snap(self, value: float) -> int:
        grid = self.opt.search_grid
        return int(-(-value // grid)) * grid

    def _search_min_stable(self, addresses: list[int], floor: int,
                           hint: Optional[int] = None,
                           lane_sensitive: bool = False) -> int:
        """Smallest grid-aligned mean period with a clean horizon run.

        Coarse-to-fine: an unstable verdict is always true (a throttle
        happened), a stable verdict is only as precise as the horizon, so
        bisection runs on short coarse-grid horizons first and the final
        candidate is (re)verified at full fine-grid horizon, walking upward
        on a late failure.
        """
        fine = self.opt.search_grid
        coarse = fine * self.opt.coarse_factor

        def stable(p: int, grid: int) -> bool:
            return self._stable(p, addresses,
                                self._horizon(p, grid, lane_sensitive),
                                lane_sensitive)

        start = self._snap(max(hint or floor, floor))
        if stable(start, fine):
            if start == floor:
                return start
            below = start - fine
            if below < floor or not stable(below, fine):
                return start
            hi, lo = below, floor - fine        # hint overshot: search down
            fine_certified = True
        else:
            lo = start
            hi = None
            step = max(coarse, start // 8)
            while hi is None:
                cand = self._snap(lo + step)
                step *= 2
                if cand <= lo:
                    cand = lo + fine
                if stable(cand, coarse):
                    hi = cand
                else:
                    lo = cand
            fine_certified = False
        while hi - lo > coarse:
            mid = self._snap((lo + hi) // 2)
            if lo < mid < hi and stable(mid, coarse):
                hi = mid
                fine_certified = False
            elif lo < mid < hi:
                lo = mid
            else:
                break
        while hi - lo > fine:
            mid = self._snap((lo + hi) // 2)
            if not lo < mid < hi:
                break
            if stable(mid, fine):
                hi = mid
                fine_certified = True
            else:
                lo = mid
        while not fine_certified:
            if stable(hi, fine):
                fine_certified = True
            else:
                hi += fine
        return hi

    # --- operations -----------------------------------------------------------

    def calibrate_max_rate(self) -> int:
        """Smallest sustainable mean period for a single same-address read
        loop; the loop maximizes the service rate, so residual throttling is
        lane-limited, not queue-limited."""
        if self._max_stable is None:
            addresses = self._addresses(1, 1)
            gran = self.cfg.link.tx_granularity
            self._max_stable = self._search_min_stable(
                addresses, floor=self.opt.search_grid,
                hint=gran, lane_sensitive=True)
        return self._max_stable

    def horizon_confident(self, period_ps: int) -> bool:
        uncapped = int(self.opt.safety * self.opt.depth_hint
                       * period_ps * period_ps / self.opt.search_grid)
        return self._horizon(period_ps, self.opt.search_grid) \
            >= min(uncapped, self.opt.horizon_cap)

    def min_serviceable_delay(self, r: int, b: int,
                              banks: Optional[list[int]] = None,
                              hint: Optional[int] = None) -> int:
        """Smallest mean inter-packet period that the controller services
        indefinitely without credit-exhaustion back-pressure."""
        floor = self.calibrate_max_rate()
        addresses = self._addresses(r, b, banks)
        return self._search_min_stable(addresses, floor=floor, hint=hint)

    def curve(self, b: int, r_values, banks: Optional[list[int]] = None):
        out = []
        hint = None
        for r in r_values:
            value = self.min_serviceable_delay(r, b, banks, hint=hint)
            out.append((r, value))
            hint = value
        return out

    def infer_trc(self) -> int:
        """Large-batch plateau of the serviceable period at B=1: every
        request pays a full activation cycle, so the plateau upper-bounds it."""
        return self.min_serviceable_delay(self.opt.r_large, 1)

    def _first_unstable_r(self, b: int, discriminator: int,
                          banks: Optional[list[int]] = None) -> int:
        horizon = min(64 * self.opt.depth_hint * discriminator,
                      self.opt.horizon_cap)
        horizon = max(horizon, 100 * US)
        r = 2
        while r <= self.opt.sweep_cap:
            addresses = self._addresses(r, b, banks)
            if not self._stable(discriminator, addresses, horizon):
                return r
            r += 1
        return r

    def infer_window(self, result: Optional[ProbeResult] = None) -> int:
        """Look-ahead window size from the batch size where the serviceable
        period first degrades to the full activation cycle, cross-checked at
        two banks."""
        trc = self.infer_trc()
        disc = self._snap(trc * 3 / 4)
        first_bad = self._first_unstable_r(1, disc)
        window = first_bad - 1
        disc2 = self._snap(trc * 3 / 8)
        floor = self.calibrate_max_rate()
        cross_window = None
        consistent = None
        if disc2 > floor:
            first_bad2 = self._first_unstable_r(2, disc2)
            expected = (window + 2) // 2        # ceil((W+1)/2)
            consistent = first_bad2 == expected
            cross_window = 2 * (first_bad2 - 1)
        if result is not None:
            result.trc_estimate = trc
            result.window_estimate = window
            result.window_cross_estimate = cross_window
            result.cross_check_consistent = consistent
        return window
