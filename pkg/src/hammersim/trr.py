"""Target Row Refresh model.

A slot-limited sampler per bank watches the access stream (activations and,
by default, row-buffer hits, i.e. a controller-side sampler).  At each
regular refresh, rows whose sampled count reached the flag threshold get
their neighbors refreshed; the sampler is then cleared.  With more distinct
aggressor rows than slots and round-robin access, every row is evicted
before it is touched again, so counts stick at one and the sampler goes
blind; this is what makes many-sided patterns effective.
"""

from __future__ import annotations

import random
from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum


class TrrPolicy(Enum):
    FIFO_EVICT = "fifo"
    LOWEST_COUNT_EVICT = "lowest_count"
    PROBABILISTIC = "probabilistic"


@dataclass(frozen=True)
class TrrConfig:
    sampler_slots: int = 7
    policy: TrrPolicy = TrrPolicy.FIFO_EVICT
    neighbors_refreshed: int = 1
    enabled: bool = True
    flag_threshold: int = 2    # re-access while tracked flags a row
    sample_hits: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.sampler_slots < 0:
            raise ValueError("sampler_slots must be >= 0")
        if self.neighbors_refreshed < 0:
            raise ValueError("neighbors_refreshed must be >= 0")
        if self.flag_threshold < 1:
            raise ValueError("flag_threshold must be >= 1")


class TrrSampler:
    """Per-bank (row, count) slots with a configurable eviction policy."""

    def __init__(self, cfg: TrrConfig):
        self.cfg = cfg
        self._slots: dict[int, OrderedDict] = {}
        self._rng = random.Random(cfg.seed)

    @property
    def inert(self) -> bool:
        return not self.cfg.enabled or self.cfg.sampler_slots == 0

    def active_banks(self):
        return self._slots.keys()

    def tracked(self, bank: int) -> dict[int, int]:
        return dict(self._slots.get(bank, ()))

    def observe_act(self, bank: int, row: int, at: int) -> None:
        if self.inert:
            return
        self._observe(bank, row)

    def observe_hit(self, bank: int, row: int, at: int) -> None:
        if self.inert or not self.cfg.sample_hits:
            return
        self._observe(bank, row)

    def _observe(self, bank: int, row: int) -> None:
        slots = self._slots.get(bank)
        if slots is None:
            slots = self._slots[bank] = OrderedDict()
        count = slots.get(row)
        if count is not None:
            slots[row] = count + 1
            return
        if len(slots) >= self.cfg.sampler_slots:
            self._evict(slots)
        slots[row] = 1

    def _evict(self, slots: OrderedDict) -> None:
        policy = self.cfg.policy
        if policy is TrrPolicy.FIFO_EVICT:
            slots.popitem(last=False)
        elif policy is TrrPolicy.LOWEST_COUNT_EVICT:
            victim = min(slots.items(), key=lambda kv: kv[1])[0]
            del slots[victim]
        else:
            idx = self._rng.randrange(len(slots))
            del slots[list(slots.keys())[idx]]

    def on_refresh(self, bank: int, at: int) -> list[int]:
        """Rows to refresh at this REF: neighbors of flagged tracked rows.
        Clears the bank's sampler state."""
        if self.inert:
            return []
        slots = self._slots.get(bank)
        if not slots:
            return []
        victims: list[int] = []
        threshold = self.cfg.flag_threshold
        reach = self.cfg.neighbors_refreshed
        for row, count in slots.items():
            if count >= threshold:
                for d in range(1, reach + 1):
                    victims.append(row - d)
                    victims.append(row + d)
        slots.clear()
        return victims
