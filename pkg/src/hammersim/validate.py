"""Standalone command-trace validator.

Re-derives per-bank legality (tRC, tRAS, tRP, tRCD, tCCD and open-row state)
from scratch so controller-produced traces can be checked without trusting
the bank state machine that produced them.
"""

from __future__ import annotations

import csv

from .dram import DramTimings


class TraceError(ValueError):
    pass


class _BankCheck:
    __slots__ = ("open_row", "last_act", "last_pre", "last_col")

    def __init__(self):
        self.open_row = None
        self.last_act = None
        self.last_pre = None
        self.last_col = None


def validate_commands(commands, timings: DramTimings) -> int:
    """commands: iterable of (time_ps, bank, op, row), time-ordered per bank.
    Raises TraceError on the first violation; returns the command count."""
    banks: dict[int, _BankCheck] = {}
    last_col_any = None
    count = 0
    for at, bank, op, row in commands:
        b = banks.setdefault(bank, _BankCheck())
        if op == "ACT":
            if b.open_row is not None:
                raise TraceError(f"t={at}: ACT with row {b.open_row} open "
                                 f"in bank {bank}")
            if b.last_act is not None and at - b.last_act < timings.trc:
                raise TraceError(f"t={at}: tRC violation in bank {bank}")
            if b.last_pre is not None and at - b.last_pre < timings.trp:
                raise TraceError(f"t={at}: tRP violation in bank {bank}")
            b.open_row = row
            b.last_act = at
        elif op in ("RD", "WR"):
            if b.open_row is None:
                raise TraceError(f"t={at}: {op} with no open row in bank {bank}")
            if b.open_row != row:
                raise TraceError(f"t={at}: {op} row {row} but row "
                                 f"{b.open_row} open in bank {bank}")
            if at - b.last_act < timings.trcd:
                raise TraceError(f"t={at}: tRCD violation in bank {bank}")
            if last_col_any is not None and at - last_col_any < timings.tccd:
                raise TraceError(f"t={at}: channel tCCD violation")
            if b.last_col is not None and at - b.last_col < timings.tccd:
                raise TraceError(f"t={at}: bank tCCD violation in bank {bank}")
            b.last_col = at
            last_col_any = at
        elif op == "PRE":
            if b.open_row is None:
                raise TraceError(f"t={at}: PRE with no open row in bank {bank}")
            if at - b.last_act < timings.tras:
                raise TraceError(f"t={at}: tRAS violation in bank {bank}")
            b.open_row = None
            b.last_pre = at
        elif op == "REF":
            pass
        else:
            raise TraceError(f"t={at}: unknown command {op!r}")
        count += 1
    return count


def validate_trace(path: str, timings: DramTimings) -> int:
    """Validate a CSV trace file with header time_ps,bank,cmd,row."""
    def rows():
        with open(path) as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["time_ps", "bank", "cmd", "row"]:
                raise TraceError(f"bad header {header!r}")
            for line in reader:
                if len(line) != 4:
                    raise TraceError(f"bad row {line!r}")
                yield int(line[0]), int(line[1]), line[2], int(line[3])

    per_bank: dict[int, list] = {}
    ordered = []
    for item in rows():
        ordered.append(item)
    ordered.sort(key=lambda c: (c[0],))
    return validate_commands(ordered, timings)
