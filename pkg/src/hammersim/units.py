"""Duration parsing and formatting.

Internally every duration is an integer count of picoseconds.  Config files
accept either raw picosecond integers or decimal strings in ns/us/ms (bare
numbers in strings mean nanoseconds), e.g. ``46750``, ``"46.75"``,
``"46.75ns"``, ``"7.8125us"``, ``"64ms"``.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Union

PS = 1
NS = 1000
US = 1000 * NS
MS = 1000 * US

_SUFFIXES = {"ps": PS, "ns": NS, "us": US, "ms": MS, "s": 1000 * MS}

Duration = Union[int, str]


def ns(value) -> int:
    """Exact nanoseconds -> picoseconds (value may be int, Fraction or str)."""
    f = Fraction(value) * NS
    if f.denominator != 1:
        raise ValueError(f"{value} ns is finer than 1 ps resolution")
    return int(f)


def parse_duration(value: Duration) -> int:
    """Parse a config duration into picoseconds."""
    if isinstance(value, bool):
        raise TypeError("boolean is not a duration")
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        raise TypeError(
            f"float durations are ambiguous, use an int (ps) or string: {value!r}")
    text = value.strip()
    unit = NS
    for suffix, mult in _SUFFIXES.items():
        if text.endswith(suffix) and not text[: -len(suffix)].strip()[-1:].isalpha():
            unit = mult
            text = text[: -len(suffix)].strip()
            break
    f = Fraction(text) * unit
    if f.denominator != 1:
        raise ValueError(f"{value!r} is finer than 1 ps resolution")
    return int(f)


def fmt_ns(ps_value: int) -> str:
    """Picoseconds -> decimal nanosecond string without float artifacts."""
    whole, frac = divmod(ps_value, NS)
    if frac == 0:
        return str(whole)
    return f"{whole}.{frac:03d}".rstrip("0")
