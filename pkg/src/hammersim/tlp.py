"""Transaction-layer packet model and the ordering predicate.

Only the three packet kinds the attack traffic uses are modeled; config, IO
and message TLPs are out of scope.  These are in-simulator values, not
byte-exact encodings.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Optional, Union


class TlpKind(Enum):
    MEM_READ64 = "MemRead64"
    MEM_WRITE64 = "MemWrite64"
    COMPLETION = "Completion"


class OrderingClass(Enum):
    POSTED = "Posted"
    NON_POSTED = "NonPosted"
    COMPLETION = "Completion"


# 64-bit-address requests carry a 4DW (128-bit) header; completions 3DW.
_HEADER_BITS = {
    TlpKind.MEM_READ64: 128,
    TlpKind.MEM_WRITE64: 128,
    TlpKind.COMPLETION: 96,
}

_ORDERING = {
    TlpKind.MEM_READ64: OrderingClass.NON_POSTED,
    TlpKind.MEM_WRITE64: OrderingClass.POSTED,
    TlpKind.COMPLETION: OrderingClass.COMPLETION,
}


@dataclass(frozen=True)
class Tlp:
    """One transaction-layer packet.

    ``length_dw`` is the requested read length for MEM_READ64 (no payload is
    carried on the wire) and the payload length for writes and data
    completions.  Attack streams never set ``relaxed_ordering``.
    """

    kind: TlpKind
    address: Optional[int] = None
    length_dw: int = 1
    relaxed_ordering: bool = False
    tag: int = 0

    def __post_init__(self):
        if self.kind is TlpKind.COMPLETION:
            if self.address is not None:
                raise ValueError("completions carry no address")
        elif self.address is None:
            raise ValueError(f"{self.kind.value} requires an address")
        if self.kind is not TlpKind.MEM_READ64 and self.length_dw < 1:
            raise ValueError("payload-bearing TLPs need length_dw >= 1")

    @property
    def header_bits(self) -> int:
        return _HEADER_BITS[self.kind]

    @property
    def payload_bytes(self) -> int:
        if self.kind is TlpKind.MEM_READ64:
            return 0
        return 4 * self.length_dw

    @property
    def ordering_class(self) -> OrderingClass:
        return _ORDERING[self.kind]


def wire_size(tlp: Tlp, framing_overhead_bytes: Union[int, Fraction] = 0):
    """On-wire size in bytes: header + payload + configured framing overhead.

    The overhead constant stands in for sequence number, LCRC and framing
    symbols; calibrated links may hold a fractional byte count.
    """
    return tlp.header_bits // 8 + tlp.payload_bytes + framing_overhead_bytes


def may_pass(earlier: Tlp, later: Tlp) -> bool:
    """True iff ordering rules permit `later` to be delivered before `earlier`.

    With relaxed ordering unset, requests (posted and non-posted) stay in
    order and completions never pass posted writes; completions may pass each
    other and non-posted requests.
    """
    ec = earlier.ordering_class
    lc = later.ordering_class
    if lc is OrderingClass.COMPLETION:
        if ec is OrderingClass.COMPLETION or ec is OrderingClass.NON_POSTED:
            return True
        return False  # never passes a posted write
    # later is a request
    if ec is OrderingClass.COMPLETION:
        return True
    if later.relaxed_ordering and ec is OrderingClass.POSTED \
            and lc is OrderingClass.POSTED:
        return True
    return False
