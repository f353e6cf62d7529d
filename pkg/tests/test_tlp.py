import pytest
from hypothesis import given, strategies as st

from hammersim.tlp import OrderingClass, Tlp, TlpKind, may_pass, wire_size


def read(**kw):
    return Tlp(TlpKind.MEM_READ64, address=0x1000, **kw)


def write(**kw):
    kw.setdefault("length_dw", 16)
    return Tlp(TlpKind.MEM_WRITE64, address=0x1000, **kw)


def completion(**kw):
    return Tlp(TlpKind.COMPLETION, **kw)


def test_read_wire_size_is_header_only():
    assert wire_size(read(), 0) == 16


def test_wire_size_adds_framing_overhead():
    assert wire_size(read(), 8) == 24


def test_write_wire_size_includes_payload():
    assert wire_size(write(length_dw=16), 8) == 16 + 64 + 8


def test_ordering_classes():
    assert read().ordering_class is OrderingClass.NON_POSTED
    assert write().ordering_class is OrderingClass.POSTED
    assert completion().ordering_class is OrderingClass.COMPLETION


def test_strict_read_never_passes_write():
    assert may_pass(write(), read()) is False


def test_completions_may_pass_completions():
    assert may_pass(completion(), completion()) is True


def test_strict_reads_stay_in_order():
    assert may_pass(read(), read()) is False


def test_completion_never_passes_posted_write():
    assert may_pass(write(), completion()) is False


def test_requests_never_pass_each_other_when_strict():
    for earlier in (read(), write()):
        for later in (read(), write()):
            assert may_pass(earlier, later) is False


@given(st.sampled_from([TlpKind.MEM_READ64, TlpKind.MEM_WRITE64]),
       st.sampled_from([TlpKind.MEM_READ64, TlpKind.MEM_WRITE64]))
def test_strict_request_streams_preserve_order(k1, k2):
    a = Tlp(k1, address=0, length_dw=1)
    b = Tlp(k2, address=64, length_dw=1)
    assert may_pass(a, b) is False


def test_read_carries_no_payload():
    assert read(length_dw=4).payload_bytes == 0


def test_completion_rejects_address():
    with pytest.raises(ValueError):
        Tlp(TlpKind.COMPLETION, address=0x40)


def test_requests_require_address():
    with pytest.raises(ValueError):
        Tlp(TlpKind.MEM_READ64)
