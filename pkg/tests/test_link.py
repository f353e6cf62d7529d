from fractions import Fraction

import pytest

from hammersim.engine import Simulator
from hammersim.link import (Accepted, Link, LinkConfig, ThrottleCause,
                            Throttled, Transmitter, calibrate_framing_overhead,
                            transmit_time)
from hammersim.tlp import Tlp, TlpKind
from hammersim.units import NS


READ = Tlp(TlpKind.MEM_READ64, address=0x2000, length_dw=1)


def test_default_profile_read_serializes_in_16_2_ns():
    assert transmit_time(READ, LinkConfig()) == 16200


def test_doubling_lanes_halves_duration():
    one = transmit_time(READ, LinkConfig(lanes=2, framing_overhead_bytes=16))
    two = transmit_time(READ, LinkConfig(lanes=4, framing_overhead_bytes=16))
    assert one == 2 * two


def test_hand_checked_duration_with_16_byte_overhead():
    # 32 B * 8 bits / (4 lanes * 5 Gbps * 0.8) = 16 ns
    assert transmit_time(READ, LinkConfig(framing_overhead_bytes=16)) == 16000


def test_calibrate_overhead_hits_target_exactly():
    cfg = LinkConfig()
    overhead = calibrate_framing_overhead(cfg, 16200)
    assert overhead == Fraction(82, 5)  # about 16 bytes


def test_calibrate_overhead_zero_at_zero_overhead_time():
    cfg = LinkConfig()
    floor = transmit_time(READ, LinkConfig(framing_overhead_bytes=0))
    assert calibrate_framing_overhead(cfg, floor) == 0


def test_calibrate_overhead_unachievable_target_errors():
    with pytest.raises(ValueError):
        calibrate_framing_overhead(LinkConfig(), 1000)


def make_link(**kw):
    sim = Simulator()
    link = Link(sim, LinkConfig(**kw))
    delivered = []
    link.sink = lambda tlp, at: delivered.append((tlp, at))
    return sim, link, delivered


def test_first_packet_on_idle_link_accepted():
    sim, link, _ = make_link()
    assert isinstance(link.offer(READ, 0), Accepted)


def test_busy_serializer_throttles_at_depth_one():
    sim, link, _ = make_link(tx_fifo_depth=1)
    assert isinstance(link.offer(READ, 0), Accepted)
    res = link.offer(READ, 8 * NS)
    assert isinstance(res, Throttled) and res.cause is ThrottleCause.LANE_CAPACITY


def test_default_buffer_throttles_after_a_few_back_to_back_offers():
    sim, link, _ = make_link()
    assert isinstance(link.offer(READ, 0), Accepted)
    assert isinstance(link.offer(READ, 8 * NS), Accepted)
    res = link.offer(READ, 16 * NS)
    assert isinstance(res, Throttled) and res.cause is ThrottleCause.LANE_CAPACITY


def test_zero_credits_throttle_as_credit_exhausted():
    sim, link, _ = make_link()
    link.wire_credits(nonposted_max=1, posted_max=1)
    assert isinstance(link.offer(READ, 0), Accepted)
    res = link.offer(READ, 8 * NS)
    assert isinstance(res, Throttled)
    assert res.cause is ThrottleCause.CREDIT_EXHAUSTED


def test_delivery_time_is_serialize_end_plus_latency():
    sim, link, delivered = make_link(latency=100 * NS)
    res = link.offer(READ, 0)
    assert res.delivery == 16200 + 100 * NS
    sim.run_until(res.delivery)
    assert delivered and delivered[0][1] == res.delivery


def test_link_never_reorders():
    sim, link, delivered = make_link()
    times = []
    for k in range(8):
        res = link.offer(Tlp(TlpKind.MEM_READ64, address=64 * k, length_dw=1,
                             tag=k), 24 * NS * k)
        assert isinstance(res, Accepted)
        times.append(res.delivery)
    sim.run_until(max(times))
    tags = [tlp.tag for tlp, _ in delivered]
    assert tags == sorted(tags)
    assert [at for _, at in delivered] == sorted(at for _, at in delivered)


def test_sustained_offers_at_transmit_period_never_throttle():
    sim, link, _ = make_link()
    tx = Transmitter(sim, link, [0x4000], mean_period=Fraction(16200))
    tx.start(0)
    sim.run_until(2_000_000)
    assert link.lane_throttles == 0
    assert link.log.count() == 0


def test_offers_below_transmit_period_throttle_on_lane_capacity():
    sim, link, _ = make_link()
    tx = Transmitter(sim, link, [0x4000], mean_period=Fraction(16000))
    tx.start(0)
    sim.run_until(2_000_000)
    assert link.lane_throttles > 0
    assert link.log.count(ThrottleCause.LANE_CAPACITY) > 0


def test_throttle_log_episodes_are_ordered_and_disjoint(tmp_path):
    sim, link, _ = make_link(tx_fifo_depth=1)
    link.offer(READ, 0)                  # serializes over [0, 16200)
    for t in (8, 16):
        link.offer(READ, t * NS)         # both blocked: one episode
    link.offer(READ, 24 * NS)            # serializer free again: accepted
    link.offer(READ, 32 * NS)            # blocked until 40200: second episode
    link.log.finish(40 * NS)
    episodes = link.log.episodes
    assert episodes == [
        (8 * NS, 16 * NS, ThrottleCause.LANE_CAPACITY),
        (32 * NS, 32 * NS, ThrottleCause.LANE_CAPACITY),
    ]
    starts = [e[0] for e in episodes]
    ends = [e[1] for e in episodes]
    assert starts == sorted(starts) and all(s <= e for s, e in zip(starts, ends))
    assert ends[0] < starts[1]
    out = tmp_path / "throttle.csv"
    link.log.export_csv(str(out))
    assert out.read_text().splitlines()[1] == "8000,16000,lane_capacity"


def test_unaligned_offer_rejected():
    sim, link, _ = make_link()
    with pytest.raises(ValueError):
        link.offer(READ, 1234)


def test_transmitter_streams_never_set_relaxed_ordering():
    sim, link, _ = make_link()
    seen = []
    link.sink = lambda tlp, at: seen.append(tlp)
    tx = Transmitter(sim, link, [0x1000, 0x2000], gaps=[24 * NS, 48 * NS])
    tx.start(0)
    sim.run_until(1_000_000)
    assert seen and all(not t.relaxed_ordering for t in seen)
