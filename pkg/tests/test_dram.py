import pytest

from hammersim.dram import (Done, Dram, DramTimings, FlipMask,
                            FlipModelConfig, Geometry, Illegal)
from hammersim.trr import TrrConfig, TrrSampler
from hammersim.units import MS, NS


def make_dram(**flip_kw):
    return Dram(Geometry(), DramTimings(), FlipModelConfig(**flip_kw))


def test_timing_defaults_satisfy_trc_identity():
    t = DramTimings()
    assert t.trc == t.tras + t.trp == 46750
    assert t.tccd == 4 * NS
    assert t.refresh_window == 64 * MS


def test_act_act_same_bank_too_soon_is_a_trc_violation():
    d = make_dram()
    assert isinstance(d.issue(("ACT", 7), 0, 0), Done)
    res = d.issue(("ACT", 9), 0, 40 * NS)
    assert isinstance(res, Illegal)
    assert res.kind == "timing"


def test_act_then_read_after_trcd_is_legal():
    d = make_dram()
    d.issue(("ACT", 7), 0, 0)
    res = d.issue(("RD", 3), 0, DramTimings().trcd)
    assert isinstance(res, Done)


def test_back_to_back_reads_four_ns_apart():
    d = make_dram()
    d.issue(("ACT", 7), 0, 0)
    t0 = DramTimings().trcd
    assert isinstance(d.issue(("RD", 0), 0, t0), Done)
    assert isinstance(d.issue(("RD", 1), 0, t0 + 4 * NS), Done)


def test_read_without_open_row_is_a_state_violation():
    d = make_dram()
    res = d.issue(("RD", 0), 0, 100 * NS)
    assert isinstance(res, Illegal) and res.kind == "state"


def test_precharge_before_tras_is_a_timing_violation():
    d = make_dram()
    d.issue(("ACT", 7), 0, 0)
    res = d.issue(("PRE",), 0, 10 * NS)
    assert isinstance(res, Illegal) and res.kind == "timing"


def test_full_cycle_act_to_act_at_trc():
    d = make_dram()
    t = DramTimings()
    d.issue(("ACT", 7), 0, 0)
    assert isinstance(d.issue(("PRE",), 0, t.tras), Done)
    assert isinstance(d.issue(("ACT", 9), 0, t.trc), Done)


def first_flippy_row(dram, bank=0, start=16):
    for row in dram.flip_mask.flippy_rows(bank, start,
                                          dram.geometry.rows_per_bank):
        if 2 <= row < dram.geometry.rows_per_bank - 2:
            return row
    raise AssertionError("no flippy row found")


def test_one_short_of_threshold_does_not_flip():
    d = make_dram()
    v = first_flippy_row(d)
    for _ in range(49_999):
        d.notify_act(0, v - 1, 0)
    assert d.collect_flips(10) == []
    d.notify_act(0, v - 1, 7)
    flips = d.collect_flips(10)
    assert [(b, r) for b, r, _, _ in flips] == [(0, v)]


def test_double_sided_counts_sum_across_sides():
    d = make_dram()
    v = first_flippy_row(d)
    for _ in range(25_000):
        d.notify_act(0, v - 1, 1)
        d.notify_act(0, v + 1, 2)
    assert (0, v) in {(b, r) for b, r, _, _ in d.collect_flips(10)}


def test_per_side_mode_needs_a_full_count_on_one_side():
    d = make_dram(sum_sides=False)
    v = first_flippy_row(d)
    for _ in range(25_000):
        d.notify_act(0, v - 1, 1)
        d.notify_act(0, v + 1, 2)
    assert d.collect_flips(10) == []
    for _ in range(25_000):
        d.notify_act(0, v - 1, 3)
    assert (0, v) in {(b, r) for b, r, _, _ in d.collect_flips(10)}


def test_reset_then_rehammer_below_threshold_does_not_flip():
    d = make_dram()
    v = first_flippy_row(d)
    for _ in range(30_000):
        d.notify_act(0, v - 1, 1)
    d.disturb.reset_row(0, v)
    for _ in range(30_000):
        d.notify_act(0, v - 1, 2)
    assert d.collect_flips(10) == []


def test_flips_latch_across_counter_resets():
    d = make_dram()
    v = first_flippy_row(d)
    for _ in range(50_000):
        d.notify_act(0, v - 1, 1)
    assert len(d.collect_flips(10)) >= 1
    d.disturb.reset_row(0, v)
    assert len(d.collect_flips(10)) >= 1  # monotone within the run


def test_flip_monotonicity_more_acts_never_unflip():
    d = make_dram()
    v = first_flippy_row(d)
    seen = 0
    for chunk in range(20):
        for _ in range(10_000):
            d.notify_act(0, v - 1, chunk)
            d.notify_act(0, v + 1, chunk)
        now = len(d.collect_flips(100))
        assert now >= seen
        seen = now


def test_flippy_rows_are_sparse_and_deterministic():
    mask = FlipMask(FlipModelConfig())
    rows = [r for r in range(8192) if mask.is_flippy(0, r)]
    assert 0 < len(rows) < 8192 // 64
    mask2 = FlipMask(FlipModelConfig())
    assert rows == [r for r in range(8192) if mask2.is_flippy(0, r)]
    assert rows != [r for r in range(8192)
                    if FlipMask(FlipModelConfig(mask_seed=2)).is_flippy(0, r)]


def test_bit_thresholds_start_exactly_at_flip_threshold():
    mask = FlipMask(FlipModelConfig())
    d = Dram(Geometry(), DramTimings(), FlipModelConfig())
    v = first_flippy_row(d)
    prof = mask.profile(0, v)
    assert prof[0][0] == 50_000
    assert all(50_000 <= thr <= 8 * 50_000 for thr, _ in prof)
    assert all(0 <= bit < 512 for _, bit in prof)


def test_refresh_chunk_resets_touched_rows():
    d = make_dram()
    row = d.refresh_chunk(0)[0]
    target = row + 1 if row + 1 < d.geometry.rows_per_bank else row
    d.notify_act(0, row, 0)          # touches neighbors of `row`
    assert d.disturb.effective_count(0, target) == 1
    while target not in d.refresh_chunk(d.ref_index):
        d.ref_index += 1
    d.refresh_all(1000)
    assert d.disturb.effective_count(0, target) == 0


def test_single_aggressor_act_budget_bound():
    # max legal ACT cadence pins the per-window budget at window / tRC
    t = DramTimings()
    window = 1 * MS
    d = make_dram()
    now = 0
    acts = 0
    while now < window:
        assert isinstance(d.issue(("ACT", 5), 0, now), Done)
        assert isinstance(d.issue(("PRE",), 0, now + t.tras), Done)
        now += t.trc
        acts += 1
    bound = window // t.trc
    assert bound == 21390
    assert acts <= bound + 1
    assert (64 * MS) // t.trc == 1_368_983


def test_trr_hook_refreshes_victims_on_ref():
    trr = TrrSampler(TrrConfig(flag_threshold=2))
    d = Dram(Geometry(), DramTimings(), FlipModelConfig(), trr=trr)
    for _ in range(3):
        d.notify_act(0, 100, 0)
    d.notify_act(0, 100, 0)
    victims = d.refresh_bank(0, 1000)
    assert victims == [99, 101]
