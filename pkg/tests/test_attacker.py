from fractions import Fraction

import pytest

from hammersim.attacker import (BatchPattern, TimingParams, check_conditions,
                                reproduced_fraction, run_hammer, run_profile,
                                synthesize, tune)
from hammersim.config import ExperimentConfig
from hammersim.dram import DramTimings, FlipMask
from hammersim.units import MS, NS


CFG = ExperimentConfig.from_dict({"seed": 2026})


def timing(dp, db, batch):
    return TimingParams(dp * NS, db * NS, batch)


def test_timing_params_validation():
    with pytest.raises(ValueError):
        TimingParams(41 * NS, 96 * NS, 9)     # off-grid intra gap
    with pytest.raises(ValueError):
        TimingParams(40 * NS, -8 * NS, 9)
    t = timing(40, 104, 9)
    assert t.t_b == 8 * 40 * NS + 104 * NS
    assert t.mean_delta_p == Fraction(t.t_b, 9)


def test_conditions_worked_example_b3():
    # B=3, batch 24, intra 8 ns, inter 104 ns: mean 12 ns is below the
    # three-bank serviceable period, so c1 fails while c2 and c3 hold
    t = timing(8, 104, 24)
    c1, c2, c3 = check_conditions(t, DramTimings(), 3)
    assert t.mean_delta_p == 12 * NS
    assert (c1, c2, c3) == (False, True, True)


def test_conditions_worked_example_b1():
    t = timing(40, 96, 9)
    c1, c2, c3 = check_conditions(t, DramTimings(), 1)
    assert c3 is True          # 40 < 46.75
    assert c2 is True          # 96 > 93.5
    assert c1 is False         # mean (8*40+96)/9 = 46.2 < 46.75


def test_zero_batch_gap_violates_c2():
    t = timing(40, 0, 9)
    assert check_conditions(t, DramTimings(), 1)[1] is False


def test_synthesize_double_sided_pair():
    pattern = synthesize(CFG, 1, 2, timing(40, 96, 2))
    (bank, victim) = pattern.victims[0]
    rows = [row for _b, row in pattern.aggressors]
    assert sorted(rows) == [victim - 1, victim + 1]
    assert FlipMask(CFG.dimm.flip).is_flippy(bank, victim)


def test_synthesize_multibank_counts():
    pattern = synthesize(CFG, 3, 8, timing(8, 584, 24))
    assert len(pattern.aggressors) == 24
    banks = {b for b, _r in pattern.aggressors}
    assert len(banks) == 3
    for bank in banks:
        rows = [r for b, r in pattern.aggressors if b == bank]
        assert len(rows) == 8 and len(set(rows)) == 8
    # bank-interleaved transmission order
    assert [b for b, _ in pattern.aggressors[:3]] == sorted(banks,
                key=list(dict.fromkeys(b for b, _ in pattern.aggressors)).index)


def test_synthesize_rejects_infeasible_geometry():
    with pytest.raises(ValueError):
        synthesize(CFG, 1, (1 << 16) + 1, timing(8, 8, (1 << 16) + 1))
    with pytest.raises(ValueError):
        synthesize(CFG, 99, 2, timing(8, 8, 198))


def test_pattern_file_round_trip(tmp_path):
    pattern = synthesize(CFG, 2, 4, timing(16, 96, 8))
    path = tmp_path / "pattern.json"
    pattern.save(str(path))
    loaded = BatchPattern.load(str(path))
    assert loaded.aggressors == pattern.aggressors
    assert loaded.addresses == pattern.addresses
    assert loaded.timing == pattern.timing


def test_trr_off_double_sided_flips():
    # low threshold keeps the run short: the two-aggressor ladder is the
    # easiest pattern once the mitigation is disabled
    cfg = ExperimentConfig.from_dict(
        {"seed": 2026, "dimm": {"flip": {"flip_threshold": 4000}}})
    pattern = synthesize(cfg, 1, 2, timing(40, 96, 2))
    report = run_hammer(cfg, pattern, 2 * MS, trr_override=False)
    assert len(report.flips) > 0
    assert report.victim_rows() >= set(pattern.victims)


def test_trr_on_double_sided_stays_clean():
    cfg = ExperimentConfig.from_dict(
        {"seed": 2026, "dimm": {"flip": {"flip_threshold": 4000}}})
    pattern = synthesize(cfg, 1, 2, timing(40, 96, 2))
    report = run_hammer(cfg, pattern, 2 * MS)
    assert report.flips == []


def test_profile_and_reproduction_fraction():
    cfg = ExperimentConfig.from_dict(
        {"seed": 2026, "dimm": {"flip": {"flip_threshold": 4000}}})
    pattern = synthesize(cfg, 1, 9, timing(40, 104, 9))
    profile = run_profile(cfg, pattern, 4 * MS)
    assert len(profile.flips) > 0
    report = run_hammer(cfg, pattern, 4 * MS, profile=profile)
    assert 0.0 <= report.reproduced_fraction <= 1.0
    assert report.reproduced_fraction > 0.8


def test_hammer_acts_counted_per_aggressor():
    cfg = ExperimentConfig.from_dict(
        {"seed": 2026, "dimm": {"flip": {"flip_threshold": 4000}}})
    pattern = synthesize(cfg, 1, 9, timing(40, 104, 9))
    report = run_hammer(cfg, pattern, 1 * MS)
    acts = report.total_acts_per_aggressor
    assert set(acts) == set(pattern.aggressors)
    expected = (1 * MS) // pattern.timing.t_b
    for n in acts.values():
        assert abs(n - expected) <= 2


def test_tune_tiny_grid_ranks_conditions_true_first():
    cfg = ExperimentConfig.from_dict(
        {"seed": 2026, "dimm": {"flip": {"flip_threshold": 2000}}})
    grid = [(1, 9, 40 * NS, 104 * NS),    # all conditions hold
            (1, 9, 40 * NS, 0)]           # c2 violated
    results = tune(cfg, grid, budget=8, duration=2 * MS)
    assert (results[0].delta_p, results[0].delta_b) == (40 * NS, 104 * NS)
    assert results[0].conditions == (True, True, True)
    assert results[0].flips > results[-1].flips
    assert results[-1].flips == 0


def test_tune_rejects_empty_grid_and_bad_budget():
    with pytest.raises(ValueError):
        tune(CFG, [], budget=1)
    with pytest.raises(ValueError):
        tune(CFG, [(1, 2, 40 * NS, 96 * NS)], budget=0)


def test_tune_tie_breaks_lexicographically():
    cfg = ExperimentConfig.from_dict(
        {"seed": 2026, "dimm": {"flip": {"flip_threshold": 50_000_000}}})
    # threshold out of reach: all points tie at zero flips
    grid = [(1, 2, 48 * NS, 96 * NS), (1, 2, 40 * NS, 96 * NS)]
    results = tune(cfg, grid, budget=4, duration=1 * MS)
    assert [(tp.delta_p, tp.delta_b) for tp in results] == \
        [(40 * NS, 96 * NS), (48 * NS, 96 * NS)]


def test_single_point_grid():
    cfg = ExperimentConfig.from_dict(
        {"seed": 2026, "dimm": {"flip": {"flip_threshold": 4000}}})
    results = tune(cfg, [(1, 2, 40 * NS, 96 * NS)], budget=1,
                   duration=1 * MS)
    assert len(results) == 1
