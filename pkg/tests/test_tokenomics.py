import math
from dataclasses import replace

import pytest
from hypothesis import assume, given, strategies as st

from planner import (
    CapacityExceeded, DomainError, PowerCurve, RoutingPool, build_manual_profile, compare_generations,
    compare_models, compare_routing, context_sweep, gpu_tok_per_watt, halving_ratios,
    tok_per_dollar, utilization_point,
)

WINDOWS = [2048, 4096, 8192, 16384, 32768, 65536, 131072]


def test_h100_context_sweep(h100):
    sweep = context_sweep(h100, WINDOWS)
    assert [p.n_max for p in sweep] == [512, 256, 128, 64, 32, 16, 8]
    expected = [35.03, 17.636, 8.979, 4.693, 2.580, 1.5035, 0.8853]
    assert [p.tok_per_watt for p in sweep] == pytest.approx(expected, rel=2e-3)


def test_b200_context_sweep(b200):
    sweep = context_sweep(b200, WINDOWS)
    assert [p.n_max for p in sweep] == [1341, 670, 335, 167, 83, 41, 20]
    expected = [61.52, 30.83, 15.507, 7.876, 4.0965, 2.2366, 1.3006]
    assert [p.tok_per_watt for p in sweep] == pytest.approx(expected, rel=2e-3)


def test_halving_ratios_stay_near_one_half(h100):
    ratios = halving_ratios(context_sweep(h100, WINDOWS))
    assert len(ratios) == len(WINDOWS) - 1
    assert all(0.5 < r < 0.6 for r in ratios)


def test_flat_power_halves_exactly(h100):
    flat = replace(h100, power_curve=PowerCurve(p_idle=450.0, p_range=0.0))
    ratios = halving_ratios(context_sweep(flat, WINDOWS))
    assert ratios == pytest.approx([0.5] * (len(WINDOWS) - 1), abs=1e-3)


def test_halving_ratios_need_a_doubling_ladder(h100):
    with pytest.raises(DomainError):
        halving_ratios(context_sweep(h100, [4096, 16384]))


def test_halving_ratio_after_an_empty_window_is_nan(h100):
    ratios = halving_ratios(context_sweep(h100, [2 ** 20, 2 ** 21, 2 ** 22]))
    assert ratios[0] == 0.0
    assert math.isnan(ratios[1])


def test_empty_sweep_rejected(h100):
    with pytest.raises(DomainError):
        context_sweep(h100, [])


def test_capacity_and_length_checks(h100):
    with pytest.raises(CapacityExceeded):
        gpu_tok_per_watt(h100, 8192, 129)
    with pytest.raises(DomainError):
        gpu_tok_per_watt(h100, 8192, 64, l_mean=16384)
    with pytest.raises(DomainError):
        gpu_tok_per_watt(h100, 8192, -1)


def test_idle_replica_has_zero_efficiency(h100):
    point = gpu_tok_per_watt(h100, 8192, 0)
    assert point.power == 300.0
    assert point.tok_per_watt == 0.0


@given(st.floats(min_value=0.0, max_value=128.0), st.floats(min_value=1.0, max_value=8192.0))
def test_operating_point_is_consistent(h100, n_active, l_mean):
    point = gpu_tok_per_watt(h100, 8192, n_active, l_mean)
    assert point.tok_per_watt == pytest.approx(point.throughput / point.power)
    assert 300.0 <= point.power <= 600.0


@pytest.mark.parametrize("window, n_active, watts, tpw", [
    (8192, 108, 578.4, 8.609),
    (65536, 13, 413.3, 1.488),
])
def test_utilization_point_floors_concurrency(h100, window, n_active, watts, tpw):
    point = utilization_point(h100, window, 0.85)
    assert point.n_active == n_active
    assert point.power == pytest.approx(watts, abs=0.1)
    assert point.tok_per_watt == pytest.approx(tpw, rel=2e-3)


def test_utilization_bounds(h100):
    with pytest.raises(DomainError):
        utilization_point(h100, 8192, 1.2)
    assert utilization_point(h100, 8192, 0.0).n_active == 0


def test_routing_comparison(catalog, h100):
    small = catalog.profile("H100-SXM5:Llama-3.1-8B")
    pools = [
        RoutingPool("70B short pool", h100, 8192),
        RoutingPool("70B long pool", h100, 65536),
        RoutingPool("8B small model", small, 8192),
    ]
    rows = compare_routing(pools, 0.85)
    short, long, tiny = (point for _, point in rows)
    assert short.tok_per_watt == pytest.approx(8.609, rel=2e-3)
    assert long.tok_per_watt == pytest.approx(1.488, rel=2e-3)
    assert short.tok_per_watt / long.tok_per_watt > 5
    assert tiny.n_max == 55


def test_tok_per_dollar(h100):
    point = gpu_tok_per_watt(h100, 8192, 128)
    assert tok_per_dollar(point, 32.2) == pytest.approx(585_042, rel=1e-3)
    with pytest.raises(DomainError):
        tok_per_dollar(point, 0.0)


def test_h200_over_h100_generation_gain(catalog):
    model = catalog.model("Llama-3.1-70B")
    h100 = build_manual_profile(catalog.gpu("H100-SXM5"), model, 6.72, 0.1288,
                                kv_token_budget=22 * 8192, x0=5.7057, label="H100")
    h200 = build_manual_profile(catalog.gpu("H200-SXM"), model, 4.76, 0.0913,
                                kv_token_budget=44 * 8192, x0=5.8372, label="H200")
    comparison = compare_generations([h100, h200], 8192, l_mean=4096)
    gain = comparison.multiplier("H100", "H200")
    assert gain.tok_per_watt == pytest.approx(2.1, rel=0.03)
    assert gain.tok_per_dollar == pytest.approx(
        comparison.rows[1].tok_per_dollar / comparison.rows[0].tok_per_dollar
    )


def test_computed_b200_over_h100(catalog):
    profiles = [catalog.profile("H100-SXM5:Llama-3.1-70B"), catalog.profile("B200-SXM:Llama-3.1-70B")]
    comparison = compare_generations(profiles, 8192)
    assert [row.point.n_max for row in comparison.rows] == [21, 59]
    gain = comparison.multiplier("H100-SXM5:Llama-3.1-70B", "B200-SXM:Llama-3.1-70B").tok_per_watt
    assert 1.5 <= gain <= 2.9
    assert gain == pytest.approx(1.762, rel=0.01)


def test_identical_subjects_have_unit_multipliers(h100):
    comparison = compare_generations([h100, h100], 8192)
    m = comparison.multipliers[0]
    assert m.tok_per_watt == 1.0
    assert m.tok_per_dollar == 1.0


def test_generation_comparison_needs_two_profiles(h100):
    with pytest.raises(DomainError):
        compare_generations([h100], 8192)


def test_unknown_multiplier_pair(h100, b200):
    comparison = compare_generations([h100, b200], 8192)
    with pytest.raises(KeyError):
        comparison.multiplier("b200-llama70b", "h100-llama70b")


def test_model_comparison_rows(catalog):
    profiles = [
        catalog.profile("H100-SXM5:Llama-3.1-8B"),
        catalog.profile("H100-SXM5:Llama-3.1-405B", clamp_infeasible=True),
    ]
    small, clamped = compare_models(profiles, 8192)
    assert (small.model, small.gpu, small.tp) == ("Llama-3.1-8B", "H100-SXM5", 1)
    assert small.note == ""
    assert clamped.note == "clamped"
    assert clamped.point.n_max == 1


SWEEP_SUBJECTS = ["h100-llama70b", "b200-llama70b", "H100-SXM5:Llama-3.1-70B", "B200-SXM:Llama-3.1-70B"]


@given(st.sampled_from(SWEEP_SUBJECTS), st.integers(min_value=1024, max_value=4095))
def test_tok_per_watt_falls_along_every_doubling_ladder(catalog, subject, start):
    profile = catalog.profile(subject)
    windows = [start * 2 ** i for i in range(8) if start * 2 ** i <= 131072]
    windows = [w for w in windows if profile.n_max(w) >= 1]
    scores = [p.tok_per_watt for p in context_sweep(profile, windows)]
    assert all(later < earlier for earlier, later in zip(scores, scores[1:]))


@given(st.sampled_from([4096, 8192, 65536]), st.floats(min_value=0.0, max_value=1.0),
       st.floats(min_value=0.0, max_value=1.0))
def test_throughput_never_drops_as_utilization_rises(h100, window, rho_a, rho_b):
    low, high = sorted((rho_a, rho_b))
    lower = utilization_point(h100, window, low)
    higher = utilization_point(h100, window, high)
    assert higher.throughput >= lower.throughput
    if higher.n_active > lower.n_active:
        assert higher.throughput > lower.throughput


@given(st.integers(min_value=1024, max_value=4095), st.integers(min_value=0, max_value=5),
       st.integers(min_value=1, max_value=6))
def test_b200_advantage_narrows_at_long_context(h100, b200, start, short_exp, extra):
    short, long = start * 2 ** short_exp, start * 2 ** (short_exp + extra)
    assume(long <= 131072)
    ratio = compare_generations([h100, b200], short).multipliers[0].tok_per_watt
    assert compare_generations([h100, b200], long).multipliers[0].tok_per_watt < ratio


def test_b200_advantage_at_4k_and_64k(h100, b200):
    at_4k = compare_generations([h100, b200], 4096).multiplier("h100-llama70b", "b200-llama70b")
    at_64k = compare_generations([h100, b200], 65536).multiplier("h100-llama70b", "b200-llama70b")
    assert at_64k.tok_per_watt < at_4k.tok_per_watt
    assert (at_4k.tok_per_watt, at_64k.tok_per_watt) == pytest.approx((1.748, 1.488), rel=2e-3)
