import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusteropt.actions import Scale
from clusteropt.metrics import (
    applied_scales,
    avg_latency,
    compute_report,
    count_reversals,
    direction_reversals,
    jain_index,
    run_balance_score,
    settling_time,
    stability_events,
    utilization_efficiency,
)

from conftest import build_trace, make_world
from oracles import jain, naive_balance, naive_efficiency, naive_latency, naive_reversals, naive_settling, rows_of


def test_jain_examples():
    assert jain_index([0.5, 1.0]) == pytest.approx(0.9, abs=1e-12)
    assert jain_index([0.3] * 4) == pytest.approx(1.0, abs=1e-12)
    assert jain_index([0, 0]) == 1.0
    with pytest.raises(ValueError):
        jain_index([])


def test_jain_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        xs = rng.uniform(0, 1, int(rng.integers(1, 12))).tolist()
        assert abs(jain_index(xs) - jain(xs)) <= 1e-12


@given(st.lists(st.floats(0.01, 100), min_size=1, max_size=10), st.floats(0.01, 100))
def test_jain_scale_invariant_and_bounded(xs, c):
    j = jain_index(xs)
    assert j == pytest.approx(jain_index([c * x for x in xs]), rel=1e-9)
    assert 1 / len(xs) - 1e-12 <= j <= 1 + 1e-12
    if len(set(xs)) == 1:
        assert j == pytest.approx(1.0)


def test_efficiency_under_double_provisioning(world):
    # 4 replicas of 100 rps each serving 200 rps
    trace = build_trace(world, {("a", "api"): 4}, [{("a", "api"): 200.0}] * 10)
    assert utilization_efficiency(trace) == pytest.approx(0.5)


def test_efficiency_idle_ticks():
    w = make_world()
    assert utilization_efficiency(build_trace(w, {}, [{}])) == 1.0
    assert utilization_efficiency(build_trace(w, {}, [{("a", "api"): 5.0}])) == 0.0


def test_stability_one_reversal_per_hour():
    w = make_world(delay=0)
    trace = build_trace(
        w, {("a", "api"): 2}, [{}] * 360,
        {5: [Scale("a", "api", 1)], 15: [Scale("a", "api", -1)]},
    )
    assert stability_events(trace, 30) == pytest.approx(1.0)
    assert stability_events(trace, 9) == 0.0


def test_monotone_scaling_is_stable():
    w = make_world(delay=0)
    trace = build_trace(w, {("a", "api"): 1}, [{}] * 40, {t: [Scale("a", "api", 1)] for t in range(0, 40, 8)})
    assert stability_events(trace) == 0.0


def test_latency_weighted_by_served_requests():
    # 9/(1-0.1) = 10 ms at 100 rps, 10/(1-0.5) = 20 ms at 300 rps
    w = make_world(workloads=(("fast", 100, 128, 1000.0, 9.0), ("slow", 100, 128, 600.0, 10.0)))
    trace = build_trace(w, {("a", "fast"): 1, ("a", "slow"): 1}, [{("a", "fast"): 100.0, ("a", "slow"): 300.0}] * 3)
    assert avg_latency(trace) == pytest.approx(17.5)
    assert avg_latency(build_trace(w, {}, [{}])) == pytest.approx(9.5)


@pytest.mark.parametrize(
    "xs,expected",
    [([5.0] * 8, 0), ([0, 10, 10, 10, 10], 1), ([1.2, 0.8] * 20, None), ([0, 0, 0, 0, 10], None)],
)
def test_settling_examples(xs, expected):
    assert settling_time(xs, 0.05) == expected


def test_settling_rejects_bad_input():
    with pytest.raises(ValueError):
        settling_time([], 0.05)
    with pytest.raises(ValueError):
        settling_time([1.0], 0)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=40), st.floats(0.01, 0.5))
def test_settling_matches_naive(xs, tol):
    assert settling_time(xs, tol) == naive_settling(xs, tol)


def test_direction_reversals():
    assert direction_reversals([1, 2, 2, 3]) == 0
    assert direction_reversals([1, 2, 1, 2]) == 2


scale_st = st.lists(
    st.tuples(st.integers(0, 3), st.sampled_from(["a", "b"]), st.sampled_from([-2, -1, 1, 2])), max_size=30
)


@given(scale_st, st.integers(0, 40), st.integers(0, 40))
def test_reversals_monotone_in_window(raw, w1, w2):
    t = 0
    scales = []
    for gap, c, d in raw:
        t += gap
        scales.append((t, Scale(c, "api", d)))
    lo, hi = sorted((w1, w2))
    assert count_reversals(scales, lo) <= count_reversals(scales, hi)
    flat = [(t, (a.cluster_id, a.workload_id), a.delta) for t, a in scales]
    assert count_reversals(scales, hi) == naive_reversals(flat, hi)


@st.composite
def small_traces(draw):
    nc = draw(st.integers(1, 2))
    nw = draw(st.integers(1, 2))
    world = make_world(
        clusters=[(c, 8000, 16384) for c in "ab"[:nc]],
        workloads=[(w, draw(st.sampled_from([250, 500])), draw(st.sampled_from([256, 1024])),
                    draw(st.sampled_from([50.0, 100.0])), 20.0) for w in ("api", "db")[:nw]],
        delay=draw(st.integers(0, 1)),
    )
    replicas = {p: draw(st.integers(0, 4)) for p in world.pairs}
    n = draw(st.integers(1, 5))
    demands = [{p: draw(st.floats(0, 500)) for p in world.pairs} for _ in range(n)]
    actions = {
        t: [Scale(c, w, draw(st.sampled_from([-1, 1])))]
        for t in range(n)
        for c, w in [world.pairs[draw(st.integers(0, len(world.pairs) - 1))]]
        if draw(st.booleans())
    }
    return build_trace(world, replicas, demands, actions)


@settings(max_examples=150, deadline=None)
@given(small_traces(), st.integers(0, 5))
def test_metrics_match_naive_recomputation(trace, window):
    rows = rows_of(trace)
    wl = trace.world.workloads
    assert utilization_efficiency(trace) == pytest.approx(naive_efficiency(rows, wl), abs=1e-12)
    assert utilization_efficiency(trace) <= 1 + 1e-12
    assert run_balance_score(trace) == pytest.approx(naive_balance(rows, trace.world), abs=1e-12)
    assert avg_latency(trace) == pytest.approx(naive_latency(rows, wl), rel=1e-12)
    flat = [(t, (a.cluster_id, a.workload_id), a.delta) for t, a in applied_scales(trace)]
    hours = len(trace) * trace.world.tick_seconds / 3600
    assert math.isclose(stability_events(trace, window), naive_reversals(flat, window) / hours)
    rep = compute_report(trace, window)
    assert rep.utilization_efficiency == utilization_efficiency(trace)
