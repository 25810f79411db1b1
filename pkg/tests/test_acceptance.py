"""End-to-end acceptance checks. Each test records one pass/fail line.

The lines are printed in the "acceptance criteria" section of the pytest
terminal summary.
"""

import time
from fractions import Fraction

import numpy as np
import pytest

from clusteropt.actions import Migrate, NoOp, Scale, replica_deltas
from clusteropt.cli import _map, execute_arm, main
from clusteropt.controllers import run
from clusteropt.decision import Planner, generate_candidates, projected_demand
from clusteropt.forecast import ForecasterState, predict, update
from clusteropt.metrics import (
    allocation_series,
    applied_scales,
    avg_latency,
    direction_reversals,
    jain_index,
    run_balance_score,
    settling_time,
    stability_events,
    utilization_efficiency,
)
from clusteropt.report import report_for
from clusteropt.scenario import load_scenario, shipped_scenario_path

from conftest import ACCEPTANCE_LINES, build_trace, make_world, random_instance
from oracles import (
    brute_force_choice,
    holt,
    jain,
    naive_balance,
    naive_efficiency,
    naive_latency,
    naive_reversals,
    naive_score,
    rows_of,
    safety_violations,
)

_MODULE_START = time.perf_counter()


def record(n, ok, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
    return ok


def scenario(name):
    return load_scenario(shipped_scenario_path(name))


@pytest.fixture(scope="module")
def bursty():
    sc = scenario("bursty-3x4")
    t0 = time.perf_counter()
    traces = {k: run(sc, k) for k in ("ai", "reactive")}
    elapsed = time.perf_counter() - t0
    reports = {k: report_for(tr, sc.evaluation) for k, tr in traces.items()}
    return sc, traces, reports, elapsed


@pytest.fixture(scope="module")
def step_change():
    sc = scenario("step-change")
    t0 = time.perf_counter()
    traces = {k: run(sc, k) for k in ("ai", "reactive")}
    return sc, traces, time.perf_counter() - t0


def test_criterion_1_directional_comparison(bursty):
    sc, _, rep, elapsed = bursty
    ai, base = rep["ai"], rep["reactive"]
    d_eff = ai.utilization_efficiency - base.utilization_efficiency
    d_bal = ai.balance_score - base.balance_score
    r_stab = ai.stability_events_per_hour / base.stability_events_per_hour
    r_lat = ai.avg_latency_ms / base.avg_latency_ms
    ok = d_eff >= 0.10 and d_bal >= 0.05 and r_stab <= 0.70 and r_lat <= 0.90 and elapsed < 60
    record(1, ok, (
        f"bursty-3x4 seed {sc.seed}: efficiency +{d_eff:.4f} (>= 0.10), balance +{d_bal:.4f} (>= 0.05), "
        f"stability ratio {r_stab:.3f} (<= 0.70), latency ratio {r_lat:.3f} (<= 0.90), {elapsed:.1f} s (< 60)"
    ))
    assert ok


def test_criterion_2_convergence(step_change):
    sc, traces, elapsed = step_change
    start = sc.evaluation.settle_from_tick
    tol = sc.evaluation.settling_tolerance
    series = {k: allocation_series(tr, start) for k, tr in traces.items()}
    settle = {k: settling_time(s, tol) for k, s in series.items()}
    flips = {k: direction_reversals(s) for k, s in series.items()}
    # a run that never settles is slower than any run that does
    rank = {k: float("inf") if v is None else v for k, v in settle.items()}
    ok = rank["ai"] < rank["reactive"] and flips["ai"] < flips["reactive"] and elapsed < 10
    record(2, ok, (
        f"step-change from tick {start}: settling ai {settle['ai']} vs reactive {settle['reactive']}, "
        f"reversals ai {flips['ai']} vs reactive {flips['reactive']}, {elapsed:.1f} s (< 10)"
    ))
    assert ok


def test_criterion_3_forecaster_oracle():
    ys = [3.0 + 2.0 * t for t in range(200)]
    state = ForecasterState(0.5, 0.5)
    worst = 0.0
    for t, y in enumerate(ys[:-1]):
        state = update(state, {"s": y})
        if t >= 50:
            pred = predict(state, 1).predicted_rps["s"][0]
            worst = max(worst, abs(pred - ys[t + 1]) / ys[t + 1])
    level, trend = holt(ys[:-1], 0.5, 0.5)
    same_as_oracle = (state["s"].level, state["s"].trend) == pytest.approx((level, trend), rel=1e-12)
    hand = update(update(ForecasterState(1.0, 1.0), {"s": 0.0}), {"s": 10.0})["s"]
    exact = (hand.level, hand.trend) == (10.0, 10.0) and predict(update(update(
        ForecasterState(1.0, 1.0), {"s": 0.0}), {"s": 10.0}), 2).predicted_rps["s"] == (20.0, 30.0)
    ok = worst < 0.01 and exact and same_as_oracle
    record(3, ok, f"linear series max one-step relative error {worst:.2e} (< 1e-2); alpha=beta=1 on [0, 10] exact: {exact}")
    assert ok


def random_small_trace(rng):
    nc, nw = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    world = make_world(
        clusters=[(c, 8000, 16384) for c in "ab"[:nc]],
        workloads=[(w, int(rng.choice([250, 500])), int(rng.choice([256, 1024])),
                    float(rng.choice([50, 100])), 20.0) for w in ("api", "db")[:nw]],
        delay=int(rng.integers(0, 2)),
    )
    n = int(rng.integers(1, 6))
    replicas = {p: int(rng.integers(0, 5)) for p in world.pairs}
    demands = [{p: float(rng.uniform(0, 500)) for p in world.pairs} for _ in range(n)]
    actions = {}
    for t in range(n):
        if rng.random() < 0.6:
            c, w = world.pairs[int(rng.integers(len(world.pairs)))]
            actions[t] = [Scale(c, w, int(rng.choice([-1, 1])))]
    return build_trace(world, replicas, demands, actions)


def test_criterion_4_metric_oracles():
    rng = np.random.default_rng(2024)
    jain_err = max(
        abs(jain_index(xs) - jain(xs))
        for xs in (rng.uniform(0, 1, int(rng.integers(1, 16))).tolist() for _ in range(1000))
    )
    examples = abs(jain_index([0.5, 1.0]) - 0.9) <= 1e-12 and abs(jain_index([0.7] * 5) - 1.0) <= 1e-12
    metric_err = 0.0
    for _ in range(300):
        tr = random_small_trace(rng)
        rows, wl = rows_of(tr), tr.world.workloads
        flat = [(t, (a.cluster_id, a.workload_id), a.delta) for t, a in applied_scales(tr)]
        hours = len(tr) * tr.world.tick_seconds / 3600
        for got, want in (
            (utilization_efficiency(tr), naive_efficiency(rows, wl)),
            (run_balance_score(tr), naive_balance(rows, tr.world)),
            (stability_events(tr, 2) * hours, naive_reversals(flat, 2)),
        ):
            metric_err = max(metric_err, abs(got - want))
        want = naive_latency(rows, wl)
        metric_err = max(metric_err, abs(avg_latency(tr) - want) / want)
    ok = jain_err <= 1e-12 and examples and metric_err <= 1e-9
    record(4, ok, (
        f"Jain vs brute force on 1000 vectors max error {jain_err:.1e} (<= 1e-12); examples ok: {examples}; "
        f"300 random <=5-tick traces max metric error {metric_err:.1e} (<= 1e-9)"
    ))
    assert ok


def test_criterion_5_decision_oracle():
    rng = np.random.default_rng(11)
    done = mismatches = 0
    while done < 500:
        world, policy, state, fc = random_instance(rng, max_actions=1)
        proj = state.projected()
        cands = generate_candidates(proj, fc, policy, world)
        if len(cands) > 20:
            continue
        done += 1
        ingress = {k: projected_demand(fc, k) for k in world.pairs}

        def score_of(a):
            r = dict(proj.replicas)
            for pair, d in (replica_deltas(a) if a else {}).items():
                r[pair] += d
            return naive_score(r, ingress, world, policy, a.count if isinstance(a, Migrate) else 0, exact=True)

        expected = brute_force_choice([a for a in cands if not isinstance(a, NoOp)], score_of,
                                      Fraction(policy.epsilon_improve))
        got = Planner(world, policy).decide(state, fc).chosen
        mismatches += got != ((expected,) if expected else ())
    ok = mismatches == 0
    record(5, ok, f"greedy vs exhaustive exact argmin on {done} instances: {mismatches} mismatches")
    assert ok


def test_criterion_6_safety(bursty, step_change):
    runs = [(bursty[0], bursty[1]), (step_change[0], step_change[1])]
    violations = migrations = ticks = 0
    for sc, traces in runs:
        for kind, tr in traces.items():
            violations += len(safety_violations(tr, sc))
            ticks += len(tr)
            if kind == "reactive":
                migrations += sum(isinstance(a, Migrate) for r in tr.ticks for a in r.chosen)
    ok = violations == 0 and migrations == 0
    record(6, ok, f"{ticks} ticks over 4 runs: {violations} capacity/bounds/cooldown violations, "
                  f"{migrations} reactive migrations")
    assert ok


def test_criterion_7_determinism(bursty, tmp_path):
    sc, traces, reports, _ = bursty
    for d in ("first", "second"):
        assert main(["run", "--scenario", "bursty-3x4", "--controller", "ai", "--out", str(tmp_path / d)]) == 0
    files = ("trace_ai.csv", "summary_ai.json")
    cli_same = all((tmp_path / "first" / f).read_bytes() == (tmp_path / "second" / f).read_bytes() for f in files)
    calls = [(sc, k) for k in ("ai", "reactive")]
    concurrent = _map(2, calls)
    serial = [execute_arm(*c) for c in calls[1:]]
    cli_ai = ((tmp_path / "first" / "trace_ai.csv").read_text(), (tmp_path / "first" / "summary_ai.json").read_text())
    arms_same = concurrent[0][1:] == cli_ai and concurrent[1] == serial[0] and concurrent[0][0] == reports["ai"]
    ok = cli_same and arms_same
    record(7, ok, f"repeated run byte-identical: {cli_same}; concurrent arms equal serial arms: {arms_same}")
    assert ok


def test_criterion_8_runtime():
    elapsed = time.perf_counter() - _MODULE_START
    ok = elapsed < 300
    record(8, ok, f"acceptance module finished in {elapsed:.1f} s (< 300)")
    assert ok
