from __future__ import annotations

import copy
import time

import pytest

from clusteropt.scenario import parse_scenario
from clusteropt.controllers import RunTrace, TickRecord
from clusteropt.sim import ClusterSpec, ResourceVector, WorkloadSpec, World, initial_state, step
from clusteropt.telemetry import aggregate, collect

ACCEPTANCE_LINES: list[str] = []
_START = time.perf_counter()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
    terminalreporter.write_line(f"whole test session: {time.perf_counter() - _START:.1f} s")


def make_world(clusters=(("a", 4000, 8192),), workloads=(("api", 500, 512, 100.0, 20.0),), delay=2, routing="local"):
    return World.build(
        [ClusterSpec(c, ResourceVector(cpu, mem), delay) for c, cpu, mem in clusters],
        [WorkloadSpec(w, ResourceVector(cpu, mem), cap, base) for w, cpu, mem, cap, base in workloads],
        routing=routing,
    )


BASE_SCENARIO = {
    "name": "unit",
    "seed": 3,
    "ticks": 50,
    "clusters": [
        {"cluster_id": "a", "capacity": {"cpu_millicores": 8000, "memory_mib": 16384}},
        {"cluster_id": "b", "capacity": {"cpu_millicores": 8000, "memory_mib": 16384}},
    ],
    "workloads": [
        {"workload_id": "api", "request_per_replica": {"cpu_millicores": 500, "memory_mib": 512},
         "capacity_per_replica_rps": 100, "base_service_ms": 20},
    ],
    "traces": {
        "a": {"api": {"kind": "sinusoid", "params": {"base": 300, "amplitude": 150, "period_ticks": 20}}},
        "b": {"api": {"kind": "burst", "params": {"base": 100, "spike_multiplier": 3,
                                                  "spike_probability": 0.1, "spike_duration_ticks": 4}}},
    },
    "initial_replicas": {"a": {"api": 2}, "b": {"api": 5}},
    "policy": {"latency_slo_ms": 60},
}


def scenario_dict(**overrides):
    d = copy.deepcopy(BASE_SCENARIO)
    d.update(overrides)
    return d


def make_scenario(**overrides):
    return parse_scenario(scenario_dict(**overrides))


def build_trace(world, replicas, demands, actions=None):
    """Drive the simulator directly; ``demands[t]`` and ``actions[t]`` per tick."""
    actions = actions or {}
    s = initial_state(replicas)
    trace = RunTrace(world, "manual", 0)
    for t, d in enumerate(demands):
        s, ms, events = step(world, s, actions.get(t, []), d)
        snaps = [collect(ms, c, list(world.workloads.values()), t) for c in world.clusters.values()]
        trace.ticks.append(TickRecord(t, aggregate(snaps, world.clusters), events, s.tick, ()))
    return trace


@pytest.fixture
def world():
    return make_world()


def random_instance(rng, routing=None, max_actions=1):
    """Small random world, policy, pre-decision state and forecast for the decision layer."""
    from clusteropt.actions import Scale
    from clusteropt.forecast import Forecast
    from clusteropt.policy import PolicySpec
    from clusteropt.sim import PendingAction, SimState

    nc = int(rng.integers(1, 3))
    nw = int(rng.integers(1, 3))
    clusters = [(c, int(rng.choice([2000, 3000, 4000])), int(rng.choice([4096, 8192]))) for c in "ab"[:nc]]
    workloads = [
        (w, int(rng.choice([250, 500])), int(rng.choice([256, 512])), float(rng.choice([50, 100])), float(rng.choice([10, 20])))
        for w in ("api", "db")[:nw]
    ]
    world = make_world(clusters, workloads, routing=routing or str(rng.choice(["local", "replica_weighted"])))
    weights = rng.dirichlet([1, 1, 1])
    policy = PolicySpec(
        latency_slo_ms=float(rng.choice([30, 60, 100])),
        replica_min=int(rng.integers(0, 2)),
        replica_max=int(rng.integers(3, 7)),
        cooldown_ticks=int(rng.integers(0, 4)),
        hysteresis_band=float(rng.choice([0.0, 0.05, 0.1])),
        w_perf=float(weights[0]),
        w_cost=float(weights[1]),
        w_bal=float(1 - weights[0] - weights[1]),
        max_actions_per_cycle=max_actions,
        migration_cost_per_replica=float(rng.choice([0.0, 0.5])),
        epsilon_improve=float(rng.choice([0.0, 1e-4, 1e-3])),
    )
    replicas = {}
    for c, cpu, mem in clusters:
        for w, wcpu, wmem, *_ in workloads:
            lo, hi = policy.bounds((c, w))
            replicas[(c, w)] = int(rng.integers(lo, hi + 1))
        # keep the starting layout within capacity
        while sum(replicas[(c, w[0])] * w[1] for w in workloads) > cpu or sum(replicas[(c, w[0])] * w[2] for w in workloads) > mem:
            w = workloads[int(rng.integers(len(workloads)))][0]
            if replicas[(c, w)] > policy.bounds((c, w))[0]:
                replicas[(c, w)] -= 1
    tick = int(rng.integers(0, 6))
    last = {p: int(rng.integers(0, tick + 1)) for p in world.pairs if rng.random() < 0.3}
    pending = []
    if rng.random() < 0.3:
        c, w = world.pairs[int(rng.integers(len(world.pairs)))]
        if replicas[(c, w)] + 1 <= policy.bounds((c, w))[1]:
            pending.append(PendingAction(Scale(c, w, 1), tick + 1, tick - 1))
    state = SimState(tick, replicas, pending, last)
    h = 3
    preds = {p: (float(rng.uniform(0, 600)),) * h for p in world.pairs}
    margins = {p: float(rng.uniform(0, 30)) for p in world.pairs}
    return world, policy, state, Forecast(preds, margins, h)
