"""Candidate generation, forecast-projected evaluation and greedy batch selection.

Two evaluation routes exist. :func:`generate_candidates` and :func:`evaluate`
work on plain Python objects one candidate at a time; :class:`Planner` does
the same job with numpy over the whole candidate set and is what the
controller uses. Tests hold the two routes equal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .actions import Action, Migrate, NoOp, Pair, Scale, canonical_key, replica_deltas
from .forecast import Forecast
from .policy import PolicySpec, PredictedOutcome, Violation, cost_normalizer, feasible, score
from .sim import MAX_RHO, SimState, WorkloadSpec, World, latency_model, route_demand


@dataclass(frozen=True)
class DecisionOutcome:
    chosen: tuple[Action, ...] = ()
    predicted_score: float = 0.0
    candidates_evaluated: int = 0
    rejected: tuple[tuple[Action, Violation], ...] = ()
    noop_score: float = 0.0


def predicted_latency(offered_rps: float, replicas: int, spec: WorkloadSpec) -> float:
    """Latency used for planning.

    Matches :func:`latency_model` up to the 0.99 utilization clamp and keeps
    growing linearly past it, so partial relief of an overloaded pair still
    registers as an improvement.
    """
    cap = spec.capacity_per_replica_rps
    base = spec.base_service_ms
    if replicas <= 0:
        return base if offered_rps <= 0 else base / (1 - MAX_RHO) * (1 + offered_rps / cap)
    rho = offered_rps / (replicas * cap)
    if rho <= MAX_RHO:
        return latency_model(offered_rps, replicas * cap, base)
    return base / (1 - MAX_RHO) * rho / MAX_RHO


def projected_demand(forecast: Forecast, pair: Pair) -> float:
    return forecast.at(pair) + forecast.margin(pair)


def offered_load(forecast: Forecast, replicas: Mapping[Pair, int], world: World) -> dict[Pair, float]:
    """Projected ingress (forecast plus margin) routed onto a replica layout."""
    ingress = {pair: projected_demand(forecast, pair) for pair in world.pairs}
    return route_demand(world, ingress, replicas)


def implied_utilization(offered: float, replicas: int, cap_rps: float) -> float:
    if replicas <= 0:
        return float("inf") if offered > 0 else 0.0
    return offered / (replicas * cap_rps)


def _scale_deltas(policy: PolicySpec) -> list[int]:
    d = policy.max_scale_delta
    return [k for k in range(-d, d + 1) if k != 0]


def generate_candidates(
    state: SimState, forecast: Forecast, policy: PolicySpec, world: World
) -> list[Action]:
    """NoOp, out-of-band scalings and migrations that pass the hard checks.

    ``state`` is used as given; callers wanting in-flight actions accounted
    for pass ``state.projected()``.
    """
    out: set[Action] = {NoOp()}
    offered = offered_load(forecast, state.replicas, world)
    for c, w in world.pairs:
        lo_band, hi_band = policy.utilization_band(world.workloads[w])
        u = implied_utilization(
            offered[(c, w)],
            state.replicas.get((c, w), 0),
            world.workloads[w].capacity_per_replica_rps,
        )
        if lo_band <= u <= hi_band:
            continue
        for d in _scale_deltas(policy):
            a = Scale(c, w, d)
            if feasible(a, state, policy, world) is None:
                out.add(a)
    for src in world.clusters:
        for dst in world.clusters:
            if src == dst:
                continue
            for w in world.workloads:
                if state.replicas.get((src, w), 0) <= 0:
                    continue
                for k in range(1, policy.max_migrate_count + 1):
                    a = Migrate(src, dst, w, k)
                    if feasible(a, state, policy, world) is None:
                        out.add(a)
    return sorted(out, key=canonical_key)


def predicted_outcome(
    candidate: Action, state: SimState, forecast: Forecast, policy: PolicySpec, world: World
) -> PredictedOutcome:
    s = state.projected()
    for pair, d in replica_deltas(candidate).items():
        s.replicas[pair] = s.replicas.get(pair, 0) + d
    offered = offered_load(forecast, s.replicas, world)
    latencies = [
        predicted_latency(offered[(c, w)], s.replicas.get((c, w), 0), world.workloads[w])
        for c, w in world.pairs
    ]
    utils = [
        world.allocated(s.replicas, c).cpu_millicores / world.clusters[c].capacity.cpu_millicores
        for c in world.clusters
    ]
    cost = sum(
        s.replicas.get((c, w), 0) * policy.replica_cost(world.workloads[w].request_per_replica.cpu_millicores)
        for c, w in world.pairs
    )
    migrations = candidate.count if isinstance(candidate, Migrate) else 0
    return PredictedOutcome(latencies, utils, cost, migrations)


def evaluate(
    candidate: Action, state: SimState, forecast: Forecast, policy: PolicySpec, world: World
) -> float:
    """Score ``candidate`` against the forecast-projected state. Pure."""
    outcome = predicted_outcome(candidate, state, forecast, policy, world)
    return score(outcome, policy, cost_normalizer(world, policy))


SCORE_TOL = 1e-10


def select(scored: Sequence[tuple[Action, float]], policy: PolicySpec) -> DecisionOutcome:
    """Greedy conflict-free batch of actions that beat NoOp by more than epsilon.

    Scores closer than ``SCORE_TOL`` (relative to NoOp's score) count as
    equal, so rounding noise from different summation orders cannot override
    the canonical tie-break.
    """
    if not scored:
        raise ValueError("scored candidates must include NoOp")
    noop = [s for a, s in scored if isinstance(a, NoOp)]
    if not noop:
        raise ValueError("scored candidates must include NoOp")
    noop_score = min(noop)
    tol = SCORE_TOL * max(1.0, abs(noop_score))
    pool = sorted(
        ((s, canonical_key(a), a) for a, s in scored if not isinstance(a, NoOp)
         and s < noop_score - policy.epsilon_improve - tol),
        key=lambda t: (t[0], t[1]),
    )
    chosen: list[Action] = []
    touched: set[Pair] = set()
    best = noop_score
    while pool and len(chosen) < policy.max_actions_per_cycle:
        pool = [t for t in pool if not t[2].touches() & touched]
        if not pool:
            break
        floor = pool[0][0]
        pick = min((t for t in pool if t[0] <= floor + tol), key=lambda t: t[1])
        pool.remove(pick)
        if not chosen:
            best = pick[0]
        chosen.append(pick[2])
        touched |= pick[2].touches()
    return DecisionOutcome(tuple(chosen), best, len(scored), (), noop_score)


class Planner:
    """Array-backed candidate generation and scoring for one world/policy."""

    def __init__(self, world: World, policy: PolicySpec):
        self.world = world
        self.policy = policy
        self.cids = world.cluster_ids
        self.wids = world.workload_ids
        self.cidx = {c: i for i, c in enumerate(self.cids)}
        self.widx = {w: j for j, w in enumerate(self.wids)}
        ws = [world.workloads[w] for w in self.wids]
        cs = [world.clusters[c] for c in self.cids]
        self.cap_rps = np.array([w.capacity_per_replica_rps for w in ws], dtype=float)
        self.base_ms = np.array([w.base_service_ms for w in ws], dtype=float)
        self.cpu = np.array([w.request_per_replica.cpu_millicores for w in ws], dtype=np.int64)
        self.mem = np.array([w.request_per_replica.memory_mib for w in ws], dtype=np.int64)
        self.ccpu = np.array([c.capacity.cpu_millicores for c in cs], dtype=np.int64)
        self.cmem = np.array([c.capacity.memory_mib for c in cs], dtype=np.int64)
        self.rcost = np.array([policy.replica_cost(int(x)) for x in self.cpu])
        self.lo = np.array([[policy.bounds((c, w))[0] for w in self.wids] for c in self.cids])
        self.hi = np.array([[policy.bounds((c, w))[1] for w in self.wids] for c in self.cids])
        self.normalizer = cost_normalizer(world, policy)
        self.deltas = _scale_deltas(policy)
        self.bands = [policy.utilization_band(w) for w in ws]
        self.pooled = world.routing == "replica_weighted"

    def route(self, R: np.ndarray, ingress: np.ndarray) -> np.ndarray:
        """Route ingress [C, W] onto replica layouts R [..., C, W]."""
        if not self.pooled:
            return np.broadcast_to(ingress, R.shape)
        total = ingress.sum(axis=0)
        reps = R.sum(axis=-2, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            share = np.where(reps > 0, R / reps, 0.0)
        return np.where(reps > 0, share * total, np.broadcast_to(ingress, R.shape))

    def replica_matrix(self, state: SimState) -> np.ndarray:
        R = np.zeros((len(self.cids), len(self.wids)), dtype=np.int64)
        for (c, w), n in state.replicas.items():
            if c in self.cidx and w in self.widx:
                R[self.cidx[c], self.widx[w]] = n
        return R

    def demand_matrix(self, forecast: Forecast) -> np.ndarray:
        return np.array(
            [[projected_demand(forecast, (c, w)) for w in self.wids] for c in self.cids], dtype=float
        )

    def candidates(self, state: SimState, ingress: np.ndarray) -> list[Action]:
        """Same set as :func:`generate_candidates`, with cheaper feasibility checks."""
        pol = self.policy
        R = self.replica_matrix(state)
        offered = self.route(R, ingress)
        Rl = R.tolist()
        lo, hi = self.lo.tolist(), self.hi.tolist()
        cpu, mem = self.cpu.tolist(), self.mem.tolist()
        free_cpu = (self.ccpu - R @ self.cpu).tolist()
        free_mem = (self.cmem - R @ self.mem).tolist()
        cooling = [
            [
                (c, w) in state.last_applied
                and state.last_applied[(c, w)] + pol.cooldown_ticks > state.tick
                for w in self.wids
            ]
            for c in self.cids
        ]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = offered / (R * self.cap_rps)
        u = np.where(R > 0, u, np.where(offered > 0, np.inf, 0.0))
        bands = self.bands
        out: list[Action] = [NoOp()]
        nc, nw = len(self.cids), len(self.wids)
        for i in range(nc):
            for j in range(nw):
                if cooling[i][j] or bands[j][0] <= u[i, j] <= bands[j][1]:
                    continue
                for d in self.deltas:
                    n = Rl[i][j] + d
                    if n < max(lo[i][j], 0) or n > hi[i][j]:
                        continue
                    if d > 0 and (d * cpu[j] > free_cpu[i] or d * mem[j] > free_mem[i]):
                        continue
                    out.append(Scale(self.cids[i], self.wids[j], d))
        for i in range(nc):
            for k in range(nc):
                if i == k:
                    continue
                for j in range(nw):
                    if Rl[i][j] <= 0 or cooling[i][j] or cooling[k][j]:
                        continue
                    for n in range(1, pol.max_migrate_count + 1):
                        ns, nd = Rl[i][j] - n, Rl[k][j] + n
                        if not (lo[i][j] <= ns <= hi[i][j] and lo[k][j] <= nd <= hi[k][j]):
                            continue
                        if n * cpu[j] > free_cpu[k] or n * mem[j] > free_mem[k]:
                            continue
                        out.append(Migrate(self.cids[i], self.cids[k], self.wids[j], n))
        return sorted(out, key=canonical_key)

    def scores(self, R0: np.ndarray, ingress: np.ndarray, actions: Sequence[Action]) -> np.ndarray:
        pol = self.policy
        K = len(actions)
        Rk = np.repeat(R0[None, :, :], K, axis=0).astype(float)
        kk, ii, jj, dd = [], [], [], []
        mig = np.zeros(K)
        for k, a in enumerate(actions):
            for (c, w), d in replica_deltas(a).items():
                kk.append(k)
                ii.append(self.cidx[c])
                jj.append(self.widx[w])
                dd.append(d)
            if isinstance(a, Migrate):
                mig[k] = a.count
        if kk:
            np.add.at(Rk, (np.array(kk), np.array(ii), np.array(jj)), np.array(dd, dtype=float))
        serving = Rk * self.cap_rps
        off = self.route(Rk, ingress)
        base = np.broadcast_to(self.base_ms, Rk.shape)
        sat = base / (1 - MAX_RHO)
        with np.errstate(divide="ignore", invalid="ignore"):
            rho = np.where(serving > 0, off / serving, 0.0)
        lat = np.where(rho <= MAX_RHO, base / (1 - np.minimum(rho, MAX_RHO)), sat * rho / MAX_RHO)
        lat = np.where(
            Rk > 0, lat, np.where(off > 0, sat * (1 + off / self.cap_rps), base)
        )
        slo = pol.latency_slo_ms
        perf = (np.maximum(0.0, lat - slo) / slo).mean(axis=(1, 2))
        spend = (Rk * self.rcost).sum(axis=(1, 2)) + pol.migration_cost_per_replica * mig
        cost = spend / self.normalizer if self.normalizer > 0 else np.zeros(K)
        util = (Rk * self.cpu).sum(axis=2) / self.ccpu
        s1 = util.sum(axis=1)
        s2 = (util * util).sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            jain = np.where(s2 > 0, s1 * s1 / (util.shape[1] * s2), 1.0)
        return pol.w_perf * perf + pol.w_cost * cost + pol.w_bal * (1.0 - jain)

    def decide(self, state: SimState, forecast: Forecast) -> DecisionOutcome:
        proj = state.projected()
        ingress = self.demand_matrix(forecast)
        actions = self.candidates(proj, ingress)
        values = self.scores(self.replica_matrix(proj), ingress, actions)
        return select(list(zip(actions, values.tolist())), self.policy)
