"""Operational policy: hard feasibility checks and the weighted objective."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .actions import Action, Migrate, NoOp, Pair
from .metrics import jain_index
from .sim import SimState, WorkloadSpec, World, apply_violation

VIOLATION_KINDS = ("capacity_exceeded", "replica_bounds", "cooldown_active", "unknown_target")


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str = ""

    def __post_init__(self) -> None:
        if self.kind not in VIOLATION_KINDS:
            raise ValueError(f"unknown violation kind {self.kind!r}")


@dataclass(frozen=True)
class PolicySpec:
    latency_slo_ms: float = 100.0
    cost_per_replica_tick: float = 1.0
    replica_min: int = 1
    replica_max: int = 20
    replica_bounds: Mapping[Pair, tuple[int, int]] = field(default_factory=dict)
    cooldown_ticks: int = 6
    hysteresis_band: float = 0.05
    target_utilization: float | None = None
    w_perf: float = 0.5
    w_cost: float = 0.3
    w_bal: float = 0.2
    max_actions_per_cycle: int = 1
    migration_cost_per_replica: float = 0.5
    epsilon_improve: float = 0.001
    max_scale_delta: int = 2
    max_migrate_count: int = 2

    def validate(self) -> list[str]:
        errors = []
        if not self.latency_slo_ms > 0:
            errors.append("latency_slo_ms must be > 0")
        if self.cost_per_replica_tick < 0:
            errors.append("cost_per_replica_tick must be >= 0")
        if self.migration_cost_per_replica < 0:
            errors.append("migration_cost_per_replica must be >= 0")
        if self.replica_min < 0 or self.replica_min > self.replica_max:
            errors.append("replica_min must satisfy 0 <= replica_min <= replica_max")
        for pair, (lo, hi) in self.replica_bounds.items():
            if lo < 0 or lo > hi:
                errors.append(f"replica bounds for {pair[0]}/{pair[1]} must satisfy 0 <= min <= max")
        if self.cooldown_ticks < 0:
            errors.append("cooldown_ticks must be >= 0")
        if not 0 <= self.hysteresis_band < 0.5:
            errors.append("hysteresis_band must lie in [0, 0.5)")
        if self.target_utilization is not None and not 0 < self.target_utilization < 1:
            errors.append("target_utilization must lie in (0, 1)")
        ws = (self.w_perf, self.w_cost, self.w_bal)
        if min(ws) < 0 or abs(sum(ws) - 1.0) > 1e-9:
            errors.append("weights must be non-negative and sum to 1")
        if self.max_actions_per_cycle < 1:
            errors.append("max_actions_per_cycle must be >= 1")
        if self.epsilon_improve < 0:
            errors.append("epsilon_improve must be >= 0")
        if self.max_scale_delta < 1 or self.max_migrate_count < 1:
            errors.append("max_scale_delta and max_migrate_count must be >= 1")
        return errors

    def bounds(self, pair: Pair) -> tuple[int, int]:
        return self.replica_bounds.get(pair, (self.replica_min, self.replica_max))

    def bounds_map(self, world: World) -> dict[Pair, tuple[int, int]]:
        return {pair: self.bounds(pair) for pair in world.pairs}

    def utilization_band(self, workload: WorkloadSpec) -> tuple[float, float]:
        """Utilization interval in which a pair is left alone.

        With an explicit ``target_utilization`` the band is centred on it.
        Otherwise the top of the band is the utilization at which the latency
        model reaches the SLO, so a pair inside the band is compliant and a
        pair above it is not.
        """
        b = self.hysteresis_band
        if self.target_utilization is not None:
            return self.target_utilization - b, self.target_utilization + b
        hi = max(0.0, 1.0 - workload.base_service_ms / self.latency_slo_ms)
        return max(0.0, hi - 2 * b), hi

    def replica_cost(self, cpu_millicores: int) -> float:
        return self.cost_per_replica_tick * cpu_millicores / 1000.0


def cooldown_remaining(pair: Pair, tick: int, last_applied: Mapping[Pair, int], cooldown_ticks: int) -> int:
    last = last_applied.get(pair)
    if last is None:
        return 0
    return max(0, last + cooldown_ticks - tick)


def feasible(
    action: Action,
    state: SimState,
    policy: PolicySpec,
    world: World,
    cooldowns: Mapping[Pair, int] | None = None,
) -> Violation | None:
    """Hard checks only. Returns None when the action may be enqueued now.

    ``cooldowns`` maps a pair to the tick its last action landed; it defaults
    to ``state.last_applied``.
    """
    if isinstance(action, NoOp):
        return None
    if not world.knows(action):
        return Violation("unknown_target", f"{action} references an unregistered target")
    last = state.last_applied if cooldowns is None else cooldowns
    for pair in sorted(action.touches()):
        left = cooldown_remaining(pair, state.tick, last, policy.cooldown_ticks)
        if left:
            return Violation("cooldown_active", f"{pair[0]}/{pair[1]} cooling down for {left} ticks")
    hit = apply_violation(world, state.replicas, action, policy.bounds_map(world))
    if hit is not None:
        return Violation(*hit)
    return None


def cost_normalizer(world: World, policy: PolicySpec) -> float:
    """Cost of running every pair at its replica maximum."""
    return sum(
        policy.bounds((c, w))[1] * policy.replica_cost(world.workloads[w].request_per_replica.cpu_millicores)
        for c, w in world.pairs
    )


@dataclass(frozen=True)
class PredictedOutcome:
    latencies_ms: Sequence[float]
    cpu_utilizations: Sequence[float]
    allocated_cost: float = 0.0
    migration_count: int = 0


def score(outcome: PredictedOutcome, policy: PolicySpec, normalizer: float) -> float:
    """Weighted SLO excess + normalized cost + (1 - Jain) imbalance; lower is better."""
    slo = policy.latency_slo_ms
    lat = outcome.latencies_ms
    perf = sum(max(0.0, x - slo) / slo for x in lat) / len(lat) if lat else 0.0
    spend = outcome.allocated_cost + policy.migration_cost_per_replica * outcome.migration_count
    cost = spend / normalizer if normalizer > 0 else 0.0
    imbalance = 1.0 - jain_index(outcome.cpu_utilizations) if outcome.cpu_utilizations else 0.0
    return policy.w_perf * perf + policy.w_cost * cost + policy.w_bal * imbalance


def action_migrations(action: Action) -> int:
    return action.count if isinstance(action, Migrate) else 0

