"""Discrete-time multi-cluster world model.

Clusters host replicas of workloads. Every tick each (cluster, workload) pair
receives an offered load, serves what its replicas can absorb and reports a
queueing-shaped latency. Control actions are queued and land after the
target cluster's actuation delay.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from .actions import Action, Migrate, NoOp, Pair, Scale, replica_deltas

MAX_RHO = 0.99
_MASK64 = (1 << 64) - 1


class ConfigurationError(ValueError):
    """Raised when a model object is built from invalid parameters."""


@dataclass(frozen=True)
class ResourceVector:
    cpu_millicores: int = 0
    memory_mib: int = 0

    def __post_init__(self) -> None:
        if self.cpu_millicores < 0 or self.memory_mib < 0:
            raise ConfigurationError(f"negative resource vector {self}")

    def __add__(self, other: ResourceVector) -> ResourceVector:
        return ResourceVector(
            self.cpu_millicores + other.cpu_millicores, self.memory_mib + other.memory_mib
        )

    def __mul__(self, k: int) -> ResourceVector:
        return ResourceVector(self.cpu_millicores * k, self.memory_mib * k)

    __rmul__ = __mul__

    def fits_within(self, other: ResourceVector) -> bool:
        return (
            self.cpu_millicores <= other.cpu_millicores and self.memory_mib <= other.memory_mib
        )

    def is_positive(self) -> bool:
        return self.cpu_millicores > 0 and self.memory_mib > 0


@dataclass(frozen=True)
class ClusterSpec:
    cluster_id: str
    capacity: ResourceVector
    actuation_delay_ticks: int = 2


@dataclass(frozen=True)
class WorkloadSpec:
    workload_id: str
    request_per_replica: ResourceVector
    capacity_per_replica_rps: float
    base_service_ms: float


_TRACE_PARAMS = {
    "constant": {"level": None},
    "sinusoid": {"base": None, "amplitude": None, "period_ticks": None, "phase": 0.0},
    "burst": {
        "base": None,
        "spike_multiplier": None,
        "spike_probability": None,
        "spike_duration_ticks": None,
    },
    "random_walk": {"start": None, "step_sigma": None, "floor": 0.0},
    "step": {"base": None, "multiplier": None, "at_tick": None},
}


@dataclass(frozen=True)
class TraceSpec:
    """Synthetic demand generator description.

    ``params`` holds the kind-specific parameters; missing optional ones are
    filled from defaults by :meth:`create`.
    """

    kind: str
    params: Mapping[str, float]
    seed: int = 0

    @classmethod
    def create(cls, kind: str, seed: int = 0, **params: float) -> TraceSpec:
        spec = cls(kind, _with_defaults(kind, params), seed)
        errors = spec.validate()
        if errors:
            raise ConfigurationError("; ".join(errors))
        return spec

    def validate(self) -> list[str]:
        if self.kind not in _TRACE_PARAMS:
            return [f"unknown trace kind {self.kind!r}"]
        errors = []
        expected = _TRACE_PARAMS[self.kind]
        for name, default in expected.items():
            if name not in self.params and default is None:
                errors.append(f"{self.kind} trace missing parameter {name!r}")
        for name in self.params:
            if name not in expected:
                errors.append(f"{self.kind} trace has unknown parameter {name!r}")
        if not (0 <= self.seed <= _MASK64):
            errors.append("trace seed must be a 64-bit unsigned integer")
        if errors:
            return errors
        p = _with_defaults(self.kind, self.params)
        for name, value in p.items():
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                errors.append(f"parameter {name!r} must be numeric")
            elif not math.isfinite(value):
                errors.append(f"parameter {name!r} must be finite")
        if errors:
            return errors
        if self.kind == "constant" and p["level"] < 0:
            errors.append("constant level must be >= 0")
        elif self.kind == "sinusoid":
            if p["period_ticks"] <= 0:
                errors.append("sinusoid period_ticks must be > 0")
            if p["base"] < 0:
                errors.append("sinusoid base must be >= 0")
        elif self.kind == "burst":
            if p["base"] < 0:
                errors.append("burst base must be >= 0")
            if p["spike_multiplier"] < 0:
                errors.append("burst spike_multiplier must be >= 0")
            if not 0 <= p["spike_probability"] <= 1:
                errors.append("burst spike_probability must lie in [0, 1]")
            if p["spike_duration_ticks"] < 1 or p["spike_duration_ticks"] != int(
                p["spike_duration_ticks"]
            ):
                errors.append("burst spike_duration_ticks must be a positive integer")
        elif self.kind == "random_walk":
            if p["floor"] < 0:
                errors.append("random_walk floor must be >= 0")
            if p["step_sigma"] < 0:
                errors.append("random_walk step_sigma must be >= 0")
            if p["start"] < p["floor"]:
                errors.append("random_walk start must be >= floor")
        elif self.kind == "step":
            if p["base"] < 0 or p["multiplier"] < 0:
                errors.append("step base and multiplier must be >= 0")
            if p["at_tick"] < 0:
                errors.append("step at_tick must be >= 0")
        return errors

    def __hash__(self) -> int:
        return hash((self.kind, tuple(sorted(self.params.items())), self.seed))


def _with_defaults(kind: str, params: Mapping[str, float]) -> dict[str, float]:
    out = {k: v for k, v in _TRACE_PARAMS.get(kind, {}).items() if v is not None}
    out.update(params)
    return out


# -- counter-based randomness -------------------------------------------------


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def counter_uniform(seed: int, tick: int, stream: int = 0) -> float:
    """Uniform draw in [0, 1) that depends only on (seed, tick, stream)."""
    key = _splitmix64((seed ^ (stream * 0xD1B54A32D192ED03)) & _MASK64)
    return (_splitmix64((key + tick) & _MASK64) >> 11) * 2.0**-53


def counter_uniform_array(seed: int, ticks: np.ndarray, stream: int = 0) -> np.ndarray:
    key = _splitmix64((seed ^ (stream * 0xD1B54A32D192ED03)) & _MASK64)
    x = np.asarray(ticks, dtype=np.uint64) + np.uint64(key)
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    x = x ^ (x >> np.uint64(31))
    return (x >> np.uint64(11)).astype(np.float64) * 2.0**-53


def _normal_array(seed: int, ticks: np.ndarray) -> np.ndarray:
    # Box-Muller through libm scalars: numpy's SIMD kernels may differ by an ulp per CPU
    u1 = counter_uniform_array(seed, ticks, stream=1)
    u2 = counter_uniform_array(seed, ticks, stream=2)
    return np.array(
        [math.sqrt(-2.0 * math.log1p(-a)) * math.cos(2.0 * math.pi * b) for a, b in zip(u1, u2)]
    )


# -- demand ----------------------------------------------------------------


def demand_series(trace: TraceSpec, n_ticks: int) -> np.ndarray:
    """Demand for ticks ``0 .. n_ticks-1``; element ``t`` equals ``generate_demand(trace, t)``."""
    if n_ticks <= 0:
        return np.zeros(0)
    return _cached_series(trace, n_ticks).copy()


@lru_cache(maxsize=256)
def _cached_series(trace: TraceSpec, n_ticks: int) -> np.ndarray:
    p = _with_defaults(trace.kind, trace.params)
    t = np.arange(n_ticks)
    if trace.kind == "constant":
        out = np.full(n_ticks, float(p["level"]))
    elif trace.kind == "sinusoid":
        # math.sin keeps the array path bit-identical to the per-tick path
        out = np.array(
            [
                p["base"] + p["amplitude"] * math.sin(2.0 * math.pi * i / p["period_ticks"] + p["phase"])
                for i in range(n_ticks)
            ]
        )
    elif trace.kind == "burst":
        dur = int(p["spike_duration_ticks"])
        # spike windows may have started before tick 0 only at negative ticks, which never fire
        starts = counter_uniform_array(trace.seed, t) < p["spike_probability"]
        active = np.convolve(starts.astype(np.int64), np.ones(dur, dtype=np.int64))[:n_ticks] > 0
        out = np.where(active, p["base"] * p["spike_multiplier"], float(p["base"]))
    elif trace.kind == "random_walk":
        steps = p["step_sigma"] * _normal_array(trace.seed, t)
        steps[0] = 0.0
        s = np.cumsum(steps)
        head = p["start"] - p["floor"]
        # reflected walk v_t = max(floor, v_{t-1} + step_t) in closed (Lindley) form
        out = p["floor"] + s - np.minimum(np.minimum.accumulate(s), -head)
    elif trace.kind == "step":
        out = np.where(t >= p["at_tick"], p["base"] * p["multiplier"], float(p["base"]))
    else:
        raise ConfigurationError(f"unknown trace kind {trace.kind!r}")
    out = np.maximum(out, 0.0)
    out.setflags(write=False)
    return out


def generate_demand(trace: TraceSpec, tick: int) -> float:
    if tick < 0:
        raise ValueError("tick must be >= 0")
    p = _with_defaults(trace.kind, trace.params)
    if trace.kind == "constant":
        return max(0.0, float(p["level"]))
    if trace.kind == "sinusoid":
        v = p["base"] + p["amplitude"] * math.sin(2.0 * math.pi * tick / p["period_ticks"] + p["phase"])
        return max(0.0, v)
    if trace.kind == "burst":
        dur = int(p["spike_duration_ticks"])
        for s in range(max(0, tick - dur + 1), tick + 1):
            if counter_uniform(trace.seed, s) < p["spike_probability"]:
                return max(0.0, float(p["base"] * p["spike_multiplier"]))
        return max(0.0, float(p["base"]))
    if trace.kind == "step":
        return max(0.0, float(p["base"] * (p["multiplier"] if tick >= p["at_tick"] else 1.0)))
    return float(_cached_series(trace, tick + 1)[tick])


def latency_model(offered_rps: float, serving_capacity_rps: float, base_ms: float) -> float:
    """``base / (1 - rho)`` with utilization clamped to [0, 0.99]."""
    if serving_capacity_rps <= 0:
        raise ValueError("serving capacity must be positive")
    rho = min(max(offered_rps / serving_capacity_rps, 0.0), MAX_RHO)
    return base_ms / (1.0 - rho)


# -- world and state ------------------------------------------------------------


@dataclass(frozen=True)
class World:
    """Static topology: clusters, workloads and tick length."""

    clusters: Mapping[str, ClusterSpec]
    workloads: Mapping[str, WorkloadSpec]
    tick_seconds: float = 10.0
    routing: str = "local"

    @classmethod
    def build(
        cls,
        clusters: Iterable[ClusterSpec],
        workloads: Iterable[WorkloadSpec],
        tick_seconds: float = 10.0,
        routing: str = "local",
    ) -> World:
        if routing not in ROUTING_MODES:
            raise ConfigurationError(f"unknown routing mode {routing!r}")
        cs = sorted(clusters, key=lambda c: c.cluster_id)
        ws = sorted(workloads, key=lambda w: w.workload_id)
        return cls({c.cluster_id: c for c in cs}, {w.workload_id: w for w in ws}, tick_seconds, routing)

    @property
    def cluster_ids(self) -> list[str]:
        return list(self.clusters)

    @property
    def workload_ids(self) -> list[str]:
        return list(self.workloads)

    @property
    def pairs(self) -> list[Pair]:
        return [(c, w) for c in self.clusters for w in self.workloads]

    def allocated(self, replicas: Mapping[Pair, int], cluster_id: str) -> ResourceVector:
        cpu = mem = 0
        for w, spec in self.workloads.items():
            n = replicas.get((cluster_id, w), 0)
            cpu += n * spec.request_per_replica.cpu_millicores
            mem += n * spec.request_per_replica.memory_mib
        return ResourceVector(cpu, mem)

    def action_delay(self, action: Action) -> int:
        clusters = {c for c, _ in action.touches()}
        return max((self.clusters[c].actuation_delay_ticks for c in clusters), default=0)

    def knows(self, action: Action) -> bool:
        return all(c in self.clusters and w in self.workloads for c, w in action.touches())


ROUTING_MODES = ("local", "replica_weighted")


def route_demand(
    world: World, ingress: Mapping[Pair, float], replicas: Mapping[Pair, int]
) -> dict[Pair, float]:
    """Offered load per pair after routing.

    ``local`` serves traffic where it arrives. ``replica_weighted`` pools each
    workload's ingress across clusters and splits it by replica share, the way
    a global load balancer spreads requests over all endpoints; a workload
    with no replicas anywhere keeps its ingress split (and drops it).
    """
    if world.routing == "local":
        return {pair: float(ingress.get(pair, 0.0)) for pair in world.pairs}
    out = {}
    for w in world.workloads:
        total = sum(float(ingress.get((c, w), 0.0)) for c in world.clusters)
        reps = sum(max(0, replicas.get((c, w), 0)) for c in world.clusters)
        for c in world.clusters:
            if reps > 0:
                out[(c, w)] = total * max(0, replicas.get((c, w), 0)) / reps
            else:
                out[(c, w)] = float(ingress.get((c, w), 0.0))
    return out


@dataclass(frozen=True)
class PendingAction:
    action: Action
    apply_at: int
    enqueued_at: int


@dataclass
class SimState:
    tick: int
    replicas: dict[Pair, int]
    pending_actions: list[PendingAction] = field(default_factory=list)
    last_applied: dict[Pair, int] = field(default_factory=dict)
    seed: int = 0

    def copy(self) -> SimState:
        return replace(
            self,
            replicas=dict(self.replicas),
            pending_actions=list(self.pending_actions),
            last_applied=dict(self.last_applied),
        )

    def projected(self) -> SimState:
        """Copy whose replica counts include every queued action.

        Cooldown bookkeeping is left alone: it starts when an action lands.
        Queued actions that the real step would reject are still counted, so
        projections err on the optimistic side.
        """
        s = self.copy()
        for p in s.pending_actions:
            for pair, d in replica_deltas(p.action).items():
                s.replicas[pair] = max(0, s.replicas.get(pair, 0) + d)
        s.pending_actions = []
        return s


@dataclass(frozen=True)
class Measurement:
    tick: int
    cluster_id: str
    workload_id: str
    replicas: int
    demand_rps: float
    served_rps: float
    dropped_rps: float
    latency_ms: float
    ingress_rps: float = 0.0


@dataclass(frozen=True)
class ActionEvent:
    """An enqueued action reaching its apply tick (or failing to)."""

    tick: int
    action: Action
    status: str  # "applied" | "rejected"
    reason: str = ""
    enqueued_at: int = -1


Bounds = Mapping[Pair, tuple[int, int]]


def apply_violation(
    world: World, replicas: Mapping[Pair, int], action: Action, bounds: Bounds | None = None
) -> tuple[str, str] | None:
    """Hard capacity/bounds check of ``action`` against ``replicas``.

    Returns ``(kind, detail)`` for the first failed constraint, else None.
    """
    if isinstance(action, NoOp):
        return None
    if not world.knows(action):
        return ("unknown_target", f"{action} references an unregistered cluster or workload")
    deltas = replica_deltas(action)
    after = dict(replicas)
    for pair, d in deltas.items():
        after[pair] = after.get(pair, 0) + d
        lo, hi = bounds.get(pair, (0, None)) if bounds else (0, None)
        n = after[pair]
        if n < max(lo, 0) or (hi is not None and n > hi):
            return ("replica_bounds", f"{pair[0]}/{pair[1]} would have {n} replicas")
    for cluster in {c for (c, _), d in deltas.items() if d > 0}:
        used = world.allocated(after, cluster)
        if not used.fits_within(world.clusters[cluster].capacity):
            return (
                "capacity_exceeded",
                f"{cluster} would need {used.cpu_millicores}m/{used.memory_mib}Mi",
            )
    return None


def initial_state(replicas: Mapping[Pair, int], seed: int = 0) -> SimState:
    return SimState(tick=0, replicas=dict(replicas), seed=seed)


def step(
    world: World,
    state: SimState,
    new_actions: Sequence[Action],
    demands: Mapping[Pair, float],
    bounds: Bounds | None = None,
) -> tuple[SimState, list[Measurement], list[ActionEvent]]:
    """Advance one tick.

    ``demands`` is the ingress load per pair; it is routed according to
    ``world.routing`` after due actions land. New actions are queued for ``tick + delay``; queued actions that are due
    land before serving. A due action that no longer fits (capacity or
    replica bounds) is dropped and reported as ``rejected``.
    """
    s = state.copy()
    t = s.tick
    events: list[ActionEvent] = []
    for action in new_actions:
        if isinstance(action, NoOp):
            continue
        if not world.knows(action):
            events.append(ActionEvent(t, action, "rejected", "unknown_target", t))
            continue
        pending = PendingAction(action, t + world.action_delay(action), t)
        idx = bisect.bisect_right([p.apply_at for p in s.pending_actions], pending.apply_at)
        s.pending_actions.insert(idx, pending)

    while s.pending_actions and s.pending_actions[0].apply_at <= t:
        p = s.pending_actions.pop(0)
        violation = apply_violation(world, s.replicas, p.action, bounds)
        if violation is not None:
            events.append(ActionEvent(t, p.action, "rejected", violation[0], p.enqueued_at))
            continue
        for pair, d in replica_deltas(p.action).items():
            s.replicas[pair] = s.replicas.get(pair, 0) + d
            s.last_applied[pair] = t
        events.append(ActionEvent(t, p.action, "applied", "", p.enqueued_at))

    routed = route_demand(world, demands, s.replicas)
    measurements = []
    for c in world.clusters:
        for w, spec in world.workloads.items():
            r = s.replicas.get((c, w), 0)
            demand = routed[(c, w)]
            serving = r * spec.capacity_per_replica_rps
            served = min(demand, serving)
            if serving > 0:
                latency = latency_model(demand, serving, spec.base_service_ms)
            else:
                # no replicas: an idle pair reports base latency, a loaded one saturates
                latency = spec.base_service_ms / (1.0 - MAX_RHO) if demand > 0 else spec.base_service_ms
            measurements.append(
                Measurement(
                    t, c, w, r, demand, served, demand - served, latency, float(demands.get((c, w), 0.0))
                )
            )
    s.tick = t + 1
    return s, measurements, events
