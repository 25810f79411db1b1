"""Per-cluster snapshots, cross-cluster aggregation and rolling-window features."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .actions import Pair
from .sim import ClusterSpec, Measurement, ResourceVector, WorkloadSpec

DEFAULT_WINDOW = 12


class AggregationError(RuntimeError):
    pass


@dataclass(frozen=True)
class WorkloadStats:
    replicas: int
    demand_rps: float
    served_rps: float
    latency_ms: float
    error_rate: float
    ingress_rps: float = 0.0


@dataclass(frozen=True)
class ClusterSnapshot:
    tick: int
    cluster_id: str
    cpu_utilization: float
    mem_utilization: float
    per_workload: Mapping[str, WorkloadStats]
    allocated: ResourceVector = ResourceVector()


@dataclass(frozen=True)
class GlobalState:
    tick: int
    snapshots: tuple[ClusterSnapshot, ...]
    total_demand_rps: float
    total_served_rps: float
    total_allocated: ResourceVector

    def series(self) -> dict[Pair, WorkloadStats]:
        return {
            (s.cluster_id, w): stats for s in self.snapshots for w, stats in s.per_workload.items()
        }

    @property
    def cpu_utilizations(self) -> list[float]:
        return [s.cpu_utilization for s in self.snapshots]


def collect(
    measurements: Iterable[Measurement],
    cluster: ClusterSpec,
    workloads: Sequence[WorkloadSpec],
    tick: int | None = None,
) -> ClusterSnapshot:
    by_workload = {m.workload_id: m for m in measurements if m.cluster_id == cluster.cluster_id}
    if tick is None:
        tick = next(iter(by_workload.values())).tick if by_workload else 0
    per_workload = {}
    cpu = mem = 0
    for spec in workloads:
        m = by_workload.get(spec.workload_id)
        if m is None:
            per_workload[spec.workload_id] = WorkloadStats(0, 0.0, 0.0, spec.base_service_ms, 0.0, 0.0)
            continue
        error_rate = (m.demand_rps - m.served_rps) / m.demand_rps if m.demand_rps > 0 else 0.0
        per_workload[spec.workload_id] = WorkloadStats(
            m.replicas, m.demand_rps, m.served_rps, m.latency_ms, error_rate, m.ingress_rps
        )
        cpu += m.replicas * spec.request_per_replica.cpu_millicores
        mem += m.replicas * spec.request_per_replica.memory_mib
    cap = cluster.capacity
    return ClusterSnapshot(
        tick=tick,
        cluster_id=cluster.cluster_id,
        cpu_utilization=cpu / cap.cpu_millicores,
        mem_utilization=mem / cap.memory_mib,
        per_workload=per_workload,
        allocated=ResourceVector(cpu, mem),
    )


def aggregate(
    snapshots: Sequence[ClusterSnapshot], expected_clusters: Iterable[str] | None = None
) -> GlobalState:
    if not snapshots:
        raise AggregationError("no snapshots to aggregate")
    ticks = {s.tick for s in snapshots}
    if len(ticks) != 1:
        raise AggregationError(f"snapshots span several ticks: {sorted(ticks)}")
    ids = [s.cluster_id for s in snapshots]
    if len(set(ids)) != len(ids):
        raise AggregationError("duplicate cluster snapshot")
    if expected_clusters is not None:
        missing = set(expected_clusters) - set(ids)
        if missing:
            raise AggregationError(f"missing snapshots for clusters {sorted(missing)}")
    ordered = tuple(sorted(snapshots, key=lambda s: s.cluster_id))
    demand = sum(st.demand_rps for s in ordered for st in s.per_workload.values())
    served = sum(st.served_rps for s in ordered for st in s.per_workload.values())
    alloc = ResourceVector()
    for s in ordered:
        alloc = alloc + s.allocated
    return GlobalState(ticks.pop(), ordered, demand, served, alloc)


@dataclass(frozen=True)
class SeriesFeatures:
    window_mean_rps: float = 0.0
    trend_slope_rps_per_tick: float = 0.0
    window_peak_rps: float = 0.0
    latency_mean_ms: float = 0.0


@dataclass(frozen=True)
class FeatureSet:
    per_series: Mapping[Pair, SeriesFeatures] = field(default_factory=dict)

    def __getitem__(self, pair: Pair) -> SeriesFeatures:
        return self.per_series.get(pair, SeriesFeatures())


def ols_slope(values: Sequence[float]) -> float:
    n = len(values)
    if n < 2:
        return 0.0
    x = np.arange(n, dtype=float)
    y = np.asarray(values, dtype=float)
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


def extract_features(history: Sequence[GlobalState], window: int = DEFAULT_WINDOW) -> FeatureSet:
    """Mean, OLS slope and peak of demand plus mean latency over the last ``window`` states."""
    if window < 1:
        raise ValueError("window must be >= 1")
    recent = list(history)[-window:]
    if not recent:
        return FeatureSet({})
    demand: dict[Pair, list[float]] = {}
    latency: dict[Pair, list[float]] = {}
    for g in recent:
        for pair, st in g.series().items():
            demand.setdefault(pair, []).append(st.demand_rps)
            latency.setdefault(pair, []).append(st.latency_ms)
    out = {}
    for pair, ys in demand.items():
        out[pair] = SeriesFeatures(
            window_mean_rps=float(np.mean(ys)),
            trend_slope_rps_per_tick=ols_slope(ys),
            window_peak_rps=float(max(ys)),
            latency_mean_ms=float(np.mean(latency[pair])),
        )
    return FeatureSet(out)


class History:
    """Bounded ring of the most recent global states."""

    def __init__(self, window: int = DEFAULT_WINDOW):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self._states: deque[GlobalState] = deque(maxlen=window)

    def append(self, state: GlobalState) -> None:
        self._states.append(state)

    def __iter__(self):
        return iter(self._states)

    def __len__(self) -> int:
        return len(self._states)

    def features(self) -> FeatureSet:
        return extract_features(list(self._states), self.window)
