"""Run-level evaluation metrics: efficiency, balance, stability, latency, settling."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .actions import Scale

if TYPE_CHECKING:
    from .controllers import RunTrace

DEFAULT_REVERSAL_WINDOW = 30
DEFAULT_SETTLING_TOLERANCE = 0.05


def jain_index(values: Sequence[float]) -> float:
    """Jain's fairness index ``(sum u)^2 / (n * sum u^2)``; 1.0 for an all-zero vector."""
    u = np.asarray(values, dtype=float)
    if u.size == 0:
        raise ValueError("need at least one value")
    sq = float(np.dot(u, u))
    if sq == 0.0:
        return 1.0
    s = float(u.sum())
    return s * s / (u.size * sq)


balance_score = jain_index


def _require_ticks(trace: RunTrace) -> None:
    if not trace.ticks:
        raise ValueError("metric needs a non-empty trace")


def tick_efficiency(trace: RunTrace, record) -> float:
    workloads = trace.world.workloads
    used_cpu = used_mem = alloc_cpu = alloc_mem = 0.0
    demand = 0.0
    for (_, w), st in record.global_state.series().items():
        req = workloads[w].request_per_replica
        share = st.served_rps / workloads[w].capacity_per_replica_rps
        used_cpu += min(share * req.cpu_millicores, st.replicas * req.cpu_millicores)
        used_mem += min(share * req.memory_mib, st.replicas * req.memory_mib)
        alloc_cpu += st.replicas * req.cpu_millicores
        alloc_mem += st.replicas * req.memory_mib
        demand += st.demand_rps
    parts = []
    for used, alloc in ((used_cpu, alloc_cpu), (used_mem, alloc_mem)):
        if alloc == 0:
            parts.append(1.0 if demand == 0 else 0.0)
        else:
            parts.append(used / alloc)
    return (parts[0] + parts[1]) / 2


def utilization_efficiency(trace: RunTrace) -> float:
    _require_ticks(trace)
    return float(np.mean([tick_efficiency(trace, r) for r in trace.ticks]))


def run_balance_score(trace: RunTrace) -> float:
    _require_ticks(trace)
    return float(np.mean([jain_index(r.global_state.cpu_utilizations) for r in trace.ticks]))


def applied_scales(trace: RunTrace) -> list[tuple[int, Scale]]:
    return [
        (ev.tick, ev.action)
        for r in trace.ticks
        for ev in r.events
        if ev.status == "applied" and isinstance(ev.action, Scale)
    ]


def count_reversals(scales: Sequence[tuple[int, Scale]], window: int) -> int:
    last: dict[tuple[str, str], tuple[int, int]] = {}
    events = 0
    for tick, a in scales:
        pair = (a.cluster_id, a.workload_id)
        sign = 1 if a.delta > 0 else -1
        if pair in last:
            prev_tick, prev_sign = last[pair]
            if prev_sign != sign and tick - prev_tick <= window:
                events += 1
        last[pair] = (tick, sign)
    return events


def simulated_hours(trace: RunTrace) -> float:
    return len(trace.ticks) * trace.world.tick_seconds / 3600.0


def stability_events(trace: RunTrace, reversal_window_ticks: int = DEFAULT_REVERSAL_WINDOW) -> float:
    """Scale reversals per simulated hour."""
    hours = simulated_hours(trace)
    if hours == 0:
        return 0.0
    return count_reversals(applied_scales(trace), reversal_window_ticks) / hours


def avg_latency(trace: RunTrace) -> float:
    _require_ticks(trace)
    num = den = 0.0
    for r in trace.ticks:
        for st in r.global_state.series().values():
            num += st.served_rps * st.latency_ms
            den += st.served_rps
    if den == 0:
        return float(np.mean([w.base_service_ms for w in trace.world.workloads.values()]))
    return num / den


def settling_time(series: Sequence[float], tolerance_fraction: float = DEFAULT_SETTLING_TOLERANCE) -> int | None:
    """First index after which the series stays within the tolerance band of its final value.

    The final value is the mean of the last 10% of the series. A series that
    only enters the band inside that end window never settled (None).
    """
    if tolerance_fraction <= 0:
        raise ValueError("tolerance_fraction must be > 0")
    x = np.asarray(series, dtype=float)
    n = x.size
    if n == 0:
        raise ValueError("series must be non-empty")
    k = max(1, math.ceil(0.1 * n))
    final = float(x[-k:].mean())
    band = tolerance_fraction * abs(final)
    outside = np.nonzero(np.abs(x - final) > band + 1e-12 * max(1.0, abs(final)))[0]
    if outside.size == 0:
        return 0
    first = int(outside[-1]) + 1
    return first if first < n - k else None


def allocation_series(trace: RunTrace, start_tick: int = 0) -> list[float]:
    """Total allocated CPU (millicores) per tick, from ``start_tick`` on."""
    return [
        float(r.global_state.total_allocated.cpu_millicores)
        for r in trace.ticks
        if r.tick >= start_tick
    ]


def direction_reversals(series: Sequence[float]) -> int:
    """Number of sign changes between consecutive non-zero moves."""
    signs = [np.sign(b - a) for a, b in zip(series, series[1:]) if b != a]
    return sum(1 for a, b in zip(signs, signs[1:]) if a != b)


@dataclass(frozen=True)
class MetricsReport:
    utilization_efficiency: float
    balance_score: float
    stability_events_per_hour: float
    avg_latency_ms: float
    settling_time_ticks: int | None

    def as_dict(self) -> dict:
        return asdict(self)


def compute_report(
    trace: RunTrace,
    reversal_window_ticks: int = DEFAULT_REVERSAL_WINDOW,
    tolerance_fraction: float = DEFAULT_SETTLING_TOLERANCE,
    settle_from_tick: int = 0,
) -> MetricsReport:
    alloc = allocation_series(trace, settle_from_tick)
    return MetricsReport(
        utilization_efficiency=utilization_efficiency(trace),
        balance_score=run_balance_score(trace),
        stability_events_per_hour=stability_events(trace, reversal_window_ticks),
        avg_latency_ms=avg_latency(trace),
        settling_time_ticks=settling_time(alloc, tolerance_fraction) if alloc else None,
    )
