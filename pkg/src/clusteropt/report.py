"""Output formats: per-tick trace CSV, summary JSON, comparison and sweep tables.

Every float is written with six decimals so repeated runs are byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Any, Mapping, Sequence

from .actions import Migrate, Scale
from .controllers import RunTrace
from .metrics import MetricsReport, compute_report

TRACE_COLUMNS = (
    "tick",
    "cluster_id",
    "workload_id",
    "replicas",
    "demand_rps",
    "served_rps",
    "latency_ms",
    "error_rate",
    "cpu_util",
    "mem_util",
    "action_applied",
)

# (field, label, reference baseline, reference ai, better direction)
METRIC_ROWS = (
    ("utilization_efficiency", "Resource Utilization Efficiency", 0.62, 0.78, "higher"),
    ("balance_score", "Cross-Cluster Load Balance Score", 0.71, 0.88, "higher"),
    ("stability_events_per_hour", "Deployment Stability (events/hour)", 6.4, 3.1, "lower"),
    ("avg_latency_ms", "Average Response Latency (ms)", 245.0, 185.0, "lower"),
    ("settling_time_ticks", "Settling Time (ticks)", None, None, "lower"),
)


def fmt(x: Any) -> str:
    if x is None:
        return "none"
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isnan(x) or math.isinf(x):
            raise ValueError(f"cannot serialize non-finite value {x}")
        s = f"{x:.6f}"
        return "0.000000" if s == "-0.000000" else s
    return str(x)


def dumps_fixed(obj: Any, indent: int = 2, _level: int = 0) -> str:
    """JSON text with floats at fixed six-decimal precision."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, Mapping):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps_fixed(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad}{dumps_fixed(v, indent, _level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if obj is None:
        return "null"
    if isinstance(obj, (bool, int, float)):
        return fmt(obj)
    return json.dumps(str(obj))


def _describe(action, pair) -> str:
    if isinstance(action, Scale):
        return f"scale{action.delta:+d}"
    if isinstance(action, Migrate):
        if pair[0] == action.src_cluster:
            return f"migrate-{action.count}->{action.dst_cluster}"
        return f"migrate+{action.count}<-{action.src_cluster}"
    return str(action)


def trace_rows(trace: RunTrace):
    for rec in trace.ticks:
        applied: dict[tuple[str, str], list[str]] = {}
        for ev in rec.events:
            if ev.status != "applied":
                continue
            for pair in sorted(ev.action.touches()):
                applied.setdefault(pair, []).append(_describe(ev.action, pair))
        for snap in rec.global_state.snapshots:
            for w in sorted(snap.per_workload):
                st = snap.per_workload[w]
                yield (
                    rec.tick,
                    snap.cluster_id,
                    w,
                    st.replicas,
                    fmt(float(st.demand_rps)),
                    fmt(float(st.served_rps)),
                    fmt(float(st.latency_ms)),
                    fmt(float(st.error_rate)),
                    fmt(float(snap.cpu_utilization)),
                    fmt(float(snap.mem_utilization)),
                    ";".join(applied.get((snap.cluster_id, w), ())),
                )


def trace_csv(trace: RunTrace) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    writer.writerows(trace_rows(trace))
    return buf.getvalue()


def summary(trace: RunTrace, report: MetricsReport) -> dict:
    applied = trace.applied_events()
    return {
        "scenario": trace.metadata.get("scenario"),
        "controller": trace.kind,
        "seed": trace.seed,
        "ticks": len(trace),
        "metrics": report.as_dict(),
        "actions_applied": len(applied),
        "migrations_applied": sum(isinstance(ev.action, Migrate) for ev in applied),
        "actions_rejected": len(trace.rejected_events()),
    }


def summary_json(trace: RunTrace, report: MetricsReport) -> str:
    return dumps_fixed(summary(trace, report)) + "\n"


def report_for(trace: RunTrace, evaluation) -> MetricsReport | None:
    """Metrics under a scenario's evaluation settings; None for an empty trace."""
    if not trace.ticks:
        return None
    return compute_report(
        trace,
        evaluation.reversal_window_ticks,
        evaluation.settling_tolerance,
        evaluation.settle_from_tick,
    )


def _cell(x) -> str:
    return "-" if x is None else fmt(x)


def comparison_table(ai: MetricsReport, baseline: MetricsReport, title: str = "") -> str:
    header = ("metric", "reactive", "ai-driven", "reference reactive", "reference ai-driven")
    rows = [
        (label, fmt(getattr(baseline, key)), fmt(getattr(ai, key)), _cell(ref_b), _cell(ref_a))
        for key, label, ref_b, ref_a, _ in METRIC_ROWS
    ]
    return _table(header, rows, title)


def comparison_dict(ai: MetricsReport, baseline: MetricsReport, meta: Mapping[str, Any]) -> dict:
    return {
        **meta,
        "metrics": {
            key: {
                "reactive": getattr(baseline, key),
                "ai": getattr(ai, key),
                "reference_reactive": ref_b,
                "reference_ai": ref_a,
                "better": better,
            }
            for key, _, ref_b, ref_a, better in METRIC_ROWS
        },
    }


def _mean(values: Sequence[float | int | None]) -> float | None:
    vals = [float(v) for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


def sweep_rows(results: Sequence[tuple[int, MetricsReport, MetricsReport]]) -> list[dict]:
    """One row per seed followed by the mean row. Unsettled runs are left out of the settling mean."""
    rows = []
    for seed, ai, base in results:
        row: dict[str, Any] = {"seed": seed}
        for key, *_ in METRIC_ROWS:
            row[f"{key}.reactive"] = getattr(base, key)
            row[f"{key}.ai"] = getattr(ai, key)
        rows.append(row)
    mean: dict[str, Any] = {"seed": "mean"}
    for key in rows[0] if rows else ():
        if key != "seed":
            mean[key] = _mean([r[key] for r in rows])
    rows.append(mean)
    return rows


def sweep_table(rows: Sequence[Mapping[str, Any]], title: str = "") -> str:
    keys = [k for k in rows[0] if k != "seed"]
    header = ("seed", *keys)
    body = [(str(r["seed"]), *(fmt(r[k]) for k in keys)) for r in rows]
    return _table(header, body, title)


def _table(header: Sequence[str], rows: Sequence[Sequence[str]], title: str = "") -> str:
    widths = [max(len(str(r[i])) for r in (header, *rows)) for i in range(len(header))]

    def line(cells):
        return "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()

    out = [title] if title else []
    out.append(line(header))
    out.append("  ".join("-" * w for w in widths))
    out.extend(line(r) for r in rows)
    return "\n".join(out) + "\n"
