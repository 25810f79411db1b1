"""Scenario files: JSON parsing, default filling and exhaustive validation."""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, fields, replace
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .actions import Pair
from .controllers import ReactiveConfig
from .policy import PolicySpec
from .sim import (
    ClusterSpec,
    ROUTING_MODES,
    ConfigurationError,
    ResourceVector,
    TraceSpec,
    WorkloadSpec,
    World,
    _MASK64,
    _splitmix64,
)
from .telemetry import DEFAULT_WINDOW


class ScenarioParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Issue:
    field: str
    kind: str
    message: str

    def __str__(self) -> str:
        return f"{self.field}: [{self.kind}] {self.message}"


class ScenarioValidationError(ValueError):
    def __init__(self, issues: list[Issue]):
        super().__init__("\n".join(str(i) for i in issues))
        self.issues = issues


@dataclass(frozen=True)
class ForecasterConfig:
    alpha: float = 0.5
    beta: float = 0.3
    margin_factor: float = 1.5
    horizon: int | None = None


@dataclass(frozen=True)
class EvaluationConfig:
    reversal_window_ticks: int = 30
    settling_tolerance: float = 0.05
    settle_from_tick: int = 0


def derive_trace_seed(scenario_seed: int, pair: Pair, offset: int = 0) -> int:
    """Per-series seed from the scenario seed, the pair name and an optional offset."""
    tag = zlib.crc32(f"{pair[0]}/{pair[1]}".encode())
    x = _splitmix64(scenario_seed & _MASK64) ^ tag ^ ((offset * 0x9E3779B97F4A7C15) & _MASK64)
    return _splitmix64(x)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    ticks: int
    world: World
    raw_traces: Mapping[Pair, TraceSpec]
    policy: PolicySpec
    initial_replicas: Mapping[Pair, int]
    forecaster: ForecasterConfig = ForecasterConfig()
    reactive: ReactiveConfig = ReactiveConfig()
    evaluation: EvaluationConfig = EvaluationConfig()
    feature_window: int = DEFAULT_WINDOW

    @property
    def tick_seconds(self) -> float:
        return self.world.tick_seconds

    @cached_property
    def traces(self) -> dict[Pair, TraceSpec]:
        """Trace specs with their seeds resolved against the scenario seed."""
        return {
            pair: replace(t, seed=derive_trace_seed(self.seed, pair, t.seed))
            for pair, t in self.raw_traces.items()
        }

    def with_seed(self, seed: int) -> ScenarioConfig:
        return replace(self, seed=seed)

    def with_ticks(self, ticks: int) -> ScenarioConfig:
        return replace(self, ticks=ticks)


# -- parsing -----------------------------------------------------------------


def _num(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


class _Reader:
    """Collects every issue instead of stopping at the first one."""

    def __init__(self) -> None:
        self.issues: list[Issue] = []

    def add(self, path: str, kind: str, message: str) -> None:
        self.issues.append(Issue(path, kind, message))

    def obj(self, data: Any, path: str) -> dict:
        if not isinstance(data, dict):
            self.add(path, "type_error", "expected an object")
            return {}
        return data

    def unknown_keys(self, data: dict, allowed, path: str) -> None:
        for k in data:
            if k not in allowed:
                self.add(f"{path}.{k}" if path else k, "unknown_field", "unrecognized key")

    def get(self, data: dict, key: str, path: str, check, what: str, default=..., required=False):
        p = f"{path}.{key}" if path else key
        if key not in data:
            if required or default is ...:
                self.add(p, "missing_field", "required field missing")
                return None
            return default
        v = data[key]
        if not check(v):
            self.add(p, "invalid_value", f"expected {what}, got {v!r}")
            return None
        return v


def _resource(r: _Reader, data: Any, path: str) -> ResourceVector | None:
    d = r.obj(data, path)
    r.unknown_keys(d, {"cpu_millicores", "memory_mib"}, path)
    cpu = r.get(d, "cpu_millicores", path, lambda v: _int(v) and v >= 0, "a non-negative integer")
    mem = r.get(d, "memory_mib", path, lambda v: _int(v) and v >= 0, "a non-negative integer")
    if cpu is None or mem is None:
        return None
    return ResourceVector(cpu, mem)


def _pair_map(r: _Reader, data: Any, path: str) -> dict[Pair, Any]:
    out = {}
    for c, inner in r.obj(data, path).items():
        for w, v in r.obj(inner, f"{path}.{c}").items():
            out[(c, w)] = v
    return out


def parse_scenario(data: Any) -> ScenarioConfig:
    """Build a validated :class:`ScenarioConfig` from decoded JSON."""
    r = _Reader()
    top = r.obj(data, "<root>")
    r.unknown_keys(
        top,
        {"name", "seed", "ticks", "tick_seconds", "clusters", "workloads", "traces", "policy", "routing",
         "forecaster", "reactive", "initial_replicas", "evaluation", "feature_window"},
        "",
    )
    name = r.get(top, "name", "", lambda v: isinstance(v, str) and v, "a non-empty string", required=True)
    seed = r.get(top, "seed", "", lambda v: _int(v) and 0 <= v <= _MASK64, "a 64-bit unsigned integer", default=0)
    ticks = r.get(top, "ticks", "", lambda v: _int(v) and v >= 0, "a non-negative integer", required=True)
    tick_seconds = r.get(top, "tick_seconds", "", lambda v: _num(v) and v > 0, "a positive number", default=10.0)
    routing = r.get(top, "routing", "", lambda v: v in ROUTING_MODES, f"one of {list(ROUTING_MODES)}", default="local")
    window = r.get(top, "feature_window", "", lambda v: _int(v) and v >= 1, "a positive integer", default=DEFAULT_WINDOW)

    clusters: list[ClusterSpec] = []
    raw = top.get("clusters")
    if not isinstance(raw, list) or not raw:
        r.add("clusters", "missing_field" if raw is None else "invalid_value", "need a non-empty list")
        raw = []
    for i, cd in enumerate(raw):
        p = f"clusters[{i}]"
        cd = r.obj(cd, p)
        r.unknown_keys(cd, {"cluster_id", "capacity", "actuation_delay_ticks"}, p)
        cid = r.get(cd, "cluster_id", p, lambda v: isinstance(v, str) and v, "a non-empty string", required=True)
        cap = _resource(r, cd.get("capacity"), f"{p}.capacity") if "capacity" in cd else None
        if "capacity" not in cd:
            r.add(f"{p}.capacity", "missing_field", "required field missing")
        elif cap is not None and not cap.is_positive():
            r.add(f"{p}.capacity", "invalid_value", "capacity must be strictly positive in both components")
            cap = None
        delay = r.get(cd, "actuation_delay_ticks", p, lambda v: _int(v) and v >= 0, "a non-negative integer", default=2)
        if cid is not None and cap is not None and delay is not None:
            if any(c.cluster_id == cid for c in clusters):
                r.add(f"{p}.cluster_id", "duplicate_id", f"cluster id {cid!r} declared twice")
            else:
                clusters.append(ClusterSpec(cid, cap, delay))

    workloads: list[WorkloadSpec] = []
    raw = top.get("workloads")
    if not isinstance(raw, list) or not raw:
        r.add("workloads", "missing_field" if raw is None else "invalid_value", "need a non-empty list")
        raw = []
    for i, wd in enumerate(raw):
        p = f"workloads[{i}]"
        wd = r.obj(wd, p)
        r.unknown_keys(wd, {"workload_id", "request_per_replica", "capacity_per_replica_rps", "base_service_ms"}, p)
        wid = r.get(wd, "workload_id", p, lambda v: isinstance(v, str) and v, "a non-empty string", required=True)
        req = _resource(r, wd.get("request_per_replica"), f"{p}.request_per_replica") if "request_per_replica" in wd else None
        if "request_per_replica" not in wd:
            r.add(f"{p}.request_per_replica", "missing_field", "required field missing")
        cap = r.get(wd, "capacity_per_replica_rps", p, lambda v: _num(v) and v > 0, "a positive number", required=True)
        base = r.get(wd, "base_service_ms", p, lambda v: _num(v) and v > 0, "a positive number", required=True)
        if None not in (wid, req, cap, base):
            if any(w.workload_id == wid for w in workloads):
                r.add(f"{p}.workload_id", "duplicate_id", f"workload id {wid!r} declared twice")
            else:
                workloads.append(WorkloadSpec(wid, req, float(cap), float(base)))

    cids = {c.cluster_id for c in clusters}
    wids = {w.workload_id for w in workloads}

    def known(pair: Pair, path: str) -> bool:
        ok = True
        if pair[0] not in cids:
            r.add(path, "unknown_reference", f"undeclared cluster {pair[0]!r}")
            ok = False
        if pair[1] not in wids:
            r.add(path, "unknown_reference", f"undeclared workload {pair[1]!r}")
            ok = False
        return ok

    traces: dict[Pair, TraceSpec] = {}
    for pair, td in _pair_map(r, top.get("traces", {}), "traces").items():
        p = f"traces.{pair[0]}.{pair[1]}"
        if not known(pair, p):
            continue
        td = r.obj(td, p)
        r.unknown_keys(td, {"kind", "params", "seed"}, p)
        kind = r.get(td, "kind", p, lambda v: isinstance(v, str), "a string", required=True)
        params = r.get(td, "params", p, lambda v: isinstance(v, dict), "an object", default={})
        tseed = r.get(td, "seed", p, lambda v: _int(v) and 0 <= v <= _MASK64, "a 64-bit unsigned integer", default=0)
        if kind is None or params is None or tseed is None:
            continue
        spec = TraceSpec(kind, dict(params), tseed)
        errs = spec.validate()
        for e in errs:
            r.add(p, "invalid_trace", e)
        if not errs:
            traces[pair] = TraceSpec.create(kind, tseed, **params)

    policy = _parse_policy(r, top.get("policy", {}), known)
    forecaster = _parse_simple(r, top.get("forecaster", {}), "forecaster", ForecasterConfig, {
        "alpha": (lambda v: _num(v) and 0 < v <= 1, "a number in (0, 1]"),
        "beta": (lambda v: _num(v) and 0 < v <= 1, "a number in (0, 1]"),
        "margin_factor": (lambda v: _num(v) and v >= 0, "a non-negative number"),
        "horizon": (lambda v: v is None or (_int(v) and v >= 1), "a positive integer or null"),
    })
    reactive = _parse_simple(r, top.get("reactive", {}), "reactive", ReactiveConfig, {
        "upper_threshold": (_num, "a number"),
        "lower_threshold": (_num, "a number"),
        "step": (lambda v: _int(v) and v >= 1, "a positive integer"),
        "respect_cooldown": (lambda v: isinstance(v, bool), "a boolean"),
    })
    if reactive is not None:
        for e in reactive.validate():
            r.add("reactive", "invalid_value", e)
    evaluation = _parse_simple(r, top.get("evaluation", {}), "evaluation", EvaluationConfig, {
        "reversal_window_ticks": (lambda v: _int(v) and v >= 0, "a non-negative integer"),
        "settling_tolerance": (lambda v: _num(v) and v > 0, "a positive number"),
        "settle_from_tick": (lambda v: _int(v) and v >= 0, "a non-negative integer"),
    })

    world = World.build(clusters, workloads, float(tick_seconds or 10.0), routing or "local")
    initial: dict[Pair, int] = {}
    for pair, n in _pair_map(r, top.get("initial_replicas", {}), "initial_replicas").items():
        p = f"initial_replicas.{pair[0]}.{pair[1]}"
        if not known(pair, p):
            continue
        if not (_int(n) and n >= 0):
            r.add(p, "invalid_value", f"expected a non-negative integer, got {n!r}")
            continue
        initial[pair] = n
    if policy is not None:
        for pair in world.pairs:
            lo, hi = policy.bounds(pair)
            n = initial.setdefault(pair, lo)
            if not lo <= n <= hi:
                r.add(f"initial_replicas.{pair[0]}.{pair[1]}", "replica_bounds", f"{n} outside [{lo}, {hi}]")
        for c in world.clusters.values():
            used = world.allocated(initial, c.cluster_id)
            if not used.fits_within(c.capacity):
                r.add(
                    f"initial_replicas.{c.cluster_id}",
                    "capacity_exceeded",
                    f"needs {used.cpu_millicores}m/{used.memory_mib}Mi, capacity "
                    f"{c.capacity.cpu_millicores}m/{c.capacity.memory_mib}Mi",
                )

    if r.issues:
        raise ScenarioValidationError(r.issues)
    return ScenarioConfig(
        name=name,
        seed=seed,
        ticks=ticks,
        world=world,
        raw_traces=traces,
        policy=policy,
        initial_replicas=initial,
        forecaster=forecaster,
        reactive=reactive,
        evaluation=evaluation,
        feature_window=window,
    )


def _parse_simple(r: _Reader, data: Any, path: str, cls, checks: dict):
    d = r.obj(data, path)
    r.unknown_keys(d, set(checks), path)
    kwargs = {}
    ok = True
    for key, (check, what) in checks.items():
        if key in d:
            v = r.get(d, key, path, check, what)
            if v is None and d[key] is not None:
                ok = False
            kwargs[key] = v
    return cls(**kwargs) if ok else None


_POLICY_CHECKS = {
    "latency_slo_ms": (lambda v: _num(v) and v > 0, "a positive number"),
    "cost_per_replica_tick": (lambda v: _num(v) and v >= 0, "a non-negative number"),
    "replica_min": (lambda v: _int(v) and v >= 0, "a non-negative integer"),
    "replica_max": (lambda v: _int(v) and v >= 0, "a non-negative integer"),
    "cooldown_ticks": (lambda v: _int(v) and v >= 0, "a non-negative integer"),
    "hysteresis_band": (lambda v: _num(v) and 0 <= v < 0.5, "a number in [0, 0.5)"),
    "target_utilization": (lambda v: v is None or (_num(v) and 0 < v < 1), "null or a number in (0, 1)"),
    "max_actions_per_cycle": (lambda v: _int(v) and v >= 1, "a positive integer"),
    "migration_cost_per_replica": (lambda v: _num(v) and v >= 0, "a non-negative number"),
    "epsilon_improve": (lambda v: _num(v) and v >= 0, "a non-negative number"),
    "max_scale_delta": (lambda v: _int(v) and v >= 1, "a positive integer"),
    "max_migrate_count": (lambda v: _int(v) and v >= 1, "a positive integer"),
}


def _parse_policy(r: _Reader, data: Any, known) -> PolicySpec | None:
    d = r.obj(data, "policy")
    r.unknown_keys(d, set(_POLICY_CHECKS) | {"weights", "replica_bounds"}, "policy")
    kwargs: dict[str, Any] = {}
    ok = True
    for key, (check, what) in _POLICY_CHECKS.items():
        if key in d:
            v = r.get(d, key, "policy", check, what)
            ok &= v is not None or d[key] is None
            kwargs[key] = v
    if "weights" in d:
        wd = r.obj(d["weights"], "policy.weights")
        r.unknown_keys(wd, {"w_perf", "w_cost", "w_bal"}, "policy.weights")
        for k in ("w_perf", "w_cost", "w_bal"):
            v = r.get(wd, k, "policy.weights", lambda v: _num(v) and v >= 0, "a non-negative number", required=True)
            ok &= v is not None
            kwargs[k] = v
    bounds = {}
    for pair, b in _pair_map(r, d.get("replica_bounds", {}), "policy.replica_bounds").items():
        p = f"policy.replica_bounds.{pair[0]}.{pair[1]}"
        if not known(pair, p):
            ok = False
            continue
        if not (isinstance(b, list) and len(b) == 2 and all(_int(x) for x in b)):
            r.add(p, "invalid_value", "expected [min, max] integers")
            ok = False
            continue
        bounds[pair] = (b[0], b[1])
    kwargs["replica_bounds"] = bounds
    if not ok:
        return None
    policy = PolicySpec(**kwargs)
    for e in policy.validate():
        r.add("policy", "invalid_value", e)
    return policy


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Read and validate a scenario file.

    Raises :class:`ScenarioParseError` for malformed JSON and
    :class:`ScenarioValidationError` listing every violated constraint.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioParseError(e.msg, e.lineno, e.colno) from None
    return parse_scenario(data)


def shipped_scenario_path(name: str) -> Path:
    """Path of a scenario bundled with the package (``steady``, ``bursty-3x4``, ...)."""
    fname = name if name.endswith(".json") else f"{name}.json"
    return Path(str(resources.files("clusteropt") / "scenarios" / fname))


def shipped_scenarios() -> list[str]:
    root = resources.files("clusteropt") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))
