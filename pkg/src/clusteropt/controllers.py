"""The predictive closed-loop controller, the reactive threshold baseline and the run loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Mapping, Sequence

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .actions import Action, Migrate, Pair, Scale
from .decision import DecisionOutcome, Planner
from .forecast import Forecast, ForecasterState, HoltForecaster, predict
from .policy import PolicySpec, feasible
from .sim import ActionEvent, SimState, World, demand_series, initial_state, step
from .telemetry import DEFAULT_WINDOW, FeatureSet, GlobalState, History, aggregate, collect

if TYPE_CHECKING:
    from .scenario import ScenarioConfig

CONTROLLER_KINDS = ("ai_driven", "reactive_baseline")
_ALIASES = {"ai": "ai_driven", "reactive": "reactive_baseline"}

# observe -> learn -> decide -> enqueue (execution lands on a later tick)
LOOP_PHASES = ("observe", "update", "decide", "enqueue")


def controller_kind(name: str) -> str:
    kind = _ALIASES.get(name, name)
    if kind not in CONTROLLER_KINDS:
        raise ValueError(f"unknown controller {name!r}; expected one of {sorted(_ALIASES)}")
    return kind


@dataclass(frozen=True)
class ReactiveConfig:
    upper_threshold: float = 0.80
    lower_threshold: float = 0.30
    step: int = 1
    respect_cooldown: bool = True

    def validate(self) -> list[str]:
        errors = []
        if not 0 < self.upper_threshold <= 1:
            errors.append("upper_threshold must lie in (0, 1]")
        if not 0 <= self.lower_threshold < 1:
            errors.append("lower_threshold must lie in [0, 1)")
        if self.lower_threshold >= self.upper_threshold:
            errors.append("lower_threshold must be below upper_threshold")
        if self.step < 1:
            errors.append("step must be a positive integer")
        return errors


def pair_utilization(demand_rps: float, replicas: int, cap_rps: float) -> float:
    """Offered load over the serving capacity of the pair's allocated replicas."""
    if replicas <= 0:
        return float("inf") if demand_rps > 0 else 0.0
    return demand_rps / (replicas * cap_rps)


def reactive_decide(
    global_state: GlobalState,
    config: ReactiveConfig,
    state: SimState,
    policy: PolicySpec,
    world: World,
) -> list[Action]:
    """Independent per-pair threshold rule on the latest observation.

    Sees only the current measurements: actions already queued but not yet
    landed are invisible to it, as they are to a plain utilization autoscaler.
    """
    actions: list[Action] = []
    cooldown = {} if not config.respect_cooldown else None
    for snap in global_state.snapshots:
        c = snap.cluster_id
        for w, st in snap.per_workload.items():
            u = pair_utilization(st.demand_rps, state.replicas.get((c, w), 0), world.workloads[w].capacity_per_replica_rps)
            lo, hi = policy.bounds((c, w))
            r = state.replicas.get((c, w), 0)
            if u > config.upper_threshold:
                delta = min(config.step, hi - r)
            elif u < config.lower_threshold:
                delta = -min(config.step, r - lo)
            else:
                continue
            if delta == 0:
                continue
            a = Scale(c, w, delta)
            if feasible(a, state, policy, world, cooldowns=cooldown) is None:
                actions.append(a)
    return actions


class ReactiveController(BaseEstimator):
    """Threshold autoscaler acting on each (cluster, workload) pair in isolation."""

    kind = "reactive_baseline"

    def __init__(self, upper_threshold=0.80, lower_threshold=0.30, step=1, respect_cooldown=True):
        self.upper_threshold = upper_threshold
        self.lower_threshold = lower_threshold
        self.step = step
        self.respect_cooldown = respect_cooldown

    @property
    def config(self) -> ReactiveConfig:
        return ReactiveConfig(self.upper_threshold, self.lower_threshold, self.step, self.respect_cooldown)

    def fit(self, world: World, policy: PolicySpec):
        errors = self.config.validate()
        if errors:
            raise ValueError("; ".join(errors))
        self.world_ = world
        self.policy_ = policy
        return self

    def partial_fit(self, global_state: GlobalState):
        # no model to update
        return self

    def decide(self, global_state: GlobalState, state: SimState) -> list[Action]:
        check_is_fitted(self, "world_")
        return reactive_decide(global_state, self.config, state, self.policy_, self.world_)


def ai_decide(
    global_state: GlobalState,
    features: FeatureSet,
    forecaster: ForecasterState,
    policy: PolicySpec,
    state: SimState,
    world: World,
    horizon: int = 3,
    margin_factor: float = 1.5,
    planner: Planner | None = None,
) -> DecisionOutcome:
    """Features -> forecast -> candidates -> scores -> greedy batch. Pure given its inputs."""
    fc = predict(forecaster, horizon, margin_factor)
    preds = dict(fc.predicted_rps)
    for pair in world.pairs:
        if pair not in preds or not forecaster[pair].initialized:
            # unseen series: fall back to the recent window mean
            preds[pair] = (features[pair].window_mean_rps,) * horizon
    fc = Forecast(preds, fc.safety_margin_rps, horizon)
    planner = planner or Planner(world, policy)
    return planner.decide(state, fc)


class AIController(BaseEstimator):
    """Predictive multi-cluster controller.

    Each tick it folds the newest demand observations into a Holt forecaster,
    projects demand ``horizon`` ticks ahead (in-flight actions included) and
    picks a conflict-free batch of scale/migrate actions that lowers the
    policy objective.
    """

    kind = "ai_driven"

    def __init__(self, alpha=0.5, beta=0.3, margin_factor=1.5, horizon=None, window=DEFAULT_WINDOW):
        self.alpha = alpha
        self.beta = beta
        self.margin_factor = margin_factor
        self.horizon = horizon
        self.window = window

    def fit(self, world: World, policy: PolicySpec):
        self.world_ = world
        self.policy_ = policy
        delay = max((c.actuation_delay_ticks for c in world.clusters.values()), default=0)
        self.horizon_ = self.horizon if self.horizon is not None else delay + 1
        self.forecaster_ = HoltForecaster(self.alpha, self.beta, self.margin_factor, self.horizon_)
        self.forecaster_._check_params()
        self.history_ = History(self.window)
        self.planner_ = Planner(world, policy)
        return self

    @property
    def forecaster_state(self) -> ForecasterState | None:
        return getattr(self.forecaster_, "state_", None)

    def partial_fit(self, global_state: GlobalState):
        check_is_fitted(self, "world_")
        self.history_.append(global_state)
        # model arriving traffic, which does not move when replicas do
        observed = {pair: st.ingress_rps for pair, st in global_state.series().items()}
        self.forecaster_.partial_fit(observed)
        return self

    def decide(self, global_state: GlobalState, state: SimState) -> DecisionOutcome:
        check_is_fitted(self, "forecaster_")
        return ai_decide(
            global_state,
            self.history_.features(),
            self.forecaster_.state_,
            self.policy_,
            state,
            self.world_,
            self.horizon_,
            self.margin_factor,
            self.planner_,
        )


@dataclass
class TickRecord:
    tick: int
    global_state: GlobalState
    events: list[ActionEvent]
    decided_at: int
    chosen: tuple[Action, ...]
    decision: DecisionOutcome | None = None
    forecaster: ForecasterState | None = None
    phases: tuple[str, ...] = LOOP_PHASES


@dataclass
class RunTrace:
    world: World
    kind: str
    seed: int
    metadata: dict[str, Any] = field(default_factory=dict)
    ticks: list[TickRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ticks)

    def applied_events(self) -> list[ActionEvent]:
        return [ev for r in self.ticks for ev in r.events if ev.status == "applied"]

    def rejected_events(self) -> list[ActionEvent]:
        return [ev for r in self.ticks for ev in r.events if ev.status == "rejected"]


def make_controller(kind: str, scenario: ScenarioConfig):
    kind = controller_kind(kind)
    if kind == "ai_driven":
        f = scenario.forecaster
        ctl = AIController(f.alpha, f.beta, f.margin_factor, f.horizon, scenario.feature_window)
    else:
        r = scenario.reactive
        ctl = ReactiveController(r.upper_threshold, r.lower_threshold, r.step, r.respect_cooldown)
    return ctl.fit(scenario.world, scenario.policy)


def run(scenario: ScenarioConfig, kind: str, ticks: int | None = None, seed: int | None = None) -> RunTrace:
    """Closed-loop simulation of one controller over a scenario. Deterministic."""
    if seed is not None and seed != scenario.seed:
        scenario = scenario.with_seed(seed)
    kind = controller_kind(kind)
    n = scenario.ticks if ticks is None else ticks
    world = scenario.world
    controller = make_controller(kind, scenario)
    bounds = scenario.policy.bounds_map(world)
    traces = scenario.traces
    series = {pair: demand_series(traces[pair], n) for pair in traces}
    series_lists = {pair: s.tolist() for pair, s in series.items()}

    trace = RunTrace(
        world=world,
        kind=kind,
        seed=scenario.seed,
        metadata={"scenario": scenario.name, "controller": kind, "ticks": n, "seed": scenario.seed},
    )
    state = initial_state(scenario.initial_replicas, scenario.seed)
    workloads = list(world.workloads.values())
    to_enqueue: Sequence[Action] = ()
    for t in range(n):
        demands = {pair: s[t] for pair, s in series_lists.items()}
        state, measurements, events = step(world, state, to_enqueue, demands, bounds)
        snaps = [collect(measurements, c, workloads, t) for c in world.clusters.values()]
        g = aggregate(snaps, world.clusters)
        controller.partial_fit(g)
        outcome = controller.decide(g, state)
        if isinstance(outcome, DecisionOutcome):
            chosen, decision = outcome.chosen, outcome
        else:
            chosen, decision = tuple(outcome), None
        trace.ticks.append(
            TickRecord(
                tick=t,
                global_state=g,
                events=events,
                decided_at=state.tick,
                chosen=chosen,
                decision=decision,
                forecaster=getattr(controller, "forecaster_state", None),
            )
        )
        to_enqueue = chosen
    return trace
