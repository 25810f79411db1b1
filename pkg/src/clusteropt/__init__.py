"""Predictive multi-cluster resource optimization with a reactive baseline for comparison."""

from .actions import Action, Migrate, NoOp, Scale
from .controllers import AIController, ReactiveConfig, ReactiveController, RunTrace, run
from .forecast import HoltForecaster
from .metrics import MetricsReport, compute_report, jain_index
from .policy import PolicySpec
from .scenario import ScenarioConfig, load_scenario, shipped_scenario_path
from .sim import ClusterSpec, ResourceVector, TraceSpec, WorkloadSpec, World

__version__ = "0.1.0"
