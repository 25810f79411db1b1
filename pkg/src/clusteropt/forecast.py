"""Online Holt linear (level + trend) demand forecasting, one state per series."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Hashable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

ERROR_DECAY = 0.1


@dataclass(frozen=True)
class SeriesState:
    level: float = 0.0
    trend: float = 0.0
    abs_error_ewma: float = 0.0
    initialized: bool = False

    def one_step(self) -> float:
        return self.level + self.trend


@dataclass(frozen=True)
class ForecasterState:
    alpha: float = 0.5
    beta: float = 0.3
    series: Mapping[Hashable, SeriesState] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (0 < self.alpha <= 1 and 0 < self.beta <= 1):
            raise ValueError("alpha and beta must lie in (0, 1]")

    def __getitem__(self, key: Hashable) -> SeriesState:
        return self.series.get(key, SeriesState())


@dataclass(frozen=True)
class Forecast:
    predicted_rps: Mapping[Hashable, tuple[float, ...]]
    safety_margin_rps: Mapping[Hashable, float]
    horizon: int

    def at(self, key: Hashable, h: int | None = None) -> float:
        """Step-``h`` prediction (default: the last horizon step)."""
        preds = self.predicted_rps.get(key)
        if not preds:
            return 0.0
        return preds[(h or self.horizon) - 1]

    def margin(self, key: Hashable) -> float:
        return self.safety_margin_rps.get(key, 0.0)


def update_series(s: SeriesState, y: float, alpha: float, beta: float) -> SeriesState:
    if y < 0:
        raise ValueError("observations must be non-negative")
    if not s.initialized:
        return SeriesState(level=y, trend=0.0, abs_error_ewma=0.0, initialized=True)
    err = abs(y - s.one_step())
    level = alpha * y + (1 - alpha) * (s.level + s.trend)
    trend = beta * (level - s.level) + (1 - beta) * s.trend
    return SeriesState(level, trend, ERROR_DECAY * err + (1 - ERROR_DECAY) * s.abs_error_ewma, True)


def update(state: ForecasterState, observed: Mapping[Hashable, float]) -> ForecasterState:
    """Fold one observation per series into the state; untouched series keep their state."""
    series = dict(state.series)
    for key, y in observed.items():
        series[key] = update_series(series.get(key, SeriesState()), float(y), state.alpha, state.beta)
    return replace(state, series=series)


def predict(state: ForecasterState, horizon: int, margin_factor: float = 1.5) -> Forecast:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    preds = {}
    margins = {}
    for key, s in state.series.items():
        if not s.initialized:
            preds[key] = (0.0,) * horizon
            margins[key] = 0.0
            continue
        preds[key] = tuple(max(0.0, s.level + h * s.trend) for h in range(1, horizon + 1))
        margins[key] = margin_factor * s.abs_error_ewma
    return Forecast(preds, margins, horizon)


class HoltForecaster(BaseEstimator):
    """Holt linear smoothing over many independent demand series.

    ``fit`` consumes a ``(n_ticks, n_series)`` matrix, ``partial_fit`` one
    observation per series, and ``predict`` returns the next ``horizon``
    values per series together with an error-driven safety margin.
    """

    def __init__(self, alpha=0.5, beta=0.3, margin_factor=1.5, horizon=3):
        self.alpha = alpha
        self.beta = beta
        self.margin_factor = margin_factor
        self.horizon = horizon

    def _check_params(self) -> None:
        if not (0 < self.alpha <= 1 and 0 < self.beta <= 1):
            raise ValueError("alpha and beta must lie in (0, 1]")
        if self.margin_factor < 0:
            raise ValueError("margin_factor must be >= 0")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError("horizon must be a positive integer")

    def fit(self, Y, keys: Sequence[Hashable] | None = None):
        self._check_params()
        Y = check_array(Y, ensure_2d=True, dtype=np.float64, ensure_min_samples=1)
        if (Y < 0).any():
            raise ValueError("observations must be non-negative")
        keys = list(keys) if keys is not None else list(range(Y.shape[1]))
        if len(keys) != Y.shape[1]:
            raise ValueError(f"{len(keys)} keys for {Y.shape[1]} series")
        self.state_ = ForecasterState(self.alpha, self.beta, {})
        for row in Y:
            self.state_ = update(self.state_, dict(zip(keys, row.tolist())))
        self.keys_ = keys
        return self

    def partial_fit(self, observed: Mapping[Hashable, float]):
        if not hasattr(self, "state_"):
            self._check_params()
            self.state_ = ForecasterState(self.alpha, self.beta, {})
            self.keys_ = []
        self.state_ = update(self.state_, observed)
        self.keys_ = list(self.state_.series)
        return self

    def predict(self, horizon: int | None = None) -> Forecast:
        check_is_fitted(self, "state_")
        return predict(self.state_, horizon or self.horizon, self.margin_factor)

    def predict_matrix(self, horizon: int | None = None) -> np.ndarray:
        """Predictions as an ``(H, n_series)`` array in ``keys_`` order."""
        fc = self.predict(horizon)
        return np.array([fc.predicted_rps[k] for k in self.keys_]).T
