"""Evaluation metrics: stationarity gap, relative degradation and mean rank."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .balancers import min_norm_solve
from .core import as_vector
from .errors import DimensionError, DomainError, InvalidValueError


class Direction(enum.Enum):
    HIGHER_BETTER = "higher"
    LOWER_BETTER = "lower"


@dataclass(frozen=True)
class MetricSpec:
    name: str
    direction: Direction


def higher(name: str) -> MetricSpec:
    return MetricSpec(name, Direction.HIGHER_BETTER)


def lower(name: str) -> MetricSpec:
    return MetricSpec(name, Direction.LOWER_BETTER)


def pareto_stationarity_gap(G) -> float:
    """``min_{lam in simplex} ||G^T lam||``; zero exactly at Pareto-stationary points."""
    _, gap = min_norm_solve(G)
    return gap


def _signs(specs: Sequence[MetricSpec]) -> np.ndarray:
    return np.array([-1.0 if s.direction is Direction.HIGHER_BETTER else 1.0 for s in specs])


def delta_k(metrics_k, metrics_base, specs: Sequence[MetricSpec]) -> float:
    """Mean signed relative change (in percent) of a method against a baseline.

    Higher-is-better metrics enter with a flipped sign, so positive values
    always mean "worse than the baseline".
    """
    mk = as_vector(metrics_k, "metrics_k")
    mb = as_vector(metrics_base, "metrics_base")
    if mk.shape != mb.shape or len(specs) != mk.size:
        raise DimensionError("metric vectors and specs must have equal length")
    if np.any(mb == 0):
        raise DomainError("baseline metric is zero; relative change undefined")
    return float(np.mean(_signs(specs) * (mk - mb) / mb) * 100.0)


def mean_rank(table, specs: Sequence[MetricSpec]) -> np.ndarray:
    """Average per-metric rank of each method (rows); 1 is best, ties share the average rank."""
    t = np.array(table, dtype=np.float64)
    if t.ndim != 2 or t.shape[0] < 2:
        raise DimensionError("need a (methods x metrics) table with at least two methods")
    if np.any(np.isnan(t)):
        raise InvalidValueError("metric table contains NaN")
    if len(specs) != t.shape[1]:
        raise DimensionError("one MetricSpec per column is required")
    ranks = rankdata(t * _signs(specs)[None, :], method="average", axis=0)
    return ranks.mean(axis=1)
