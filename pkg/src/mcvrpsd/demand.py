"""Demand-distribution arithmetic.

An order size is one of three models: a fixed quantity, a finite discrete
distribution, or a normal distribution. Loading decisions work with
quantiles rounded to two decimals; failure probabilities are then
recomputed from the rounded loads, so the same rounding convention is
applied everywhere a quantile leaves this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

_STD_NORMAL = NormalDist()

#: quantiles are rounded to this many decimals before any loading decision
QUANTILE_DECIMALS = 2


def normal_cdf(x: float) -> float:
    """Standard normal CDF, accurate to well below 1e-9."""
    return _STD_NORMAL.cdf(x)


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF for p in the open unit interval."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    return _STD_NORMAL.inv_cdf(p)


@dataclass(frozen=True)
class Deterministic:
    """A known order quantity."""

    value: float

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("deterministic demand must be non-negative")


@dataclass(frozen=True)
class Discrete:
    """Finite distribution given as (value, probability) pairs.

    Values must be strictly increasing and the probabilities must sum to
    one within 1e-9.
    """

    outcomes: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.outcomes:
            raise ValueError("discrete demand needs at least one outcome")
        values = [v for v, _ in self.outcomes]
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError("discrete outcome values must be strictly increasing")
        if any(v < 0 for v in values):
            raise ValueError("discrete demand values must be non-negative")
        total = math.fsum(p for _, p in self.outcomes)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"discrete probabilities sum to {total}, expected 1")

    @staticmethod
    def equiprobable(values) -> "Discrete":
        values = tuple(values)
        p = 1.0 / len(values)
        return Discrete(tuple((v, p) for v in values))


@dataclass(frozen=True)
class Normal:
    """Normally distributed order size; sd == 0 degenerates to the mean."""

    mean: float
    sd: float

    def __post_init__(self):
        if self.sd < 0:
            raise ValueError("standard deviation must be non-negative")


DemandModel = Deterministic | Discrete | Normal


def mean(model: DemandModel) -> float:
    """Expected order size."""
    if isinstance(model, Deterministic):
        return model.value
    if isinstance(model, Discrete):
        return math.fsum(v * p for v, p in model.outcomes)
    return model.mean


def quantile(model: DemandModel, p: float) -> float:
    """Smallest mass v with P[order <= v] >= p, rounded to 2 decimals.

    For normal models this is mean + sd * z(p); for discrete models the
    smallest support value whose cumulative probability reaches p.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile order must lie in (0, 1), got {p}")
    if isinstance(model, Deterministic):
        value = model.value
    elif isinstance(model, Discrete):
        cum = 0.0
        value = model.outcomes[-1][0]
        for v, prob in model.outcomes:
            cum += prob
            if cum >= p - 1e-12:
                value = v
                break
    else:
        if model.sd == 0:
            value = model.mean
        else:
            value = model.mean + model.sd * normal_quantile(p)
    return round(value, QUANTILE_DECIMALS)


def exceedance(model: DemandModel, c: float) -> float:
    """Tail probability P[order > c] (strict inequality).

    Delivering exactly a deterministic demand therefore yields zero.
    """
    if c < 0:
        raise ValueError("exceedance threshold must be non-negative")
    if isinstance(model, Deterministic):
        return 1.0 if model.value > c else 0.0
    if isinstance(model, Discrete):
        return math.fsum(p for v, p in model.outcomes if v > c)
    if model.sd == 0:
        return 1.0 if model.mean > c else 0.0
    return 1.0 - normal_cdf((c - model.mean) / model.sd)


def split(model: DemandModel, r: int) -> DemandModel:
    """Divide a demand across r equal shares (mean and sd both scale by 1/r).

    Discrete demands cannot be split: the splitting rule is defined on
    (mean, sd) pairs only, so r > 1 is rejected for them.
    """
    if r < 1:
        raise ValueError("split count must be at least 1")
    if r == 1:
        return model
    if isinstance(model, Deterministic):
        return Deterministic(model.value / r)
    if isinstance(model, Normal):
        return Normal(model.mean / r, model.sd / r)
    raise ValueError("discrete demands cannot be split across replicas")


def scale(model: DemandModel, g: int) -> DemandModel:
    """Sum of g independent equal shares: mean and sd both scale by g.

    Inverse of :func:`split`; used to rebuild the demand of a group of
    replicas served together. A discrete model only ever forms groups of
    one.
    """
    if g < 1:
        raise ValueError("scale count must be at least 1")
    if g == 1:
        return model
    if isinstance(model, Deterministic):
        return Deterministic(model.value * g)
    if isinstance(model, Normal):
        return Normal(model.mean * g, model.sd * g)
    raise ValueError("discrete demands cannot be grouped")
