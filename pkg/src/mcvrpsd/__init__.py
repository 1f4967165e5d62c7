"""Routing for multi-compartment fleets under stochastic demand.

Construction via generalised savings, improvement via iterated tabu
search, analytic expected-recourse evaluation, and exact/Monte-Carlo
oracles for validation on small instances.
"""

from .demand import Deterministic, Discrete, Normal, exceedance, normal_cdf, quantile, split
from .evaluate import Evaluation, evaluate, occupancy_rate, weighted_objective
from .model import (
    Assignment,
    Customer,
    Instance,
    Replica,
    ReplicaSet,
    Route,
    Solution,
    Truck,
    check_feasibility,
    expand_replicas,
    replica_count,
)
from .construct import allocate_load, construct, insertion_interest, insertion_saving, seed_priority

__all__ = [
    "Assignment",
    "Customer",
    "Deterministic",
    "Discrete",
    "Evaluation",
    "Instance",
    "Normal",
    "Replica",
    "ReplicaSet",
    "Route",
    "Solution",
    "Truck",
    "allocate_load",
    "check_feasibility",
    "construct",
    "evaluate",
    "exceedance",
    "expand_replicas",
    "insertion_interest",
    "insertion_saving",
    "normal_cdf",
    "occupancy_rate",
    "quantile",
    "replica_count",
    "seed_priority",
    "split",
    "weighted_objective",
]

__version__ = "0.1.0"
