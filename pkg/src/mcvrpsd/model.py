"""Problem data model: customers, fleet, replicas, routes, feasibility.

Node 0 is always the depot. Large stochastic demands are expanded into
customer *replicas* so a single order can be spread over several
compartments; replicas of the same customer sit at distance zero from
each other and inherit the origin's urgency probability.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

from . import demand
from .demand import DemandModel, Deterministic, Discrete, Normal

DEPOT = 0

#: default driver-shift budget (minutes) for real-world instances
DEFAULT_ROUTE_MINUTES = 540.0

#: a (customer, feed) pair is urgent when its urgency probability reaches this
DEFAULT_URGENCY_THRESHOLD = 0.90


@dataclass(frozen=True)
class Customer:
    id: int
    demands: dict[int, DemandModel]
    urgency: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.id == DEPOT:
            raise ValueError("customer ids must differ from the depot id 0")
        for feed, p in self.urgency.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"urgency of customer {self.id} feed {feed} outside [0, 1]")

    def urgency_for(self, feed: int) -> float:
        return self.urgency.get(feed, 0.0)


@dataclass(frozen=True)
class Truck:
    id: str
    compartments: tuple[float, ...]
    max_load: float
    inaccessible: frozenset[int] = frozenset()

    def __post_init__(self):
        if not self.compartments or any(c <= 0 for c in self.compartments):
            raise ValueError(f"truck {self.id}: compartment capacities must be positive")
        if self.max_load <= 0:
            raise ValueError(f"truck {self.id}: max load must be positive")

    def can_visit(self, customer_id: int) -> bool:
        return customer_id not in self.inaccessible

    def clone(self, copy_index: int) -> "Truck":
        return Truck(f"{self.id}#{copy_index}", self.compartments, self.max_load, self.inaccessible)


@dataclass(frozen=True)
class Instance:
    name: str
    distance: tuple[tuple[float, ...], ...]
    customers: tuple[Customer, ...]
    fleet: tuple[Truck, ...]
    feeds: int = 1
    omega: float = 1.0
    max_route_minutes: float | None = None
    urgency_threshold: float = DEFAULT_URGENCY_THRESHOLD
    unbounded_fleet: bool = False

    def __post_init__(self):
        n = len(self.distance)
        if any(len(row) != n for row in self.distance):
            raise ValueError("distance matrix must be square")
        for i in range(n):
            if self.distance[i][i] != 0:
                raise ValueError(f"distance[{i}][{i}] must be zero")
            if any(d < 0 for d in self.distance[i]):
                raise ValueError("distances must be non-negative")
        if not self.fleet:
            raise ValueError("instance needs at least one truck")
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError("omega must lie in [0, 1]")
        if not 0.0 < self.urgency_threshold < 1.0:
            raise ValueError("urgency threshold must lie in (0, 1)")
        ids = [c.id for c in self.customers]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate customer ids")
        for c in self.customers:
            if not 1 <= c.id < n:
                raise ValueError(f"customer {c.id} has no row in the distance matrix")
            for feed in c.demands:
                if not 0 <= feed < self.feeds:
                    raise ValueError(f"customer {c.id} references unknown feed {feed}")

    def customer(self, customer_id: int) -> Customer:
        return self._by_id()[customer_id]

    def _by_id(self):
        cache = getattr(self, "_customer_index", None)
        if cache is None:
            cache = {c.id: c for c in self.customers}
            object.__setattr__(self, "_customer_index", cache)
        return cache

    def is_urgent(self, customer_id: int, feed: int) -> bool:
        return self.customer(customer_id).urgency_for(feed) >= self.urgency_threshold

    def max_compartment(self) -> float:
        return max(c for t in self.fleet for c in t.compartments)


@dataclass(frozen=True)
class Replica:
    """One compartment-sized share of a (customer, feed) order."""

    id: int
    origin: int
    feed: int
    model: DemandModel
    urgency: float
    index: int
    count: int
    target: float  # load the replica asks for: quantile for urgent pairs, mean otherwise

    def key(self) -> tuple[int, int]:
        return (self.origin, self.feed)


def replica_count(q: float, c_max: float) -> int:
    """Number of compartment-sized shares needed for a mass q, at least 1."""
    if c_max <= 0:
        raise ValueError("compartment capacity must be positive")
    if q < 0:
        raise ValueError("mass must be non-negative")
    return max(1, math.ceil(q / c_max))


def _load_target(model: DemandModel, urgency: float, threshold: float) -> float:
    """Mass we aim to deliver: the urgency quantile for urgent pairs, else the mean."""
    if urgency >= threshold:
        return demand.quantile(model, urgency)
    return round(demand.mean(model), demand.QUANTILE_DECIMALS)


class ReplicaSet:
    """Expanded customer set with the induced distance function."""

    def __init__(self, instance: Instance, replicas: tuple[Replica, ...]):
        self.instance = instance
        self.replicas = replicas
        self._origin = [r.origin for r in replicas]
        self._dist = instance.distance
        by_customer: dict[int, list[int]] = {}
        for r in replicas:
            by_customer.setdefault(r.origin, []).append(r.id)
        self.by_customer = {k: tuple(v) for k, v in by_customer.items()}

    def __len__(self):
        return len(self.replicas)

    def __iter__(self):
        return iter(self.replicas)

    def replica(self, replica_id: int) -> Replica:
        return self.replicas[replica_id]

    def origin(self, replica_id: int) -> int:
        return self._origin[replica_id]

    def distance(self, a: int, b: int) -> float:
        """Travel time between two replicas; zero between same-customer replicas."""
        oa, ob = self._origin[a], self._origin[b]
        if oa == ob:
            return 0.0
        return self._dist[oa][ob]

    def from_depot(self, replica_id: int) -> float:
        return self._dist[DEPOT][self._origin[replica_id]]

    def to_depot(self, replica_id: int) -> float:
        return self._dist[self._origin[replica_id]][DEPOT]


def expand_replicas(instance: Instance) -> ReplicaSet:
    """Split every demanded (customer, feed) pair into compartment-sized replicas.

    The share count is the load target divided by the largest compartment
    in the fleet, rounded up. Discrete demands are never split (their
    splitting rule is undefined), so they always yield a single replica.
    """
    if not instance.fleet:
        raise ValueError("cannot expand replicas without trucks")
    c_max = instance.max_compartment()
    threshold = instance.urgency_threshold
    replicas: list[Replica] = []
    n_pairs = 0
    for customer in instance.customers:
        for feed in sorted(customer.demands):
            model = customer.demands[feed]
            if demand.mean(model) <= 0:
                continue
            n_pairs += 1
            urgency = customer.urgency_for(feed)
            full_target = _load_target(model, urgency, threshold)
            if isinstance(model, Discrete):
                r = 1
            else:
                r = replica_count(full_target, c_max)
            share = demand.split(model, r)
            share_target = _load_target(share, urgency, threshold)
            for index in range(1, r + 1):
                replicas.append(
                    Replica(
                        id=len(replicas),
                        origin=customer.id,
                        feed=feed,
                        model=share,
                        urgency=urgency,
                        index=index,
                        count=r,
                        target=share_target,
                    )
                )
    if n_pairs == 0:
        raise ValueError("instance has no positive demands")
    return ReplicaSet(instance, tuple(replicas))


@dataclass(frozen=True)
class Assignment:
    replica: int
    compartment: int
    load: float


@dataclass(frozen=True)
class Route:
    truck: Truck
    visits: tuple[int, ...]
    assignments: tuple[Assignment, ...]

    def load_of(self, replica_id: int) -> float:
        return sum(a.load for a in self.assignments if a.replica == replica_id)

    def total_load(self) -> float:
        return math.fsum(a.load for a in self.assignments)


@dataclass(frozen=True)
class Solution:
    routes: tuple[Route, ...]
    unserved: frozenset[int] = frozenset()

    def served(self) -> list[int]:
        return [rid for route in self.routes for rid in route.visits]

    def total_load(self) -> float:
        return math.fsum(route.total_load() for route in self.routes)


@dataclass(frozen=True)
class FeasibilityReport:
    ok: bool
    violations: tuple[str, ...]


def check_feasibility(instance: Instance, replica_set: ReplicaSet, solution: Solution) -> FeasibilityReport:
    """Validate a solution against the routing and loading constraints.

    All violations are collected (not fail-fast): compartment capacity,
    one-order-per-compartment, truck load limits, accessibility,
    visit/assignment consistency, and per-truck duration budgets.
    """
    from .evaluate import route_duration  # local import avoids a module cycle

    violations: list[str] = []
    seen: set[int] = set()
    n_replicas = len(replica_set)
    for ri, route in enumerate(solution.routes):
        label = f"route {ri} (truck {route.truck.id})"
        visited = set()
        for rid in route.visits:
            if not 0 <= rid < n_replicas:
                violations.append(f"{label}: unknown replica {rid}")
                continue
            if rid in seen:
                violations.append(f"{label}: replica {rid} appears in more than one place")
            seen.add(rid)
            visited.add(rid)
            origin = replica_set.origin(rid)
            if not route.truck.can_visit(origin):
                violations.append(f"{label}: accessibility: truck cannot visit customer {origin}")
        assigned = set()
        comps_used: dict[int, int] = {}
        for a in route.assignments:
            if not 0 <= a.replica < n_replicas:
                violations.append(f"{label}: assignment references unknown replica {a.replica}")
                continue
            assigned.add(a.replica)
            if not 0 <= a.compartment < len(route.truck.compartments):
                violations.append(f"{label}: unknown compartment {a.compartment}")
                continue
            cap = route.truck.compartments[a.compartment]
            if a.load < 0:
                violations.append(f"{label}: negative load for replica {a.replica}")
            if a.load > cap + 1e-9:
                violations.append(
                    f"{label}: capacity: compartment {a.compartment} load {a.load} exceeds {cap}"
                )
            if a.compartment in comps_used and comps_used[a.compartment] != a.replica:
                violations.append(
                    f"{label}: compartment {a.compartment} carries more than one order"
                )
            comps_used[a.compartment] = a.replica
        if visited != assigned:
            for rid in visited - assigned:
                violations.append(f"{label}: replica {rid} visited but not loaded")
            for rid in assigned - visited:
                violations.append(f"{label}: replica {rid} loaded but not visited")
        total = route.total_load()
        if total > route.truck.max_load + 1e-9:
            violations.append(
                f"{label}: truck load {total} exceeds legal maximum {route.truck.max_load}"
            )
    for rid in solution.unserved:
        if rid in seen:
            violations.append(f"replica {rid} is both served and marked unserved")
    if instance.max_route_minutes is not None:
        budget = instance.max_route_minutes
        per_truck: dict[str, float] = {}
        for route in solution.routes:
            ok_route = all(0 <= rid < n_replicas for rid in route.visits)
            if not ok_route:
                continue
            per_truck.setdefault(route.truck.id, 0.0)
            per_truck[route.truck.id] += route_duration(instance, replica_set, route)
        for truck_id, minutes in per_truck.items():
            if minutes > budget + 1e-6:
                violations.append(
                    f"duration: truck {truck_id} needs {minutes:.1f} minutes, budget {budget:.1f}"
                )
    return FeasibilityReport(ok=not violations, violations=tuple(violations))
