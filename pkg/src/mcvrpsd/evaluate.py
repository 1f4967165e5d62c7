"""Solution evaluation: fixed distance, expected recourse, weighted objective.

A failed delivery triggers one expected round trip to the depot. Replicas
of the same customer riding on the same route act as one delivery: their
loads add up and the failure probability is taken on the correspondingly
recombined demand, which is what makes the split-demand bookkeeping
consistent with the unsplit order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import demand
from .model import DEPOT, Instance, ReplicaSet, Route, Solution


def fixed_of_sequence(replica_set: ReplicaSet, seq) -> float:
    """Depot -> visits -> depot travel time for a raw replica sequence."""
    if not seq:
        return 0.0
    total = replica_set.from_depot(seq[0])
    for a, b in zip(seq, seq[1:]):
        total += replica_set.distance(a, b)
    total += replica_set.to_depot(seq[-1])
    return total


def group_terms_of_sequence(instance: Instance, replica_set: ReplicaSet, seq, loads):
    """Per (customer, feed) group on a route: ((origin, feed), probability, round-trip).

    Same-customer replicas on one route pool their loads; the probability
    is the tail of the recombined demand above the pooled delivery, gated
    on urgency.
    """
    groups: dict[tuple[int, int], list[int]] = {}
    for rid in seq:
        groups.setdefault(replica_set.replica(rid).key(), []).append(rid)
    terms = []
    threshold = instance.urgency_threshold
    for (origin, feed), members in groups.items():
        rep = replica_set.replica(members[0])
        if rep.urgency >= threshold:
            delivered = math.fsum(loads.get(rid, 0.0) for rid in members)
            combined = demand.scale(rep.model, len(members))
            prob = demand.exceedance(combined, delivered)
        else:
            prob = 0.0
        terms.append(((origin, feed), prob, 2.0 * instance.distance[DEPOT][origin]))
    return terms


def recourse_of_sequence(instance: Instance, replica_set: ReplicaSet, seq, loads) -> float:
    return math.fsum(
        prob * trip for _, prob, trip in group_terms_of_sequence(instance, replica_set, seq, loads)
    )


def route_fixed_distance(replica_set: ReplicaSet, route: Route) -> float:
    """Depot -> visits -> depot travel time under replica-induced distances."""
    return fixed_of_sequence(replica_set, route.visits)


def _group_terms(instance: Instance, replica_set: ReplicaSet, route: Route):
    loads: dict[int, float] = {}
    for a in route.assignments:
        loads[a.replica] = loads.get(a.replica, 0.0) + a.load
    return group_terms_of_sequence(instance, replica_set, route.visits, loads)


def recourse_probability(instance: Instance, replica_set: ReplicaSet, route: Route, replica_id: int) -> float:
    """Probability that the order behind a visited replica is under-delivered.

    Zero for non-urgent pairs; otherwise the tail probability of the
    group's demand above the total mass delivered to it on this route.
    """
    key = replica_set.replica(replica_id).key()
    for group_key, prob, _ in _group_terms(instance, replica_set, route):
        if group_key == key:
            return prob
    raise ValueError(f"replica {replica_id} is not visited on this route")


def route_expected_recourse(instance: Instance, replica_set: ReplicaSet, route: Route) -> float:
    """Expected extra travel from failed urgent deliveries on the route."""
    return math.fsum(prob * trip for _, prob, trip in _group_terms(instance, replica_set, route))


def route_duration(instance: Instance, replica_set: ReplicaSet, route: Route) -> float:
    """Expected route duration in minutes: fixed legs plus expected recourse."""
    return route_fixed_distance(replica_set, route) + route_expected_recourse(
        instance, replica_set, route
    )


@dataclass(frozen=True)
class RouteEvaluation:
    fixed: float
    recourse: float
    load: float
    duration: float


@dataclass(frozen=True)
class Evaluation:
    fixed_distance: float
    expected_recourse: float
    total_load: float
    weighted_objective: float
    per_route: tuple[RouteEvaluation, ...]

    @property
    def expected_distance(self) -> float:
        return self.fixed_distance + self.expected_recourse


def weighted_objective(instance: Instance, replica_set: ReplicaSet, solution: Solution, omega: float | None = None) -> float:
    """omega * expected distance - (1 - omega) * delivered load (minimised)."""
    return evaluate(instance, replica_set, solution, omega).weighted_objective


def evaluate(instance: Instance, replica_set: ReplicaSet, solution: Solution, omega: float | None = None) -> Evaluation:
    if omega is None:
        omega = instance.omega
    if not 0.0 <= omega <= 1.0:
        raise ValueError("omega must lie in [0, 1]")
    per_route = []
    for route in solution.routes:
        fixed = route_fixed_distance(replica_set, route)
        recourse = route_expected_recourse(instance, replica_set, route)
        load = route.total_load()
        per_route.append(RouteEvaluation(fixed, recourse, load, fixed + recourse))
    fixed = math.fsum(r.fixed for r in per_route)
    recourse = math.fsum(r.recourse for r in per_route)
    load = math.fsum(r.load for r in per_route)
    objective = omega * (fixed + recourse) - (1.0 - omega) * load
    return Evaluation(fixed, recourse, load, objective, tuple(per_route))


def occupancy_rate(instance: Instance, replica_set: ReplicaSet, solution: Solution) -> float:
    """Mean over routes of load / effective capacity, in percent.

    Effective capacity is min(legal max load, compartment sum): the legal
    limit can undercut the compartment sum on real fleets.
    """
    if not solution.routes:
        return 0.0
    rates = []
    for route in solution.routes:
        effective = min(route.truck.max_load, sum(route.truck.compartments))
        rates.append(route.total_load() / effective)
    return 100.0 * math.fsum(rates) / len(rates)
