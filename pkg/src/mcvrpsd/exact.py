"""Ground-truth oracles: exhaustive solver for tiny instances, Monte Carlo recourse.

The exhaustive solver enumerates which orders each truck serves, the
compartments behind every order, delivery levels at the distribution's
breakpoints, and exact visiting orders. It is only meant for instances
small enough to verify the heuristics against, and only for discrete or
fixed demands, whose optimal delivery levels live on a finite grid.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import demand
from .demand import Deterministic, Discrete, Normal
from .model import DEPOT, Instance, ReplicaSet, Solution

_EPS = 1e-9


@dataclass(frozen=True)
class ExactRoute:
    truck_id: str
    visit_order: tuple[int, ...]
    deliveries: tuple[tuple[int, int, float], ...]  # (customer, feed, mass)


@dataclass(frozen=True)
class ExactResult:
    routes: tuple[ExactRoute, ...]
    objective: float
    expected_distance: float
    total_load: float
    nodes_explored: int


class _Pair:
    __slots__ = ("customer", "feed", "model", "urgent", "supports")

    def __init__(self, customer, feed, model, urgent):
        self.customer = customer
        self.feed = feed
        self.model = model
        self.urgent = urgent
        if isinstance(model, Deterministic):
            self.supports = (model.value,)
        else:
            self.supports = tuple(v for v, _ in model.outcomes)


def _candidate_levels(pair: _Pair, cap_sum: float) -> tuple[float, ...]:
    """Delivery masses worth considering: support breakpoints up to the
    compartment total, else everything the compartments hold."""
    levels = {v for v in pair.supports if v <= cap_sum + _EPS}
    levels.add(min(cap_sum, pair.supports[-1]))
    return tuple(sorted(levels))


def enumerate_exact(
    instance: Instance,
    omega: float | None = None,
    max_customers: int = 6,
    max_trucks: int = 2,
) -> ExactResult:
    """Exhaustively optimise a tiny instance (one trip per truck).

    Rejects anything beyond ``max_customers`` demanded customers,
    ``max_trucks`` trucks, or with normally distributed demands. Urgent
    orders must be served; the rest may be skipped.
    """
    if omega is None:
        omega = instance.omega
    if not 0.0 <= omega <= 1.0:
        raise ValueError("omega must lie in [0, 1]")
    if instance.unbounded_fleet:
        raise ValueError("exact enumeration needs a finite fleet")
    if len(instance.fleet) > max_trucks:
        raise ValueError(f"exact enumeration limited to {max_trucks} trucks")
    pairs: list[_Pair] = []
    for customer in instance.customers:
        for feed in sorted(customer.demands):
            model = customer.demands[feed]
            if isinstance(model, Normal):
                raise ValueError("normal demands are not enumerable; use the simulator")
            if demand.mean(model) <= 0:
                continue
            pairs.append(
                _Pair(customer.id, feed, model, instance.is_urgent(customer.id, feed))
            )
    demanded_customers = {p.customer for p in pairs}
    if len(demanded_customers) > max_customers:
        raise ValueError(f"exact enumeration limited to {max_customers} customers")

    dist = instance.distance
    nodes = 0
    tsp_cache: dict[frozenset, tuple[float, tuple[int, ...]]] = {}

    def best_tour(customers: frozenset) -> tuple[float, tuple[int, ...]]:
        if customers not in tsp_cache:
            order = tuple(sorted(customers))
            best = (math.inf, order)
            for perm in itertools.permutations(order):
                d = dist[DEPOT][perm[0]]
                for a, b in zip(perm, perm[1:]):
                    d += dist[a][b]
                d += dist[perm[-1]][DEPOT]
                if d < best[0] - _EPS:
                    best = (d, perm)
            tsp_cache[customers] = best
        return tsp_cache[customers]

    def truck_best(truck_idx: int, pair_ids: tuple[int, ...]):
        """Best (contribution, route) for one truck serving the given pairs."""
        nonlocal nodes
        truck = instance.fleet[truck_idx]
        chosen = [pairs[i] for i in pair_ids]
        if any(not truck.can_visit(p.customer) for p in chosen):
            return None
        if not chosen:
            return 0.0, None
        comps = truck.compartments
        if len(chosen) > len(comps):
            return None
        tour_len, tour = best_tour(frozenset(p.customer for p in chosen))
        best = None

        def levels_rec(idx, cap_sums, budget, masses, rec_sum):
            """Pick delivery levels pair by pair within the legal load budget."""
            nonlocal nodes, best
            if idx == len(chosen):
                nodes += 1
                total_mass = math.fsum(masses)
                expected = tour_len + rec_sum
                if instance.max_route_minutes is not None and expected > instance.max_route_minutes + 1e-6:
                    return
                contribution = omega * expected - (1.0 - omega) * total_mass
                if best is None or contribution < best[0] - _EPS:
                    best = (contribution, tuple(masses), rec_sum)
                return
            pair = chosen[idx]
            for level in _candidate_levels(pair, cap_sums[idx]):
                if level > budget + _EPS:
                    continue
                rec = 0.0
                if pair.urgent:
                    rec = 2.0 * dist[DEPOT][pair.customer] * demand.exceedance(pair.model, level)
                levels_rec(idx + 1, cap_sums, budget - level, masses + [level], rec_sum + rec)

        def comps_rec(comp_idx, owner, counts):
            """Assign each compartment to one pair (or leave it empty)."""
            nonlocal nodes
            remaining = len(comps) - comp_idx
            missing = sum(1 for c in counts if c == 0)
            if missing > remaining:
                return
            if comp_idx == len(comps):
                cap_sums = [0.0] * len(chosen)
                for h, who in enumerate(owner):
                    if who >= 0:
                        cap_sums[who] += comps[h]
                levels_rec(0, cap_sums, truck.max_load, [], 0.0)
                return
            for who in range(-1, len(chosen)):
                owner.append(who)
                if who >= 0:
                    counts[who] += 1
                comps_rec(comp_idx + 1, owner, counts)
                if who >= 0:
                    counts[who] -= 1
                owner.pop()

        comps_rec(0, [], [0] * len(chosen))
        if best is None:
            return None
        contribution, masses, _rec = best
        deliveries = tuple(
            (p.customer, p.feed, m) for p, m in zip(chosen, masses)
        )
        return contribution, ExactRoute(truck.id, tour, deliveries)

    truck_cache: dict[tuple[int, tuple[int, ...]], object] = {}

    def truck_best_cached(truck_idx, pair_ids):
        key = (truck_idx, pair_ids)
        if key not in truck_cache:
            truck_cache[key] = truck_best(truck_idx, pair_ids)
        return truck_cache[key]

    n_trucks = len(instance.fleet)
    best_total = None
    for assignment in itertools.product(range(-1, n_trucks), repeat=len(pairs)):
        if any(p.urgent and who < 0 for p, who in zip(pairs, assignment)):
            continue
        total = 0.0
        routes = []
        feasible = True
        for truck_idx in range(n_trucks):
            pair_ids = tuple(i for i, who in enumerate(assignment) if who == truck_idx)
            res = truck_best_cached(truck_idx, pair_ids)
            if res is None:
                feasible = False
                break
            contribution, route = res
            total += contribution
            if route is not None:
                routes.append(route)
        if not feasible:
            continue
        if best_total is None or total < best_total[0] - _EPS:
            best_total = (total, tuple(routes))
    if best_total is None:
        raise ValueError("no feasible solution serves every urgent order")

    objective, routes = best_total
    total_load = math.fsum(m for r in routes for _, _, m in r.deliveries)
    expected = 0.0
    for r in routes:
        d = dist[DEPOT][r.visit_order[0]]
        for a, b in zip(r.visit_order, r.visit_order[1:]):
            d += dist[a][b]
        d += dist[r.visit_order[-1]][DEPOT]
        expected += d
        for customer, feed, mass in r.deliveries:
            if instance.is_urgent(customer, feed):
                pair_model = instance.customer(customer).demands[feed]
                expected += 2.0 * dist[DEPOT][customer] * demand.exceedance(pair_model, mass)
    return ExactResult(routes, objective, expected, total_load, nodes)


@dataclass(frozen=True)
class SimulationResult:
    mean: float
    stderr: float
    samples: int


def simulate(
    instance: Instance,
    replica_set: ReplicaSet,
    solution: Solution,
    samples: int,
    rng: np.random.Generator | None = None,
) -> SimulationResult:
    """Monte Carlo estimate of the expected recourse distance of a solution.

    Each urgent delivery group gets independent demand draws; a draw above
    the delivered mass costs one depot round trip. Returns the sample mean
    with its standard error.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    if rng is None:
        rng = np.random.default_rng(0)
    totals = np.zeros(samples)
    for route in solution.routes:
        loads: dict[int, float] = {}
        for a in route.assignments:
            loads[a.replica] = loads.get(a.replica, 0.0) + a.load
        groups: dict[tuple[int, int], list[int]] = {}
        for rid in route.visits:
            groups.setdefault(replica_set.replica(rid).key(), []).append(rid)
        for (origin, _feed), members in groups.items():
            rep = replica_set.replica(members[0])
            if rep.urgency < instance.urgency_threshold:
                continue
            delivered = math.fsum(loads.get(rid, 0.0) for rid in members)
            combined = demand.scale(rep.model, len(members))
            if isinstance(combined, Deterministic):
                draws = np.full(samples, combined.value)
            elif isinstance(combined, Discrete):
                values = np.array([v for v, _ in combined.outcomes])
                probs = np.array([p for _, p in combined.outcomes])
                draws = rng.choice(values, p=probs / probs.sum(), size=samples)
            elif combined.sd == 0:
                draws = np.full(samples, combined.mean)
            else:
                draws = rng.normal(combined.mean, combined.sd, size=samples)
            trip = 2.0 * instance.distance[DEPOT][origin]
            totals += trip * (draws > delivered)
    mean = float(totals.mean())
    stderr = float(totals.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
    return SimulationResult(mean=mean, stderr=stderr, samples=samples)
