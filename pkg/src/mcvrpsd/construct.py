"""Savings-based route construction for compartmentalised stochastic fleets.

Extends Clarke-Wright sequential savings: a route is seeded at the
replica with the highest seed priority, then grown by inserting the
candidate with the best distance saving plus a weighted stochastic
interest term, loading each insertion into the free compartment that is
least likely to be exceeded by the order.
"""

from __future__ import annotations

import math
from functools import lru_cache

from . import demand
from .evaluate import fixed_of_sequence, recourse_of_sequence
from .model import (
    Assignment,
    Instance,
    Replica,
    ReplicaSet,
    Route,
    Solution,
    Truck,
    expand_replicas,
)


@lru_cache(maxsize=1 << 16)
def _tail(model, cap: float) -> float:
    return demand.exceedance(model, cap)


def allocate_load(model, compartment_capacity: float, p: float) -> float:
    """Load placed in a compartment: the p-quantile, capped by capacity."""
    return min(demand.quantile(model, p), compartment_capacity)


def seed_priority(instance: Instance, replica: Replica, trucks=None) -> float:
    """Priority for opening a new route at this replica.

    Scales the round trip to the customer by the urgency probability and
    by the spread of exceedance probabilities between the smallest and
    largest compartments on offer: customers whose order sits between
    compartment sizes gain the most from a careful assignment.
    """
    if trucks is None:
        trucks = instance.fleet
    trucks = [t for t in trucks if t.can_visit(replica.origin)]
    if not trucks:
        return 0.0
    probs = [_tail(replica.model, c) for t in trucks for c in t.compartments]
    round_trip = 2.0 * instance.distance[0][replica.origin]
    return round_trip * (max(probs) - min(probs)) * replica.urgency


def insertion_interest(
    instance: Instance,
    replica: Replica,
    truck: Truck,
    free_compartments,
    other_trucks,
) -> float:
    """Expected saving of serving the replica here rather than on another truck.

    Positive when the current truck's best free compartment beats anything
    the remaining fleet offers. Zero when no alternative truck exists.
    """
    others = [t for t in other_trucks if t is not truck and t.can_visit(replica.origin)]
    free = list(free_compartments)
    if not others or not free:
        return 0.0
    p_other = min(_tail(replica.model, c) for t in others for c in t.compartments)
    p_here = min(_tail(replica.model, truck.compartments[h]) for h in free)
    round_trip = 2.0 * instance.distance[0][replica.origin]
    return round_trip * (p_other - p_here) * replica.urgency


def insertion_saving(
    replica_set: ReplicaSet,
    end_replica: int,
    candidate: int,
    lam: float,
    interest: float,
    prepend: bool = False,
) -> float:
    """Clarke-Wright saving for serving the candidate next to a route end,
    plus the weighted stochastic interest."""
    rs = replica_set
    if prepend:
        base = rs.to_depot(candidate) + rs.from_depot(end_replica) - rs.distance(candidate, end_replica)
    else:
        base = rs.to_depot(end_replica) + rs.from_depot(candidate) - rs.distance(end_replica, candidate)
    return base + lam * interest


class _TruckPool:
    """Remaining trucks; an unbounded fleet hands out fresh template copies."""

    def __init__(self, instance: Instance):
        self.unbounded = instance.unbounded_fleet
        self.templates = list(instance.fleet)
        self.available = list(instance.fleet)
        self.copies = 0

    def candidates(self):
        return self.templates if self.unbounded else self.available

    def has_trucks(self) -> bool:
        return self.unbounded or bool(self.available)

    def take(self, truck: Truck) -> Truck:
        if self.unbounded:
            self.copies += 1
            return truck.clone(self.copies)
        self.available.remove(truck)
        return truck

    def put_back(self, truck: Truck):
        self.available.append(truck)

    def others(self, current: Truck):
        if self.unbounded:
            return self.templates
        return [t for t in self.available if t is not current]


class _RouteBuild:
    __slots__ = ("truck", "seq", "comp", "load", "free")

    def __init__(self, truck: Truck):
        self.truck = truck
        self.seq: list[int] = []
        self.comp: dict[int, int] = {}
        self.load: dict[int, float] = {}
        self.free = list(range(len(truck.compartments)))

    def total_load(self) -> float:
        return math.fsum(self.load.values())

    def fixed(self, rs: ReplicaSet) -> float:
        return fixed_of_sequence(rs, self.seq)

    def recourse(self, rs: ReplicaSet, threshold: float) -> float:
        return recourse_of_sequence(rs.instance, rs, self.seq, self.load)

    def freeze(self) -> Route:
        assignments = tuple(Assignment(rid, self.comp[rid], self.load[rid]) for rid in self.seq)
        return Route(self.truck, tuple(self.seq), assignments)


def _best_compartment(build: _RouteBuild, replica: Replica) -> tuple[int, float] | None:
    """Free compartment with the smallest exceedance; ties go to the lowest index.

    Returns (compartment, load) or None when nothing fits the remaining
    legal-load budget.
    """
    budget = build.truck.max_load - build.total_load()
    best = None
    for h in build.free:
        cap = build.truck.compartments[h]
        load = min(replica.target, cap)
        if load > budget + 1e-9:
            continue
        key = (_tail(replica.model, cap), h)
        if best is None or key < best[0]:
            best = (key, h, load)
    if best is None:
        return None
    return best[1], best[2]


def construct(
    instance: Instance,
    replica_set: ReplicaSet | None = None,
    lam: float = 1.0,
    multi_route: bool = False,
    seed_log: list | None = None,
) -> Solution:
    """Build a feasible solution route by route (sequential savings).

    Each route is seeded at the highest-priority replica, grown greedily
    by savings (appending after the last stop or prepending before the
    first), preferring leftover replicas of the customer just inserted.
    A truck leaves the pool when its route closes unless ``multi_route``
    lets it return while duration budget remains. Replicas that cannot be
    placed end up unserved.
    """
    if lam < 0:
        raise ValueError("the interest weight must be non-negative")
    rs = replica_set if replica_set is not None else expand_replicas(instance)
    threshold = instance.urgency_threshold
    budget = instance.max_route_minutes
    pool = _TruckPool(instance)
    unserved: set[int] = {r.id for r in rs}
    unseedable: set[int] = set()
    committed: dict[str, float] = {}
    routes: list[Route] = []

    def duration_ok(build: _RouteBuild) -> bool:
        if budget is None:
            return True
        used = committed.get(build.truck.id, 0.0)
        return used + build.fixed(rs) + build.recourse(rs, threshold) <= budget + 1e-9

    def try_place(build: _RouteBuild, rid: int, prepend: bool) -> bool:
        rep = rs.replica(rid)
        if not build.truck.can_visit(rep.origin):
            return False
        placement = _best_compartment(build, rep)
        if placement is None:
            return False
        comp, load = placement
        if prepend:
            build.seq.insert(0, rid)
        else:
            build.seq.append(rid)
        build.comp[rid] = comp
        build.load[rid] = load
        build.free.remove(comp)
        if duration_ok(build):
            return True
        # roll back
        build.seq.remove(rid)
        del build.comp[rid]
        del build.load[rid]
        build.free.append(comp)
        build.free.sort()
        return False

    while unserved - unseedable and pool.has_trucks():
        seed = _pick_seed(instance, rs, pool, unserved - unseedable, seed_log)
        if seed is None:
            break
        seed_id, template = seed
        build = _RouteBuild(template)
        if not try_place(build, seed_id, prepend=False):
            # even a depot-customer-depot round trip breaks the duration budget
            unseedable.add(seed_id)
            continue
        build.truck = pool.take(template)
        truck = build.truck
        unserved.remove(seed_id)
        last, last_prepend = seed_id, False
        discarded: set[int] = set()

        while build.free and unserved - discarded:
            placed = False
            for rid in rs.by_customer.get(rs.origin(last), ()):
                if rid in unserved and rid not in discarded and try_place(build, rid, prepend=last_prepend):
                    unserved.remove(rid)
                    last = rid
                    placed = True
                    break
            if placed:
                continue
            best = None
            for rid in sorted(unserved - discarded):
                rep = rs.replica(rid)
                if not truck.can_visit(rep.origin):
                    continue
                if _best_compartment(build, rep) is None:
                    continue
                interest = insertion_interest(
                    instance, rep, truck, build.free, pool.others(truck)
                )
                for prepend in (False, True):
                    end = build.seq[0] if prepend else build.seq[-1]
                    saving = insertion_saving(rs, end, rid, lam, interest, prepend=prepend)
                    key = (saving, -rid, not prepend)
                    if best is None or key > best[0]:
                        best = (key, rid, prepend)
            if best is None:
                break
            _, rid, prepend = best
            if try_place(build, rid, prepend):
                unserved.remove(rid)
                last, last_prepend = rid, prepend
            else:
                discarded.add(rid)  # stays available for later routes
        routes.append(build.freeze())
        if budget is not None:
            committed[truck.id] = committed.get(truck.id, 0.0) + build.fixed(rs) + build.recourse(
                rs, threshold
            )
        if multi_route and not pool.unbounded and budget is not None:
            if committed.get(truck.id, 0.0) < budget - 1e-9:
                pool.put_back(truck)

    return Solution(routes=tuple(routes), unserved=frozenset(unserved))


def _pick_seed(instance, rs, pool, candidates, seed_log=None):
    """Highest-priority replica that some remaining truck can reach."""
    ranked = []
    for rid in sorted(candidates):
        rep = rs.replica(rid)
        trucks = [t for t in pool.candidates() if t.can_visit(rep.origin)]
        if not trucks:
            continue
        ranked.append((-seed_priority(instance, rep, trucks), rid))
    if not ranked:
        return None
    ranked.sort()
    _, rid = ranked[0]
    if seed_log is not None:
        seed_log.append((rid, {r: -p for p, r in ranked}))
    rep = rs.replica(rid)
    best = None
    for order, truck in enumerate(pool.candidates()):
        if not truck.can_visit(rep.origin):
            continue
        for h, cap in enumerate(truck.compartments):
            if min(rep.target, cap) > truck.max_load + 1e-9:
                continue
            key = (_tail(rep.model, cap), order, h)
            if best is None or key < best[0]:
                best = (key, truck)
    if best is None:
        return None
    return rid, best[1]
