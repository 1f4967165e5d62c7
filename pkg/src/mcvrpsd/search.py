"""Iterated tabu search: exchange neighbourhood, tabu memory, destroy/repair.

The tabu phase moves up to ``max_exchange`` replicas each way between
pairs of selected routes, always stepping to the best feasible
neighbour; recently moved replicas are frozen for ``tenure`` iterations.
Perturbation removes a handful of replicas (random / proximity / worst
on-route cost / hybrid) and reinserts them by regret, which is also the
only door through which previously unserved replicas can re-enter. All
randomness flows from one seeded generator, so runs are reproducible.
"""

from __future__ import annotations

import itertools
import math
import random
import time
from dataclasses import dataclass
from functools import lru_cache

from .construct import _tail, construct
from .evaluate import (
    evaluate,
    fixed_of_sequence,
    group_terms_of_sequence,
    recourse_of_sequence,
)
from .model import Assignment, Instance, Replica, ReplicaSet, Route, Solution, Truck, expand_replicas

_EPS = 1e-9

#: perturbation operators, chosen uniformly at random each round
DESTROY_OPERATORS = ("random", "shaw", "worst", "hybrid")


@dataclass(frozen=True)
class SearchParams:
    """Knobs of the improvement phase.

    ``destroy_count=None`` defaults to max(3, 10% of the replica count).
    ``omega=None`` falls back to the instance's objective weight.
    """

    routes_per_iter: int = 3
    destroy_count: int | None = None
    max_exchange: int = 1
    max_tabu_iters: int = 5000
    perturbations: int = 20
    tenure: int = 3
    seed: int = 0
    omega: float | None = None
    time_limit: float | None = None
    lam: float = 1.0
    multi_route: bool = False

    def __post_init__(self):
        if self.routes_per_iter < 2:
            raise ValueError("routes_per_iter must be at least 2")
        if self.max_exchange < 1 or self.max_tabu_iters < 1 or self.tenure < 1:
            raise ValueError("max_exchange, max_tabu_iters and tenure must be positive")
        if self.perturbations < 0:
            raise ValueError("perturbations must be non-negative")


class _Ctx:
    __slots__ = (
        "instance",
        "rs",
        "omega",
        "threshold",
        "budget",
        "deadline",
        "copies",
        "urgent_keys",
    )

    def __init__(self, instance: Instance, rs: ReplicaSet, omega: float, deadline=None):
        self.instance = instance
        self.rs = rs
        self.omega = omega
        self.threshold = instance.urgency_threshold
        self.budget = instance.max_route_minutes
        self.deadline = deadline
        self.copies = 0
        self.urgent_keys = frozenset(
            r.key() for r in rs if r.urgency >= self.threshold
        )

    def out_of_time(self) -> bool:
        return self.deadline is not None and time.monotonic() > self.deadline


class _SRoute:
    __slots__ = ("truck", "seq", "comp", "load", "_cache")

    def __init__(self, truck: Truck, seq=None, comp=None, load=None):
        self.truck = truck
        self.seq: list[int] = seq if seq is not None else []
        self.comp: dict[int, int] = comp if comp is not None else {}
        self.load: dict[int, float] = load if load is not None else {}
        self._cache = None

    def clone(self) -> "_SRoute":
        r = _SRoute(self.truck, list(self.seq), dict(self.comp), dict(self.load))
        r._cache = self._cache
        return r

    def dirty(self):
        self._cache = None

    def metrics(self, ctx: _Ctx):
        if self._cache is None:
            fixed = fixed_of_sequence(ctx.rs, self.seq)
            rec = recourse_of_sequence(ctx.instance, ctx.rs, self.seq, self.load)
            self._cache = (fixed, rec, math.fsum(self.load.values()))
        return self._cache

    def objective(self, ctx: _Ctx) -> float:
        fixed, rec, load = self.metrics(ctx)
        return ctx.omega * (fixed + rec) - (1.0 - ctx.omega) * load

    def duration(self, ctx: _Ctx) -> float:
        fixed, rec, _ = self.metrics(ctx)
        return fixed + rec

    def total_load(self) -> float:
        return math.fsum(self.load.values())

    def free_comps(self) -> list[int]:
        used = set(self.comp.values())
        return [h for h in range(len(self.truck.compartments)) if h not in used]

    def remove(self, rid: int):
        self.seq.remove(rid)
        del self.comp[rid]
        del self.load[rid]
        self.dirty()

    def freeze(self) -> Route:
        assignments = tuple(Assignment(rid, self.comp[rid], self.load[rid]) for rid in self.seq)
        return Route(self.truck, tuple(self.seq), assignments)


class _State:
    __slots__ = ("routes", "unserved")

    def __init__(self, routes: list[_SRoute], unserved: set[int]):
        self.routes = routes
        self.unserved = unserved

    @staticmethod
    def from_solution(solution: Solution) -> "_State":
        routes = []
        for route in solution.routes:
            comp = {a.replica: a.compartment for a in route.assignments}
            load = {a.replica: a.load for a in route.assignments}
            routes.append(_SRoute(route.truck, list(route.visits), comp, load))
        return _State(routes, set(solution.unserved))

    def to_solution(self) -> Solution:
        return Solution(
            routes=tuple(r.freeze() for r in self.routes), unserved=frozenset(self.unserved)
        )

    def clone(self) -> "_State":
        return _State([r.clone() for r in self.routes], set(self.unserved))

    def objective(self, ctx: _Ctx) -> float:
        return math.fsum(r.objective(ctx) for r in self.routes)

    def urgent_gap(self, ctx: _Ctx) -> int:
        """Urgent (customer, feed) pairs with no replica served at all.

        Urgent orders are mandatory in the underlying model, so solutions
        are ranked first by this gap and only then by objective.
        """
        served = {ctx.rs.replica(rid).key() for r in self.routes for rid in r.seq}
        return len(ctx.urgent_keys - served)

    def ranked(self, ctx: _Ctx) -> tuple[int, float]:
        return (self.urgent_gap(ctx), self.objective(ctx))

    def truck_minutes(self, ctx: _Ctx) -> dict[str, float]:
        minutes: dict[str, float] = {}
        for r in self.routes:
            minutes[r.truck.id] = minutes.get(r.truck.id, 0.0) + r.duration(ctx)
        return minutes


@lru_cache(maxsize=4096)
def _uniform_caps(truck: Truck) -> bool:
    caps = truck.compartments
    return all(c == caps[0] for c in caps)


@lru_cache(maxsize=4096)
def _cap_multiset(truck: Truck) -> tuple[tuple[float, tuple[int, ...]], ...]:
    """Distinct capacities with their compartment indices, largest first."""
    groups: dict[float, list[int]] = {}
    for h, cap in enumerate(truck.compartments):
        groups.setdefault(cap, []).append(h)
    return tuple(sorted(((cap, tuple(idx)) for cap, idx in groups.items()), reverse=True))


def _best_free_comp(route: _SRoute, rep: Replica) -> tuple[int, float] | None:
    """Free compartment minimising exceedance, load capped by capacity and
    the truck's legal-load budget."""
    budget = route.truck.max_load - route.total_load()
    free = route.free_comps()
    if not free:
        return None
    if _uniform_caps(route.truck):
        load = min(rep.target, route.truck.compartments[free[0]])
        return None if load > budget + _EPS else (free[0], load)
    best = None
    for h in free:
        cap = route.truck.compartments[h]
        load = min(rep.target, cap)
        if load > budget + _EPS:
            continue
        key = (_tail(rep.model, cap), h)
        if best is None or key < best[0]:
            best = (key, h, load)
    if best is None:
        return None
    return best[1], best[2]


def _best_position(rs: ReplicaSet, seq: list[int], rid: int) -> tuple[int, float]:
    """(position, fixed-distance delta) of the cheapest insertion point."""
    if not seq:
        return 0, rs.from_depot(rid) + rs.to_depot(rid)
    best_pos, best_delta = 0, math.inf
    for pos in range(len(seq) + 1):
        before = rs.from_depot(rid) if pos == 0 else rs.distance(seq[pos - 1], rid)
        after = rs.to_depot(rid) if pos == len(seq) else rs.distance(rid, seq[pos])
        gap = (
            rs.from_depot(seq[0])
            if pos == 0
            else rs.to_depot(seq[-1])
            if pos == len(seq)
            else rs.distance(seq[pos - 1], seq[pos])
        )
        delta = before + after - gap
        if delta < best_delta - _EPS:
            best_pos, best_delta = pos, delta
    return best_pos, best_delta


def _assignment_objective(ctx: _Ctx, seq: list[int], load: dict[int, float]) -> float:
    rec = recourse_of_sequence(ctx.instance, ctx.rs, seq, load)
    return ctx.omega * rec - (1.0 - ctx.omega) * math.fsum(load.values())


@lru_cache(maxsize=4096)
def _caps_desc(truck: Truck) -> tuple[int, ...]:
    return tuple(
        sorted(range(len(truck.compartments)), key=lambda h: (-truck.compartments[h], h))
    )


def _greedy_assignment(ctx: _Ctx, truck: Truck, reps: list[Replica]):
    """Urgent orders first, largest targets to largest free compartments."""
    order = sorted(
        reps, key=lambda r: (0 if r.urgency >= ctx.threshold else 1, -r.target, r.id)
    )
    caps = _caps_desc(truck)
    if len(order) > len(caps):
        return None
    assign = {}
    total = 0.0
    for rep, h in zip(order, caps):
        load = min(rep.target, truck.compartments[h])
        total += load
        assign[rep.id] = (h, load)
    if total > truck.max_load + _EPS:
        return None
    return assign

_EXACT_ASSIGN_LIMIT = 8  # exhaustive compartment matching kept to small routes


def _exact_assignment(ctx: _Ctx, truck: Truck, reps: list[Replica]):
    """Best feasible replica-to-capacity matching by enumeration.

    Works on the multiset of distinct capacities, so fleets with many
    equal compartments stay cheap; identical-capacity slots are
    interchangeable and filled lowest index first.
    """
    if len(reps) > len(truck.compartments) or len(reps) > _EXACT_ASSIGN_LIMIT:
        return None
    groups = _cap_multiset(truck)
    if len(groups) ** len(reps) > 100_000:
        return None
    seq = [r.id for r in reps]
    caps = [cap for cap, _ in groups]
    counts = [len(idx) for _, idx in groups]
    targets = [r.target for r in reps]
    best: tuple[float, tuple[int, ...]] | None = None

    def rec(i: int, total: float, chosen: list[int]):
        nonlocal best
        if total > truck.max_load + _EPS:
            return
        if i == len(seq):
            load = {rid: min(t, caps[g]) for rid, t, g in zip(seq, targets, chosen)}
            score = _assignment_objective(ctx, seq, load)
            if best is None or score < best[0] - _EPS:
                best = (score, tuple(chosen))
            return
        for g in range(len(groups)):
            if counts[g] == 0:
                continue
            counts[g] -= 1
            chosen.append(g)
            rec(i + 1, total + min(targets[i], caps[g]), chosen)
            chosen.pop()
            counts[g] += 1

    rec(0, 0.0, [])
    if best is None:
        return None
    _, chosen = best
    taken: dict[int, int] = {}
    out = {}
    for rid, t, g in zip(seq, targets, chosen):
        slot = groups[g][1][taken.get(g, 0)]
        taken[g] = taken.get(g, 0) + 1
        out[rid] = (slot, min(t, caps[g]))
    return out


def reoptimize_compartments(
    instance: Instance, replica_set: ReplicaSet, route: Route, omega: float | None = None
) -> Route:
    """Reassign a route's compartments; the result is never worse."""
    ctx = _Ctx(instance, replica_set, instance.omega if omega is None else omega)
    comp = {a.replica: a.compartment for a in route.assignments}
    load = {a.replica: a.load for a in route.assignments}
    sroute = _SRoute(route.truck, list(route.visits), comp, load)
    _reoptimize(ctx, sroute)
    return sroute.freeze()


def _reoptimize(ctx: _Ctx, route: _SRoute):
    """Swap to the better of the greedy or exact compartment matching."""
    if not route.seq or _uniform_caps(route.truck):
        return  # interchangeable compartments leave nothing to optimise
    reps = [ctx.rs.replica(rid) for rid in route.seq]
    current = _assignment_objective(ctx, route.seq, route.load)
    candidates = []
    greedy = _greedy_assignment(ctx, route.truck, reps)
    if greedy is not None:
        candidates.append(greedy)
    load_limit_binds = route.truck.max_load < sum(route.truck.compartments) - _EPS
    if greedy is None or load_limit_binds:
        exact = _exact_assignment(ctx, route.truck, reps)
        if exact is not None:
            candidates.append(exact)
    best = None
    for assign in candidates:
        load = {rid: mass for rid, (_h, mass) in assign.items()}
        score = _assignment_objective(ctx, route.seq, load)
        if score < current - 1e-12 and (best is None or score < best[0]):
            best = (score, assign)
    if best is not None:
        _, assign = best
        route.comp = {rid: h for rid, (h, _m) in assign.items()}
        route.load = {rid: m for rid, (_h, m) in assign.items()}
        route.dirty()


def _try_insert(ctx: _Ctx, route: _SRoute, rid: int, pos: int | None = None) -> bool:
    """Place a replica on the route at its best position; False if it cannot fit.

    Falls back to a full compartment rematch when the simple free-slot
    rule cannot respect the legal-load limit.
    """
    rep = ctx.rs.replica(rid)
    if not route.truck.can_visit(rep.origin):
        return False
    placement = _best_free_comp(route, rep)
    if placement is None:
        if not route.free_comps() or _uniform_caps(route.truck):
            return False
        reps = [ctx.rs.replica(x) for x in route.seq] + [rep]
        assign = _exact_assignment(ctx, route.truck, reps)
        if assign is None:
            return False
        route.comp = {x: h for x, (h, _m) in assign.items()}
        route.load = {x: m for x, (_h, m) in assign.items()}
        comp, load = route.comp[rid], route.load[rid]
        del route.comp[rid], route.load[rid]
        placement = (comp, load)
    comp, load = placement
    if pos is None:
        pos, _ = _best_position(ctx.rs, route.seq, rid)
    route.seq.insert(pos, rid)
    route.comp[rid] = comp
    route.load[rid] = load
    route.dirty()
    return True


def _rearrange(ctx: _Ctx, route: _SRoute, rng: random.Random):
    """A random number of best-position relocations inside the route."""
    n = len(route.seq)
    if n < 3:
        return
    for _ in range(rng.randint(0, n)):
        idx = rng.randrange(n)
        rid = route.seq.pop(idx)
        pos, _ = _best_position(ctx.rs, route.seq, rid)
        route.seq.insert(pos, rid)
    route.dirty()


def _two_opt_seq(rs: ReplicaSet, seq: list[int]) -> list[int]:
    """First-improvement segment reversals until no reversal shortens the tour."""
    n = len(seq)
    if n < 3:
        return seq
    best = fixed_of_sequence(rs, seq)
    improved = True
    while improved:
        improved = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                cand = seq[:i] + seq[i : j + 1][::-1] + seq[j + 1 :]
                dist = fixed_of_sequence(rs, cand)
                if dist < best - _EPS:
                    seq, best = cand, dist
                    improved = True
                    break
            if improved:
                break
    return seq


def two_opt(replica_set: ReplicaSet, route: Route) -> Route:
    """Polish a route's visit order; compartment loads stay untouched."""
    seq = _two_opt_seq(replica_set, list(route.visits))
    return Route(route.truck, tuple(seq), route.assignments)


def _two_opt_state(ctx: _Ctx, state: _State):
    for route in state.routes:
        new_seq = _two_opt_seq(ctx.rs, list(route.seq))
        if new_seq != route.seq:
            route.seq = new_seq
            route.dirty()


def select_routes(solution_or_state, sigma: int, mode: str, rng: random.Random, rs: ReplicaSet | None = None):
    """Pick the routes examined this iteration.

    Mode "A": sigma routes uniformly at random. Mode "B": one random
    route plus the routes holding the nearest customer outside it, for
    each of its members.
    """
    if isinstance(solution_or_state, _State):
        routes = solution_or_state.routes
        seqs = [r.seq for r in routes]
    else:
        routes = solution_or_state.routes
        seqs = [list(r.visits) for r in routes]
    n = len(routes)
    if n < 2:
        return list(range(n))
    sigma = min(sigma, n)
    if mode == "A":
        return sorted(rng.sample(range(n), sigma))
    if rs is None:
        raise ValueError("mode B needs the replica set for distances")
    start = rng.randrange(n)
    owner = {}
    for j, seq in enumerate(seqs):
        for rid in seq:
            owner[rid] = j
    picked = [start]
    for rid in seqs[start]:
        best = None
        for other, seq in enumerate(seqs):
            if other == start:
                continue
            for rid2 in seq:
                key = (rs.distance(rid, rid2), rid2)
                if best is None or key < best[0]:
                    best = (key, other)
        if best is not None and best[1] not in picked:
            picked.append(best[1])
        if len(picked) == sigma:
            break
    idx = 0
    while len(picked) < sigma:  # top up when the nearest routes all coincide
        if idx not in picked:
            picked.append(idx)
        idx += 1
    return sorted(picked)


def _subsets(seq: list[int], kappa: int):
    out = [()]
    for size in range(1, min(kappa, len(seq)) + 1):
        out.extend(itertools.combinations(sorted(seq), size))
    return out


def _route_duration_ok(ctx: _Ctx, state: _State, replaced: dict[int, _SRoute | None]) -> bool:
    """Per-truck duration check with some routes swapped out (None = dropped)."""
    if ctx.budget is None:
        return True
    minutes: dict[str, float] = {}
    for idx, route in enumerate(state.routes):
        target = replaced.get(idx, route)
        if target is None:
            continue
        minutes[target.truck.id] = minutes.get(target.truck.id, 0.0) + target.duration(ctx)
    return all(m <= ctx.budget + 1e-6 for m in minutes.values())


def _exchange_candidates(ctx, state, ia, ib, kappa, tabu, iteration, tenure, rng):
    """All feasible moves of up to kappa replicas each way between two routes.

    Yields (delta objective, order index, new_a, new_b, moved) tuples;
    the order index makes the argmin reproducible.
    """
    A, B = state.routes[ia], state.routes[ib]
    base = A.objective(ctx) + B.objective(ctx)
    counter = 0
    for sa in _subsets(A.seq, kappa):
        for sb in _subsets(B.seq, kappa):
            if not sa and not sb:
                continue
            counter += 1
            moved = sa + sb
            if any(iteration - tabu.get(rid, -10**9) <= tenure for rid in moved):
                continue
            new_a, new_b = A.clone(), B.clone()
            for rid in sa:
                new_a.remove(rid)
            for rid in sb:
                new_b.remove(rid)
            ok = True
            for rid in sorted(sa):
                if not _try_insert(ctx, new_b, rid):
                    ok = False
                    break
            if ok:
                for rid in sorted(sb):
                    if not _try_insert(ctx, new_a, rid):
                        ok = False
                        break
            if not ok:
                continue
            _rearrange(ctx, new_a, rng)
            _rearrange(ctx, new_b, rng)
            _reoptimize(ctx, new_a)
            _reoptimize(ctx, new_b)
            if not _route_duration_ok(
                ctx, state, {ia: new_a if new_a.seq else None, ib: new_b if new_b.seq else None}
            ):
                continue
            delta = new_a.objective(ctx) + new_b.objective(ctx) - base
            yield delta, counter, new_a, new_b, frozenset(moved)


def kappa_exchanges(
    instance: Instance,
    replica_set: ReplicaSet,
    solution: Solution,
    route_a: int,
    route_b: int,
    kappa: int = 1,
    rng: random.Random | None = None,
    omega: float | None = None,
):
    """Feasible neighbour solutions from exchanging replicas of two routes."""
    if route_a == route_b:
        raise ValueError("exchange needs two distinct routes")
    ctx = _Ctx(instance, replica_set, instance.omega if omega is None else omega)
    rng = rng if rng is not None else random.Random(0)
    state = _State.from_solution(solution)
    out = []
    for _delta, _idx, new_a, new_b, moved in _exchange_candidates(
        ctx, state, route_a, route_b, kappa, {}, 0, 0, rng
    ):
        neighbour = state.clone()
        neighbour.routes[route_a] = new_a
        neighbour.routes[route_b] = new_b
        neighbour.routes = [r for r in neighbour.routes if r.seq]
        out.append((neighbour.to_solution(), frozenset(moved)))
    return out


def _tabu_search(ctx: _Ctx, state: _State, params: SearchParams, rng: random.Random, move_log=None) -> _State:
    """One tabu run: best-neighbour steps with a three-strike stopping rule.

    Exchanges never change which replicas are served, so within a run
    solutions compare by the weighted objective alone.
    """
    best = state.clone()
    best_obj = best.objective(ctx)
    cur = state.clone()
    tabu: dict[int, int] = {}
    strikes = 0
    for iteration in range(1, params.max_tabu_iters + 1):
        if ctx.out_of_time():
            break
        if len(cur.routes) < 2:
            break
        mode = "A" if rng.random() < 0.5 else "B"
        chosen = select_routes(cur, params.routes_per_iter, mode, rng, rs=ctx.rs)
        best_move = None
        for ia, ib in itertools.combinations(chosen, 2):
            for delta, idx, new_a, new_b, moved in _exchange_candidates(
                ctx, cur, ia, ib, params.max_exchange, tabu, iteration, params.tenure, rng
            ):
                key = (delta, ia, ib, idx)
                if best_move is None or key < best_move[0]:
                    best_move = (key, ia, ib, new_a, new_b, moved)
        if best_move is None:
            cur = best.clone()
            continue
        _, ia, ib, new_a, new_b, moved = best_move
        cur.routes[ia] = new_a
        cur.routes[ib] = new_b
        cur.routes = [r for r in cur.routes if r.seq]
        for rid in moved:
            tabu[rid] = iteration
        if move_log is not None:
            move_log.append((iteration, moved))
        cur_obj = cur.objective(ctx)
        if cur_obj < best_obj - _EPS:
            best = cur.clone()
            best_obj = cur_obj
        else:
            strikes += 1
            if strikes >= 3:
                break
    return best


def tabu_search(
    instance: Instance,
    replica_set: ReplicaSet,
    solution: Solution,
    params: SearchParams | None = None,
    rng: random.Random | None = None,
    move_log=None,
) -> Solution:
    """Improve a solution with one tabu run; returns the best visited."""
    params = params or SearchParams()
    omega = instance.omega if params.omega is None else params.omega
    ctx = _Ctx(instance, replica_set, omega)
    rng = rng if rng is not None else random.Random(params.seed)
    state = _tabu_search(ctx, _State.from_solution(solution), params, rng, move_log)
    return state.to_solution()


def _group_probability(ctx: _Ctx, route: _SRoute, rid: int) -> float:
    key = ctx.rs.replica(rid).key()
    for group_key, prob, _trip in group_terms_of_sequence(
        ctx.instance, ctx.rs, route.seq, route.load
    ):
        if group_key == key:
            return prob
    return 0.0


def _destroy(ctx: _Ctx, state: _State, count: int, operator: str, rng: random.Random) -> list[int]:
    """Remove up to ``count`` served replicas; empty routes disappear."""
    served = sorted(rid for route in state.routes for rid in route.seq)
    if not served or count <= 0:
        return []
    count = min(count, len(served))

    def worst_costs():
        costs = {}
        for route in state.routes:
            for pos, rid in enumerate(route.seq):
                rs = ctx.rs
                prev_d = rs.from_depot(rid) if pos == 0 else rs.distance(route.seq[pos - 1], rid)
                next_d = (
                    rs.to_depot(rid)
                    if pos == len(route.seq) - 1
                    else rs.distance(rid, route.seq[pos + 1])
                )
                trip = 2.0 * ctx.instance.distance[0][rs.origin(rid)]
                costs[rid] = prev_d + next_d + trip * _group_probability(ctx, route, rid)
        return costs

    def nearest_to(seed_rid: int) -> list[int]:
        ranked = sorted(
            (ctx.rs.distance(seed_rid, rid), rid) for rid in served if rid != seed_rid
        )
        return [seed_rid] + [rid for _, rid in ranked]

    if operator == "random":
        removed = rng.sample(served, count)
    elif operator == "shaw":
        removed = nearest_to(rng.choice(served))[:count]
    elif operator == "worst":
        costs = worst_costs()
        removed = [rid for rid in sorted(served, key=lambda r: (-costs[r], r))][:count]
    elif operator == "hybrid":
        costs = worst_costs()
        seed_rid = max(served, key=lambda r: (costs[r], -r))
        removed = nearest_to(seed_rid)[:count]
    else:
        raise ValueError(f"unknown destroy operator {operator!r}")

    removed_set = set(removed)
    for route in state.routes:
        if any(rid in removed_set for rid in route.seq):
            for rid in [r for r in route.seq if r in removed_set]:
                route.remove(rid)
    state.routes = [r for r in state.routes if r.seq]
    return sorted(removed_set)


def destroy(
    instance: Instance,
    replica_set: ReplicaSet,
    solution: Solution,
    count: int,
    operator: str,
    rng: random.Random,
    omega: float | None = None,
):
    """Public destroy step: returns (partial solution, removed replica ids)."""
    ctx = _Ctx(instance, replica_set, instance.omega if omega is None else omega)
    state = _State.from_solution(solution)
    removed = _destroy(ctx, state, count, operator, rng)
    return state.to_solution(), removed


def _available_trucks(ctx: _Ctx, state: _State) -> list[Truck]:
    if ctx.instance.unbounded_fleet:
        return list(ctx.instance.fleet)
    used = {r.truck.id for r in state.routes}
    return [t for t in ctx.instance.fleet if t.id not in used]


def _new_route_option(ctx: _Ctx, state: _State, rep: Replica):
    """Cost of opening a depot-customer-depot route for the replica."""
    best = None
    for order, truck in enumerate(_available_trucks(ctx, state)):
        if not truck.can_visit(rep.origin):
            continue
        for h, cap in enumerate(truck.compartments):
            load = min(rep.target, cap)
            if load > truck.max_load + _EPS:
                continue
            key = (_tail(rep.model, cap), order, h)
            if best is None or key < best[0]:
                best = (key, truck, h, load)
    if best is None:
        return None
    _, truck, h, load = best
    trial = _SRoute(truck, [rep.id], {rep.id: h}, {rep.id: load})
    if ctx.budget is not None and trial.duration(ctx) > ctx.budget + 1e-6:
        return None
    cost = ctx.omega * trial.duration(ctx) - (1.0 - ctx.omega) * load
    return cost, truck, h, load


def _insertion_cost(ctx: _Ctx, state: _State, route: _SRoute, rid: int):
    """Objective delta of inserting rid into the route at its best position."""
    trial = route.clone()
    before = trial.objective(ctx)
    if not _try_insert(ctx, trial, rid):
        return None
    _reoptimize(ctx, trial)
    if ctx.budget is not None:
        others = 0.0
        for r in state.routes:
            if r is not route and r.truck.id == trial.truck.id:
                others += r.duration(ctx)
        if others + trial.duration(ctx) > ctx.budget + 1e-6:
            return None
    return trial.objective(ctx) - before, trial


def _best_option(ctx: _Ctx, state: _State, rid: int):
    """(regret-ranked key, best option) over routes plus a fresh route.

    A replica with a single feasible route counts as infinite regret.
    """
    rep = ctx.rs.replica(rid)
    options = []
    for idx, route in enumerate(state.routes):
        res = _insertion_cost(ctx, state, route, rid)
        if res is not None:
            options.append((res[0], idx, res[1]))
    new_opt = _new_route_option(ctx, state, rep)
    if new_opt is not None:
        options.append((new_opt[0], -1, new_opt))
    if not options:
        return None
    options.sort(key=lambda o: (o[0], o[1]))
    regret = math.inf if len(options) == 1 else options[1][0] - options[0][0]
    return (-regret, options[0][0], rid), options[0]


def _apply_insertion(ctx: _Ctx, state: _State, rid: int, option):
    cost, idx, payload = option
    if idx == -1:
        _cost, truck, h, load = payload
        if ctx.instance.unbounded_fleet:
            ctx.copies += 1
            truck = truck.clone(ctx.copies)
        state.routes.append(_SRoute(truck, [rid], {rid: h}, {rid: load}))
    else:
        state.routes[idx] = payload


def _insert_by_regret(ctx: _Ctx, state: _State, pending: list[int], improving_only: bool):
    """Regret loop; returns the replicas that were not placed."""
    pending = list(pending)
    while pending:
        best_pick = None
        for rid in pending:
            res = _best_option(ctx, state, rid)
            if res is None:
                continue
            key, option = res
            if improving_only and option[0] >= -1e-12:
                continue
            if best_pick is None or key < best_pick[0]:
                best_pick = (key, rid, option)
        if best_pick is None:
            return pending
        _, rid, option = best_pick
        _apply_insertion(ctx, state, rid, option)
        pending.remove(rid)
    return []


def _repair(ctx: _Ctx, state: _State, removed: list[int], rng: random.Random):
    """Regret reinsertion of the removed and any still-unserved replicas.

    Urgent orders are mandatory, so replicas of customers with no served
    share anywhere go first regardless of cost. The rest is forced back
    on unbounded fleets (full service is the norm there); on finite
    fleets an insertion must pay for itself, which lets the search shed
    unprofitable optional customers. Whatever cannot be placed is left
    unserved.
    """
    pool = sorted(set(removed) | state.unserved)
    state.unserved = set()
    leftovers: list[int] = []
    while True:
        served_keys = {ctx.rs.replica(rid).key() for r in state.routes for rid in r.seq}
        uncovered = [
            rid
            for rid in pool
            if ctx.rs.replica(rid).urgency >= ctx.threshold
            and ctx.rs.replica(rid).key() not in served_keys
        ]
        if not uncovered:
            break
        missed = _insert_by_regret(ctx, state, uncovered[:1], improving_only=False)
        pool.remove(uncovered[0])
        leftovers.extend(missed)
    forced = ctx.instance.unbounded_fleet
    urgent = [rid for rid in pool if ctx.rs.replica(rid).urgency >= ctx.threshold]
    rest = [rid for rid in pool if ctx.rs.replica(rid).urgency < ctx.threshold]
    for klass in (urgent, rest):
        leftovers.extend(_insert_by_regret(ctx, state, klass, improving_only=not forced))
    state.unserved.update(leftovers)
    return state


def repair(
    instance: Instance,
    replica_set: ReplicaSet,
    partial: Solution,
    removed,
    rng: random.Random,
    omega: float | None = None,
) -> Solution:
    """Public repair step over a destroyed solution."""
    ctx = _Ctx(instance, replica_set, instance.omega if omega is None else omega)
    state = _State.from_solution(partial)
    _repair(ctx, state, list(removed), rng)
    return state.to_solution()


@dataclass(frozen=True)
class ItsResult:
    solution: Solution
    evaluation: object
    trace: tuple[tuple[str, float], ...]


def iterated_tabu_search(
    instance: Instance,
    params: SearchParams | None = None,
    replica_set: ReplicaSet | None = None,
    move_log=None,
) -> ItsResult:
    """Full two-stage run: construction, then alternating tabu and perturbation.

    Deterministic for a fixed (instance, params) pair; the seed drives
    every random choice.
    """
    params = params or SearchParams()
    rs = replica_set if replica_set is not None else expand_replicas(instance)
    omega = instance.omega if params.omega is None else params.omega
    deadline = None if params.time_limit is None else time.monotonic() + params.time_limit
    ctx = _Ctx(instance, rs, omega, deadline)
    rng = random.Random(params.seed)

    destroy_count = params.destroy_count
    if destroy_count is None:
        destroy_count = max(3, math.ceil(0.1 * len(rs)))

    start = construct(instance, rs, lam=params.lam, multi_route=params.multi_route)
    state = _State.from_solution(start)
    ctx.copies = sum(1 for _ in state.routes)
    trace = [("construct", state.objective(ctx))]
    best = state.clone()
    best_rank = best.ranked(ctx)

    def consider(label: str):
        nonlocal best, best_rank
        rank = state.ranked(ctx)
        trace.append((label, rank[1]))
        if rank[0] < best_rank[0] or (rank[0] == best_rank[0] and rank[1] < best_rank[1] - _EPS):
            best = state.clone()
            best_rank = rank

    for round_no in range(params.perturbations + 1):
        state = _tabu_search(ctx, state, params, rng, move_log)
        _two_opt_state(ctx, state)
        consider(f"tabu[{round_no}]")
        if round_no == params.perturbations or ctx.out_of_time():
            break
        operator = DESTROY_OPERATORS[rng.randrange(len(DESTROY_OPERATORS))]
        removed = _destroy(ctx, state, destroy_count, operator, rng)
        _repair(ctx, state, removed, rng)
        _two_opt_state(ctx, state)
        consider(f"perturb[{round_no}]({operator})")

    solution = best.to_solution()
    return ItsResult(
        solution=solution,
        evaluation=evaluate(instance, rs, solution, omega),
        trace=tuple(trace),
    )
