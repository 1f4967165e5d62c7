"""Instance parsing, benchmark generation, and plan serialization.

Two instance formats are supported: the classic four-number-header
benchmark text format (customer count, vehicle capacity, max route
time, drop time, then coordinates and demands) and a JSON format
carrying explicit distance matrices, demand models, urgency
probabilities, and fleet descriptions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

from .demand import DemandModel, Deterministic, Discrete, Normal
from .evaluate import Evaluation, evaluate, occupancy_rate
from .model import (
    DEFAULT_ROUTE_MINUTES,
    Assignment,
    Customer,
    Instance,
    ReplicaSet,
    Route,
    Solution,
    Truck,
)


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class CmtInstance:
    name: str
    capacity: float
    max_route_time: float | None
    drop_time: float  # parsed but unused: service times are out of scope
    depot: tuple[float, float]
    customers: tuple[tuple[float, float, float], ...]  # (x, y, demand)

    @property
    def n(self) -> int:
        return len(self.customers)


def parse_cmt(text: str, name: str = "cmt") -> CmtInstance:
    """Parse the classic benchmark layout; raises ParseError with line numbers."""
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if stripped:
            rows.append((lineno, stripped.split()))
    if not rows:
        raise ParseError("empty benchmark file")
    lineno, header = rows[0]
    if len(header) < 2:
        raise ParseError(f"line {lineno}: header needs customer count and capacity")
    try:
        n = int(header[0])
        capacity = float(header[1])
        max_time = float(header[2]) if len(header) > 2 else 0.0
        drop = float(header[3]) if len(header) > 3 else 0.0
    except ValueError as exc:
        raise ParseError(f"line {lineno}: bad header: {exc}") from None
    if n <= 0 or capacity <= 0:
        raise ParseError(f"line {lineno}: customer count and capacity must be positive")
    if len(rows) < 2 + n:
        raise ParseError(f"expected {n} customer rows, found {len(rows) - 2}")
    lineno, depot_row = rows[1]
    try:
        depot = (float(depot_row[0]), float(depot_row[1]))
    except (ValueError, IndexError):
        raise ParseError(f"line {lineno}: bad depot coordinates") from None
    customers = []
    for lineno, row in rows[2 : 2 + n]:
        try:
            customers.append((float(row[0]), float(row[1]), float(row[2])))
        except (ValueError, IndexError):
            raise ParseError(f"line {lineno}: expected 'x y demand'") from None
    return CmtInstance(
        name=name,
        capacity=capacity,
        max_route_time=max_time if max_time > 0 else None,
        drop_time=drop,
        depot=depot,
        customers=tuple(customers),
    )


def load_cmt(path, name=None) -> CmtInstance:
    with open(path) as fh:
        return parse_cmt(fh.read(), name=name or str(path))


def euclidean_matrix(cmt: CmtInstance) -> tuple[tuple[float, ...], ...]:
    """Full-precision Euclidean distances, depot first."""
    points = [cmt.depot] + [(x, y) for x, y, _ in cmt.customers]
    return tuple(
        tuple(math.hypot(ax - bx, ay - by) for bx, by in points) for ax, ay in points
    )


# Benchmark fleet shapes, keyed by base problem; the first tuple is the
# five-compartment truck, the second the six-compartment one.
COMPARTMENT_SHAPES: dict[str, tuple[tuple[float, ...], tuple[float, ...]]] = {
    "vrpnc1": ((45, 35, 30, 30, 20), (40, 35, 30, 25, 20, 10)),
    "vrpnc2": ((40, 30, 30, 20, 20), (35, 30, 25, 20, 15, 15)),
    "vrpnc3": ((50, 45, 40, 35, 30), (45, 40, 35, 30, 30, 20)),
    "vrpnc4": ((50, 45, 40, 35, 30), (45, 40, 35, 30, 30, 20)),
    "vrpnc5": ((50, 45, 40, 35, 30), (45, 40, 35, 30, 30, 20)),
    "vrpnc11": ((50, 45, 40, 35, 30), (45, 40, 35, 30, 30, 20)),
    "vrpnc12": ((50, 45, 40, 35, 30), (45, 40, 35, 30, 30, 20)),
}

# Customers the six-compartment truck cannot reach in restricted-access runs.
RESTRICTED_CUSTOMERS: dict[str, tuple[int, ...]] = {
    "vrpnc1": (4, 39, 1, 34, 23, 43, 14, 18, 33, 21),
    "vrpnc2": (68, 39, 1, 34, 43, 14, 59, 51, 21, 54, 7, 9, 15, 67, 37),
    "vrpnc3": (68, 39, 1, 34, 87, 43, 14, 82, 59, 51, 85, 21, 54, 74, 7, 73, 79, 37, 83, 97),
    "vrpnc4": (
        68, 129, 43, 14, 51, 85, 21, 106, 74, 7, 73, 79, 37, 105, 110,
        34, 143, 126, 89, 33, 84, 70, 142, 42, 38, 11, 20, 28, 124, 44,
    ),
    "vrpnc5": (
        68, 87, 1, 67, 129, 162, 43, 14, 187, 51, 85, 21, 106, 182, 74,
        7, 73, 79, 37, 105, 110, 165, 34, 189, 126, 89, 172, 33, 84, 163,
        70, 193, 42, 166, 11, 148, 156, 20, 44, 121,
    ),
    "vrpnc11": (
        68, 39, 1, 34, 87, 43, 14, 82, 59, 51, 97, 85,
        21, 106, 54, 74, 7, 73, 79, 109, 37, 89, 100, 117,
    ),
    "vrpnc12": (68, 39, 1, 34, 87, 43, 14, 82, 59, 51, 85, 21, 54, 74, 7, 73, 79, 37, 83, 97),
}

BASE_SIZES = {
    "vrpnc1": 50,
    "vrpnc2": 75,
    "vrpnc3": 100,
    "vrpnc4": 150,
    "vrpnc5": 199,
    "vrpnc11": 120,
    "vrpnc12": 100,
}


@dataclass(frozen=True)
class BenchmarkSpec:
    """One row of the 35-instance benchmark table."""

    set_id: int
    base: str
    six_compartments: bool  # the "b" variants; ignored for set 3 (both fleets)

    def __post_init__(self):
        if self.set_id not in (1, 2, 3):
            raise ValueError("set_id must be 1, 2, or 3")
        if self.base not in COMPARTMENT_SHAPES:
            raise ValueError(f"unknown base problem {self.base!r}")
        if self.set_id == 3 and self.six_compartments:
            raise ValueError("set 3 always uses both truck types")

    @property
    def name(self) -> str:
        suffix = "b" if self.six_compartments else ""
        return f"set{self.set_id}-{self.base}{suffix}"

    @property
    def restricted(self) -> tuple[int, ...]:
        return RESTRICTED_CUSTOMERS[self.base] if self.set_id == 3 else ()


def all_benchmark_specs() -> tuple[BenchmarkSpec, ...]:
    """The 35 generated problems: 14 + 14 + 7."""
    bases = list(COMPARTMENT_SHAPES)
    specs = []
    for set_id in (1, 2):
        for base in bases:
            specs.append(BenchmarkSpec(set_id, base, False))
            specs.append(BenchmarkSpec(set_id, base, True))
    for base in bases:
        specs.append(BenchmarkSpec(3, base, False))
    return tuple(specs)


def generate_set(cmt: CmtInstance, spec: BenchmarkSpec, urgency_prob: float = 0.95) -> Instance:
    """Turn a deterministic benchmark base into a stochastic test problem.

    Demands become Normal(d, 0.3 d). Set 1 marks every customer urgent;
    sets 2 and 3 mark the first half. Set 3 additionally bars the
    six-compartment truck type from the listed customers. Fleets are
    unbounded; a truck's legal load is its compartment sum.
    """
    if BASE_SIZES[spec.base] != cmt.n:
        raise ParseError(
            f"{spec.base} expects {BASE_SIZES[spec.base]} customers, file has {cmt.n}"
        )
    matrix = euclidean_matrix(cmt)
    urgent_cutoff = cmt.n if spec.set_id == 1 else math.ceil(cmt.n / 2)
    customers = []
    for idx, (_x, _y, d) in enumerate(cmt.customers, start=1):
        urgency = urgency_prob if idx <= urgent_cutoff else 0.0
        customers.append(
            Customer(idx, {0: Normal(float(d), 0.3 * float(d))}, {0: urgency})
        )
    five, six = COMPARTMENT_SHAPES[spec.base]
    if spec.set_id == 3:
        trucks = (
            Truck("A", tuple(map(float, five)), float(sum(five))),
            Truck("B", tuple(map(float, six)), float(sum(six)), frozenset(spec.restricted)),
        )
    else:
        comps = six if spec.six_compartments else five
        trucks = (Truck("A", tuple(map(float, comps)), float(sum(comps))),)
    return Instance(
        name=spec.name,
        distance=matrix,
        customers=tuple(customers),
        fleet=trucks,
        feeds=1,
        omega=1.0,
        max_route_minutes=cmt.max_route_time,
        unbounded_fleet=True,
    )


def mcvrp_instance(cmt: CmtInstance, name: str | None = None) -> Instance:
    """Deterministic single-feed comparison instance for literature baselines.

    The truck offers interchangeable capacity slots whose count never
    binds before the legal load (the vehicle capacity) does, so routes
    are limited by capacity exactly as in the source problems.
    """
    matrix = euclidean_matrix(cmt)
    demands = [d for _x, _y, d in cmt.customers]
    positive = [d for d in demands if d > 0]
    if not positive:
        raise ParseError("benchmark base has no positive demands")
    slots = min(cmt.n, math.ceil(cmt.capacity / min(positive)))
    customers = tuple(
        Customer(idx, {0: Deterministic(float(d))})
        for idx, d in enumerate(demands, start=1)
    )
    truck = Truck("A", (float(cmt.capacity),) * slots, float(cmt.capacity))
    return Instance(
        name=name or f"mcvrp-{cmt.name}",
        distance=matrix,
        customers=customers,
        fleet=(truck,),
        feeds=1,
        omega=1.0,
        max_route_minutes=cmt.max_route_time,
        unbounded_fleet=True,
    )


def _model_to_json(model: DemandModel):
    if isinstance(model, Deterministic):
        return {"type": "deterministic", "value": model.value}
    if isinstance(model, Discrete):
        return {"type": "discrete", "values": [list(pair) for pair in model.outcomes]}
    return {"type": "normal", "mean": model.mean, "sd": model.sd}


def _model_from_json(obj) -> DemandModel:
    try:
        kind = obj["type"]
        if kind == "deterministic":
            return Deterministic(float(obj["value"]))
        if kind == "discrete":
            values = obj["values"]
            if values and isinstance(values[0], (list, tuple)):
                return Discrete(tuple((float(v), float(p)) for v, p in values))
            return Discrete.equiprobable(float(v) for v in values)
        if kind == "normal":
            return Normal(float(obj["mean"]), float(obj["sd"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad demand model {obj!r}: {exc}") from None
    raise ParseError(f"unknown demand model type {kind!r}")


def instance_to_json(instance: Instance) -> str:
    payload = {
        "name": instance.name,
        "feeds": instance.feeds,
        "omega": instance.omega,
        "max_route_minutes": instance.max_route_minutes,
        "urgency_threshold": instance.urgency_threshold,
        "unbounded_fleet": instance.unbounded_fleet,
        "distance": [list(row) for row in instance.distance],
        "customers": [
            {
                "id": c.id,
                "demands": {str(feed): _model_to_json(m) for feed, m in sorted(c.demands.items())},
                "urgency": {str(feed): p for feed, p in sorted(c.urgency.items())},
            }
            for c in instance.customers
        ],
        "trucks": [
            {
                "id": t.id,
                "compartments": list(t.compartments),
                "max_load": t.max_load,
                "restricted": sorted(t.inaccessible),
            }
            for t in instance.fleet
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def parse_instance(text: str) -> Instance:
    """Parse the JSON instance format (used for the real-world cases)."""
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"not valid JSON: {exc}") from None
    try:
        customers = tuple(
            Customer(
                int(c["id"]),
                {int(f): _model_from_json(m) for f, m in c["demands"].items()},
                {int(f): float(p) for f, p in c.get("urgency", {}).items()},
            )
            for c in payload["customers"]
        )
        trucks = tuple(
            Truck(
                str(t["id"]),
                tuple(float(c) for c in t["compartments"]),
                float(t["max_load"]),
                frozenset(int(n) for n in t.get("restricted", ())),
            )
            for t in payload["trucks"]
        )
        # the driver-shift default applies to this format; an explicit null
        # lifts the budget entirely
        max_minutes = payload.get("max_route_minutes", DEFAULT_ROUTE_MINUTES)
        return Instance(
            name=str(payload.get("name", "instance")),
            distance=tuple(tuple(float(d) for d in row) for row in payload["distance"]),
            customers=customers,
            fleet=trucks,
            feeds=int(payload.get("feeds", 1)),
            omega=float(payload.get("omega", 1.0)),
            max_route_minutes=None if max_minutes is None else float(max_minutes),
            urgency_threshold=float(payload.get("urgency_threshold", 0.9)),
            unbounded_fleet=bool(payload.get("unbounded_fleet", False)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"bad instance payload: {exc}") from None


def load_instance(path) -> Instance:
    with open(path) as fh:
        return parse_instance(fh.read())


def bundled_path(filename: str):
    """Path of a data file shipped with the package."""
    return resources.files("mcvrpsd.data") / filename


def load_bundled_instance(filename: str) -> Instance:
    return parse_instance(bundled_path(filename).read_text())


def write_solution(
    instance: Instance,
    replica_set: ReplicaSet,
    solution: Solution,
    evaluation: Evaluation | None = None,
    wall_seconds: float = 0.0,
) -> str:
    """Render a plan as structured text: routes, loads, and a summary row.

    Byte-stable for fixed inputs; pass the wall time explicitly so tests
    can pin it.
    """
    if evaluation is None:
        evaluation = evaluate(instance, replica_set, solution)
    lines = [f"plan {instance.name} routes={len(solution.routes)}"]
    for idx, route in enumerate(solution.routes, start=1):
        lines.append(f"route {idx} truck={route.truck.id}")
        loads = {a.replica: a for a in route.assignments}
        for rid in route.visits:
            rep = replica_set.replica(rid)
            a = loads[rid]
            lines.append(
                f"  stop replica={rid} customer={rep.origin} feed={rep.feed}"
                f" part={rep.index}/{rep.count} compartment={a.compartment} load={a.load:.2f}"
            )
    for rid in sorted(solution.unserved):
        rep = replica_set.replica(rid)
        lines.append(
            f"unserved replica={rid} customer={rep.origin} feed={rep.feed}"
            f" part={rep.index}/{rep.count}"
        )
    lines.append(
        "summary"
        f" objective={evaluation.weighted_objective:.6f}"
        f" fixed={evaluation.fixed_distance:.6f}"
        f" recourse={evaluation.expected_recourse:.6f}"
        f" expected={evaluation.expected_distance:.6f}"
        f" load={evaluation.total_load:.2f}"
        f" routes={len(solution.routes)}"
        f" occupancy={occupancy_rate(instance, replica_set, solution):.2f}"
        f" wall_seconds={wall_seconds:.3f}"
    )
    return "\n".join(lines) + "\n"


def read_solution(text: str, instance: Instance, replica_set: ReplicaSet) -> Solution:
    """Re-read a written plan; inverse of write_solution up to the summary."""
    trucks = {t.id: t for t in instance.fleet}
    routes: list[Route] = []
    visits: list[int] = []
    assignments: list[Assignment] = []
    truck = None
    unserved: set[int] = set()

    def flush():
        nonlocal visits, assignments, truck
        if truck is not None:
            routes.append(Route(truck, tuple(visits), tuple(assignments)))
        visits, assignments, truck = [], [], None

    def fields(parts):
        return {k: v for k, v in (p.split("=", 1) for p in parts if "=" in p)}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("plan ") or line.startswith("summary"):
            continue
        parts = line.split()
        kind = parts[0]
        got = fields(parts[1:])
        try:
            if kind == "route":
                flush()
                truck_id = got["truck"]
                if truck_id in trucks:
                    truck = trucks[truck_id]
                else:
                    base = truck_id.split("#")[0]
                    copy = int(truck_id.split("#")[1]) if "#" in truck_id else 0
                    truck = trucks[base].clone(copy)
            elif kind == "stop":
                rid = int(got["replica"])
                visits.append(rid)
                assignments.append(
                    Assignment(rid, int(got["compartment"]), float(got["load"]))
                )
            elif kind == "unserved":
                unserved.add(int(got["replica"]))
            else:
                raise KeyError(kind)
        except (KeyError, ValueError, IndexError) as exc:
            raise ParseError(f"line {lineno}: malformed plan line: {exc}") from None
    flush()
    return Solution(routes=tuple(routes), unserved=frozenset(unserved))


BENCH_CSV_HEADER = (
    "problem,cw_fixed,cw_expected,cw_seconds,its_fixed,its_expected,"
    "total_seconds,routes,occupancy"
)


def bench_csv_row(
    name: str,
    cw_eval: Evaluation,
    cw_seconds: float,
    its_eval: Evaluation,
    routes: int,
    occupancy: float,
    total_seconds: float,
) -> str:
    return (
        f"{name},{cw_eval.fixed_distance:.2f},{cw_eval.expected_distance:.2f},"
        f"{cw_seconds:.2f},{its_eval.fixed_distance:.2f},{its_eval.expected_distance:.2f},"
        f"{total_seconds:.2f},{routes},{occupancy:.2f}"
    )
