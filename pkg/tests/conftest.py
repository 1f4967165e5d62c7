import math
import random

import pytest

from mcvrpsd.demand import Deterministic, Discrete, Normal
from mcvrpsd.io import load_bundled_instance
from mcvrpsd.model import Customer, Instance, Truck


@pytest.fixture(scope="session")
def fictitious():
    """Three-customer worked example: one five-compartment truck."""
    distance = (
        (0.0, 28.0, 69.0, 64.0),
        (28.0, 0.0, 67.0, 62.0),
        (69.0, 67.0, 0.0, 7.0),
        (64.0, 62.0, 7.0, 0.0),
    )
    customers = tuple(
        Customer(cid, {0: Normal(mean, 0.5)}, {0: 0.95})
        for cid, mean in ((1, 3.30), (2, 2.95), (3, 3.0))
    )
    truck = Truck("T1", (3.0, 3.7, 3.8, 3.7, 3.0), 11.8)
    return Instance(
        "fictitious",
        distance,
        customers,
        (truck,),
        omega=0.8,
        max_route_minutes=540.0,
    )


@pytest.fixture(scope="session")
def numeric_example():
    """Four customers all 10 minutes apart; two urgent discrete orders."""
    distance = tuple(
        tuple(0.0 if i == j else 10.0 for j in range(5)) for i in range(5)
    )
    stochastic = Discrete(((5.0, 0.5), (6.0, 0.4), (7.0, 0.1)))
    customers = (
        Customer(1, {0: stochastic}, {0: 0.95}),
        Customer(2, {0: stochastic}, {0: 0.95}),
        Customer(3, {0: Deterministic(7.0)}),
        Customer(4, {0: Deterministic(7.0)}),
    )
    truck = Truck("T", (7.0, 6.0, 6.0, 6.0), 25.0)
    return Instance("numeric", distance, customers, (truck,))


@pytest.fixture(scope="session")
def realworld_stochastic():
    return load_bundled_instance("realworld_stochastic.json")


@pytest.fixture(scope="session")
def realworld_deterministic():
    return load_bundled_instance("realworld_deterministic.json")


def grid_distance_matrix(points):
    return tuple(
        tuple(math.hypot(ax - bx, ay - by) for bx, by in points) for ax, ay in points
    )


def random_instance(
    seed,
    n_customers=None,
    demand_kind="mixed",
    unbounded=False,
    urgent_share=0.5,
    trucks=None,
):
    """Small random instance on a coordinate grid; deterministic per seed."""
    rng = random.Random(seed)
    n = n_customers if n_customers is not None else rng.randint(3, 9)
    points = [(50.0, 50.0)] + [
        (rng.uniform(0, 100), rng.uniform(0, 100)) for _ in range(n)
    ]
    distance = grid_distance_matrix(points)
    customers = []
    for cid in range(1, n + 1):
        kind = demand_kind
        if kind == "mixed":
            kind = rng.choice(["deterministic", "normal", "discrete"])
        elif kind == "oracle":  # enumerable demand models only
            kind = rng.choice(["deterministic", "discrete"])
        if kind == "deterministic":
            model = Deterministic(float(rng.randint(1, 6)))
        elif kind == "discrete":
            lo = rng.randint(1, 4)
            values = [float(lo), float(lo + 1), float(lo + 2)]
            model = Discrete.equiprobable(values)
        else:
            mean = rng.uniform(1.0, 6.0)
            model = Normal(round(mean, 2), round(0.3 * mean, 2))
        urgency = 0.95 if rng.random() < urgent_share else 0.0
        customers.append(Customer(cid, {0: model}, {0: urgency}))
    if trucks is None:
        comps = tuple(sorted((float(rng.randint(4, 8)) for _ in range(rng.randint(2, 4))), reverse=True))
        trucks = (Truck("A", comps, float(sum(comps))),)
        if not unbounded and rng.random() < 0.5:
            comps2 = tuple(sorted((float(rng.randint(4, 8)) for _ in range(rng.randint(2, 4))), reverse=True))
            trucks = trucks + (Truck("B", comps2, float(sum(comps2))),)
    return Instance(
        f"random-{seed}",
        distance,
        tuple(customers),
        trucks,
        omega=rng.choice([0.2, 0.5, 0.8, 1.0]),
        unbounded_fleet=unbounded,
    )
