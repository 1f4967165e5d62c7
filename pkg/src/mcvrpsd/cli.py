"""Command line interface.

Subcommands: solve (full two-stage run), construct (first stage only),
oracle (exhaustive optimum for tiny instances), simulate (Monte Carlo
check of a plan), generate (emit a benchmark instance as JSON), and
bench (run generated problems and write a CSV summary). Exit code 2
flags rejected or infeasible input.
"""

from __future__ import annotations

import concurrent.futures
import sys
import time

import click
import numpy as np

from . import io as iomod
from .construct import construct
from .evaluate import evaluate, occupancy_rate
from .exact import enumerate_exact, simulate
from .model import check_feasibility, expand_replicas
from .search import SearchParams, iterated_tabu_search

INPUT_ERROR = 2


def _load_instance(path, fmt):
    if fmt == "auto":
        fmt = "cmt" if str(path).endswith(".txt") else "json"
    if fmt == "cmt":
        return iomod.mcvrp_instance(iomod.load_cmt(path))
    return iomod.load_instance(path)


def _search_params(**kw) -> SearchParams:
    return SearchParams(
        routes_per_iter=kw["sigma"],
        destroy_count=kw["destroy_size"],
        max_exchange=kw["kappa"],
        max_tabu_iters=kw["max_iter"],
        perturbations=kw["perturbations"],
        tenure=kw["tenure"],
        seed=kw["seed"],
        omega=kw["omega"],
        time_limit=kw["time_limit"],
        lam=kw["lam"],
        multi_route=kw["multi_route"],
    )


def _search_options(fn):
    options = [
        click.option("--sigma", default=3, show_default=True, help="routes examined per tabu iteration"),
        click.option("--destroy-size", default=None, type=int, help="replicas removed per perturbation"),
        click.option("--kappa", default=1, show_default=True, help="max replicas moved each way per exchange"),
        click.option("--max-iter", default=5000, show_default=True, help="tabu iterations per run"),
        click.option("--perturbations", default=20, show_default=True, help="destroy/repair rounds"),
        click.option("--tenure", default=3, show_default=True, help="iterations a moved replica stays frozen"),
        click.option("--seed", default=0, show_default=True, help="random seed"),
        click.option("--omega", default=None, type=float, help="objective weight (defaults to the instance's)"),
        click.option("--time-limit", default=None, type=float, help="wall-clock budget in seconds"),
        click.option("--lambda", "lam", default=1.0, show_default=True, help="stochastic interest weight in the savings rule"),
        click.option("--multi-route", is_flag=True, help="let trucks run several routes within the duration budget"),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Multi-compartment stochastic routing toolkit."""


@main.command()
@click.argument("instance_path", type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["auto", "json", "cmt"]), default="auto")
@click.option("-o", "--output", type=click.Path(), default=None)
@_search_options
def solve(instance_path, fmt, output, **kw):
    """Construct and improve a solution; print the plan."""
    try:
        instance = _load_instance(instance_path, fmt)
    except (iomod.ParseError, ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(INPUT_ERROR)
    replica_set = expand_replicas(instance)
    started = time.monotonic()
    result = iterated_tabu_search(instance, _search_params(**kw), replica_set=replica_set)
    elapsed = time.monotonic() - started
    report = check_feasibility(instance, replica_set, result.solution)
    text = iomod.write_solution(
        instance, replica_set, result.solution, result.evaluation, wall_seconds=elapsed
    )
    if output:
        with open(output, "w") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)
    if not report.ok:
        for violation in report.violations:
            click.echo(f"violation: {violation}", err=True)
        sys.exit(INPUT_ERROR)


@main.command("construct")
@click.argument("instance_path", type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["auto", "json", "cmt"]), default="auto")
@click.option("--lambda", "lam", default=1.0, show_default=True, help="stochastic interest weight")
@click.option("--omega", default=None, type=float)
@click.option("--multi-route", is_flag=True)
@click.option("-o", "--output", type=click.Path(), default=None)
def construct_cmd(instance_path, fmt, lam, omega, multi_route, output):
    """First-stage savings construction only."""
    try:
        instance = _load_instance(instance_path, fmt)
    except (iomod.ParseError, ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(INPUT_ERROR)
    replica_set = expand_replicas(instance)
    started = time.monotonic()
    solution = construct(instance, replica_set, lam=lam, multi_route=multi_route)
    elapsed = time.monotonic() - started
    evaluation = evaluate(instance, replica_set, solution, omega)
    click.echo(
        iomod.write_solution(instance, replica_set, solution, evaluation, wall_seconds=elapsed),
        nl=False,
    )


@main.command()
@click.argument("instance_path", type=click.Path(exists=True))
@click.option("--omega", default=None, type=float)
def oracle(instance_path, omega):
    """Exhaustive optimum for a tiny instance (<= 6 customers)."""
    try:
        instance = iomod.load_instance(instance_path)
        result = enumerate_exact(instance, omega=omega)
    except (iomod.ParseError, ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(INPUT_ERROR)
    click.echo(
        f"objective={result.objective:.6f} expected={result.expected_distance:.6f}"
        f" load={result.total_load:.2f} nodes={result.nodes_explored}"
    )
    for route in result.routes:
        stops = "-".join(str(c) for c in route.visit_order)
        deliveries = " ".join(f"{c}:{m:.2f}" for c, _f, m in route.deliveries)
        click.echo(f"route truck={route.truck_id} visits=0-{stops}-0 loads {deliveries}")


@main.command("simulate")
@click.argument("instance_path", type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["auto", "json", "cmt"]), default="auto")
@click.option("--samples", default=10**5, show_default=True)
@click.option("--plan", type=click.Path(exists=True), default=None, help="re-evaluate a written plan instead of solving")
@_search_options
def simulate_cmd(instance_path, fmt, samples, plan, **kw):
    """Monte Carlo check of the analytic recourse of a plan."""
    try:
        instance = _load_instance(instance_path, fmt)
    except (iomod.ParseError, ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(INPUT_ERROR)
    replica_set = expand_replicas(instance)
    if plan:
        with open(plan) as fh:
            solution = iomod.read_solution(fh.read(), instance, replica_set)
    else:
        solution = iterated_tabu_search(
            instance, _search_params(**kw), replica_set=replica_set
        ).solution
    evaluation = evaluate(instance, replica_set, solution)
    rng = np.random.default_rng(kw["seed"])
    result = simulate(instance, replica_set, solution, samples, rng)
    click.echo(
        f"analytic_recourse={evaluation.expected_recourse:.4f}"
        f" simulated={result.mean:.4f} stderr={result.stderr:.4f} samples={result.samples}"
    )


@main.command()
@click.option("--set", "set_id", type=click.IntRange(1, 3), required=True)
@click.option("--base", required=True, help="base problem, e.g. vrpnc1")
@click.option("--six-compartments/--five-compartments", default=False)
@click.option("--cmt", "cmt_path", type=click.Path(exists=True), required=True)
@click.option("--urgency-prob", default=0.95, show_default=True)
@click.option("-o", "--output", type=click.Path(), default=None)
def generate(set_id, base, six_compartments, cmt_path, urgency_prob, output):
    """Build a stochastic benchmark instance and emit it as JSON."""
    try:
        spec = iomod.BenchmarkSpec(set_id, base, six_compartments if set_id != 3 else False)
        cmt = iomod.load_cmt(cmt_path, name=base)
        instance = iomod.generate_set(cmt, spec, urgency_prob=urgency_prob)
    except (iomod.ParseError, ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(INPUT_ERROR)
    text = iomod.instance_to_json(instance)
    if output:
        with open(output, "w") as fh:
            fh.write(text)
    else:
        click.echo(text)


def _bench_one(args):
    name, instance, params_kw, runs = args
    replica_set = expand_replicas(instance)
    started = time.monotonic()
    cw_started = time.monotonic()
    cw_solution = construct(instance, replica_set)
    cw_seconds = time.monotonic() - cw_started
    cw_eval = evaluate(instance, replica_set, cw_solution)
    best = None
    for seed in range(runs):
        result = iterated_tabu_search(
            instance,
            _search_params(**{**params_kw, "seed": params_kw["seed"] + seed}),
            replica_set=replica_set,
        )
        if best is None or result.evaluation.expected_distance < best[0].expected_distance:
            best = (result.evaluation, result.solution)
    its_eval, its_solution = best
    total = time.monotonic() - started
    return iomod.bench_csv_row(
        name,
        cw_eval,
        cw_seconds,
        its_eval,
        len(its_solution.routes),
        occupancy_rate(instance, replica_set, its_solution),
        total,
    )


@main.command()
@click.option("--set", "set_id", type=click.IntRange(1, 3), required=True)
@click.option("--cmt-dir", type=click.Path(exists=True, file_okay=False), required=True,
              help="directory holding vrpnc*.txt benchmark bases")
@click.option("--bases", default=None, help="comma-separated subset, e.g. vrpnc1,vrpnc2")
@click.option("--runs", default=5, show_default=True, help="seeds per instance; best kept")
@click.option("--workers", default=1, show_default=True)
@click.option("--urgency-prob", default=0.95, show_default=True)
@click.option("-o", "--output", type=click.Path(), default=None)
@_search_options
def bench(set_id, cmt_dir, bases, runs, workers, urgency_prob, output, **kw):
    """Run a generated benchmark set and emit a CSV summary table."""
    from pathlib import Path

    wanted = bases.split(",") if bases else list(iomod.COMPARTMENT_SHAPES)
    jobs = []
    for base in wanted:
        path = Path(cmt_dir) / f"{base}.txt"
        if not path.exists():
            click.echo(f"warning: {path} missing, skipped", err=True)
            continue
        cmt = iomod.load_cmt(path, name=base)
        variants = [False] if set_id == 3 else [False, True]
        for six in variants:
            spec = iomod.BenchmarkSpec(set_id, base, six)
            instance = iomod.generate_set(cmt, spec, urgency_prob=urgency_prob)
            jobs.append((spec.name, instance, dict(kw), runs))
    if not jobs:
        click.echo("error: no benchmark bases found", err=True)
        sys.exit(INPUT_ERROR)
    rows = [iomod.BENCH_CSV_HEADER]
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            rows.extend(pool.map(_bench_one, jobs))
    else:
        rows.extend(_bench_one(job) for job in jobs)
    text = "\n".join(rows) + "\n"
    if output:
        with open(output, "w") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


if __name__ == "__main__":
    main()
