#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
"""Oracle-agreement checks of the capacity model and the pool bounds."""

import logging
import random
from collections.abc import Callable, Iterator
from dataclasses import dataclass

from keyfrag_server.analyzer.capacity import (
    Allocation,
    CapacityVector,
    adversary_optimum,
    allocation_values,
    enumerate_allocations,
    grid_search_optimum,
    minimax_allocation,
)
from keyfrag_server.analyzer.montecarlo import Granularity, exact_recovery, monte_carlo_recovery
from keyfrag_server.analyzer.pool import PoolParams, simulate_pool

_log = logging.getLogger("keyfrag:analyzer")


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class VerifyOptions:
    oracle_cases: int = 50
    grid_step: float = 1e-3
    monte_carlo_runs: int = 100
    monte_carlo_trials: int = 1_000_000
    pool_requests: int = 100_000
    seed: int = 0

    @classmethod
    def quick(cls) -> "VerifyOptions":
        return cls(oracle_cases=10, grid_step=1e-2, monte_carlo_runs=10, monte_carlo_trials=100_000, pool_requests=5000)


def check_balanced_points() -> CheckResult:
    four = adversary_optimum(2, minimax_allocation(8, 4))[1]
    eight = adversary_optimum(2, minimax_allocation(8, 8))[1]
    passed = abs(four - 2**-8) <= 1e-12 and abs(eight - 2**-16) <= 1e-12
    return CheckResult("balanced optimum", passed, f"d=4: {four!r}, d=8: {eight!r}")


def oracle_cases(count: int, seed: int) -> Iterator[tuple[float, Allocation]]:
    """Budgets and allocations with `d <= 3` and `n <= 8`, boundary cases included."""
    yield 1.0, Allocation((1, 3))
    yield 2.0, Allocation((2, 6))
    rng = random.Random(seed)
    for _ in range(count - 2):
        d = rng.randint(1, 3)
        n = rng.randint(d, 8)
        alloc = rng.choice(list(enumerate_allocations(n, d)))
        budget = round(rng.uniform(0.05, d), 3)
        yield budget, alloc


def check_oracle_agreement(count: int, seed: int, step: float) -> CheckResult:
    worst = 0.0
    for budget, alloc in oracle_cases(count, seed):
        deviation = abs(adversary_optimum(budget, alloc)[1] - grid_search_optimum(budget, alloc, step))
        worst = max(worst, deviation)
    tolerance = 1e-4 if step <= 1e-3 else 10 * step
    return CheckResult("grid search agreement", worst <= tolerance, f"{count} cases, max deviation {worst:.3g}")


def check_minimax() -> CheckResult:
    failures = []
    for n, d in ((4, 2), (6, 2), (6, 3), (8, 4)):
        for budget in (0.5, 1.0, 2.0):
            values = allocation_values(n, d, budget)
            balanced = values[minimax_allocation(n, d)]
            if min(values.values()) < balanced - 1e-12:
                failures.append(f"n={n} d={d} B={budget}")
    return CheckResult("balanced allocation is minimax", not failures, ", ".join(failures) or "12 cases")


def check_monte_carlo(runs: int, trials: int, seed: int) -> CheckResult:
    c = CapacityVector.uniform(2, 4)
    alloc = minimax_allocation(8, 4)
    exact = {granularity: exact_recovery(c, alloc, granularity) for granularity in Granularity}
    inside = dict.fromkeys(Granularity, 0)

    for run in range(runs):
        report = monte_carlo_recovery(c, alloc, trials, seed + run)
        for granularity in Granularity:
            estimate = report[granularity]
            if abs(estimate.estimate - exact[granularity]) <= 3 * estimate.std_error + 1e-15:
                inside[granularity] += 1

    # At most one miss per hundred runs.
    passed = all(count >= runs - runs // 100 for count in inside.values())
    detail = ", ".join(f"{granularity}: {count}/{runs}" for granularity, count in inside.items())
    return CheckResult("monte carlo within 3 sigma", passed, detail)


def check_pool(requests: int, seed: int) -> list[CheckResult]:
    params = PoolParams(pool_size=10, surveilled=3, forward_probability=0.5, max_hops=8)
    simulation = simulate_pool(params, requests, seed)
    exit_test = simulation.exit_test()
    return [
        CheckResult("exit uniformity", exit_test.p_value > 0.01, f"p={exit_test.p_value:.4f}"),
        CheckResult("full path surveillance", simulation.trace_within(), f"{simulation.full_path_surveilled} hits"),
        CheckResult(
            "entry and exit surveillance",
            simulation.correlation_within(),
            f"{simulation.entry_exit_surveilled}/{simulation.multi_hop} multi-hop paths",
        ),
        CheckResult("mean proxies visited", simulation.hops_within(), f"{simulation.mean_hops:.4f}"),
    ]


def run_verification(options: VerifyOptions | None = None) -> list[CheckResult]:
    options = options or VerifyOptions()
    checks: list[Callable[[], CheckResult | list[CheckResult]]] = [
        check_balanced_points,
        lambda: check_oracle_agreement(options.oracle_cases, options.seed, options.grid_step),
        check_minimax,
        lambda: check_monte_carlo(options.monte_carlo_runs, options.monte_carlo_trials, options.seed),
        lambda: check_pool(options.pool_requests, options.seed),
    ]

    results: list[CheckResult] = []
    for check in checks:
        outcome = check()
        for result in outcome if isinstance(outcome, list) else [outcome]:
            _log.info("%s: %s (%s)", result.name, "pass" if result.passed else "FAIL", result.detail)
            results.append(result)
    return results
