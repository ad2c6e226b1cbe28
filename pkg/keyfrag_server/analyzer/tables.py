#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
"""Row-per-configuration tables behind the `analyze` commands."""

import csv
from collections.abc import Iterable, Iterator, Sequence
from typing import IO, Any

from keyfrag_server.analyzer.capacity import (
    CapacityVector,
    adversary_optimum,
    balanced_bound,
    convex_cost_optimum,
    lagrangian_optimum,
    minimax_allocation,
    recovery_probability,
    required_diversity,
)
from keyfrag_server.analyzer.montecarlo import monte_carlo_recovery
from keyfrag_server.analyzer.pool import (
    PoolParams,
    composed_trace_probability,
    expected_hops,
    pool_correlation_probability,
    pool_trace_probability,
)

Row = dict[str, Any]


def recovery_rows(
    budget: float, ns: Iterable[int], ds: Iterable[int], *, trials: int = 0, seed: int = 0
) -> Iterator[Row]:
    """The adversary's uniform capacity against the balanced allocation, optionally with Monte-Carlo estimates."""
    for n in ns:
        for d in ds:
            if d > n or budget > d:
                continue
            alloc = minimax_allocation(n, d)
            c = CapacityVector.uniform(budget, d)
            row: Row = {"B": budget, "n": n, "d": d, "allocation": str(alloc), "P": recovery_probability(c, alloc)}
            if trials:
                report = monte_carlo_recovery(c, alloc, trials, seed)
                row |= {
                    "mc_per_type": report.per_type.estimate,
                    "mc_per_type_se": report.per_type.std_error,
                    "mc_per_fragment": report.per_fragment.estimate,
                    "mc_per_fragment_se": report.per_fragment.std_error,
                }
            yield row


def optimum_rows(budgets: Iterable[float], ns: Iterable[int], ds: Iterable[int], k: float = 1.0) -> Iterator[Row]:
    for budget in budgets:
        for n in ns:
            for d in ds:
                if d > n or budget > d:
                    continue
                alloc = minimax_allocation(n, d)
                c, value = adversary_optimum(budget, alloc)
                yield {
                    "B": budget,
                    "n": n,
                    "d": d,
                    "allocation": str(alloc),
                    "c": " ".join(f"{ci:.6g}" for ci in c.c),
                    "P_opt": value,
                    "lagrangian": lagrangian_optimum(budget, alloc),
                    "bound": balanced_bound(budget, d, n),
                    "convex_k": k,
                    "convex": convex_cost_optimum(budget, d, n, k),
                }


def diversity_rows(budgets: Iterable[float], ns: Iterable[int], epsilons: Iterable[float]) -> Iterator[Row]:
    for budget in budgets:
        for n in ns:
            for epsilon in epsilons:
                d = required_diversity(budget, n, epsilon)
                yield {"B": budget, "n": n, "epsilon": epsilon, "d": d, "bound": balanced_bound(budget, d, n)}


def pool_rows(
    pool_sizes: Iterable[int], surveilled: Iterable[int], qs: Iterable[float], max_hops: int
) -> Iterator[Row]:
    for pool_size in pool_sizes:
        for a in surveilled:
            if a > pool_size:
                continue
            for q in qs:
                params = PoolParams(pool_size=pool_size, surveilled=a, forward_probability=q, max_hops=max_hops)
                yield {
                    "P": pool_size,
                    "a": a,
                    "q": q,
                    "h_max": max_hops,
                    "expected_hops": expected_hops(q, max_hops),
                    "trace_h1": pool_trace_probability(params, 1),
                    "trace_h2": pool_trace_probability(params, 2),
                    "trace_composed": composed_trace_probability(params),
                    "entry_exit": pool_correlation_probability(params),
                }


def write_rows(rows: Iterable[Row], out: IO[str], fieldnames: Sequence[str] | None = None) -> int:
    """Writes rows as CSV with a header taken from the first row. Returns the number of rows."""
    written = 0
    writer: csv.DictWriter | None = None
    for row in rows:
        if writer is None:
            writer = csv.DictWriter(out, fieldnames=list(fieldnames or row))
            writer.writeheader()
        writer.writerow(row)
        written += 1
    return written
