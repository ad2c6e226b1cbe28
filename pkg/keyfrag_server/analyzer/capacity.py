#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
"""Recovery probability of an adversary with per-medium compromise capacities under a total budget.

An adversary compromises medium type `i` with probability `c_i`, subject to `sum(c) <= B`. With `n_i` fragments on
type `i` the key is recovered with probability `prod(c_i ** n_i)`.
"""

import itertools
import math
from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from keyfrag_server.analyzer.errors import (
    AnalysisParameterError,
    DimensionMismatchError,
    InfeasibleBudgetError,
)

_BUDGET_SLACK = 1e-12


@dataclass(frozen=True)
class CapacityVector:
    c: tuple[float, ...]
    budget: float | None = None

    def __post_init__(self) -> None:
        if any(not 0 <= value <= 1 for value in self.c):
            msg = f"Capacities must lie in [0, 1], got {self.c}."
            raise AnalysisParameterError(msg)
        if self.budget is not None and sum(self.c) > self.budget + _BUDGET_SLACK:
            msg = f"Capacities sum to {sum(self.c)}, exceeding the budget of {self.budget}."
            raise InfeasibleBudgetError(msg)

    @property
    def d(self) -> int:
        return len(self.c)

    @classmethod
    def uniform(cls, budget: float, d: int) -> "CapacityVector":
        return cls(c=(budget / d,) * d, budget=budget)


@dataclass(frozen=True)
class Allocation:
    """Fragments per medium type."""

    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if any(count < 0 for count in self.counts):
            msg = f"Fragment counts must be non-negative, got {self.counts}."
            raise AnalysisParameterError(msg)

    @property
    def n(self) -> int:
        return sum(self.counts)

    @property
    def d(self) -> int:
        return len(self.counts)

    def __str__(self) -> str:
        return "-".join(map(str, self.counts))


def _check_dimensions(c: CapacityVector, alloc: Allocation) -> None:
    if c.d != alloc.d:
        raise DimensionMismatchError(c.d, alloc.d)


def _check_budget(budget: float, d: int) -> None:
    if not 0 < budget <= d:
        msg = f"Budget must lie in (0, {d}] for {d} medium type(s), got {budget}."
        raise InfeasibleBudgetError(msg)


def recovery_probability(c: CapacityVector, alloc: Allocation) -> float:
    """`prod(c_i ** n_i)`; a medium without fragments contributes a factor of one."""
    _check_dimensions(c, alloc)
    return math.prod(value**count for value, count in zip(c.c, alloc.counts, strict=True))


def lagrangian_optimum(budget: float, alloc: Allocation) -> float:
    """`(B/n)^n * prod(n_i^n_i)`, the optimum without the `c_i <= 1` constraint. Can exceed one."""
    n = alloc.n
    return (budget / n) ** n * math.prod(count**count for count in alloc.counts)


def adversary_optimum(budget: float, alloc: Allocation) -> tuple[CapacityVector, float]:
    """Capacities maximising the recovery probability for an allocation under budget `B`.

    Budget is spread proportionally to the fragment counts (`c_i = B * n_i / n`); types that would exceed one are
    clamped to one and the rest of the budget is spread again over the remaining types until nothing exceeds one.

    Raises:
        InfeasibleBudgetError: If `B` is not in `(0, d]`.
        AnalysisParameterError: If the allocation holds no fragments.
    """
    _check_budget(budget, alloc.d)
    if alloc.n == 0:
        msg = "Allocation holds no fragments."
        raise AnalysisParameterError(msg)

    c = [0.0] * alloc.d
    free = {i for i, count in enumerate(alloc.counts) if count > 0}
    remaining = budget

    while free:
        weight = sum(alloc.counts[i] for i in free)
        share = remaining / weight
        clamped = {i for i in free if share * alloc.counts[i] >= 1}
        if not clamped:
            for i in free:
                c[i] = share * alloc.counts[i]
            break
        for i in clamped:
            c[i] = 1.0
        free -= clamped
        remaining -= len(clamped)

    capacities = CapacityVector(c=tuple(c), budget=budget)
    return capacities, recovery_probability(capacities, alloc)


def grid_search_optimum(budget: float, alloc: Allocation, step: float = 1e-3) -> float:
    """Brute-force maximum of the recovery probability over a capacity grid, for at most three medium types.

    All but the last capacity run over the grid; the last one takes whatever budget is left, capped at one.
    """
    d = alloc.d
    if not 1 <= d <= 3:
        msg = f"Grid search supports one to three medium types, got {d}."
        raise AnalysisParameterError(msg)
    _check_budget(budget, d)

    counts = np.asarray(alloc.counts, dtype=float)
    if d == 1:
        return float(min(1.0, budget) ** counts[0])

    axis = np.linspace(0.0, 1.0, round(1 / step) + 1)
    free = np.meshgrid(*([axis] * (d - 1)), indexing="ij")
    spent = np.sum(free, axis=0)
    last = np.clip(budget - spent, 0.0, 1.0)
    feasible = spent <= budget + _BUDGET_SLACK

    probability = np.power(last, counts[-1])
    for values, count in zip(free, counts[:-1], strict=True):
        probability = probability * np.power(values, count)
    return float(np.max(np.where(feasible, probability, 0.0)))


def minimax_allocation(n: int, d: int) -> Allocation:
    """The balanced allocation: every type carries `floor(n/d)` or `ceil(n/d)` fragments.

    Raises:
        AnalysisParameterError: If `d < 1` or `d > n`.
    """
    if not 1 <= d <= n:
        msg = f"Need 1 <= d <= n for a balanced allocation, got n={n}, d={d}."
        raise AnalysisParameterError(msg)
    base, extra = divmod(n, d)
    return Allocation(tuple(base + 1 if i < extra else base for i in range(d)))


def enumerate_allocations(n: int, d: int) -> Iterator[Allocation]:
    """Every way of putting `n` fragments on `d` ordered medium types, empty types included."""
    for bars in itertools.combinations(range(n + d - 1), d - 1):
        edges = (-1, *bars, n + d - 1)
        yield Allocation(tuple(edges[i + 1] - edges[i] - 1 for i in range(d)))


def allocation_values(n: int, d: int, budget: float) -> dict[Allocation, float]:
    """The adversary's optimum for every allocation of `n` fragments over `d` types."""
    return {alloc: adversary_optimum(budget, alloc)[1] for alloc in enumerate_allocations(n, d)}


def required_diversity(budget: float, n: int, epsilon: float) -> int:
    """Smallest number of medium types `d` with `(B/d)^n <= epsilon`.

    Raises:
        AnalysisParameterError: On a non-positive budget, `n < 1` or `epsilon` outside `(0, 1]`.
    """
    if budget <= 0 or n < 1 or not 0 < epsilon <= 1:
        msg = f"Need B > 0, n >= 1 and epsilon in (0, 1], got B={budget}, n={n}, epsilon={epsilon}."
        raise AnalysisParameterError(msg)

    d = max(1, math.ceil(budget * epsilon ** (-1 / n) - 1e-9))
    while (budget / d) ** n > epsilon * (1 + 1e-12):
        d += 1
    return d


def balanced_bound(budget: float, d: int, n: int) -> float:
    """`(B/d)^n`, the adversary's best recovery probability against a balanced allocation with `d | n`."""
    return (budget / d) ** n


def convex_cost_optimum(budget: float, d: int, n: int, k: float) -> float:
    """`(B/d)^(n/k)` for per-type costs `c^k` and a balanced allocation.

    Raises:
        AnalysisParameterError: If `k < 1`.
    """
    if k < 1:
        msg = f"Cost exponent must be at least 1, got {k}."
        raise AnalysisParameterError(msg)
    return (budget / d) ** (n / k)


def convex_cost_numeric(budget: float, alloc: Allocation, k: float) -> float:
    """Numeric optimum of `prod(c_i ** n_i)` under `sum(c_i ** k) <= B` and `0 <= c_i <= 1` (SLSQP)."""
    if k < 1:
        msg = f"Cost exponent must be at least 1, got {k}."
        raise AnalysisParameterError(msg)
    _check_budget(budget, alloc.d)

    counts = np.asarray(alloc.counts, dtype=float)
    start = np.full(alloc.d, min(1.0, budget / alloc.d) ** (1 / k) / 2)

    def objective(c: np.ndarray) -> float:
        return -float(np.dot(counts, np.log(c)))

    result = minimize(
        objective,
        start,
        method="SLSQP",
        bounds=[(1e-9, 1.0)] * alloc.d,
        constraints=[{"type": "ineq", "fun": lambda c: budget - np.sum(np.power(c, k))}],
        options={"ftol": 1e-12, "maxiter": 500},
    )
    return math.exp(-result.fun)


def sample_feasible_capacities(budget: float, d: int, rng: np.random.Generator) -> CapacityVector:
    """A random capacity vector with `sum(c) <= B`, for checking that no feasible point beats the optimum."""
    while True:
        c = rng.dirichlet(np.ones(d)) * budget * rng.uniform(0, 1)
        if np.all(c <= 1):
            return CapacityVector(c=tuple(float(value) for value in c), budget=budget)