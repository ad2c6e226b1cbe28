#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.

import math

import numpy as np
import pytest

from keyfrag_server.analyzer import (
    Allocation,
    AnalysisParameterError,
    CapacityVector,
    DimensionMismatchError,
    InfeasibleBudgetError,
    adversary_optimum,
    allocation_values,
    convex_cost_numeric,
    convex_cost_optimum,
    enumerate_allocations,
    grid_search_optimum,
    lagrangian_optimum,
    minimax_allocation,
    recovery_probability,
    required_diversity,
)
from keyfrag_server.analyzer.capacity import sample_feasible_capacities


@pytest.mark.parametrize(("d", "expected"), [(4, 2**-8), (8, 2**-16)])
def test_balanced_optimum(d: int, expected: float) -> None:
    capacities, value = adversary_optimum(2, minimax_allocation(8, d))

    assert value == pytest.approx(expected, abs=1e-12)
    assert capacities.c == pytest.approx((2 / d,) * d)


def test_interior_optimum_is_proportional() -> None:
    capacities, value = adversary_optimum(1.0, Allocation((1, 3)))

    assert capacities.c == pytest.approx((0.25, 0.75))
    assert value == pytest.approx(0.25 * 0.75**3)
    assert value == pytest.approx(lagrangian_optimum(1.0, Allocation((1, 3))))


def test_clamped_optimum_stays_below_the_interior_formula() -> None:
    alloc = Allocation((2, 6))

    capacities, value = adversary_optimum(1.5, alloc)

    assert capacities.c == pytest.approx((0.5, 1.0))
    assert value == pytest.approx(0.25)
    assert lagrangian_optimum(1.5, alloc) > value
    assert grid_search_optimum(1.5, alloc) == pytest.approx(value, abs=1e-4)


def test_empty_medium_gets_no_budget() -> None:
    capacities, value = adversary_optimum(0.8, Allocation((4, 0)))

    assert capacities.c == pytest.approx((0.8, 0.0))
    assert value == pytest.approx(0.8**4)


@pytest.mark.parametrize(
    ("budget", "counts"),
    [
        (1.0, (1, 3)),
        (1.5, (2, 6)),
        (0.7, (1, 2, 3)),
        (2.5, (1, 1, 4)),
        (0.6, (3,)),
        (0.3, (0, 2, 1)),
    ],
)
def test_optimum_agrees_with_grid_search(budget: float, counts: tuple[int, ...]) -> None:
    alloc = Allocation(counts)

    assert adversary_optimum(budget, alloc)[1] == pytest.approx(grid_search_optimum(budget, alloc), abs=1e-4)


def test_no_feasible_capacity_beats_the_optimum() -> None:
    alloc = Allocation((2, 3, 3))
    optimum = adversary_optimum(1.2, alloc)[1]
    rng = np.random.default_rng(0)

    for _ in range(200):
        assert recovery_probability(sample_feasible_capacities(1.2, 3, rng), alloc) <= optimum + 1e-15


@pytest.mark.parametrize(("n", "d"), [(4, 2), (6, 2), (6, 3), (8, 4)])
@pytest.mark.parametrize("budget", [0.5, 1.0, 2.0])
def test_balanced_allocation_is_minimax(n: int, d: int, budget: float) -> None:
    values = allocation_values(n, d, budget)
    balanced = minimax_allocation(n, d)

    assert values[balanced] <= min(values.values()) + 1e-12
    worse = [alloc for alloc, value in values.items() if value < values[balanced] - 1e-12]
    assert worse == []


def test_minimax_allocation_spreads_the_remainder() -> None:
    assert minimax_allocation(8, 3) == Allocation((3, 3, 2))
    assert str(minimax_allocation(8, 3)) == "3-3-2"


@pytest.mark.parametrize(("n", "d"), [(4, 2), (8, 4), (6, 3)])
def test_enumerate_allocations(n: int, d: int) -> None:
    allocations = list(enumerate_allocations(n, d))

    assert len(allocations) == math.comb(n + d - 1, d - 1)
    assert len(set(allocations)) == len(allocations)
    assert all(alloc.n == n and alloc.d == d for alloc in allocations)


@pytest.mark.parametrize(
    ("budget", "n", "epsilon", "expected"),
    [
        (2.0, 8, 1e-3, 5),
        (1.0, 8, 1e-6, 6),
        (2.0, 16, 1e-6, 5),
        (0.5, 1, 1.0, 1),
    ],
)
def test_required_diversity(budget: float, n: int, epsilon: float, expected: int) -> None:
    d = required_diversity(budget, n, epsilon)

    assert d == expected
    assert (budget / d) ** n <= epsilon
    assert d == 1 or (budget / (d - 1)) ** n > epsilon


@pytest.mark.parametrize(("k", "expected"), [(1.0, 2**-8), (2.0, 0.5**4)])
def test_convex_cost_closed_form_matches_numeric_optimum(k: float, expected: float) -> None:
    alloc = minimax_allocation(8, 4)

    assert convex_cost_optimum(2, 4, 8, k) == pytest.approx(expected)
    assert convex_cost_numeric(2, alloc, k) == pytest.approx(expected, rel=1e-5)


def test_dimension_mismatch() -> None:
    with pytest.raises(DimensionMismatchError, match="2 entries but the allocation has 3"):
        recovery_probability(CapacityVector((0.5, 0.5)), Allocation((1, 1, 1)))


def test_capacities_over_budget_are_infeasible() -> None:
    with pytest.raises(InfeasibleBudgetError, match="exceeding the budget"):
        CapacityVector((0.6, 0.6), budget=1.0)


@pytest.mark.parametrize("budget", [0.0, -1.0, 2.5])
def test_budget_outside_range(budget: float) -> None:
    with pytest.raises(InfeasibleBudgetError):
        adversary_optimum(budget, Allocation((1, 1)))


@pytest.mark.parametrize(
    "call",
    [
        lambda: CapacityVector((1.5,)),
        lambda: Allocation((2, -1)),
        lambda: adversary_optimum(1.0, Allocation((0, 0))),
        lambda: minimax_allocation(2, 3),
        lambda: grid_search_optimum(1.0, Allocation((1, 1, 1, 1))),
        lambda: required_diversity(1.0, 8, 0.0),
        lambda: convex_cost_optimum(1.0, 2, 4, 0.5),
        lambda: convex_cost_numeric(1.0, Allocation((2, 2)), 0.5),
    ],
)
def test_invalid_parameters(call: object) -> None:
    with pytest.raises(AnalysisParameterError):
        call()  # type: ignore[operator]
