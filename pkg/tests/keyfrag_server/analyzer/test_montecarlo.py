#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.

import pytest

from keyfrag_server.analyzer import (
    Allocation,
    AnalysisParameterError,
    CapacityVector,
    DimensionMismatchError,
    Granularity,
    exact_recovery,
    minimax_allocation,
    monte_carlo_recovery,
    recovery_probability,
)
from keyfrag_server.analyzer.montecarlo import CHUNK_TRIALS
from keyfrag_server.analyzer.verify import check_monte_carlo

UNIFORM = CapacityVector.uniform(2, 4)
BALANCED = minimax_allocation(8, 4)


@pytest.mark.parametrize(
    ("capacities", "counts", "per_type", "per_fragment"),
    [
        ((0.3, 0.6), (2, 1), 0.18, 0.054),
        ((0.3, 0.6), (2, 0), 0.3, 0.09),
        ((0.5, 0.5, 0.5, 0.5), (2, 2, 2, 2), 0.5**4, 0.5**8),
    ],
)
def test_exact_recovery_enumerates_outcomes(
    capacities: tuple[float, ...], counts: tuple[int, ...], per_type: float, per_fragment: float
) -> None:
    c, alloc = CapacityVector(capacities), Allocation(counts)

    assert exact_recovery(c, alloc, Granularity.PER_TYPE) == pytest.approx(per_type)
    assert exact_recovery(c, alloc, Granularity.PER_FRAGMENT) == pytest.approx(per_fragment)
    assert exact_recovery(c, alloc, Granularity.PER_FRAGMENT) == pytest.approx(recovery_probability(c, alloc))


def test_estimates_match_the_exact_values() -> None:
    report = monte_carlo_recovery(UNIFORM, BALANCED, 200_000, seed=3)

    assert report.trials == 200_000
    for granularity in Granularity:
        estimate = report[granularity]
        assert estimate.exact == pytest.approx(exact_recovery(UNIFORM, BALANCED, granularity))
        assert estimate.std_error > 0
        assert estimate.within(5)
    assert report[Granularity.PER_TYPE] is report.per_type


def test_seeded_runs_are_reproducible() -> None:
    trials = 3 * CHUNK_TRIALS + 1000

    first = monte_carlo_recovery(UNIFORM, BALANCED, trials, seed=11)
    again = monte_carlo_recovery(UNIFORM, BALANCED, trials, seed=11)
    parallel = monte_carlo_recovery(UNIFORM, BALANCED, trials, seed=11, workers=4)
    other = monte_carlo_recovery(UNIFORM, BALANCED, trials, seed=12)

    assert first == again == parallel
    assert other != first


def test_certain_compromise() -> None:
    c = CapacityVector((1.0, 1.0))

    report = monte_carlo_recovery(c, Allocation((3, 1)), 1000, seed=0)

    assert report.per_type.estimate == report.per_fragment.estimate == 1.0
    assert report.per_type.std_error == 0.0
    assert report.per_type.within()


def test_at_least_one_trial() -> None:
    with pytest.raises(AnalysisParameterError, match="at least one trial"):
        monte_carlo_recovery(UNIFORM, BALANCED, 0, seed=0)


def test_dimensions_must_match() -> None:
    with pytest.raises(DimensionMismatchError):
        monte_carlo_recovery(UNIFORM, Allocation((4, 4)), 100, seed=0)
    with pytest.raises(DimensionMismatchError):
        exact_recovery(UNIFORM, Allocation((4, 4)), Granularity.PER_TYPE)


@pytest.mark.slow
def test_hundred_seeded_runs_stay_within_three_sigma() -> None:
    result = check_monte_carlo(runs=100, trials=1_000_000, seed=0)

    assert result.passed, result.detail
