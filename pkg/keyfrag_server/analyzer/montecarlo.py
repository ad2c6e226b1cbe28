#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
"""Monte-Carlo estimates of the recovery probability and their exact enumeration oracles."""

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import StrEnum

import numpy as np

from keyfrag_server.analyzer.capacity import Allocation, CapacityVector, recovery_probability
from keyfrag_server.analyzer.errors import AnalysisParameterError, DimensionMismatchError

CHUNK_TRIALS = 1 << 16
"""Trials per independently seeded chunk. Chunks are the unit of work, so estimates do not depend on `workers`."""


class Granularity(StrEnum):
    PER_TYPE = "per-type"
    """A trial succeeds if every medium type that carries fragments is compromised."""
    PER_FRAGMENT = "per-fragment"
    """Every fragment on type `i` is intercepted independently with probability `c_i`."""


@dataclass(frozen=True)
class Estimate:
    estimate: float
    std_error: float
    exact: float

    def within(self, sigmas: float = 3.0) -> bool:
        return abs(self.estimate - self.exact) <= sigmas * self.std_error + 1e-15


@dataclass(frozen=True)
class MonteCarloReport:
    trials: int
    per_type: Estimate
    per_fragment: Estimate

    def __getitem__(self, granularity: Granularity) -> Estimate:
        return self.per_type if granularity is Granularity.PER_TYPE else self.per_fragment


def per_type_probability(c: CapacityVector, alloc: Allocation) -> float:
    """Closed form of the per-type event: `prod(c_i)` over the types carrying fragments."""
    return math.prod(value for value, count in zip(c.c, alloc.counts, strict=True) if count > 0)


def exact_recovery(c: CapacityVector, alloc: Allocation, granularity: Granularity) -> float:
    """Sums the probability of every compromise outcome that recovers the key.

    Per type this enumerates the `2^d` type outcomes, per fragment the `2^n` fragment outcomes.
    """
    if c.d != alloc.d:
        raise DimensionMismatchError(c.d, alloc.d)

    if granularity is Granularity.PER_TYPE:
        probabilities = c.c
        needed = [count > 0 for count in alloc.counts]
    else:
        probabilities = tuple(value for value, count in zip(c.c, alloc.counts, strict=True) for _ in range(count))
        needed = [True] * len(probabilities)

    total = 0.0
    for outcome in itertools.product((False, True), repeat=len(probabilities)):
        if not all(hit or not need for hit, need in zip(outcome, needed, strict=True)):
            continue
        total += math.prod(p if hit else 1 - p for p, hit in zip(probabilities, outcome, strict=True))
    return total


def _chunk_successes(
    seed: np.random.SeedSequence, trials: int, c: np.ndarray, counts: np.ndarray
) -> tuple[int, int]:
    rng = np.random.default_rng(seed)
    bearing = counts > 0

    types = rng.random((trials, c.size)) < c
    per_type = int(np.count_nonzero(np.all(types[:, bearing], axis=1)))

    fragment_capacities = np.repeat(c, counts)
    fragments = rng.random((trials, fragment_capacities.size)) < fragment_capacities
    per_fragment = int(np.count_nonzero(np.all(fragments, axis=1)))
    return per_type, per_fragment


def _estimate(successes: int, trials: int, exact: float) -> Estimate:
    p = successes / trials
    return Estimate(estimate=p, std_error=math.sqrt(p * (1 - p) / trials), exact=exact)


def monte_carlo_recovery(
    c: CapacityVector, alloc: Allocation, trials: int, seed: int, *, workers: int = 1
) -> MonteCarloReport:
    """Simulates independent compromise events and reports both granularities with their binomial standard error.

    Trials are split into chunks of [CHUNK_TRIALS][], each with its own child of `SeedSequence(seed)`; the result is
    deterministic under `seed` whatever the number of workers.

    Raises:
        AnalysisParameterError: If `trials < 1`.
        DimensionMismatchError: If capacities and allocation differ in length.
    """
    if trials < 1:
        msg = f"Need at least one trial, got {trials}."
        raise AnalysisParameterError(msg)
    if c.d != alloc.d:
        raise DimensionMismatchError(c.d, alloc.d)

    sizes = [CHUNK_TRIALS] * (trials // CHUNK_TRIALS)
    if trials % CHUNK_TRIALS:
        sizes.append(trials % CHUNK_TRIALS)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    capacities = np.asarray(c.c, dtype=float)
    counts = np.asarray(alloc.counts, dtype=int)

    jobs = list(zip(seeds, sizes, strict=True))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(lambda job: _chunk_successes(*job, capacities, counts), jobs))
    else:
        results = [_chunk_successes(child, size, capacities, counts) for child, size in jobs]

    per_type = sum(result[0] for result in results)
    per_fragment = sum(result[1] for result in results)
    return MonteCarloReport(
        trials=trials,
        per_type=_estimate(per_type, trials, per_type_probability(c, alloc)),
        per_fragment=_estimate(per_fragment, trials, recovery_probability(c, alloc)),
    )
