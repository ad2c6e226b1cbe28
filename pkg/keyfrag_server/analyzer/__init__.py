#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
"""Executable capacity model and proxy-pool anonymity bounds, cross-checked by brute force and simulation."""

from .capacity import (
    Allocation,
    CapacityVector,
    adversary_optimum,
    allocation_values,
    balanced_bound,
    convex_cost_numeric,
    convex_cost_optimum,
    enumerate_allocations,
    grid_search_optimum,
    lagrangian_optimum,
    minimax_allocation,
    recovery_probability,
    required_diversity,
)
from .errors import (
    AnalysisError,
    AnalysisParameterError,
    DimensionMismatchError,
    InfeasibleBudgetError,
    InsufficientSamplesError,
)
from .montecarlo import Estimate, Granularity, MonteCarloReport, exact_recovery, monte_carlo_recovery
from .pool import (
    ChiSquareResult,
    PoolParams,
    PoolSimulation,
    composed_trace_probability,
    exit_uniformity_test,
    expected_hops,
    hop_distribution,
    pool_correlation_probability,
    pool_trace_probability,
    simulate_pool,
)
from .tables import diversity_rows, optimum_rows, pool_rows, recovery_rows, write_rows
from .verify import CheckResult, VerifyOptions, run_verification

__all__ = [
    "Allocation",
    "AnalysisError",
    "AnalysisParameterError",
    "CapacityVector",
    "ChiSquareResult",
    "CheckResult",
    "DimensionMismatchError",
    "Estimate",
    "Granularity",
    "InfeasibleBudgetError",
    "InsufficientSamplesError",
    "MonteCarloReport",
    "PoolParams",
    "PoolSimulation",
    "VerifyOptions",
    "adversary_optimum",
    "allocation_values",
    "balanced_bound",
    "composed_trace_probability",
    "convex_cost_numeric",
    "convex_cost_optimum",
    "diversity_rows",
    "enumerate_allocations",
    "exact_recovery",
    "exit_uniformity_test",
    "expected_hops",
    "grid_search_optimum",
    "hop_distribution",
    "lagrangian_optimum",
    "minimax_allocation",
    "monte_carlo_recovery",
    "optimum_rows",
    "pool_correlation_probability",
    "pool_rows",
    "pool_trace_probability",
    "recovery_probability",
    "recovery_rows",
    "required_diversity",
    "run_verification",
    "simulate_pool",
    "write_rows",
]
