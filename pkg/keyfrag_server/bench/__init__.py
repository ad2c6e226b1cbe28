#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
"""Latency decomposition of complete key establishments."""

from .config import BenchConfig, load_bench_configs
from .errors import HarnessError, NoRecordsError
from .harness import BenchTopology, run_bench, run_trial
from .records import COMPONENTS, Side, TrialRecord, read_records, write_records
from .summary import (
    SummaryRow,
    component_mean,
    decomposition_violations,
    nearest_rank,
    plot_summary,
    side_total,
    summarize,
    trend_correlation,
    write_summary,
)

__all__ = [
    "COMPONENTS",
    "BenchConfig",
    "BenchTopology",
    "HarnessError",
    "NoRecordsError",
    "Side",
    "SummaryRow",
    "TrialRecord",
    "component_mean",
    "decomposition_violations",
    "load_bench_configs",
    "nearest_rank",
    "plot_summary",
    "read_records",
    "run_bench",
    "run_trial",
    "side_total",
    "summarize",
    "trend_correlation",
    "write_records",
    "write_summary",
]
