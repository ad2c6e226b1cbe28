#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
import csv
import math
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import IO

import matplotlib as mpl
import numpy as np
from scipy.stats import spearmanr

from keyfrag_server.bench.errors import HarnessError, NoRecordsError
from keyfrag_server.bench.records import COMPONENTS, Side, TrialRecord

mpl.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


@dataclass(frozen=True)
class SummaryRow:
    config_id: str
    side: Side
    component: str
    samples: int
    failures: int
    mean: float
    median: float
    p95: float
    p99: float
    std: float


def nearest_rank(values: Sequence[float], percentile: float) -> float:
    """The smallest value with at least `percentile` percent of the values at or below it."""
    if not values:
        raise NoRecordsError
    if not 0 < percentile <= 100:
        msg = f"Percentile must be in (0, 100], got {percentile}."
        raise HarnessError(msg)
    ordered = sorted(values)
    return ordered[math.ceil(percentile / 100 * len(ordered)) - 1]


def summarize(records: Iterable[TrialRecord]) -> list[SummaryRow]:
    """Mean, median, nearest-rank p95 and p99 and standard deviation per configuration, side and component.

    Failed trials are left out of the statistics and counted in `failures`.

    Raises:
        NoRecordsError: If no trial succeeded.
    """
    samples: dict[tuple[str, Side], dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    failures: dict[tuple[str, Side], int] = defaultdict(int)
    for record in records:
        group = (record.config_id, record.side)
        if record.failed:
            failures[group] += 1
            continue
        for component, value in record.components.items():
            samples[group][component].append(value)

    if not samples:
        raise NoRecordsError

    rows = []
    for (config_id, side), by_component in samples.items():
        for component in COMPONENTS:
            values = by_component.get(component)
            if not values:
                continue
            data = np.asarray(values)
            rows.append(
                SummaryRow(
                    config_id=config_id,
                    side=side,
                    component=component,
                    samples=len(values),
                    failures=failures[config_id, side],
                    mean=float(data.mean()),
                    median=float(np.median(data)),
                    p95=nearest_rank(values, 95),
                    p99=nearest_rank(values, 99),
                    std=float(data.std()),
                )
            )
    return rows


def component_mean(rows: Iterable[SummaryRow], config_id: str, side: Side, component: str) -> float:
    for row in rows:
        if (row.config_id, row.side, row.component) == (config_id, side, component):
            return row.mean
    msg = f"No '{component}' timings for side '{side}' of configuration '{config_id}'."
    raise HarnessError(msg)


def side_total(rows: Iterable[SummaryRow], config_id: str, side: Side) -> float:
    """Sum of the component means of one side."""
    return sum(row.mean for row in rows if (row.config_id, row.side) == (config_id, side))


def decomposition_violations(records: Iterable[TrialRecord], tolerance: float = 0.05) -> list[TrialRecord]:
    """Successful records whose components miss the side's wall-clock time by more than `tolerance`."""
    return [record for record in records if not record.failed and abs(record.residual()) > tolerance]


def trend_correlation(points: Mapping[int, float]) -> float:
    """Spearman rank correlation of a mean component time against the split count."""
    if len(points) < 2:
        msg = "A trend needs at least two split counts."
        raise HarnessError(msg)
    splits = sorted(points)
    result = spearmanr(splits, [points[n] for n in splits])
    return float(result.statistic)


def write_summary(rows: Iterable[SummaryRow], out: IO[str]) -> int:
    writer = csv.DictWriter(out, fieldnames=[f.name for f in fields(SummaryRow)])
    writer.writeheader()
    written = 0
    for row in rows:
        writer.writerow(asdict(row))
        written += 1
    return written


def plot_summary(rows: Sequence[SummaryRow], out: Path) -> None:
    """Grouped bars of the component means on a log scale, one group per configuration and side."""
    if not rows:
        raise NoRecordsError

    groups = list(dict.fromkeys((row.config_id, row.side) for row in rows))
    components = [component for component in COMPONENTS if any(row.component == component for row in rows)]
    means = {(row.config_id, row.side, row.component): row.mean for row in rows}
    width = 0.8 / len(components)
    x = np.arange(len(groups))

    fig, ax = plt.subplots(figsize=(max(6.0, 1.6 * len(groups)), 4.5))
    try:
        for offset, component in enumerate(components):
            heights = [means.get((config_id, side, component), 0.0) for config_id, side in groups]
            ax.bar(x + (offset - (len(components) - 1) / 2) * width, heights, width, label=component)

        ax.set_yscale("log")
        ax.set_ylabel("mean time [µs]")
        ax.set_xticks(x, [f"{config_id}\n{side}" for config_id, side in groups])
        ax.legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(out, dpi=150)
    finally:
        plt.close(fig)
