#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
import csv
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from enum import StrEnum
from typing import IO

from keyfrag_server.bench.errors import HarnessError


class Side(StrEnum):
    QKMS = "qkms"
    PROXY = "proxy"
    CLIENT = "client"


COMPONENTS = ("key_generation", "key_processing", "network", "decryption", "reconstruction", "pq_kem")
"""Latency components in report order."""


@dataclass(frozen=True)
class TrialRecord:
    """Timings of one side of one key establishment, in microseconds.

    `wall` is measured independently of the components. `waiting` is time spent idle for the other party, which
    belongs to no latency component. A failed trial has a `failure` reason and no components.
    """

    config_id: str
    side: Side
    run: int
    components: Mapping[str, float] = field(default_factory=dict)
    timestamp: float = 0.0
    wall: float = 0.0
    failure: str | None = None
    waiting: float = 0.0

    def __post_init__(self) -> None:
        unknown = self.components.keys() - set(COMPONENTS)
        if unknown:
            msg = f"Unknown latency components: {sorted(unknown)}"
            raise HarnessError(msg)
        if self.wall < 0 or self.waiting < 0 or any(value < 0 for value in self.components.values()):
            msg = "Durations must not be negative."
            raise HarnessError(msg)

    @property
    def failed(self) -> bool:
        return self.failure is not None

    @property
    def total(self) -> float:
        return sum(self.components.values())

    @property
    def other(self) -> float:
        """Wall-clock time neither a component nor waiting accounts for, negative if components overlap."""
        return self.wall - self.total - self.waiting

    def residual(self) -> float:
        """`other` as a share of the active time, i.e. the wall-clock time minus waiting."""
        active = self.wall - self.waiting
        if active <= 0:
            return 0.0
        return self.other / active


_FIELDS = ("config_id", "side", "run", "timestamp", "wall", "failure", *COMPONENTS, "waiting", "other")


def write_records(records: Iterable[TrialRecord], out: IO[str]) -> int:
    writer = csv.DictWriter(out, fieldnames=_FIELDS)
    writer.writeheader()
    written = 0
    for record in records:
        writer.writerow({
            "config_id": record.config_id,
            "side": record.side,
            "run": record.run,
            "timestamp": record.timestamp,
            "wall": record.wall,
            "failure": record.failure or "",
            **{component: record.components.get(component, "") for component in COMPONENTS},
            "waiting": record.waiting,
            "other": "" if record.failed else record.other,
        })
        written += 1
    return written


def read_records(source: IO[str]) -> list[TrialRecord]:
    """Reads records written by [write_records][]. Raises [HarnessError][] on malformed rows."""
    records = []
    for line, row in enumerate(csv.DictReader(source), start=2):
        try:
            records.append(
                TrialRecord(
                    config_id=row["config_id"],
                    side=Side(row["side"]),
                    run=int(row["run"]),
                    components={name: float(row[name]) for name in COMPONENTS if row.get(name)},
                    timestamp=float(row["timestamp"]),
                    wall=float(row["wall"]),
                    failure=row["failure"] or None,
                    waiting=float(row.get("waiting") or 0.0),
                )
            )
        except (KeyError, ValueError) as error:
            msg = f"Malformed trial record in line {line}: {error}"
            raise HarnessError(msg) from error
    return records
