#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
from dataclasses import dataclass, field
from enum import StrEnum

from keyfrag_common.kem import TunnelKey
from keyfrag_common.keycore import SessionKey, zeroize
from keyfrag_common.models import KeyRequest
from keyfrag_server.channels import DispatchAssignment


@dataclass
class PartyRequest:
    """A key request together with how it reached the server."""

    request: KeyRequest
    tunnel: TunnelKey | None = None
    kem_micros: float = 0.0


@dataclass
class PendingSession:
    tagname: str
    first_party: PartyRequest
    arrival: float
    expiry: float

    def expired(self, now: float) -> bool:
        return now > self.expiry


class SessionState(StrEnum):
    GENERATED = "generated"
    COMPLETE = "complete"
    ABORTED = "aborted"


@dataclass(frozen=True)
class DispatchReport:
    """Timings of one party's dispatch in microseconds.

    `components` holds `key_generation`, `key_processing`, `network` and, for tunnelled requests, `pq_kem`. `wall` is
    the server-side elapsed time those components decompose.
    """

    tagname: str
    party_label: str
    assignment: DispatchAssignment
    send_order: tuple[int, ...]
    components: dict[str, float]
    wall: float


@dataclass
class SessionRecord:
    tagname: str
    key_bits: int
    key: bytearray = field(repr=False)
    generation_micros: float = 0.0
    state: SessionState = SessionState.GENERATED
    reports: list[DispatchReport] = field(default_factory=list)

    def session_key(self) -> SessionKey:
        return SessionKey(bits=self.key_bits, material=bytes(self.key))

    @property
    def zeroized(self) -> bool:
        return not any(self.key)

    def close(self, state: SessionState) -> None:
        zeroize(self.key)
        self.state = state
