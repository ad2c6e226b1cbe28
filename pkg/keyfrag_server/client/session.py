#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
import asyncio
from dataclasses import dataclass, field
from enum import StrEnum

from keyfrag_common.kem import TunnelKey
from keyfrag_common.keycore import AsymmetricKeyPair, PlainFragment, SessionKey
from keyfrag_server.utils.timing import ComponentTimer


class ClientMode(StrEnum):
    CLASSICAL = "classical-multipath"
    PQ_TUNNEL = "pq-tunnel"


class SessionPhase(StrEnum):
    REQUESTING = "requesting"
    COLLECTING = "collecting"
    COMPLETE = "complete"
    FAILED = "failed"

    @property
    def terminal(self) -> bool:
        return self in {SessionPhase.COMPLETE, SessionPhase.FAILED}


@dataclass(frozen=True)
class KeyParameters:
    tagname: str
    key_bits: int = 256
    num_splits: int = 8
    shuffle: bool = True
    party_label: str = ""


@dataclass
class ClientSessionState:
    """One tagname session of a client. Moves from requesting over collecting to complete or failed."""

    tagname: str
    key_bits: int
    num_splits: int
    keypair: AsymmetricKeyPair = field(repr=False)
    deadline: float
    mode: ClientMode = ClientMode.CLASSICAL
    phase: SessionPhase = SessionPhase.REQUESTING
    fragments: dict[int, PlainFragment] = field(default_factory=dict, repr=False)
    tunnel_key: TunnelKey | None = field(default=None, repr=False)
    unwrap_cache: dict[bytes, bytes] = field(default_factory=dict, repr=False)
    key: SessionKey | None = field(default=None, repr=False)
    failure: str | None = None

    discarded: int = 0
    """Fragments that failed decryption or did not belong to this session's fragment set."""
    conflicts: int = 0
    duplicates: int = 0

    timer: ComponentTimer = field(default_factory=ComponentTimer, repr=False)
    received: int = 0
    """Fragments that arrived while the session was collecting, including discarded ones."""
    done: asyncio.Event = field(default_factory=asyncio.Event, repr=False)

    @property
    def missing(self) -> list[int]:
        return sorted(set(range(self.num_splits)) - self.fragments.keys())

    def fail(self, reason: str) -> None:
        if self.phase.terminal:
            return
        self.phase = SessionPhase.FAILED
        self.failure = reason
        self.fragments.clear()
        self.unwrap_cache.clear()
        self.done.set()

    def complete(self, key: SessionKey) -> None:
        self.key = key
        self.phase = SessionPhase.COMPLETE
        self.fragments.clear()
        self.unwrap_cache.clear()
        self.done.set()
