#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
import asyncio
import logging
import random
import time
from collections import OrderedDict, deque
from collections.abc import Callable, Iterable
from dataclasses import dataclass

from keyfrag_common.constants import SUPPORTED_KEY_BITS
from keyfrag_common.keycore import (
    EncryptedFragment,
    EncryptionMode,
    EnvelopeKey,
    ParameterError,
    encrypt_fragment,
    fragment_key,
    generate_key,
    load_public_key,
    shuffle_fragments,
)
from keyfrag_common.models import AbortNotice, AckStatus, ChannelDescriptor, KeyRequest
from keyfrag_server.channels import ChannelTransport, DeliveryError, assign_channels
from keyfrag_server.qkms.exceptions import DispatchError, DuplicateTagnameError, NegotiationError
from keyfrag_server.qkms.session import (
    DispatchReport,
    PartyRequest,
    PendingSession,
    SessionRecord,
    SessionState,
)
from keyfrag_server.utils.logger import session_logger
from keyfrag_server.utils.timing import ComponentTimer, now_micros

_log = logging.getLogger("keyfrag:qkms")


@dataclass(frozen=True)
class QkmsState:
    """Snapshot for tests and status pages. `live_keys` lists key material still held by open sessions."""

    pending: tuple[str, ...]
    completed: tuple[str, ...]
    live_keys: tuple[bytes, ...]


class Qkms:
    """Pairs key requests by tagname and dispatches a fresh session key to both parties as encrypted fragments.

    Args:
        transport: channel transport the fragments are sent with
        rng: randomness for keys, shuffles and channel assignment; `random.SystemRandom()` if omitted
        pairing_window: seconds a first request waits for its partner
        supported_key_bits: key length whitelist
        encryption_mode: per-fragment encryption mode
        completed_capacity: how many finished tagnames are remembered to reject late third parties
        clock: monotonic clock in seconds
    """

    def __init__(
        self,
        transport: ChannelTransport,
        *,
        rng: random.Random | None = None,
        pairing_window: float = 30.0,
        supported_key_bits: Iterable[int] = SUPPORTED_KEY_BITS,
        encryption_mode: EncryptionMode = EncryptionMode.DIRECT,
        completed_capacity: int = 1024,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.transport = transport
        self.encryption_mode = encryption_mode
        self.supported_key_bits = tuple(supported_key_bits)
        self._rng = rng or random.SystemRandom()
        self._pairing_window = pairing_window
        self._clock = clock

        self._lock = asyncio.Lock()
        self._pending: dict[str, PendingSession] = {}
        self._completed: OrderedDict[str, None] = OrderedDict()
        self._completed_capacity = completed_capacity
        self._open: dict[str, SessionRecord] = {}

        self.history: deque[SessionRecord] = deque(maxlen=completed_capacity)

    async def handle_key_request(
        self, request: KeyRequest, now: float | None = None, *, party: PartyRequest | None = None
    ) -> AckStatus:
        """Registers a request; the second request of a tagname triggers key generation and dispatch.

        Args:
            request: the validated key request
            now: arrival time, the clock's current reading if omitted
            party: the request wrapped with its tunnel key, if it arrived through the post-quantum tunnel

        Raises:
            ParameterError: If the key length is not supported or the split count exceeds the key bytes.
            DuplicateTagnameError: If the tagname already had two parties.
            NegotiationError: If the key lengths of the two parties differ.
            DispatchError: If fragments could not be delivered; the session is aborted.
        """
        now = self._clock() if now is None else now
        party = party or PartyRequest(request)
        log = session_logger(_log, request.tagname)
        self._check_parameters(request)

        async with self._lock:
            if request.tagname in self._completed:
                raise DuplicateTagnameError(request.tagname)

            pending = self._pending.get(request.tagname)
            if pending is not None and pending.expired(now):
                log.info("Pending request expired, treating new arrival as first party.")
                del self._pending[request.tagname]
                pending = None

            if pending is None:
                self._pending[request.tagname] = PendingSession(
                    tagname=request.tagname, first_party=party, arrival=now, expiry=now + self._pairing_window
                )
                log.info("First party '%s' is waiting for its partner.", request.party_label)
                return AckStatus.WAITING

            first = pending.first_party
            if first.request.key_bits != request.key_bits:
                raise NegotiationError(request.tagname, first.request.key_bits, request.key_bits)

            del self._pending[request.tagname]
            self._remember_completed(request.tagname)

            start = now_micros()
            key = generate_key(request.key_bits, self._rng, supported=self.supported_key_bits)
            record = SessionRecord(
                tagname=request.tagname,
                key_bits=request.key_bits,
                key=bytearray(key.material),
                generation_micros=now_micros() - start,
            )
            del key
            self._open[record.tagname] = record

        log.info("Parties matched, dispatching a %d bit key.", request.key_bits)
        try:
            for current in (first, party):
                try:
                    await self.dispatch_session(record, current)
                except DeliveryError as error:
                    await self._abort(record, (first, party), str(error))
                    raise DispatchError(record.tagname, current.request.party_label, error) from error
        finally:
            self._close(record)

        return AckStatus.DISPATCHED

    def _check_parameters(self, request: KeyRequest) -> None:
        if request.key_bits not in self.supported_key_bits:
            msg = f"Unsupported key length of {request.key_bits} bits, supported are {list(self.supported_key_bits)}."
            raise ParameterError(msg)
        if request.num_splits > request.key_bits // 8:
            msg = f"Cannot split a {request.key_bits} bit key into {request.num_splits} non-empty fragments."
            raise ParameterError(msg)

    async def dispatch_session(self, session: SessionRecord, party: PartyRequest) -> DispatchReport:
        """Fragments, optionally shuffles, encrypts and sends the session key to one party.

        Raises:
            DeliveryError: If a fragment could not be delivered.
        """
        request = party.request
        timer = ComponentTimer()
        timer.add("key_generation", session.generation_micros)
        if party.tunnel is not None:
            timer.add("pq_kem", party.kem_micros)

        start = now_micros()
        with timer.measure("key_processing"):
            fragments = fragment_key(session.session_key(), request.num_splits)
            if request.shuffle:
                fragments = shuffle_fragments(fragments, self._rng)

            public_key = load_public_key(request.public_key)
            envelope = None
            if self.encryption_mode is EncryptionMode.ENVELOPE:
                envelope = EnvelopeKey.create(public_key, session.tagname)

            encrypted = [
                self._seal_for(
                    party,
                    encrypt_fragment(
                        fragment, public_key, self.encryption_mode, session_tag=session.tagname, envelope=envelope
                    ),
                )
                for fragment in fragments
            ]
            assignment = assign_channels(len(fragments), request.channels, self._rng)
            send_order = tuple(fragment.index for fragment in fragments)
            by_id = {channel.channel_id: channel for channel in request.channels}
            del fragments

        with timer.measure("network"):
            results = await asyncio.gather(
                *(
                    self.transport.send_fragment(fragment, by_id[assignment[index]])
                    for index, fragment in zip(send_order, encrypted, strict=True)
                ),
                return_exceptions=True,
            )

        for result in results:
            if isinstance(result, BaseException):
                raise result

        report = DispatchReport(
            tagname=session.tagname,
            party_label=request.party_label,
            assignment=assignment,
            send_order=send_order,
            components=timer.components,
            wall=now_micros() - start + session.generation_micros + timer.components.get("pq_kem", 0.0),
        )
        session.reports.append(report)
        session_logger(_log, session.tagname).debug(
            "Dispatched %d fragments to '%s' over %d channel(s).",
            len(encrypted),
            request.party_label,
            len(set(assignment.values())),
        )
        return report

    @staticmethod
    def _seal_for(party: PartyRequest, fragment: EncryptedFragment) -> EncryptedFragment:
        if party.tunnel is None:
            return fragment
        return EncryptedFragment(
            session_tag=fragment.session_tag,
            ciphertext=party.tunnel.seal(fragment.ciphertext, fragment.session_tag.encode()),
        )

    async def _abort(self, record: SessionRecord, parties: Iterable[PartyRequest], reason: str) -> None:
        session_logger(_log, record.tagname).warning("Aborting session: %s", reason)
        record.close(SessionState.ABORTED)
        # No key reached both parties, so the tagname may be negotiated again.
        self._completed.pop(record.tagname, None)

        notice = AbortNotice(session_tag=record.tagname, reason="dispatch failed")
        channels: dict[str, ChannelDescriptor] = {}
        for party in parties:
            channels.update((channel.endpoint, channel) for channel in party.request.channels)
        await asyncio.gather(*(self.transport.send_abort(notice, channel) for channel in channels.values()))

    def _close(self, record: SessionRecord) -> None:
        if record.state is SessionState.GENERATED:
            record.close(SessionState.COMPLETE)
        self._open.pop(record.tagname, None)
        self.history.append(record)

    def _remember_completed(self, tagname: str) -> None:
        self._completed[tagname] = None
        self._completed.move_to_end(tagname)
        while len(self._completed) > self._completed_capacity:
            self._completed.popitem(last=False)

    def purge_expired(self, now: float | None = None) -> int:
        """Removes pending requests whose pairing window has passed and returns how many were removed."""
        now = self._clock() if now is None else now
        expired = [tagname for tagname, pending in self._pending.items() if pending.expired(now)]
        for tagname in expired:
            del self._pending[tagname]

        if expired:
            _log.info("Purged %d expired pending request(s).", len(expired))
        return len(expired)

    def inspect_state(self) -> QkmsState:
        return QkmsState(
            pending=tuple(self._pending),
            completed=tuple(self._completed),
            live_keys=tuple(bytes(record.key) for record in self._open.values() if not record.zeroized),
        )
