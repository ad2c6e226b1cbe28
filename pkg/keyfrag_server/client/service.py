#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
import asyncio
import logging
import time
from collections.abc import Callable, Iterable, Mapping

import aiohttp
import pydantic_core

from keyfrag_common.kem import KemError, KemProvider, TunnelError
from keyfrag_common.keycore import (
    AsymmetricKeyPair,
    EncryptedFragment,
    FragmentConflictError,
    FragmentDecryptionError,
    FragmentProtocolError,
    KeyCoreError,
    SessionKey,
    decrypt_fragment,
    reconstruct_key,
)
from keyfrag_common.models import (
    AbortNotice,
    AckStatus,
    ChannelDescriptor,
    KeyRequest,
    ProxyKeyRequest,
    TunnelEnvelope,
)
from keyfrag_server.channels import ReceiverHandle, open_receiver
from keyfrag_server.client.errors import KemModeError, SessionFailedError, SessionStateError
from keyfrag_server.client.session import ClientMode, ClientSessionState, KeyParameters, SessionPhase
from keyfrag_server.upstream import UpstreamError, post_for_ack, prepare_tunnel
from keyfrag_server.utils.logger import session_logger
from keyfrag_server.utils.timing import now_micros

_log = logging.getLogger("keyfrag:client")
_audit_log = logging.getLogger("keyfrag:client:audit")


class KeyClient:
    """A communicating party that requests session keys and collects their fragments.

    Fragments arrive either on the client's own channels (one listener per channel) or, behind a proxy, on
    `POST /receive-key-fragment` at `reply_url`.

    Args:
        keypair: the classical key pair fragments are encrypted to; generated if omitted
        channels: the client's own channels, may be empty behind a proxy
        reply_url: base URL of this client's HTTP server; if set, requests carry it as `reply_to`
        kem: KEM provider for the post-quantum tunnel mode
        credential: kiosk credential text forwarded to the proxy
        redirects: target URL rewrites, how a transparent proxy intercepts requests addressed to the key management
            server
        deadline: seconds a session may take before it fails
        instrumented: record every request body sent in `outgoing`
    """

    def __init__(
        self,
        *,
        keypair: AsymmetricKeyPair | None = None,
        channels: Iterable[ChannelDescriptor] = (),
        reply_url: str | None = None,
        kem: KemProvider | None = None,
        credential: str | None = None,
        redirects: Mapping[str, str] | None = None,
        deadline: float = 60.0,
        instrumented: bool = False,
        timeout: float = 30.0,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.keypair = keypair or AsymmetricKeyPair.generate()
        self.channels = list(channels)
        self.reply_url = reply_url.rstrip("/") if reply_url else None
        self.credential = credential
        self.redirects = {source.rstrip("/"): target.rstrip("/") for source, target in (redirects or {}).items()}
        self.deadline = deadline
        self.instrumented = instrumented
        self.outgoing: list[bytes] = []

        self._kem = kem
        self._timeout = aiohttp.ClientTimeout(total=timeout)
        self._clock = clock
        self._sessions: dict[str, ClientSessionState] = {}
        self._timers: dict[str, asyncio.TimerHandle] = {}
        self._receivers: list[ReceiverHandle] = []
        self._session: aiohttp.ClientSession | None = None

    def _client(self) -> aiohttp.ClientSession:
        if self._session is None or self._session.closed:
            self._session = aiohttp.ClientSession(timeout=self._timeout)
        return self._session

    async def start_channels(self) -> None:
        for channel in self.channels:
            self._receivers.append(await open_receiver(channel, self._on_channel_fragment, on_abort=self._on_abort))

    async def close(self) -> None:
        for receiver in self._receivers:
            await receiver.close()
        self._receivers.clear()
        for handle in self._timers.values():
            handle.cancel()
        self._timers.clear()
        if self._session is not None:
            await self._session.close()

    def resolve_target(self, target: str) -> str:
        target = target.rstrip("/")
        return self.redirects.get(target, target)

    def build_request(self, params: KeyParameters) -> KeyRequest:
        """The body sent to the target: a proxy request if this client is reachable over HTTP, else a plain one.

        Raises:
            pydantic.ValidationError: If the client has neither channels nor a reply URL.
        """
        fields = {
            "tagname": params.tagname,
            "key_bits": params.key_bits,
            "num_splits": params.num_splits,
            "shuffle": params.shuffle,
            "channels": self.channels,
            "public_key": self.keypair.public_key,
            "party_label": params.party_label,
        }
        if self.reply_url is not None:
            return ProxyKeyRequest(**fields, reply_to=self.reply_url, credential=self.credential)
        return KeyRequest(**fields)

    def _record(self, body: bytes) -> bytes:
        if self.instrumented:
            self.outgoing.append(body)
        return body

    async def request_key(
        self, params: KeyParameters, target: str, mode: ClientMode = ClientMode.CLASSICAL
    ) -> ClientSessionState:
        """Sends a key request to the key management server or a proxy and starts collecting fragments.

        Raises:
            SessionStateError: If a session with this tagname is still running.
            KemModeError: If the tunnel mode was asked for but the handshake failed.
            UpstreamError: If the target was unreachable or rejected the request; the session is failed.
        """
        existing = self._sessions.get(params.tagname)
        if existing is not None and not existing.phase.terminal:
            raise SessionStateError(params.tagname, existing.phase, "restart")

        body = self.build_request(params)
        state = ClientSessionState(
            tagname=params.tagname,
            key_bits=params.key_bits,
            num_splits=params.num_splits,
            keypair=self.keypair,
            deadline=self._clock() + self.deadline,
            mode=mode,
        )
        state.timer.start()
        self._sessions[params.tagname] = state
        log = session_logger(_log, params.tagname)
        target = self.resolve_target(target)

        try:
            if mode is ClientMode.PQ_TUNNEL:
                envelope = await self._open_tunnel(state, target, body)
                url, data = f"{target}/pq/get-key-parameters", pydantic_core.to_json(envelope)
            else:
                url, data = f"{target}/get-key-parameters", pydantic_core.to_json(body)

            self._arm_deadline(state)
            state.phase = SessionPhase.COLLECTING
            # Booked as network until the ack or the first fragment, whichever comes first.
            state.timer.idle("network")
            ack = await post_for_ack(self._client(), url, self._record(data))
        except (KemModeError, UpstreamError) as error:
            self._fail(state, str(error))
            raise

        if ack.status is AckStatus.WAITING and state.timer.idling and not state.received:
            # Idle for the other party from here on.
            state.timer.idle()

        log.info("Request acknowledged with '%s', collecting %d fragment(s).", ack.status, params.num_splits)
        if ack.status is AckStatus.WAITING:
            log.debug("Waiting for the other party.")
        return state

    async def _open_tunnel(self, state: ClientSessionState, target: str, body: KeyRequest) -> TunnelEnvelope:
        if self._kem is None:
            msg = "The tunnel mode needs a KEM provider."
            raise KemModeError(msg)
        start = now_micros()
        try:
            prepared = await prepare_tunnel(self._client(), target, self._kem, state.tagname, body)
        except KemError as error:
            raise KemModeError(str(error)) from error
        except UpstreamError as error:
            if error.status is None:
                raise
            msg = f"Target does not offer the tunnel: {error}"
            raise KemModeError(msg) from error

        state.tunnel_key = prepared.key
        state.timer.add("pq_kem", prepared.kem_micros)
        state.timer.add("network", max(0.0, now_micros() - start - prepared.kem_micros))
        return prepared.envelope

    def _arm_deadline(self, state: ClientSessionState) -> None:
        delay = max(0.0, state.deadline - self._clock())
        self._timers[state.tagname] = asyncio.get_running_loop().call_later(delay, self._expire, state)

    def _expire(self, state: ClientSessionState) -> None:
        if not state.phase.terminal:
            self._fail(state, f"deadline passed with fragments {state.missing} missing")

    def _fail(self, state: ClientSessionState, reason: str) -> None:
        if state.phase.terminal:
            return
        session_logger(_log, state.tagname).warning("Session failed: %s", reason)
        state.fail(reason)
        self._finish(state)

    def _finish(self, state: ClientSessionState) -> None:
        state.timer.stop()
        handle = self._timers.pop(state.tagname, None)
        if handle is not None:
            handle.cancel()

    def receive_fragment(self, fragment: EncryptedFragment) -> ClientSessionState | None:
        """Decrypts and stores one fragment; the last missing one completes the session.

        Runs without suspending, so fragments of one session are processed one at a time.

        Returns:
            the updated session, or None if the session tag is unknown
        """
        state = self._sessions.get(fragment.session_tag)
        if state is None:
            _audit_log.warning("Ignored fragment for unknown session tag %r.", fragment.session_tag)
            return None

        log = session_logger(_log, state.tagname)
        if state.phase.terminal:
            log.debug("Session is %s, ignoring late fragment.", state.phase)
            return state
        state.timer.resume()
        state.received += 1
        if self._clock() > state.deadline:
            self._fail(state, "deadline passed")
            return state

        self._accept(state, fragment)
        if not state.phase.terminal:
            # Transit of the next fragment.
            state.timer.idle("network")
        return state

    def _accept(self, state: ClientSessionState, fragment: EncryptedFragment) -> None:
        log = session_logger(_log, state.tagname)
        try:
            with state.timer.measure("decryption"):
                encrypted = fragment
                if state.tunnel_key is not None:
                    ciphertext = state.tunnel_key.open(fragment.ciphertext, fragment.session_tag.encode())
                    encrypted = EncryptedFragment(session_tag=fragment.session_tag, ciphertext=ciphertext)
                plain = decrypt_fragment(encrypted, self.keypair.private_key_object, unwrap_cache=state.unwrap_cache)
        except (TunnelError, FragmentDecryptionError, FragmentProtocolError):
            state.discarded += 1
            log.info("Discarded a fragment that did not decrypt (%d so far).", state.discarded)
            return

        if plain.total != state.num_splits:
            state.discarded += 1
            log.warning("Discarded a fragment announcing %d fragments, expected %d.", plain.total, state.num_splits)
            return

        previous = state.fragments.get(plain.index)
        if previous is not None:
            if previous.payload == plain.payload:
                state.duplicates += 1
            else:
                state.conflicts += 1
                log.warning("%s Keeping the first one.", FragmentConflictError(plain.index))
            return

        state.fragments[plain.index] = plain
        if len(state.fragments) < state.num_splits:
            return

        try:
            with state.timer.measure("reconstruction"):
                key = reconstruct_key(state.fragments.values())
        except KeyCoreError as error:
            self._fail(state, str(error))
            return

        if key.bits != state.key_bits:
            self._fail(state, f"reconstructed a {key.bits} bit key, requested {state.key_bits} bits")
            return

        state.complete(key)
        self._finish(state)
        log.info("Session key reconstructed from %d fragment(s).", state.num_splits)

    async def _on_channel_fragment(self, fragment: EncryptedFragment, _channel: ChannelDescriptor) -> None:
        self.receive_fragment(fragment)

    async def _on_abort(self, notice: AbortNotice, _channel: ChannelDescriptor) -> None:
        self.abort(notice.session_tag, notice.reason or "aborted upstream")

    def abort(self, tagname: str, reason: str) -> bool:
        """Fails a running session. Returns whether a session was affected."""
        state = self._sessions.get(tagname)
        if state is None or state.phase.terminal:
            return False
        self._fail(state, reason)
        return True

    def session(self, tagname: str) -> ClientSessionState | None:
        return self._sessions.get(tagname)

    def finalize(self, tagname: str) -> SessionKey:
        """Returns the reconstructed key of a complete session.

        Raises:
            SessionStateError: If the session is unknown or not complete.
        """
        state = self._sessions.get(tagname)
        if state is None:
            raise SessionStateError(tagname, "unknown", "finalize")
        if state.phase is not SessionPhase.COMPLETE or state.key is None:
            raise SessionStateError(tagname, state.phase, "finalize")
        return state.key

    async def wait_for_key(self, tagname: str) -> SessionKey:
        """Waits until the session completes or fails, at the latest until its deadline.

        Raises:
            SessionStateError: If no such session was started.
            SessionFailedError: If the session failed.
        """
        state = self._sessions.get(tagname)
        if state is None:
            raise SessionStateError(tagname, "unknown", "wait for")
        await state.done.wait()
        if state.phase is SessionPhase.FAILED:
            raise SessionFailedError(tagname, state.failure or "unknown reason")
        return self.finalize(tagname)

    def forget(self, tagname: str) -> None:
        state = self._sessions.pop(tagname, None)
        if state is not None and not state.phase.terminal:
            self._fail(state, "forgotten")

    def session_counts(self) -> dict[str, int]:
        counts = {str(phase): 0 for phase in SessionPhase}
        for state in self._sessions.values():
            counts[str(state.phase)] += 1
        return counts
