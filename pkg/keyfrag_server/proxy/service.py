#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
import asyncio
import logging
import random
import time
from collections import deque
from collections.abc import Callable, Coroutine, Iterable
from dataclasses import dataclass, field
from typing import Any

import aiohttp
import pydantic_core
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

from keyfrag_common.kem import KemProvider, TunnelError, TunnelKey
from keyfrag_common.keycore import EncryptedFragment, public_key_fingerprint
from keyfrag_common.models import (
    AbortNotice,
    AckStatus,
    ChannelDescriptor,
    FragmentMessage,
    PoolPayload,
    PoolReturn,
    ProxyKeyRequest,
)
from keyfrag_server.bootstrap import Verdict, credential_address, verify_credential
from keyfrag_server.channels import ReceiverHandle, open_receiver
from keyfrag_server.proxy.config import ChannelPolicy, ProxyConfig, ReturnPath
from keyfrag_server.proxy.pool import PoolDecision, pool_route, redraw_peer, reverse_path
from keyfrag_server.upstream import UpstreamError, post_for_ack, post_json, prepare_tunnel
from keyfrag_server.utils.logger import session_logger
from keyfrag_server.utils.timing import ComponentTimer, now_micros

_log = logging.getLogger("keyfrag:proxy")


class CredentialError(Exception):
    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(f"Client credential rejected: {reason}")


class MissingReplyAddressError(Exception):
    def __init__(self, tagname: str):
        super().__init__(f"Request for tagname '{tagname}' does not say where to forward fragments to.")


class ClientUnreachableError(Exception):
    def __init__(self, client_endpoint: str, cause: Exception):
        super().__init__(f"Client at '{client_endpoint}' could not be reached: {cause}")


@dataclass
class ClientBinding:
    """What a proxy remembers about a client session. No key material is ever part of it."""

    tagname: str
    reply_to: str
    fingerprint: str
    expiry: float
    direct: bool
    """Whether fragments for this client arrive on this proxy's own channels."""
    client_tunnel: TunnelKey | None = None
    upstream_tunnel: TunnelKey | None = None
    forwarded: int = 0
    failed: bool = False
    timer: ComponentTimer = field(default_factory=ComponentTimer)
    lock: asyncio.Lock = field(default_factory=asyncio.Lock, repr=False)
    """Held while the request is forwarded and per relayed fragment, so timed sections never overlap."""


@dataclass
class ExitBinding:
    tagname: str
    path: list[str]
    expiry: float


class KeyProxy:
    """Forwards client key requests upstream with its own channel list and relays the returned fragments.

    The proxy handles ciphertext only; it never holds a session key or a plaintext fragment.

    Args:
        config: routing configuration of this proxy
        qkms_url: base URL of the key management server
        rng: randomness for pool routing, `random.SystemRandom()` if omitted
        kiosk_public_key: if set, every client request must carry a valid credential naming this proxy
        kem: provider used to mirror a client's post-quantum tunnel upstream
        delivery_retries: additional attempts when relaying to a client or pool peer fails
        retry_delay: initial back-off in seconds, doubled per attempt
        session_ttl: seconds a session binding is kept
        instrumented: record every byte string the proxy handles in `observed`
    """

    def __init__(
        self,
        config: ProxyConfig,
        *,
        qkms_url: str,
        rng: random.Random | None = None,
        kiosk_public_key: Ed25519PublicKey | None = None,
        kem: KemProvider | None = None,
        delivery_retries: int = 2,
        retry_delay: float = 0.05,
        session_ttl: float = 60.0,
        instrumented: bool = False,
        timeout: float = 30.0,
        clock: Callable[[], float] = time.monotonic,
        wall_clock: Callable[[], float] = time.time,
    ):
        self.config = config
        self.qkms_url = qkms_url.rstrip("/")
        self._rng = rng or random.SystemRandom()
        self._kiosk_public_key = kiosk_public_key
        self._kem = kem
        self._retries = delivery_retries
        self._retry_delay = retry_delay
        self._session_ttl = session_ttl
        self._timeout = aiohttp.ClientTimeout(total=timeout)
        self._clock = clock
        self._wall_clock = wall_clock

        self.instrumented = instrumented
        self.observed: list[bytes] = []
        self.delivered_payloads: deque[PoolPayload] = deque(maxlen=1024)

        self._client_sessions: dict[str, list[ClientBinding]] = {}
        self._exit_sessions: dict[str, list[ExitBinding]] = {}
        self._receivers: list[ReceiverHandle] = []
        self._tasks: set[asyncio.Task] = set()
        self._session: aiohttp.ClientSession | None = None

    def _client(self) -> aiohttp.ClientSession:
        if self._session is None or self._session.closed:
            self._session = aiohttp.ClientSession(timeout=self._timeout)
        return self._session

    def _observe(self, data: bytes) -> None:
        if self.instrumented:
            self.observed.append(bytes(data))

    def _spawn(self, coroutine: Coroutine[Any, Any, None]) -> None:
        task = asyncio.create_task(coroutine)
        self._tasks.add(task)
        task.add_done_callback(self._tasks.discard)

    async def start_channels(self) -> None:
        """Opens a receiver on each of this proxy's own channels."""
        for channel in self.config.own_channels:
            self._receivers.append(
                await open_receiver(channel, self.receive_channel_fragment, on_abort=self.relay_abort)
            )

    async def close(self) -> None:
        for receiver in self._receivers:
            await receiver.close()
        self._receivers.clear()
        if self._tasks:
            await asyncio.gather(*self._tasks, return_exceptions=True)
        if self._session is not None:
            await self._session.close()

    async def drain(self) -> None:
        """Waits until all fragments received so far have been relayed."""
        while self._tasks:
            await asyncio.gather(*self._tasks, return_exceptions=True)

    def check_credential(self, credential: str | None) -> None:
        """Raises [CredentialError][] unless no kiosk key is configured or the credential is valid for this proxy."""
        if self._kiosk_public_key is None:
            return
        if not credential:
            msg = "no credential presented"
            raise CredentialError(msg)

        verdict: Verdict = verify_credential(credential, self._kiosk_public_key, now=self._wall_clock())
        if not verdict.accepted:
            raise CredentialError(str(verdict.status))
        if credential_address(credential) != self.config.netloc:
            msg = "credential names another proxy"
            raise CredentialError(msg)

    async def handle_client_request(
        self, request: ProxyKeyRequest, *, client_tunnel: TunnelKey | None = None, kem_micros: float = 0.0
    ) -> AckStatus:
        """Entry point for a client's key request, plain or already taken out of the client's tunnel.

        Raises:
            CredentialError: If a credential is required and missing or invalid.
            MissingReplyAddressError: If the request lacks `reply_to`.
            UpstreamError: If the next hop was unreachable or rejected the request.
        """
        self._observe(pydantic_core.to_json(request))
        self.check_credential(request.credential)
        if not request.reply_to:
            raise MissingReplyAddressError(request.tagname)

        self.purge_expired()
        binding = ClientBinding(
            tagname=request.tagname,
            reply_to=request.reply_to.rstrip("/"),
            fingerprint=public_key_fingerprint(request.public_key),
            expiry=self._clock() + self._session_ttl,
            direct=not self.config.in_pool or self.config.return_path is ReturnPath.ENTRY,
            client_tunnel=client_tunnel,
        )
        if client_tunnel is not None:
            binding.timer.start(earlier=kem_micros)
            binding.timer.add("pq_kem", kem_micros)
        else:
            binding.timer.start()
        self._client_sessions.setdefault(request.tagname, []).append(binding)
        session_logger(_log, request.tagname).info(
            "Client %s registered, forwarding fragments to %s.", binding.fingerprint[:16], binding.reply_to
        )

        stripped = request.model_copy(update={"reply_to": None, "credential": None})
        async with binding.lock:
            try:
                if self.config.in_pool:
                    with binding.timer.measure("network"):
                        status = await self.handle_pool_forward(
                            PoolPayload(request=stripped, entry_id=self.config.proxy_id)
                        )
                else:
                    status = await self.forward_request(stripped, binding)
            except Exception:
                self._unbind(binding)
                raise
            binding.timer.stop()
            if status is AckStatus.WAITING and binding.forwarded == 0:
                binding.timer.idle()
        return status

    def _channels_for(self, request: ProxyKeyRequest, own: Iterable[ChannelDescriptor]) -> list[ChannelDescriptor]:
        if self.config.channel_policy is ChannelPolicy.APPEND:
            return [*request.channels, *own]
        return list(own)

    async def forward_request(self, request: ProxyKeyRequest, binding: ClientBinding | None = None) -> AckStatus:
        """Sends the request to the key management server with this proxy's channels in place of (or after) the
        client's. A client tunnel is mirrored upstream if this proxy has a KEM provider.
        """
        upstream = request.to_upstream(self._channels_for(request, self.config.own_channels))
        session = self._client()
        timer = binding.timer if binding is not None else ComponentTimer()

        if binding is not None and binding.client_tunnel is not None and self._kem is not None:
            start = now_micros()
            prepared = await prepare_tunnel(session, self.qkms_url, self._kem, request.tagname, upstream)
            binding.upstream_tunnel = prepared.key
            timer.add("pq_kem", prepared.kem_micros)
            timer.add("network", max(0.0, now_micros() - start - prepared.kem_micros))
            self._observe(pydantic_core.to_json(prepared.envelope))
            with timer.measure("network"):
                ack = await post_for_ack(session, f"{self.qkms_url}/pq/get-key-parameters", prepared.envelope)
        else:
            body = pydantic_core.to_json(upstream)
            self._observe(body)
            with timer.measure("network"):
                ack = await post_for_ack(session, f"{self.qkms_url}/get-key-parameters", body)

        return ack.status

    async def handle_pool_forward(self, payload: PoolPayload) -> AckStatus:
        """Routes a pool payload one hop: forward to a random peer or, as exit node, deliver upstream."""
        self._observe(pydantic_core.to_json(payload))
        decision: PoolDecision = pool_route(payload, self.config, self._rng)
        log = session_logger(_log, payload.request.tagname)
        if decision.forced:
            log.warning("Payload arrived after %d hop(s), at or beyond the cap; exiting here.", payload.hop_count)

        unreachable: set[str] = set()
        peer = decision.next_peer
        while peer is not None:
            try:
                ack = await post_for_ack(self._client(), f"{peer.address}/pool-forward", decision.payload)
            except UpstreamError as error:
                if error.status is not None:
                    raise
                log.warning("Pool peer '%s' unreachable, drawing another one.", peer.proxy_id)
                unreachable.add(peer.proxy_id)
                peer = redraw_peer(self.config, self._rng, unreachable)
            else:
                return ack.status

        return await self._deliver_as_exit(decision.payload)

    async def _deliver_as_exit(self, payload: PoolPayload) -> AckStatus:
        tagname = payload.request.tagname
        path = reverse_path(payload)
        exit_binding = None

        if self.config.return_path is ReturnPath.ENTRY:
            channels = payload.route[0].channels
        else:
            channels = list(self.config.own_channels)
            if path:
                exit_binding = ExitBinding(tagname=tagname, path=path, expiry=self._clock() + self._session_ttl)
                self._exit_sessions.setdefault(tagname, []).append(exit_binding)
            else:
                # Entry and exit coincide.
                for binding in self._client_sessions.get(tagname, []):
                    binding.direct = True

        self.delivered_payloads.append(payload)
        session_logger(_log, tagname).info("Exiting the pool after %d hop(s).", payload.hop_count)

        upstream = payload.request.to_upstream(self._channels_for(payload.request, channels))
        body = pydantic_core.to_json(upstream)
        self._observe(body)
        try:
            ack = await post_for_ack(self._client(), f"{self.qkms_url}/get-key-parameters", body)
        except UpstreamError:
            if exit_binding is not None:
                self._exit_sessions[tagname].remove(exit_binding)
            raise
        return ack.status

    async def receive_channel_fragment(self, fragment: EncryptedFragment, _channel: ChannelDescriptor) -> None:
        """Sink of this proxy's own channel receivers."""
        self._observe(fragment.ciphertext)
        tagname = fragment.session_tag
        exits = self._exit_sessions.get(tagname, [])
        clients = [binding for binding in self._client_sessions.get(tagname, []) if binding.direct]

        if not exits and not clients:
            session_logger(_log, tagname).warning("Dropping fragment of unknown session.")
            return

        for exit_binding in exits:
            self._spawn(self._return_along(fragment, exit_binding.path))
        for binding in clients:
            self._spawn(self._relay(binding, fragment))

    async def handle_pool_return(self, message: PoolReturn) -> None:
        fragment = message.fragment.to_fragment()
        self._observe(fragment.ciphertext)

        if message.path:
            self._spawn(self._return_along(fragment, message.path))
            return

        bindings = self._client_sessions.get(fragment.session_tag, [])
        if not bindings:
            session_logger(_log, fragment.session_tag).warning("Pool return for unknown session dropped.")
        for binding in bindings:
            self._spawn(self._relay(binding, fragment))

    async def _return_along(self, fragment: EncryptedFragment, path: list[str]) -> None:
        body = pydantic_core.to_json(PoolReturn(fragment=FragmentMessage.from_fragment(fragment), path=path[1:]))
        try:
            await self._post_with_retry(f"{path[0]}/pool-return", body)
        except UpstreamError as error:
            session_logger(_log, fragment.session_tag).error("Pool return path broken: %s", error)

    async def _relay(self, binding: ClientBinding, fragment: EncryptedFragment) -> None:
        async with binding.lock:
            binding.timer.resume()
            try:
                await self._relay_locked(binding, fragment)
            finally:
                binding.timer.stop()
                # Transit of the next fragment.
                binding.timer.idle("network")

    async def _relay_locked(self, binding: ClientBinding, fragment: EncryptedFragment) -> None:
        log = session_logger(_log, binding.tagname)
        ciphertext = fragment.ciphertext
        aad = fragment.session_tag.encode()

        if binding.upstream_tunnel is not None or binding.client_tunnel is not None:
            with binding.timer.measure("pq_kem"):
                try:
                    if binding.upstream_tunnel is not None:
                        ciphertext = binding.upstream_tunnel.open(ciphertext, aad)
                except TunnelError:
                    # Fragment of another party with the same tagname behind this proxy.
                    log.debug("Fragment not sealed for client %s, skipped.", binding.fingerprint[:16])
                    return

                if binding.client_tunnel is not None:
                    ciphertext = binding.client_tunnel.seal(ciphertext, aad)

        with binding.timer.measure("network"):
            try:
                binding.forwarded += await self.aggregate_and_forward(
                    [EncryptedFragment(session_tag=fragment.session_tag, ciphertext=ciphertext)], binding.reply_to
                )
            except ClientUnreachableError as error:
                binding.failed = True
                log.error("%s", error)

    async def aggregate_and_forward(self, fragments: Iterable[EncryptedFragment], client_endpoint: str) -> int:
        """Relays fragments bit-exactly to the client's `POST /receive-key-fragment`.

        Returns:
            number of fragments forwarded

        Raises:
            ClientUnreachableError: If the client stayed unreachable through all retries. The client is sent a
                session-failed notice first (best effort).
        """
        forwarded = 0
        for fragment in fragments:
            body = pydantic_core.to_json(FragmentMessage.from_fragment(fragment))
            self._observe(body)
            try:
                await self._post_with_retry(f"{client_endpoint}/receive-key-fragment", body)
            except UpstreamError as error:
                await self._notify_session_failed(client_endpoint, fragment.session_tag, "client unreachable")
                raise ClientUnreachableError(client_endpoint, error) from error
            forwarded += 1
        return forwarded

    async def _post_with_retry(self, url: str, body: bytes) -> None:
        for attempt in range(self._retries + 1):
            try:
                await post_json(self._client(), url, body)
            except UpstreamError:
                if attempt == self._retries:
                    raise
                await asyncio.sleep(self._retry_delay * 2**attempt)
            else:
                return

    async def _notify_session_failed(self, client_endpoint: str, tagname: str, reason: str) -> None:
        try:
            await post_json(
                self._client(), f"{client_endpoint}/session-failed", AbortNotice(session_tag=tagname, reason=reason)
            )
        except UpstreamError as error:
            session_logger(_log, tagname).info("Session-failed notice not delivered: %s", error)

    async def relay_abort(self, notice: AbortNotice, _channel: ChannelDescriptor) -> None:
        """Tells every client of the aborted session; pool bindings are dropped."""
        session_logger(_log, notice.session_tag).warning("Upstream aborted the session: %s", notice.reason)
        self._exit_sessions.pop(notice.session_tag, None)
        for binding in self._client_sessions.pop(notice.session_tag, []):
            await self._notify_session_failed(binding.reply_to, notice.session_tag, notice.reason or "aborted")

    def _unbind(self, binding: ClientBinding) -> None:
        bindings = self._client_sessions.get(binding.tagname, [])
        if binding in bindings:
            bindings.remove(binding)
        if not bindings:
            self._client_sessions.pop(binding.tagname, None)

    def purge_expired(self, now: float | None = None) -> int:
        now = self._clock() if now is None else now
        purged = 0
        for table in (self._client_sessions, self._exit_sessions):
            for tagname in list(table):
                kept = [binding for binding in table[tagname] if binding.expiry >= now]
                purged += len(table[tagname]) - len(kept)
                if kept:
                    table[tagname] = kept  # type: ignore[assignment]
                else:
                    del table[tagname]
        return purged

    def client_bindings(self, tagname: str) -> list[ClientBinding]:
        return list(self._client_sessions.get(tagname, []))

    def session_counts(self) -> dict[str, int]:
        return {
            "client_sessions": sum(len(bindings) for bindings in self._client_sessions.values()),
            "exit_sessions": sum(len(bindings) for bindings in self._exit_sessions.values()),
        }
