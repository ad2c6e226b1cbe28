#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
import asyncio
import logging
import random
import threading
from collections.abc import Awaitable, Callable, Iterator
from dataclasses import dataclass
from time import perf_counter

import aiohttp
import pydantic_core

from keyfrag_common.keycore import EncryptedFragment
from keyfrag_common.models import AbortNotice, ChannelDescriptor, FragmentMessage, MediumType
from keyfrag_server.channels.errors import DeliveryError

_log = logging.getLogger("keyfrag:channels")

Sleep = Callable[[float], Awaitable[None]]


@dataclass(frozen=True)
class DeliveryReceipt:
    channel_id: str
    medium: MediumType
    latency: float
    """Sampled simulated delay in seconds."""
    transit_time: float
    """Measured seconds from handing over the fragment until the receiver acknowledged it."""
    attempts: int


@dataclass(frozen=True)
class CaptureEntry:
    channel_id: str
    medium: MediumType
    session_tag: str
    ciphertext: bytes


class CaptureLog:
    """What an adversary tapping channels records. Only ciphertext that went onto a tapped channel ends up here."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._entries: list[CaptureEntry] = []

    def append(self, entry: CaptureEntry) -> None:
        with self._lock:
            self._entries.append(entry)

    def entries(self, medium: MediumType | None = None) -> list[CaptureEntry]:
        with self._lock:
            return [entry for entry in self._entries if medium is None or entry.medium is medium]

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def __iter__(self) -> Iterator[CaptureEntry]:
        return iter(self.entries())


@dataclass
class ChannelCounters:
    sent: int = 0
    delivered: int = 0
    errors: int = 0


class ChannelTransport:
    """Sends fragment wire messages to channel receivers over HTTP after a simulated medium delay.

    Args:
        capture_log: where tapped channels record ciphertext; a fresh log is created if omitted
        rng: source for latency samples
        retries: additional attempts after a failed delivery
        timeout: seconds per attempt
        sleep: awaited with the sampled delay, replaceable in tests
    """

    def __init__(
        self,
        *,
        capture_log: CaptureLog | None = None,
        rng: random.Random | None = None,
        retries: int = 2,
        timeout: float = 5.0,
        sleep: Sleep = asyncio.sleep,
    ):
        self.capture_log = capture_log if capture_log is not None else CaptureLog()
        self._rng = rng or random.Random()
        self._retries = retries
        self._timeout = aiohttp.ClientTimeout(total=timeout)
        self._sleep = sleep
        self._session: aiohttp.ClientSession | None = None
        self._counters: dict[str, ChannelCounters] = {}
        self._counter_lock = threading.Lock()

    def _client(self) -> aiohttp.ClientSession:
        if self._session is None or self._session.closed:
            self._session = aiohttp.ClientSession(timeout=self._timeout)
        return self._session

    def _count(self, channel_id: str, field: str) -> None:
        with self._counter_lock:
            counters = self._counters.setdefault(channel_id, ChannelCounters())
            setattr(counters, field, getattr(counters, field) + 1)

    def counters(self, channel_id: str) -> ChannelCounters:
        with self._counter_lock:
            current = self._counters.get(channel_id, ChannelCounters())
            return ChannelCounters(current.sent, current.delivered, current.errors)

    async def _post(self, url: str, body: bytes) -> str | None:
        """Posts the body, returning None on success or the failure reason."""
        try:
            async with self._client().post(
                url, data=body, headers={"Content-Type": "application/json"}
            ) as response:
                if response.status < 300:
                    return None
                return f"HTTP {response.status}"
        except (aiohttp.ClientError, TimeoutError) as error:
            return type(error).__name__

    async def send_fragment(self, fragment: EncryptedFragment, channel: ChannelDescriptor) -> DeliveryReceipt:
        """Delivers one encrypted fragment to the channel's receiver.

        Raises:
            DeliveryError: If the receiver could not be reached after all retries.
        """
        delay = channel.latency_model.sample(self._rng)
        self._count(channel.channel_id, "sent")
        if channel.tapped:
            self.capture_log.append(
                CaptureEntry(channel.channel_id, channel.medium, fragment.session_tag, fragment.ciphertext)
            )

        body = pydantic_core.to_json(FragmentMessage.from_fragment(fragment))
        start = perf_counter()
        await self._sleep(delay)

        reason = "not attempted"
        for attempt in range(1, self._retries + 2):
            reason = await self._post(f"{channel.url}/fragment", body)
            if reason is None:
                self._count(channel.channel_id, "delivered")
                return DeliveryReceipt(
                    channel_id=channel.channel_id,
                    medium=channel.medium,
                    latency=delay,
                    transit_time=perf_counter() - start,
                    attempts=attempt,
                )
            _log.debug("Attempt %d on channel '%s' failed: %s", attempt, channel.channel_id, reason)

        self._count(channel.channel_id, "errors")
        raise DeliveryError(channel, reason)

    async def send_abort(self, notice: AbortNotice, channel: ChannelDescriptor) -> bool:
        """Best-effort abort notice; returns whether the receiver acknowledged it."""
        reason = await self._post(f"{channel.url}/abort", pydantic_core.to_json(notice))
        if reason is not None:
            _log.info("Abort notice on channel '%s' was not delivered: %s", channel.channel_id, reason)
        return reason is None

    async def close(self) -> None:
        if self._session is not None:
            await self._session.close()
