#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
"""HTTP calls a node makes towards the next node on a request's way to the key management server."""

from dataclasses import dataclass
from time import perf_counter_ns

import aiohttp
import pydantic_core
from pydantic import BaseModel, ValidationError

from keyfrag_common.kem import KemError, KemProvider, TunnelKey, tunnel_context
from keyfrag_common.models import Ack, KemPublicKey, TunnelEnvelope

_JSON = {"Content-Type": "application/json"}


class UpstreamError(Exception):
    """The next hop was unreachable or rejected the request. `status` is None if it could not be reached."""

    def __init__(self, url: str, status: int | None, reason: str, text: str = ""):
        self.url = url
        self.status = status
        self.reason = reason
        self.text = text
        where = f"HTTP {status} {reason}" if status is not None else reason
        super().__init__(f"Request to '{url}' failed: {where}. {text}".strip())


async def post_json(session: aiohttp.ClientSession, url: str, body: BaseModel | bytes) -> str:
    data = body if isinstance(body, bytes) else pydantic_core.to_json(body)
    try:
        async with session.post(url, data=data, headers=_JSON) as response:
            text = await response.text()
            if response.status >= 300:
                raise UpstreamError(url, response.status, response.reason or "", text)
            return text
    except (aiohttp.ClientError, TimeoutError) as error:
        raise UpstreamError(url, None, type(error).__name__, str(error)) from error


async def post_for_ack(session: aiohttp.ClientSession, url: str, body: BaseModel | bytes) -> Ack:
    text = await post_json(session, url, body)
    try:
        return Ack.model_validate_json(text)
    except ValidationError as error:
        raise UpstreamError(url, 200, "Malformed acknowledgement", text) from error


async def fetch_kem_public_key(session: aiohttp.ClientSession, base_url: str) -> KemPublicKey:
    url = f"{base_url}/kem/public-key"
    try:
        async with session.get(url) as response:
            text = await response.text()
            if response.status >= 300:
                raise UpstreamError(url, response.status, response.reason or "", text)
    except (aiohttp.ClientError, TimeoutError) as error:
        raise UpstreamError(url, None, type(error).__name__, str(error)) from error

    try:
        return KemPublicKey.model_validate_json(text)
    except ValidationError as error:
        raise UpstreamError(url, 200, "Malformed KEM public key", text) from error


def seal_request(
    provider: KemProvider, public_key: KemPublicKey, tagname: str, body: bytes
) -> tuple[TunnelEnvelope, TunnelKey]:
    """Encapsulates to the peer's KEM key and seals the request body under the derived tunnel key.

    Raises:
        KemError: If the peer uses another provider or encapsulation fails.
    """
    if public_key.provider != provider.name:
        msg = f"Peer offers KEM provider '{public_key.provider}', but '{provider.name}' is configured."
        raise KemError(msg)

    kem_ciphertext, shared_secret = provider.encapsulate(public_key.public_key)
    context = tunnel_context(tagname)
    key = TunnelKey.derive(shared_secret, context)
    envelope = TunnelEnvelope(
        provider=provider.name,
        kem_ciphertext=kem_ciphertext,
        context=context,
        sealed=key.seal(body, context.encode()),
    )
    return envelope, key


@dataclass(frozen=True)
class PreparedTunnel:
    envelope: TunnelEnvelope
    key: TunnelKey
    kem_micros: float


async def prepare_tunnel(
    session: aiohttp.ClientSession, base_url: str, provider: KemProvider, tagname: str, body: BaseModel
) -> PreparedTunnel:
    """Runs the KEM handshake with the node at `base_url` and seals the request for it.

    The caller learns the tunnel key before the sealed request is posted, since fragments sealed under it may arrive
    while the post is still in flight.
    """
    start = perf_counter_ns()
    public_key = await fetch_kem_public_key(session, base_url)
    envelope, key = seal_request(provider, public_key, tagname, pydantic_core.to_json(body))
    return PreparedTunnel(envelope=envelope, key=key, kem_micros=(perf_counter_ns() - start) / 1000)
