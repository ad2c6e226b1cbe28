#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.

import random
from collections.abc import AsyncIterator, Iterable

import pytest
from aiohttp import web
from aiohttp.pytest_plugin import AiohttpClient, AiohttpServer
from aiohttp.test_utils import TestClient, TestServer, unused_port

from keyfrag_common.dev.factories import shared_keypair
from keyfrag_common.kem import StubKem
from keyfrag_common.keycore import AsymmetricKeyPair, EncryptedFragment
from keyfrag_common.models import AbortNotice, ChannelDescriptor, FragmentMessage, MediumType
from keyfrag_server.channels import ChannelTransport, ReceiverHandle, open_receiver
from keyfrag_server.qkms import Qkms
from keyfrag_server.tunnel import TunnelEndpoint
from keyfrag_server.web.app import QkmsServer

DEFAULT_MEDIA = (MediumType.WIFI, MediumType.BLUETOOTH, MediumType.CELLULAR)


def local_channels(
    label: str, media: Iterable[MediumType] = DEFAULT_MEDIA, *, tapped: bool = False
) -> list[ChannelDescriptor]:
    """One channel per medium on free local ports."""
    return [
        ChannelDescriptor(channel_id=f"{label}-{medium}-{i}", medium=medium, port=unused_port(), tapped=tapped)
        for i, medium in enumerate(media)
    ]


class FragmentCollector:
    """Listens on channels and keeps whatever arrives."""

    __test__ = False

    def __init__(self) -> None:
        self.fragments: list[EncryptedFragment] = []
        self.aborts: list[AbortNotice] = []
        self.handles: list[ReceiverHandle] = []

    async def listen(self, channels: Iterable[ChannelDescriptor]) -> None:
        for channel in channels:
            self.handles.append(await open_receiver(channel, self._on_fragment, on_abort=self._on_abort))

    async def _on_fragment(self, fragment: EncryptedFragment, _channel: ChannelDescriptor) -> None:
        self.fragments.append(fragment)

    async def _on_abort(self, notice: AbortNotice, _channel: ChannelDescriptor) -> None:
        self.aborts.append(notice)

    def for_tag(self, tagname: str) -> list[EncryptedFragment]:
        return [fragment for fragment in self.fragments if fragment.session_tag == tagname]

    async def close(self) -> None:
        for handle in self.handles:
            await handle.close()


@pytest.fixture(scope="session")
def keypair() -> AsymmetricKeyPair:
    return shared_keypair()


@pytest.fixture(scope="session")
def other_keypair() -> AsymmetricKeyPair:
    return AsymmetricKeyPair.generate()


@pytest.fixture
async def collector() -> AsyncIterator[FragmentCollector]:
    fragment_collector = FragmentCollector()
    yield fragment_collector
    await fragment_collector.close()


@pytest.fixture
async def transport() -> AsyncIterator[ChannelTransport]:
    channel_transport = ChannelTransport(rng=random.Random(0), retries=0, timeout=2.0)
    yield channel_transport
    await channel_transport.close()


@pytest.fixture
def qkms(transport: ChannelTransport) -> Qkms:
    return Qkms(transport, rng=random.Random(1))


@pytest.fixture
def qkms_server(qkms: Qkms) -> QkmsServer:
    return QkmsServer(qkms, tunnel=TunnelEndpoint(StubKem(7)))


@pytest.fixture
async def qkms_client(qkms_server: QkmsServer, aiohttp_client: AiohttpClient) -> TestClient:
    return await aiohttp_client(qkms_server.web_app)


class ClientStub:
    """Stands in for a client behind a proxy and records what the proxy relays to it."""

    __test__ = False

    def __init__(self) -> None:
        self.fragments: list[EncryptedFragment] = []
        self.failures: list[AbortNotice] = []
        self.reachable = True

        routes = web.RouteTableDef()

        @routes.post("/receive-key-fragment")
        async def receive(request: web.Request) -> web.Response:
            if not self.reachable:
                raise web.HTTPServiceUnavailable
            message = FragmentMessage.model_validate_json(await request.read())
            self.fragments.append(message.to_fragment())
            return web.Response(status=204)

        @routes.post("/session-failed")
        async def failed(request: web.Request) -> web.Response:
            self.failures.append(AbortNotice.model_validate_json(await request.read()))
            return web.Response(status=204)

        self.web_app = web.Application()
        self.web_app.add_routes(routes)


def base_url(server: TestServer) -> str:
    return str(server.make_url("/")).rstrip("/")


@pytest.fixture
async def qkms_url(qkms_server: QkmsServer, aiohttp_server: AiohttpServer) -> str:
    return base_url(await aiohttp_server(qkms_server.web_app))


@pytest.fixture
def client_stub() -> ClientStub:
    return ClientStub()


@pytest.fixture
async def client_stub_url(client_stub: ClientStub, aiohttp_server: AiohttpServer) -> str:
    return base_url(await aiohttp_server(client_stub.web_app))
