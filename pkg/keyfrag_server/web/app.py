#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
import asyncio
import contextlib
import random
from collections.abc import AsyncIterator, Iterable
from typing import Any, ClassVar

from aiohttp import web

from keyfrag_common.constants import MAX_REQUEST_SIZE
from keyfrag_common.kem import get_kem_provider
from keyfrag_common.keycore import AsymmetricKeyPair
from keyfrag_server import __version__
from keyfrag_server.bootstrap import load_kiosk_public_key
from keyfrag_server.channels import ChannelTransport
from keyfrag_server.client import KeyClient
from keyfrag_server.proxy import KeyProxy
from keyfrag_server.qkms import Qkms
from keyfrag_server.settings import Settings
from keyfrag_server.tunnel import TunnelEndpoint


class KeyfragNode:
    """An aiohttp application hosting one node. Subclasses add their routes and the object they serve."""

    NODE_KEY: ClassVar[web.AppKey["KeyfragNode"]] = web.AppKey("keyfrag_node")
    role: ClassVar[str]

    def __init__(self, routes: Iterable[web.AbstractRouteDef], *, name: str):
        self.name = name
        self.listen_address = "127.0.0.1"
        self.listen_port = 0
        self.web_app = web.Application(client_max_size=MAX_REQUEST_SIZE)
        self.web_app.add_routes(routes)
        self.web_app[self.NODE_KEY] = self

    def session_counts(self) -> dict[str, int]:
        return {}

    def start_server(self) -> None:
        def print_start(_ignore: Any) -> None:
            print(  # noqa: T201
                f"======== Running keyfrag {self.role} '{self.name}' {__version__} on port {self.listen_port} ========"
            )

        web.run_app(self.web_app, host=self.listen_address, port=self.listen_port, print=print_start)


class QkmsServer(KeyfragNode):
    APP_KEY: ClassVar[web.AppKey["QkmsServer"]] = web.AppKey("keyfrag_qkms")
    role = "qkms"

    def __init__(
        self, qkms: Qkms, *, tunnel: TunnelEndpoint | None = None, name: str = "qkms", purge_interval: float = 5.0
    ):
        # We import here, so we don't have to work around circular imports.
        from keyfrag_server.web._routes import qkms_app_routes  # noqa: PLC0415

        super().__init__(qkms_app_routes, name=name)
        self.web_app[self.APP_KEY] = self
        self.qkms = qkms
        self.tunnel = tunnel
        self._purge_interval = purge_interval
        self.web_app.cleanup_ctx.append(self._lifecycle)

    @classmethod
    def from_settings(cls, settings: Settings) -> "QkmsServer":
        seed = settings.channels.seed
        transport = ChannelTransport(
            rng=random.Random(seed) if seed is not None else None,
            retries=settings.channels.delivery_retries,
            timeout=settings.channels.delivery_timeout,
        )
        qkms = Qkms(
            transport,
            pairing_window=settings.qkms.pairing_window.total_seconds(),
            supported_key_bits=settings.qkms.supported_key_bits,
            encryption_mode=settings.qkms.encryption_mode,
        )
        tunnel = None
        if settings.qkms.kem:
            tunnel = TunnelEndpoint(get_kem_provider(settings.qkms.kem, seed=settings.qkms.kem_seed))

        server = cls(qkms, tunnel=tunnel)
        server.listen_address = settings.qkms.listen_address
        server.listen_port = settings.qkms.listen_port
        return server

    async def _purge_periodically(self) -> None:
        while True:
            await asyncio.sleep(self._purge_interval)
            self.qkms.purge_expired()

    async def _lifecycle(self, _app: web.Application) -> AsyncIterator[None]:
        purger = asyncio.create_task(self._purge_periodically())
        yield
        purger.cancel()
        with contextlib.suppress(asyncio.CancelledError):
            await purger
        await self.qkms.transport.close()

    def session_counts(self) -> dict[str, int]:
        state = self.qkms.inspect_state()
        return {"pending": len(state.pending), "completed": len(state.completed), "open": len(state.live_keys)}


class ProxyServer(KeyfragNode):
    APP_KEY: ClassVar[web.AppKey["ProxyServer"]] = web.AppKey("keyfrag_proxy")
    role = "proxy"

    def __init__(self, proxy: KeyProxy, *, tunnel: TunnelEndpoint | None = None):
        from keyfrag_server.web._routes import proxy_app_routes  # noqa: PLC0415

        super().__init__(proxy_app_routes, name=proxy.config.proxy_id)
        self.web_app[self.APP_KEY] = self
        self.proxy = proxy
        self.tunnel = tunnel
        self.web_app.cleanup_ctx.append(self._lifecycle)

    @classmethod
    def from_settings(cls, settings: Settings) -> "ProxyServer":
        proxy_settings = settings.proxy
        kem = get_kem_provider(proxy_settings.kem, seed=proxy_settings.kem_seed) if proxy_settings.kem else None
        kiosk_key = load_kiosk_public_key(proxy_settings.kiosk_public_key) if proxy_settings.kiosk_public_key else None

        proxy = KeyProxy(
            proxy_settings.to_config(),
            qkms_url=proxy_settings.qkms_url,
            kiosk_public_key=kiosk_key,
            kem=kem,
            delivery_retries=proxy_settings.delivery_retries,
            session_ttl=proxy_settings.session_ttl.total_seconds(),
        )
        server = cls(proxy, tunnel=TunnelEndpoint(kem) if kem else None)
        server.listen_address = proxy_settings.listen_address
        server.listen_port = proxy_settings.listen_port
        return server

    async def _lifecycle(self, _app: web.Application) -> AsyncIterator[None]:
        await self.proxy.start_channels()
        yield
        await self.proxy.close()

    def session_counts(self) -> dict[str, int]:
        return self.proxy.session_counts()


class ClientServer(KeyfragNode):
    APP_KEY: ClassVar[web.AppKey["ClientServer"]] = web.AppKey("keyfrag_client")
    role = "client"

    def __init__(self, client: KeyClient, *, name: str = "client"):
        from keyfrag_server.web._routes import client_app_routes  # noqa: PLC0415

        super().__init__(client_app_routes, name=name)
        self.web_app[self.APP_KEY] = self
        self.client = client
        self.web_app.cleanup_ctx.append(self._lifecycle)

    @classmethod
    def from_settings(cls, settings: Settings) -> "ClientServer":
        server = cls(build_client(settings))
        server.listen_address = settings.client.listen_address
        server.listen_port = settings.client.listen_port
        return server

    async def _lifecycle(self, _app: web.Application) -> AsyncIterator[None]:
        await self.client.start_channels()
        yield
        await self.client.close()

    def session_counts(self) -> dict[str, int]:
        return self.client.session_counts()


def build_client(settings: Settings) -> KeyClient:
    client_settings = settings.client
    if client_settings.private_key is not None:
        keypair = AsymmetricKeyPair.from_private_key(client_settings.private_key.read_bytes())
    else:
        keypair = AsymmetricKeyPair.generate(client_settings.rsa_key_size)

    kem = get_kem_provider(client_settings.kem, seed=client_settings.kem_seed) if client_settings.kem else None
    return KeyClient(
        keypair=keypair,
        channels=client_settings.channels,
        reply_url=client_settings.reply_url,
        kem=kem,
        credential=client_settings.credential,
        redirects=client_settings.redirects,
        deadline=client_settings.deadline.total_seconds(),
    )
