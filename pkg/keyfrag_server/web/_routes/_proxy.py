#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
from collections.abc import Awaitable

from aiohttp import web

from keyfrag_common.kem import TunnelError
from keyfrag_common.models import Ack, AckStatus, PoolPayload, PoolReturn, ProxyKeyRequest, TunnelEnvelope
from keyfrag_server.proxy import CredentialError, MissingReplyAddressError
from keyfrag_server.upstream import UpstreamError
from keyfrag_server.web._decorators import ensure_main_body
from keyfrag_server.web._errors import (
    CredentialRejectedError,
    KemUnsupportedError,
    RoutingError,
    TunnelRejectedError,
    UpstreamUnavailableError,
)
from keyfrag_server.web._utils import pydantic_json_response
from keyfrag_server.web.app import ProxyServer

proxy_routes = web.RouteTableDef()


async def _acknowledge(pending: Awaitable[AckStatus]) -> web.Response:
    """Awaits the proxy's upstream exchange and maps its failures onto HTTP errors.

    A rejection by the key management server is passed through with its status and body.
    """
    try:
        status = await pending
    except CredentialError as error:
        raise CredentialRejectedError(str(error)) from error
    except MissingReplyAddressError as error:
        raise RoutingError(str(error)) from error
    except UpstreamError as error:
        if error.status is None:
            raise UpstreamUnavailableError(str(error)) from error
        return web.Response(status=error.status, reason=error.reason, text=error.text)

    return pydantic_json_response(data=Ack(status=status))


@proxy_routes.post("/get-key-parameters")
@ensure_main_body
async def post_key_request(request: web.Request, data: ProxyKeyRequest) -> web.Response:
    server = request.app[ProxyServer.APP_KEY]
    return await _acknowledge(server.proxy.handle_client_request(data))


@proxy_routes.post("/pq/get-key-parameters")
@ensure_main_body
async def post_tunnelled_key_request(request: web.Request, envelope: TunnelEnvelope) -> web.Response:
    server = request.app[ProxyServer.APP_KEY]
    if server.tunnel is None:
        raise KemUnsupportedError

    try:
        data, tunnel_key, kem_micros = server.tunnel.open(envelope, ProxyKeyRequest)
    except TunnelError as error:
        raise TunnelRejectedError(str(error)) from error

    return await _acknowledge(server.proxy.handle_client_request(data, client_tunnel=tunnel_key, kem_micros=kem_micros))


@proxy_routes.get("/kem/public-key")
async def get_kem_public_key(request: web.Request) -> web.Response:
    server = request.app[ProxyServer.APP_KEY]
    if server.tunnel is None:
        raise KemUnsupportedError
    return pydantic_json_response(data=server.tunnel.public_key())


@proxy_routes.post("/pool-forward")
@ensure_main_body
async def post_pool_forward(request: web.Request, payload: PoolPayload) -> web.Response:
    server = request.app[ProxyServer.APP_KEY]
    return await _acknowledge(server.proxy.handle_pool_forward(payload))


@proxy_routes.post("/pool-return")
@ensure_main_body
async def post_pool_return(request: web.Request, message: PoolReturn) -> web.Response:
    await request.app[ProxyServer.APP_KEY].proxy.handle_pool_return(message)
    return web.Response(status=204)
