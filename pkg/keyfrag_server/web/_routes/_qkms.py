#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
from aiohttp import web

from keyfrag_common.kem import TunnelError
from keyfrag_common.keycore import ParameterError
from keyfrag_common.models import Ack, KeyRequest, TunnelEnvelope
from keyfrag_server.qkms import DispatchError, DuplicateTagnameError, NegotiationError, PartyRequest
from keyfrag_server.web._decorators import ensure_main_body
from keyfrag_server.web._errors import (
    DispatchFailedError,
    KemUnsupportedError,
    KeyNegotiationError,
    TagnameTakenError,
    TunnelRejectedError,
    UnsupportedKeyLengthError,
)
from keyfrag_server.web._utils import pydantic_json_response
from keyfrag_server.web.app import QkmsServer

qkms_routes = web.RouteTableDef()


async def _register(server: QkmsServer, party: PartyRequest) -> web.Response:
    try:
        status = await server.qkms.handle_key_request(party.request, party=party)
    except ParameterError as error:
        raise UnsupportedKeyLengthError(str(error)) from error
    except DuplicateTagnameError as error:
        raise TagnameTakenError(str(error)) from error
    except NegotiationError as error:
        raise KeyNegotiationError(str(error)) from error
    except DispatchError as error:
        raise DispatchFailedError(str(error)) from error

    return pydantic_json_response(data=Ack(status=status))


@qkms_routes.post("/get-key-parameters")
@ensure_main_body
async def post_key_request(request: web.Request, data: KeyRequest) -> web.Response:
    return await _register(request.app[QkmsServer.APP_KEY], PartyRequest(data))


@qkms_routes.post("/pq/get-key-parameters")
@ensure_main_body
async def post_tunnelled_key_request(request: web.Request, envelope: TunnelEnvelope) -> web.Response:
    server = request.app[QkmsServer.APP_KEY]
    if server.tunnel is None:
        raise KemUnsupportedError

    try:
        data, tunnel_key, kem_micros = server.tunnel.open(envelope, KeyRequest)
    except TunnelError as error:
        raise TunnelRejectedError(str(error)) from error

    return await _register(server, PartyRequest(data, tunnel=tunnel_key, kem_micros=kem_micros))


@qkms_routes.get("/kem/public-key")
async def get_kem_public_key(request: web.Request) -> web.Response:
    server = request.app[QkmsServer.APP_KEY]
    if server.tunnel is None:
        raise KemUnsupportedError
    return pydantic_json_response(data=server.tunnel.public_key())
