#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
from aiohttp import web

from keyfrag_common.models import AbortNotice, FragmentMessage
from keyfrag_server.web._decorators import ensure_main_body
from keyfrag_server.web.app import ClientServer

client_routes = web.RouteTableDef()


@client_routes.post("/receive-key-fragment")
@ensure_main_body
async def post_fragment(request: web.Request, message: FragmentMessage) -> web.Response:
    """Fragments relayed by a proxy. Unknown or undecryptable fragments are dropped silently."""
    request.app[ClientServer.APP_KEY].client.receive_fragment(message.to_fragment())
    return web.Response(status=204)


@client_routes.post("/session-failed")
@ensure_main_body
async def post_session_failed(request: web.Request, notice: AbortNotice) -> web.Response:
    request.app[ClientServer.APP_KEY].client.abort(notice.session_tag, notice.reason or "failed upstream")
    return web.Response(status=204)
