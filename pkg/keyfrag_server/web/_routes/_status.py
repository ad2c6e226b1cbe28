#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
from aiohttp import web

from keyfrag_common.models import NodeStatus
from keyfrag_server import __version__
from keyfrag_server.web._utils import pydantic_json_response
from keyfrag_server.web.app import KeyfragNode

status_routes = web.RouteTableDef()


@status_routes.get("/status")
async def get_status(request: web.Request) -> web.Response:
    node = request.app[KeyfragNode.NODE_KEY]
    status = NodeStatus(name=node.name, version=__version__, role=node.role, sessions=node.session_counts())
    return pydantic_json_response(data=status)
