#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
import logging
from collections.abc import Awaitable, Callable
from typing import TypeAlias

from aiohttp import web

from keyfrag_common.constants import MAX_REQUEST_SIZE
from keyfrag_common.keycore import EncryptedFragment
from keyfrag_common.models import AbortNotice, ChannelDescriptor, FragmentMessage
from keyfrag_server.channels.errors import ChannelBindError
from keyfrag_server.web._decorators import ensure_main_body

_log = logging.getLogger("keyfrag:channels")

FragmentSink: TypeAlias = Callable[[EncryptedFragment, ChannelDescriptor], Awaitable[None]]
AbortSink: TypeAlias = Callable[[AbortNotice, ChannelDescriptor], Awaitable[None]]


class ReceiverHandle:
    """A running listener of one channel. Close it to release the port."""

    def __init__(self, channel: ChannelDescriptor, runner: web.AppRunner):
        self.channel = channel
        self.received = 0
        self._runner = runner

    @property
    def closed(self) -> bool:
        return not self._runner.sites

    async def close(self) -> None:
        await self._runner.cleanup()


async def open_receiver(
    channel: ChannelDescriptor, sink: FragmentSink, *, on_abort: AbortSink | None = None
) -> ReceiverHandle:
    """Starts listening on the channel's endpoint and hands every incoming fragment to the sink.

    Raises:
        ChannelBindError: If the endpoint cannot be bound, e.g. because the port is in use.
    """
    routes = web.RouteTableDef()
    app = web.Application(client_max_size=MAX_REQUEST_SIZE)
    runner = web.AppRunner(app, access_log=None)
    handle = ReceiverHandle(channel, runner)

    @routes.post("/fragment")
    @ensure_main_body
    async def post_fragment(_request: web.Request, message: FragmentMessage) -> web.Response:
        handle.received += 1
        await sink(message.to_fragment(channel.channel_id), channel)
        return web.Response(status=204)

    @routes.post("/abort")
    @ensure_main_body
    async def post_abort(_request: web.Request, notice: AbortNotice) -> web.Response:
        if on_abort is not None:
            await on_abort(notice, channel)
        return web.Response(status=204)

    app.add_routes(routes)
    await runner.setup()

    try:
        await web.TCPSite(runner, channel.host, channel.port).start()
    except OSError as error:
        await runner.cleanup()
        raise ChannelBindError(channel, error) from error

    _log.debug("Receiver for channel '%s' (%s) listening on %s", channel.channel_id, channel.medium, channel.endpoint)
    return handle
