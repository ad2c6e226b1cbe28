#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
"""Text format of channel lists in configuration files.

One channel per line: `channel_id MEDIUM host port [latency] [tapped]`, e.g.

    wifi-0 wifi 127.0.0.1 9101 lognormal:1.2,0.4
    nfc-0 nfc 127.0.0.1 9102 constant:0 tapped
"""

from pydantic import ValidationError

from keyfrag_common.models import ChannelDescriptor, LatencyModel, MediumType
from keyfrag_server.channels.errors import ChannelConfigurationError

_TAPPED = "tapped"


def parse_channel_line(line: str) -> ChannelDescriptor:
    tokens = line.split()
    if not 4 <= len(tokens) <= 6:
        msg = f"expected 'channel_id medium host port [latency] [tapped]', got '{line}'"
        raise ChannelConfigurationError(msg)

    channel_id, medium, host, port, *rest = tokens
    tapped = bool(rest) and rest[-1].lower() == _TAPPED
    if tapped:
        rest = rest[:-1]
    if len(rest) > 1:
        msg = f"unexpected trailing fields in channel line '{line}'"
        raise ChannelConfigurationError(msg)

    try:
        return ChannelDescriptor(
            channel_id=channel_id,
            medium=MediumType(medium.lower()),
            host=host,
            port=int(port),
            latency_model=LatencyModel.parse(rest[0]) if rest else LatencyModel(),
            tapped=tapped,
        )
    except (ValueError, ValidationError) as error:
        msg = f"invalid channel line '{line}': {error}"
        raise ChannelConfigurationError(msg) from error


def parse_channel_lines(text: str) -> list[ChannelDescriptor]:
    channels = []
    seen: set[str] = set()

    for raw_line in text.splitlines():
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue

        channel = parse_channel_line(line)
        if channel.channel_id in seen:
            msg = f"must contain unique channel ids: failed for {channel.channel_id}"
            raise ChannelConfigurationError(msg)
        seen.add(channel.channel_id)
        channels.append(channel)

    return channels


def format_channel_line(channel: ChannelDescriptor) -> str:
    line = f"{channel.channel_id} {channel.medium} {channel.host} {channel.port} {channel.latency_model}"
    return f"{line} {_TAPPED}" if channel.tapped else line
