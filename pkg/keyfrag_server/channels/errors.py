#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
from keyfrag_common.models import ChannelDescriptor


class ChannelConfigurationError(ValueError):
    pass


class DeliveryError(Exception):
    def __init__(self, channel: ChannelDescriptor, reason: str):
        self.channel_id = channel.channel_id
        self.reason = reason
        super().__init__(f"Could not deliver over channel '{channel.channel_id}' ({channel.endpoint}): {reason}")


class ChannelBindError(Exception):
    def __init__(self, channel: ChannelDescriptor, cause: OSError):
        self.channel_id = channel.channel_id
        super().__init__(f"Could not open receiver for channel '{channel.channel_id}' on {channel.endpoint}: {cause}")
