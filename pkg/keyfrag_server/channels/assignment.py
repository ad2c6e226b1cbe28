#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
import random
from collections.abc import Sequence
from typing import TypeAlias

from keyfrag_common.models import ChannelDescriptor
from keyfrag_server.channels.errors import ChannelConfigurationError

DispatchAssignment: TypeAlias = dict[int, str]
"""Fragment index -> channel id."""


def assign_channels(
    num_fragments: int, channels: Sequence[ChannelDescriptor], rng: random.Random
) -> DispatchAssignment:
    """Assigns every fragment an independently and uniformly drawn channel.

    Some channels may carry no fragment while others carry several.

    Raises:
        ChannelConfigurationError: If no channels are given or `num_fragments` is not positive.
    """
    if not channels:
        msg = "Cannot assign fragments to an empty channel set."
        raise ChannelConfigurationError(msg)
    if num_fragments < 1:
        msg = f"Need at least one fragment to assign, got {num_fragments}."
        raise ChannelConfigurationError(msg)

    return {index: rng.choice(channels).channel_id for index in range(num_fragments)}
