#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
"""Heterogeneous media simulated as local HTTP endpoints tagged with their medium type."""

from .assignment import DispatchAssignment, assign_channels
from .config import format_channel_line, parse_channel_line, parse_channel_lines
from .errors import ChannelBindError, ChannelConfigurationError, DeliveryError
from .receiver import AbortSink, FragmentSink, ReceiverHandle, open_receiver
from .transport import CaptureEntry, CaptureLog, ChannelCounters, ChannelTransport, DeliveryReceipt

__all__ = [
    "AbortSink",
    "CaptureEntry",
    "CaptureLog",
    "ChannelBindError",
    "ChannelConfigurationError",
    "ChannelCounters",
    "ChannelTransport",
    "DeliveryError",
    "DeliveryReceipt",
    "DispatchAssignment",
    "FragmentSink",
    "ReceiverHandle",
    "assign_channels",
    "format_channel_line",
    "open_receiver",
    "parse_channel_line",
    "parse_channel_lines",
]
