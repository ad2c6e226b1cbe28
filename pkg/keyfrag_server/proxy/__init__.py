#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.

from .config import ChannelPolicy, PoolPeer, ProxyConfig, ProxyConfigurationError, ProxyMode, ReturnPath
from .pool import (
    PoolDecision,
    forward_probability,
    pool_route,
    redraw_peer,
    reverse_path,
    select_entry,
    successor_candidates,
)
from .service import (
    ClientBinding,
    ClientUnreachableError,
    CredentialError,
    ExitBinding,
    KeyProxy,
    MissingReplyAddressError,
)

__all__ = [
    "ChannelPolicy",
    "ClientBinding",
    "ClientUnreachableError",
    "CredentialError",
    "ExitBinding",
    "KeyProxy",
    "MissingReplyAddressError",
    "PoolDecision",
    "PoolPeer",
    "ProxyConfig",
    "ProxyConfigurationError",
    "ProxyMode",
    "ReturnPath",
    "forward_probability",
    "pool_route",
    "redraw_peer",
    "reverse_path",
    "select_entry",
    "successor_candidates",
]
