#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
from dataclasses import dataclass
from enum import StrEnum
from urllib.parse import urlsplit

from keyfrag_common.models import ChannelDescriptor


class ProxyConfigurationError(ValueError):
    pass


class ProxyMode(StrEnum):
    TRANSPARENT = "transparent"
    EXPLICIT = "explicit"


class ReturnPath(StrEnum):
    EXIT = "exit"
    """Fragments reach the exit node's channels and travel the recorded pool path back."""
    ENTRY = "entry"
    """The key management server dispatches straight to the entry node's channels."""


class ChannelPolicy(StrEnum):
    REPLACE = "replace"
    APPEND = "append"


@dataclass(frozen=True)
class PoolPeer:
    proxy_id: str
    address: str


@dataclass(frozen=True)
class ProxyConfig:
    """Configuration of one proxy.

    `pool_peers` is the whole pool including this proxy itself; an empty list disables pool routing. Forwarding
    happens with probability `forward_probability * decay ** (hops - 1)` after `hops` proxies were visited.
    """

    proxy_id: str
    address: str
    mode: ProxyMode = ProxyMode.EXPLICIT
    own_channels: tuple[ChannelDescriptor, ...] = ()
    pool_peers: tuple[PoolPeer, ...] = ()
    forward_probability: float = 0.5
    decay: float = 1.0
    max_hops: int = 8
    return_path: ReturnPath = ReturnPath.EXIT
    channel_policy: ChannelPolicy = ChannelPolicy.REPLACE
    exclude_self: bool = False

    def __post_init__(self) -> None:
        if not 0 <= self.forward_probability < 1:
            msg = f"forward_probability must be in [0, 1), got {self.forward_probability}"
            raise ProxyConfigurationError(msg)
        if not 0 < self.decay <= 1:
            msg = f"decay must be in (0, 1], got {self.decay}"
            raise ProxyConfigurationError(msg)
        if self.max_hops < 1:
            msg = f"max_hops must be at least 1, got {self.max_hops}"
            raise ProxyConfigurationError(msg)
        if len({peer.proxy_id for peer in self.pool_peers}) != len(self.pool_peers):
            msg = "pool peer ids must be unique"
            raise ProxyConfigurationError(msg)

    @property
    def in_pool(self) -> bool:
        return bool(self.pool_peers)

    @property
    def netloc(self) -> str:
        """`host:port` of this proxy, the form kiosk credentials name it by."""
        return urlsplit(self.address).netloc
