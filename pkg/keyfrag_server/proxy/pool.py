#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
"""Per-hop randomized routing inside a private proxy pool.

Everything here is pure over caller-supplied randomness, so the same functions drive the live proxies and the
in-process pool simulation of the analyzer.
"""

import random
from collections.abc import Collection, Sequence
from dataclasses import dataclass
from typing import TypeVar

from keyfrag_common.models import PoolPayload, RouteEntry
from keyfrag_server.proxy.config import PoolPeer, ProxyConfig, ProxyConfigurationError

_T = TypeVar("_T")


@dataclass(frozen=True)
class PoolDecision:
    payload: PoolPayload
    """The payload with this proxy's route entry appended."""
    next_peer: PoolPeer | None
    """Where to forward, or None if this proxy is the exit and delivers to the key management server."""
    forced: bool = False
    """Whether the payload arrived at or beyond the hop cap, so this proxy had to exit without drawing."""

    @property
    def is_exit(self) -> bool:
        return self.next_peer is None


def select_entry(pool: Sequence[_T], rng: random.Random) -> _T:
    """Uniformly draws the entry node a client contacts first."""
    if not pool:
        msg = "Cannot select an entry node from an empty pool."
        raise ProxyConfigurationError(msg)
    return rng.choice(pool)


def forward_probability(cfg: ProxyConfig, visited: int) -> float:
    """Probability of forwarding once `visited` proxies (this one included) are on the path."""
    return cfg.forward_probability * cfg.decay ** (visited - 1)


def successor_candidates(cfg: ProxyConfig, exclude: Collection[str] = ()) -> list[PoolPeer]:
    return [
        peer
        for peer in cfg.pool_peers
        if peer.proxy_id not in exclude and not (cfg.exclude_self and peer.proxy_id == cfg.proxy_id)
    ]


def redraw_peer(cfg: ProxyConfig, rng: random.Random, exclude: Collection[str]) -> PoolPeer | None:
    """Draws another successor after `exclude` turned out unreachable; None if none is left."""
    candidates = successor_candidates(cfg, exclude)
    return rng.choice(candidates) if candidates else None


def pool_route(payload: PoolPayload, cfg: ProxyConfig, rng: random.Random) -> PoolDecision:
    """Appends this proxy to the payload and decides whether to forward it or to exit.

    With `h` proxies visited (this one included), the payload is forwarded with probability
    `q * decay ** (h - 1)` as long as `h < max_hops`; the successor is drawn uniformly from the pool.

    A payload that already visited `max_hops` proxies (a peer with a larger cap sent it) is delivered by this proxy
    as a forced exit instead of being dropped.
    """
    visited = payload.hop_count + 1
    entry = RouteEntry(proxy_id=cfg.proxy_id, address=cfg.address, channels=list(cfg.own_channels))
    updated = payload.model_copy(update={"route": [*payload.route, entry], "hop_count": visited})

    if payload.hop_count >= cfg.max_hops:
        return PoolDecision(payload=updated, next_peer=None, forced=True)

    if visited < cfg.max_hops and rng.random() < forward_probability(cfg, visited):
        candidates = successor_candidates(cfg)
        if candidates:
            return PoolDecision(payload=updated, next_peer=rng.choice(candidates))

    return PoolDecision(payload=updated, next_peer=None)


def reverse_path(payload: PoolPayload) -> list[str]:
    """Addresses the fragments pass on their way back from the exit (the last route entry) to the entry node."""
    return [entry.address for entry in reversed(payload.route[:-1])]
