#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
"""Anonymity of requests routed through a private proxy pool against an adversary watching `a` of its `P` proxies."""

import math
import random
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import cache

import numpy as np
from scipy.stats import chisquare

from keyfrag_common.keycore import AsymmetricKeyPair
from keyfrag_common.models import ChannelDescriptor, KeyRequest, MediumType, PoolPayload, ProxyKeyRequest
from keyfrag_server.analyzer.errors import AnalysisParameterError, InsufficientSamplesError
from keyfrag_server.proxy.config import PoolPeer, ProxyConfig
from keyfrag_server.proxy.pool import pool_route, select_entry


@dataclass(frozen=True)
class PoolParams:
    pool_size: int
    surveilled: int
    forward_probability: float
    max_hops: int
    decay: float = 1.0

    def __post_init__(self) -> None:
        if self.pool_size < 1 or not 0 <= self.surveilled <= self.pool_size:
            msg = f"Need 0 <= a <= P and P >= 1, got a={self.surveilled}, P={self.pool_size}."
            raise AnalysisParameterError(msg)
        if not 0 <= self.forward_probability < 1:
            msg = f"Forward probability must be in [0, 1), got {self.forward_probability}."
            raise AnalysisParameterError(msg)
        if self.max_hops < 1:
            msg = f"Hop cap must be at least 1, got {self.max_hops}."
            raise AnalysisParameterError(msg)
        if not 0 < self.decay <= 1:
            msg = f"Decay must be in (0, 1], got {self.decay}."
            raise AnalysisParameterError(msg)

    @property
    def surveilled_fraction(self) -> float:
        return self.surveilled / self.pool_size


def hop_distribution(q: float, max_hops: int, decay: float = 1.0) -> np.ndarray:
    """`P(h = k)` for `k = 1 .. max_hops` proxies visited.

    Forwarding after the `j`-th proxy happens with probability `q * decay^(j-1)`, so
    `P(h > k) = prod(q * decay^(j-1) for j <= k)`; all mass beyond the cap lands on `max_hops`.
    """
    survival = np.ones(max_hops)
    for k in range(1, max_hops):
        survival[k] = survival[k - 1] * q * decay ** (k - 1)
    distribution = survival.copy()
    distribution[:-1] -= survival[1:]
    return distribution


def expected_hops(q: float, max_hops: int, decay: float = 1.0) -> float:
    """Mean number of proxies visited, at most `min(1 / (1 - q), max_hops)`."""
    if not 0 <= q < 1:
        msg = f"Forward probability must be in [0, 1), got {q}."
        raise AnalysisParameterError(msg)
    distribution = hop_distribution(q, max_hops, decay)
    return float(np.dot(np.arange(1, max_hops + 1), distribution))


def pool_trace_probability(params: PoolParams, h: int) -> float:
    """Probability that all `h` proxies on a path are surveilled: `(a/P)^h`."""
    if h < 1:
        msg = f"A path visits at least one proxy, got h={h}."
        raise AnalysisParameterError(msg)
    return params.surveilled_fraction**h


def pool_correlation_probability(params: PoolParams) -> float:
    """Probability that both entry and exit are surveilled: `(a/P)^2`."""
    return params.surveilled_fraction**2


def composed_trace_probability(params: PoolParams) -> float:
    """Full-path surveillance averaged over the hop law: `sum(P(h=k) * (a/P)^k)`."""
    distribution = hop_distribution(params.forward_probability, params.max_hops, params.decay)
    return float(sum(p * pool_trace_probability(params, k) for k, p in enumerate(distribution, start=1)))


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    p_value: float


def exit_uniformity_test(exits: Sequence[str], pool: Sequence[str]) -> ChiSquareResult:
    """Chi-square goodness of fit of exit frequencies against the uniform distribution over the pool.

    Raises:
        InsufficientSamplesError: With fewer than ten samples per proxy.
    """
    if len(exits) < 10 * len(pool):
        raise InsufficientSamplesError(len(exits), 10 * len(pool))
    counts = Counter(exits)
    unknown = counts.keys() - set(pool)
    if unknown:
        msg = f"Exits {sorted(unknown)} are not part of the pool."
        raise AnalysisParameterError(msg)

    result = chisquare([counts[proxy_id] for proxy_id in pool])
    return ChiSquareResult(statistic=float(result.statistic), p_value=float(result.pvalue))


def _proportion_within(hits: int, trials: int, expected: float, sigmas: float) -> bool:
    if trials == 0:
        return False
    sigma = math.sqrt(expected * (1 - expected) / trials)
    return abs(hits / trials - expected) <= sigmas * sigma + 1e-15


@dataclass
class PoolSimulation:
    """Outcome of routing requests through in-process proxies with the live routing code."""

    params: PoolParams
    pool: list[str]
    surveilled: frozenset[str]
    exits: list[str] = field(default_factory=list)
    hops: list[int] = field(default_factory=list)
    full_path_surveilled: int = 0
    multi_hop: int = 0
    entry_exit_surveilled: int = 0
    """Among paths with at least two proxies."""

    @property
    def requests(self) -> int:
        return len(self.hops)

    @property
    def mean_hops(self) -> float:
        return float(np.mean(self.hops))

    def exit_test(self) -> ChiSquareResult:
        return exit_uniformity_test(self.exits, self.pool)

    def trace_within(self, sigmas: float = 3.0) -> bool:
        return _proportion_within(
            self.full_path_surveilled, self.requests, composed_trace_probability(self.params), sigmas
        )

    def correlation_within(self, sigmas: float = 3.0) -> bool:
        return _proportion_within(
            self.entry_exit_surveilled, self.multi_hop, pool_correlation_probability(self.params), sigmas
        )

    def hops_within(self, sigmas: float = 3.0) -> bool:
        expected = expected_hops(self.params.forward_probability, self.params.max_hops, self.params.decay)
        sigma = float(np.std(self.hops)) / math.sqrt(self.requests)
        return abs(self.mean_hops - expected) <= sigmas * sigma + 1e-12

    def trace_deviation(self) -> float:
        """Empirical minus formula full-path surveillance frequency."""
        return self.full_path_surveilled / self.requests - composed_trace_probability(self.params)


@cache
def _placeholder_request() -> KeyRequest:
    return KeyRequest(
        tagname="pool-simulation",
        key_bits=256,
        num_splits=1,
        channels=[ChannelDescriptor(channel_id="sim", medium=MediumType.LOGICAL_PORT, port=0)],
        public_key=AsymmetricKeyPair.generate().public_key,
    )


def build_pool(params: PoolParams, *, exclude_self: bool = False) -> list[ProxyConfig]:
    peers = tuple(PoolPeer(proxy_id=f"p{i}", address=f"http://pool-{i}.invalid") for i in range(params.pool_size))
    return [
        ProxyConfig(
            proxy_id=peer.proxy_id,
            address=peer.address,
            pool_peers=peers,
            forward_probability=params.forward_probability,
            decay=params.decay,
            max_hops=params.max_hops,
            exclude_self=exclude_self,
        )
        for peer in peers
    ]


def simulate_pool(
    params: PoolParams,
    requests: int,
    seed: int,
    *,
    template: KeyRequest | None = None,
    exclude_self: bool = False,
) -> PoolSimulation:
    """Routes `requests` payloads hop by hop through [pool_route][] with the first `a` proxies surveilled.

    The request carried is irrelevant to routing; `template` defaults to a placeholder.
    """
    configs = build_pool(params, exclude_self=exclude_self)
    by_id = {config.proxy_id: config for config in configs}
    pool = [config.proxy_id for config in configs]
    simulation = PoolSimulation(params=params, pool=pool, surveilled=frozenset(pool[: params.surveilled]))
    rng = random.Random(seed)
    request = ProxyKeyRequest.model_validate((template or _placeholder_request()).model_dump())

    for _ in range(requests):
        entry = select_entry(configs, rng)
        payload = PoolPayload(request=request, entry_id=entry.proxy_id)
        current = entry
        while True:
            decision = pool_route(payload, current, rng)
            payload = decision.payload
            if decision.next_peer is None:
                break
            current = by_id[decision.next_peer.proxy_id]

        path = [route.proxy_id for route in payload.route]
        simulation.exits.append(path[-1])
        simulation.hops.append(len(path))
        if all(proxy_id in simulation.surveilled for proxy_id in path):
            simulation.full_path_surveilled += 1
        if len(path) >= 2:
            simulation.multi_hop += 1
            if path[0] in simulation.surveilled and path[-1] in simulation.surveilled:
                simulation.entry_exit_surveilled += 1

    return simulation
