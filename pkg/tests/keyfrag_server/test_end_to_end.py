#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.

import asyncio
import base64
import random
from collections.abc import AsyncIterator, Iterator
from dataclasses import dataclass, replace
from unittest.mock import patch

import pytest
from aiohttp.pytest_plugin import AiohttpServer
from aiohttp.test_utils import unused_port

from keyfrag_common.dev.factories import KeyRequestFactory
from keyfrag_common.kem import StubKem
from keyfrag_common.keycore import (
    AsymmetricKeyPair,
    EncryptedFragment,
    FragmentDecryptionError,
    SessionKey,
    decrypt_fragment,
    fragment_key,
    generate_key,
)
from keyfrag_common.models import AckStatus, ChannelDescriptor, MediumType
from keyfrag_server.channels import ChannelTransport
from keyfrag_server.client import ClientMode, KeyClient, KeyParameters
from keyfrag_server.proxy import KeyProxy, PoolPeer, ProxyConfig, ReturnPath
from keyfrag_server.qkms import Qkms
from keyfrag_server.tunnel import TunnelEndpoint
from keyfrag_server.web.app import ClientServer, ProxyServer
from tests.conftest import base_url, local_channels

ALL_MEDIA = (MediumType.WIFI, MediumType.BLUETOOTH, MediumType.NFC, MediumType.CELLULAR, MediumType.ETHERNET)
SESSION_TIMEOUT = 10.0


@dataclass(frozen=True)
class RunConfig:
    key_bits: int = 256
    num_splits: int = 8
    shuffle: bool = True
    diversity: int = 3
    behind_proxy: bool = False
    pq: bool = False

    @classmethod
    def draw(cls, rng: random.Random) -> "RunConfig":
        return cls(
            key_bits=rng.choice((128, 256)),
            num_splits=rng.randint(1, 16),
            shuffle=rng.random() < 0.5,
            diversity=rng.randint(1, len(ALL_MEDIA)),
            behind_proxy=rng.random() < 0.5,
            pq=rng.random() < 0.5,
        )

    @property
    def mode(self) -> ClientMode:
        return ClientMode.PQ_TUNNEL if self.pq else ClientMode.CLASSICAL


@pytest.fixture
def issued_keys() -> Iterator[list[SessionKey]]:
    """Keys generated by the key management server, recorded before it zeroizes them."""
    keys: list[SessionKey] = []

    def recording(*args: object, **kwargs: object) -> SessionKey:
        key = generate_key(*args, **kwargs)  # type: ignore[arg-type]
        keys.append(key)
        return key

    with patch("keyfrag_server.qkms.service.generate_key", side_effect=recording):
        yield keys


class Deployment:
    """A key management server with two directly attached clients and one client behind a proxy."""

    __test__ = False

    def __init__(
        self,
        qkms_url: str,
        alice: KeyClient,
        bob: KeyClient,
        carol: KeyClient,
        proxy: KeyProxy,
        proxy_url: str,
    ):
        self.qkms_url = qkms_url
        self.alice = alice
        self.bob = bob
        self.carol = carol
        self.proxy = proxy
        self.proxy_url = proxy_url
        self._alice_channels = list(alice.channels)
        self._bob_channels = list(bob.channels)
        self._proxy_channels = self.proxy.config.own_channels

    def tap_all(self) -> None:
        """Marks every channel as tapped, so the transport records all ciphertext sent over them."""
        self._alice_channels = [channel.model_copy(update={"tapped": True}) for channel in self._alice_channels]
        self._bob_channels = [channel.model_copy(update={"tapped": True}) for channel in self._bob_channels]
        self._proxy_channels = tuple(channel.model_copy(update={"tapped": True}) for channel in self._proxy_channels)

    async def establish(self, tagname: str, config: RunConfig) -> tuple[SessionKey, SessionKey]:
        """Runs one session between alice and bob (or carol behind the proxy) and returns both keys."""
        self.alice.channels = self._alice_channels[: config.diversity]
        self.bob.channels = self._bob_channels[: config.diversity]
        self.proxy.config = replace(self.proxy.config, own_channels=self._proxy_channels[: config.diversity])

        if config.behind_proxy:
            second, target = self.carol, self.proxy_url
        else:
            second, target = self.bob, self.qkms_url

        params = KeyParameters(tagname, config.key_bits, config.num_splits, config.shuffle)
        await self.alice.request_key(replace(params, party_label="alice"), self.qkms_url, config.mode)
        await second.request_key(replace(params, party_label="bob"), target, config.mode)

        first_key, second_key = await asyncio.wait_for(
            asyncio.gather(self.alice.wait_for_key(tagname), second.wait_for_key(tagname)), SESSION_TIMEOUT
        )
        return first_key, second_key


@pytest.fixture
async def deployment(
    qkms_url: str, aiohttp_server: AiohttpServer, keypair: AsymmetricKeyPair, other_keypair: AsymmetricKeyPair
) -> AsyncIterator[Deployment]:
    alice = KeyClient(
        keypair=keypair, channels=local_channels("alice", ALL_MEDIA), kem=StubKem(21), deadline=SESSION_TIMEOUT
    )
    bob = KeyClient(
        keypair=other_keypair, channels=local_channels("bob", ALL_MEDIA), kem=StubKem(22), deadline=SESSION_TIMEOUT
    )
    await alice.start_channels()
    await bob.start_channels()

    carol_port = unused_port()
    carol = KeyClient(
        keypair=other_keypair, reply_url=f"http://127.0.0.1:{carol_port}", kem=StubKem(23), deadline=SESSION_TIMEOUT
    )
    await aiohttp_server(ClientServer(carol, name="carol").web_app, port=carol_port)

    proxy_port = unused_port()
    config = ProxyConfig(
        proxy_id="proxy-a",
        address=f"http://127.0.0.1:{proxy_port}",
        own_channels=tuple(local_channels("proxy", ALL_MEDIA)),
    )
    proxy = KeyProxy(config, qkms_url=qkms_url, kem=StubKem(24), delivery_retries=0, instrumented=True)
    server = await aiohttp_server(ProxyServer(proxy, tunnel=TunnelEndpoint(StubKem(25))).web_app, port=proxy_port)

    yield Deployment(qkms_url, alice, bob, carol, proxy, base_url(server))

    await alice.close()
    await bob.close()


async def run_sweep(deployment: Deployment, issued_keys: list[SessionKey], runs: int, seed: int) -> None:
    rng = random.Random(seed)
    for run in range(runs):
        config = RunConfig.draw(rng)
        first, second = await deployment.establish(f"sweep-{seed}-{run}", config)

        assert first == second, config
        assert first == issued_keys[-1], config
        assert first.bits == config.key_bits, config

    assert len(issued_keys) == runs


@pytest.mark.parametrize(
    "config",
    [
        RunConfig(key_bits=128, num_splits=16, diversity=5),
        RunConfig(key_bits=256, num_splits=1, shuffle=False, diversity=1),
        RunConfig(key_bits=128, num_splits=3, behind_proxy=True),
        RunConfig(key_bits=256, num_splits=12, shuffle=False, diversity=2, pq=True),
        RunConfig(key_bits=256, num_splits=8, diversity=4, behind_proxy=True, pq=True),
    ],
)
async def test_both_parties_reconstruct_the_issued_key(
    deployment: Deployment, issued_keys: list[SessionKey], config: RunConfig
) -> None:
    first, second = await deployment.establish("meeting", config)

    assert first == second == issued_keys[0]


async def test_randomized_configurations(deployment: Deployment, issued_keys: list[SessionKey]) -> None:
    await run_sweep(deployment, issued_keys, runs=20, seed=0)


@pytest.mark.slow
async def test_thousand_randomized_configurations(deployment: Deployment, issued_keys: list[SessionKey]) -> None:
    await run_sweep(deployment, issued_keys, runs=1000, seed=1)


@pytest.mark.parametrize("sessions", [10, pytest.param(100, marks=pytest.mark.slow)])
async def test_proxy_never_handles_keys_or_plaintext_fragments(
    deployment: Deployment, issued_keys: list[SessionKey], sessions: int
) -> None:
    for session in range(sessions):
        config = RunConfig(num_splits=4, behind_proxy=True, pq=session % 2 == 1)
        await deployment.establish(f"private-{session}", config)

    secrets = []
    for key in issued_keys:
        secrets += [key.material, base64.b64encode(key.material)]
        secrets += [fragment.payload for fragment in fragment_key(key, 4)]

    assert len(issued_keys) == sessions
    assert deployment.proxy.observed
    violations = [secret for secret in secrets if any(secret in data for data in deployment.proxy.observed)]
    assert violations == []


async def test_tunnelled_fragments_are_layered_through_the_proxy(
    deployment: Deployment, issued_keys: list[SessionKey]
) -> None:
    await deployment.establish("layered", RunConfig(behind_proxy=True, pq=True))

    state = deployment.carol.session("layered")
    assert state is not None
    assert state.tunnel_key is not None
    assert state.timer.components["pq_kem"] > 0
    (binding,) = deployment.proxy.client_bindings("layered")
    assert binding.client_tunnel is not None
    assert binding.upstream_tunnel is not None
    assert binding.client_tunnel.key != binding.upstream_tunnel.key
    assert binding.forwarded == 8


def captured(transport: ChannelTransport, tagname: str, channel_prefix: str) -> list[bytes]:
    return [
        entry.ciphertext
        for entry in transport.capture_log
        if entry.session_tag == tagname and entry.channel_id.startswith(channel_prefix)
    ]


async def test_captured_fragments_need_both_layers_to_open(
    deployment: Deployment,
    issued_keys: list[SessionKey],
    transport: ChannelTransport,
    keypair: AsymmetricKeyPair,
    other_keypair: AsymmetricKeyPair,
) -> None:
    deployment.tap_all()
    await deployment.establish("tapped", RunConfig(behind_proxy=True, pq=True))
    await deployment.proxy.drain()

    (binding,) = deployment.proxy.client_bindings("tapped")
    alice = deployment.alice.session("tapped")
    assert binding.upstream_tunnel is not None
    assert alice is not None
    assert alice.tunnel_key is not None
    (key,) = issued_keys
    payloads = {fragment.payload for fragment in fragment_key(key, 8)}
    aad = b"tapped"

    # Carol's fragments cross the proxy channels under the upstream tunnel; alice's cross alice's own channels.
    for prefix, tunnel_key, rsa_keypair in (
        ("proxy-", binding.upstream_tunnel, other_keypair),
        ("alice-", alice.tunnel_key, keypair),
    ):
        ciphertexts = captured(transport, "tapped", prefix)
        assert len(ciphertexts) == 8

        opened = set()
        for ciphertext in ciphertexts:
            outer = EncryptedFragment(session_tag="tapped", ciphertext=ciphertext)
            with pytest.raises(FragmentDecryptionError):
                decrypt_fragment(outer, rsa_keypair.private_key)

            inner = tunnel_key.open(ciphertext, aad)
            assert not any(payload in inner for payload in payloads)

            fragment = EncryptedFragment(session_tag="tapped", ciphertext=inner)
            opened.add(decrypt_fragment(fragment, rsa_keypair.private_key).payload)
        assert opened == payloads


async def test_tapped_channels_never_carry_keys_or_fragments(
    deployment: Deployment, issued_keys: list[SessionKey], transport: ChannelTransport
) -> None:
    deployment.tap_all()
    rng = random.Random(8)
    for session in range(6):
        await deployment.establish(f"tapped-{session}", replace(RunConfig.draw(rng), num_splits=4))

    secrets = []
    for key in issued_keys:
        secrets += [key.material, base64.b64encode(key.material)]
        secrets += [fragment.payload for fragment in fragment_key(key, 4)]

    ciphertexts = [entry.ciphertext for entry in transport.capture_log]
    assert ciphertexts
    assert [secret for secret in secrets if any(secret in data for data in ciphertexts)] == []


@pytest.mark.parametrize("pairs", [200, pytest.param(10_000, marks=pytest.mark.slow)])
async def test_mismatched_tagnames_never_issue_a_key(qkms: Qkms, issued_keys: list[SessionKey], pairs: int) -> None:
    channels = local_channels("unused")
    for pair in range(pairs):
        first = KeyRequestFactory.build(tagname=f"left-{pair}", channels=channels)
        second = KeyRequestFactory.build(tagname=f"right-{pair}", channels=channels, key_bits=first.key_bits)

        assert await qkms.handle_key_request(first) is AckStatus.WAITING
        assert await qkms.handle_key_request(second) is AckStatus.WAITING

    assert issued_keys == []
    assert not qkms.history
    assert len(qkms.inspect_state().pending) == 2 * pairs


@pytest.mark.parametrize("return_path", [ReturnPath.EXIT, ReturnPath.ENTRY])
async def test_keys_travel_through_a_proxy_pool(
    qkms_url: str,
    aiohttp_server: AiohttpServer,
    keypair: AsymmetricKeyPair,
    other_keypair: AsymmetricKeyPair,
    issued_keys: list[SessionKey],
    return_path: ReturnPath,
) -> None:
    ports = [unused_port() for _ in range(4)]
    peers = tuple(PoolPeer(proxy_id=f"p{i}", address=f"http://127.0.0.1:{port}") for i, port in enumerate(ports))
    proxies = []
    for i, peer in enumerate(peers):
        own: tuple[ChannelDescriptor, ...] = tuple(local_channels(peer.proxy_id))
        config = ProxyConfig(
            proxy_id=peer.proxy_id,
            address=peer.address,
            own_channels=own,
            pool_peers=peers,
            return_path=return_path,
        )
        proxy = KeyProxy(config, qkms_url=qkms_url, rng=random.Random(i), delivery_retries=0)
        await aiohttp_server(ProxyServer(proxy).web_app, port=ports[i])
        proxies.append(proxy)

    alice = KeyClient(keypair=keypair, channels=local_channels("alice"), deadline=SESSION_TIMEOUT)
    await alice.start_channels()
    carol_port = unused_port()
    carol = KeyClient(keypair=other_keypair, reply_url=f"http://127.0.0.1:{carol_port}", deadline=SESSION_TIMEOUT)
    await aiohttp_server(ClientServer(carol, name="carol").web_app, port=carol_port)

    sessions = 12
    try:
        for session in range(sessions):
            tagname = f"pool-{session}"
            await alice.request_key(KeyParameters(tagname, num_splits=6), qkms_url)
            await carol.request_key(KeyParameters(tagname, num_splits=6), peers[0].address)
            first, second = await asyncio.wait_for(
                asyncio.gather(alice.wait_for_key(tagname), carol.wait_for_key(tagname)), SESSION_TIMEOUT
            )
            assert first == second == issued_keys[-1]
    finally:
        await alice.close()

    delivered = [payload for proxy in proxies for payload in proxy.delivered_payloads]
    assert len(delivered) == sessions
    assert all(payload.entry_id == "p0" for payload in delivered)
    assert all(1 <= payload.hop_count <= proxies[0].config.max_hops for payload in delivered)
