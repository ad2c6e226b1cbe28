#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.

import pydantic_core
import pytest
from aiohttp.pytest_plugin import AiohttpClient
from aiohttp.test_utils import TestClient, unused_port

from keyfrag_common.dev.factories import ProxyKeyRequestFactory
from keyfrag_common.kem import StubKem
from keyfrag_common.models import FragmentMessage, KemPublicKey, NodeStatus, PoolReturn
from keyfrag_server.bootstrap import generate_kiosk_key
from keyfrag_server.proxy import KeyProxy, ProxyConfig
from keyfrag_server.tunnel import TunnelEndpoint
from keyfrag_server.upstream import seal_request
from keyfrag_server.web.app import ProxyServer
from tests.conftest import local_channels


def make_proxy(qkms_url: str, **kwargs: object) -> KeyProxy:
    config = ProxyConfig(proxy_id="proxy-a", address="http://127.0.0.1:9031", own_channels=tuple(local_channels("px")))
    return KeyProxy(config, qkms_url=qkms_url, delivery_retries=0, **kwargs)  # type: ignore[arg-type]


@pytest.fixture
async def proxy_client(qkms_url: str, aiohttp_client: AiohttpClient) -> TestClient:
    return await aiohttp_client(ProxyServer(make_proxy(qkms_url), tunnel=TunnelEndpoint(StubKem(seed=11))).web_app)


async def test_client_request_is_forwarded(proxy_client: TestClient) -> None:
    request = ProxyKeyRequestFactory.build(reply_to="http://127.0.0.1:9032")

    res = await proxy_client.post("/get-key-parameters", json=request.model_dump(mode="json"))

    assert res.status == 200
    assert await res.json() == {"status": "waiting"}


async def test_missing_reply_address(proxy_client: TestClient) -> None:
    request = ProxyKeyRequestFactory.build(reply_to=None)

    res = await proxy_client.post("/get-key-parameters", json=request.model_dump(mode="json"))

    assert res.status == 400
    assert res.reason == "RoutingError"


async def test_upstream_rejection_is_passed_through(proxy_client: TestClient) -> None:
    request = ProxyKeyRequestFactory.build(reply_to="http://127.0.0.1:9032", key_bits=512)

    res = await proxy_client.post("/get-key-parameters", json=request.model_dump(mode="json"))

    assert res.status == 400
    assert res.reason == "UnsupportedKeyLengthError"


async def test_unreachable_upstream(aiohttp_client: AiohttpClient) -> None:
    client = await aiohttp_client(ProxyServer(make_proxy(f"http://127.0.0.1:{unused_port()}")).web_app)
    request = ProxyKeyRequestFactory.build(reply_to="http://127.0.0.1:9032")

    res = await client.post("/get-key-parameters", json=request.model_dump(mode="json"))

    assert res.status == 502
    assert res.reason == "UpstreamUnavailableError"


async def test_credential_is_required(qkms_url: str, aiohttp_client: AiohttpClient) -> None:
    proxy = make_proxy(qkms_url, kiosk_public_key=generate_kiosk_key().public_key())
    client = await aiohttp_client(ProxyServer(proxy).web_app)
    request = ProxyKeyRequestFactory.build(reply_to="http://127.0.0.1:9032")

    res = await client.post("/get-key-parameters", json=request.model_dump(mode="json"))

    assert res.status == 403
    assert res.reason == "CredentialRejectedError"
    assert "no credential presented" in await res.text()


async def test_tunnelled_client_request(proxy_client: TestClient) -> None:
    res = await proxy_client.get("/kem/public-key")
    public_key = KemPublicKey.model_validate(await res.json())
    request = ProxyKeyRequestFactory.build(reply_to="http://127.0.0.1:9032")
    envelope, _ = seal_request(StubKem(seed=12), public_key, request.tagname, pydantic_core.to_json(request))

    res = await proxy_client.post("/pq/get-key-parameters", json=envelope.model_dump(mode="json"))

    assert res.status == 200
    assert await res.json() == {"status": "waiting"}


async def test_tunnel_needs_a_kem(qkms_url: str, aiohttp_client: AiohttpClient) -> None:
    client = await aiohttp_client(ProxyServer(make_proxy(qkms_url)).web_app)

    res = await client.get("/kem/public-key")

    assert res.status == 501


async def test_pool_return_for_unknown_session(proxy_client: TestClient) -> None:
    message = PoolReturn(fragment=FragmentMessage(session_tag="stranger", ciphertext=b"x"))

    res = await proxy_client.post("/pool-return", json=message.model_dump(mode="json"))

    assert res.status == 204


async def test_capped_pool_payload_is_rejected(proxy_client: TestClient) -> None:
    payload = {
        "request": ProxyKeyRequestFactory.build().model_dump(mode="json"),
        "entry_id": "proxy-a",
        "hop_count": 8,
    }

    res = await proxy_client.post("/pool-forward", json=payload)

    assert res.status == 400
    assert res.reason == "RoutingError"


async def test_status(proxy_client: TestClient) -> None:
    res = await proxy_client.get("/status")

    status = NodeStatus.model_validate(await res.json())
    assert (status.name, status.role) == ("proxy-a", "proxy")
    assert status.sessions == {"client_sessions": 0, "exit_sessions": 0}
