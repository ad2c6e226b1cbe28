#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
"""Runs complete key establishments between two local clients and records per-side latency components."""

import asyncio
import logging
import random
import time
from contextlib import AsyncExitStack
from dataclasses import dataclass
from types import TracebackType

from aiohttp import web
from aiohttp.test_utils import unused_port

from keyfrag_common.kem import KemError, KemProvider, get_kem_provider
from keyfrag_common.keycore import AsymmetricKeyPair
from keyfrag_common.models import ChannelDescriptor
from keyfrag_server.bench.config import BenchConfig
from keyfrag_server.bench.errors import HarnessError
from keyfrag_server.bench.records import Side, TrialRecord
from keyfrag_server.channels import ChannelBindError, ChannelTransport
from keyfrag_server.client import (
    ClientMode,
    ClientSessionState,
    KemModeError,
    KeyClient,
    KeyParameters,
    SessionFailedError,
    SessionStateError,
)
from keyfrag_server.proxy import KeyProxy, ProxyConfig
from keyfrag_server.qkms import Qkms
from keyfrag_server.tunnel import TunnelEndpoint
from keyfrag_server.upstream import UpstreamError
from keyfrag_server.utils.timing import ComponentTimer
from keyfrag_server.web.app import ClientServer, ProxyServer, QkmsServer

_log = logging.getLogger("keyfrag:bench")

_HOST = "127.0.0.1"
_PARTIES = ("initiator", "responder")


@dataclass
class _Party:
    label: str
    client: KeyClient
    target: str
    proxy: KeyProxy | None = None


class BenchTopology:
    """A key management server and two clients, each behind its own proxy if the configuration asks for it.

    Every node runs in the current event loop on a free local port.
    """

    def __init__(self, cfg: BenchConfig):
        self.cfg = cfg
        self._qkms: Qkms | None = None
        self.parties: dict[str, _Party] = {}
        self._stack = AsyncExitStack()

    async def __aenter__(self) -> "BenchTopology":
        try:
            await self._launch()
        except (OSError, ChannelBindError, KemError) as error:
            await self._stack.aclose()
            msg = f"Could not launch the services of configuration '{self.cfg.config_id}': {error}"
            raise HarnessError(msg) from error
        return self

    async def __aexit__(
        self, exc_type: type[BaseException] | None, exc_value: BaseException | None, traceback: TracebackType | None
    ) -> None:
        await self._stack.aclose()

    @property
    def qkms(self) -> Qkms:
        if self._qkms is None:
            msg = "The topology has not been launched."
            raise HarnessError(msg)
        return self._qkms

    async def _serve(self, app: web.Application, port: int) -> str:
        runner = web.AppRunner(app)
        await runner.setup()
        self._stack.push_async_callback(runner.cleanup)
        await web.TCPSite(runner, _HOST, port).start()
        return f"http://{_HOST}:{port}"

    def _kem(self, offset: int) -> KemProvider | None:
        if self.cfg.mode is not ClientMode.PQ_TUNNEL:
            return None
        return get_kem_provider(self.cfg.kem, seed=self.cfg.seed + offset)

    def _channels(self, label: str) -> list[ChannelDescriptor]:
        return [
            ChannelDescriptor(
                channel_id=f"{label}-{medium}", medium=medium, port=unused_port(), latency_model=self.cfg.latency
            )
            for medium in self.cfg.media
        ]

    async def _launch(self) -> None:
        cfg = self.cfg
        transport = ChannelTransport(rng=random.Random(cfg.seed))
        self._qkms = Qkms(transport, encryption_mode=cfg.encryption_mode)
        qkms_kem = self._kem(0)
        qkms_server = QkmsServer(self._qkms, tunnel=TunnelEndpoint(qkms_kem) if qkms_kem else None)
        qkms_url = await self._serve(qkms_server.web_app, unused_port())

        for offset, label in enumerate(_PARTIES, start=1):
            keypair = AsymmetricKeyPair.generate(cfg.rsa_key_size)
            channels = self._channels(label)
            if not cfg.via_proxy:
                client = KeyClient(keypair=keypair, channels=channels, kem=self._kem(10 * offset))
                await client.start_channels()
                self._stack.push_async_callback(client.close)
                self.parties[label] = _Party(label, client, qkms_url)
                continue

            client_port = unused_port()
            client = KeyClient(keypair=keypair, reply_url=f"http://{_HOST}:{client_port}", kem=self._kem(10 * offset))
            await self._serve(ClientServer(client, name=label).web_app, client_port)

            proxy_port = unused_port()
            proxy_kem = self._kem(10 * offset + 1)
            proxy = KeyProxy(
                ProxyConfig(
                    proxy_id=f"proxy-{label}", address=f"http://{_HOST}:{proxy_port}", own_channels=tuple(channels)
                ),
                qkms_url=qkms_url,
                kem=proxy_kem,
            )
            server = ProxyServer(proxy, tunnel=TunnelEndpoint(proxy_kem) if proxy_kem else None)
            target = await self._serve(server.web_app, proxy_port)
            self.parties[label] = _Party(label, client, target, proxy)

        _log.info(
            "Launched configuration '%s' (%s, %s, %s).",
            cfg.config_id,
            cfg.mode,
            cfg.encryption_mode,
            "via proxies" if cfg.via_proxy else "direct",
        )


def _qkms_record(cfg: BenchConfig, run: int, qkms: Qkms, tagname: str, label: str, stamp: float) -> TrialRecord:
    for session in reversed(qkms.history):
        if session.tagname != tagname:
            continue
        for report in session.reports:
            if report.party_label == label:
                return TrialRecord(cfg.config_id, Side.QKMS, run, dict(report.components), stamp, report.wall)
    msg = f"The key management server kept no dispatch report for '{tagname}'."
    raise HarnessError(msg)


def _client_record(cfg: BenchConfig, run: int, state: ClientSessionState, stamp: float) -> TrialRecord:
    return _timed_record(cfg, Side.CLIENT, run, state.timer, stamp)


def _proxy_record(cfg: BenchConfig, run: int, proxy: KeyProxy, tagname: str, stamp: float) -> TrialRecord:
    bindings = proxy.client_bindings(tagname)
    if not bindings:
        msg = f"Proxy '{proxy.config.proxy_id}' kept no binding for '{tagname}'."
        raise HarnessError(msg)
    return _timed_record(cfg, Side.PROXY, run, bindings[0].timer, stamp)


def _timed_record(cfg: BenchConfig, side: Side, run: int, timer: ComponentTimer, stamp: float) -> TrialRecord:
    return TrialRecord(cfg.config_id, side, run, dict(timer.components), stamp, timer.wall, waiting=timer.waiting)


def _failed(cfg: BenchConfig, run: int, reason: str) -> list[TrialRecord]:
    sides = [Side.QKMS, Side.PROXY, Side.CLIENT] if cfg.via_proxy else [Side.QKMS, Side.CLIENT]
    stamp = time.time()
    return [TrialRecord(cfg.config_id, side, run, timestamp=stamp, failure=reason) for side in sides]


async def run_trial(topology: BenchTopology, run: int) -> list[TrialRecord]:
    """One key establishment. Timings are taken from the initiating party's side."""
    cfg = topology.cfg
    tagname = f"bench-{cfg.config_id}-{run}"
    initiator, responder = (topology.parties[label] for label in _PARTIES)

    try:
        for party in (initiator, responder):
            params = KeyParameters(
                tagname=tagname,
                key_bits=cfg.key_bits,
                num_splits=cfg.num_splits,
                shuffle=cfg.shuffle,
                party_label=party.label,
            )
            await party.client.request_key(params, party.target, cfg.mode)

        async with asyncio.timeout(cfg.trial_timeout):
            keys = [await party.client.wait_for_key(tagname) for party in (initiator, responder)]
            if initiator.proxy is not None:
                await initiator.proxy.drain()
    except (UpstreamError, KemModeError, SessionFailedError, SessionStateError, TimeoutError) as error:
        _log.warning("Trial %d of '%s' failed: %s", run, cfg.config_id, error)
        return _failed(cfg, run, type(error).__name__)
    finally:
        for party in (initiator, responder):
            state = party.client.session(tagname)
            if state is not None and not state.phase.terminal:
                party.client.abort(tagname, "trial ended")

    if keys[0] != keys[1]:
        _log.error("Trial %d of '%s' established two different keys.", run, cfg.config_id)
        return _failed(cfg, run, "key mismatch")

    stamp = time.time()
    state = initiator.client.session(tagname)
    if state is None:
        msg = f"Client session '{tagname}' vanished before it was recorded."
        raise HarnessError(msg)
    records = [_qkms_record(cfg, run, topology.qkms, tagname, initiator.label, stamp)]
    if initiator.proxy is not None:
        records.append(_proxy_record(cfg, run, initiator.proxy, tagname, stamp))
    records.append(_client_record(cfg, run, state, stamp))

    for party in (initiator, responder):
        party.client.forget(tagname)
    return records


async def run_bench(cfg: BenchConfig) -> list[TrialRecord]:
    """Runs `cfg.runs` trials, sequentially unless `cfg.parallel` is above one.

    Failed trials are part of the result with their failure reason and no components.

    Raises:
        HarnessError: If a service cannot be launched; no trial is run in that case.
    """
    records: list[TrialRecord] = []
    async with BenchTopology(cfg) as topology:
        for first in range(0, cfg.runs, cfg.parallel):
            batch = range(first, min(first + cfg.parallel, cfg.runs))
            for trial in await asyncio.gather(*(run_trial(topology, run) for run in batch)):
                records.extend(trial)
            _log.debug("Configuration '%s': %d of %d run(s) done.", cfg.config_id, batch.stop, cfg.runs)

    failures = len({record.run for record in records if record.failed})
    _log.info("Configuration '%s': %d run(s), %d failed.", cfg.config_id, cfg.runs, failures)
    return records
