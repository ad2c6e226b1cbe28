#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.

import base64
import random
from enum import StrEnum
from typing import Annotated, Self

from cryptography.hazmat.primitives.serialization import load_der_public_key
from pydantic import (
    AfterValidator,
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    model_validator,
)

from keyfrag_common.constants import MAX_FRAGMENTS
from keyfrag_common.keycore import EncryptedFragment


def _decode_base64(value: object) -> object:
    if isinstance(value, str):
        return base64.b64decode(value, validate=True)
    return value


def _encode_base64(value: bytes) -> str:
    return base64.b64encode(value).decode("ascii")


Base64Bytes = Annotated[
    bytes, BeforeValidator(_decode_base64), PlainSerializer(_encode_base64, return_type=str, when_used="json")
]
"""Bytes travelling as standard base64 text (no line breaks) in JSON."""


def _check_public_key(value: bytes) -> bytes:
    # Raises ValueError on garbage, which pydantic turns into a validation error.
    load_der_public_key(value)
    return value


class MainBaseModel(BaseModel):
    pass


class MediumType(StrEnum):
    WIFI = "wifi"
    BLUETOOTH = "bluetooth"
    NFC = "nfc"
    CELLULAR = "cellular"
    ETHERNET = "ethernet"
    LOGICAL_PORT = "logical-port"

    @property
    def capacity_index(self) -> int:
        """Index i (1-based) of this medium in the capacity vector."""
        return list(MediumType).index(self) + 1


class LatencyDistribution(StrEnum):
    CONSTANT = "constant"
    UNIFORM = "uniform"
    LOGNORMAL = "lognormal"


_PARAM_COUNT = {LatencyDistribution.CONSTANT: 1, LatencyDistribution.UNIFORM: 2, LatencyDistribution.LOGNORMAL: 2}


class LatencyModel(BaseModel):
    """Simulated transit delay of a channel.

    Parameters are milliseconds for `constant` (delay) and `uniform` (low, high). For `lognormal` they are mu and sigma
    of the underlying normal distribution of ln(milliseconds), so the median delay is e^mu milliseconds.
    """

    model_config = ConfigDict(frozen=True)

    distribution: LatencyDistribution = LatencyDistribution.CONSTANT
    params: tuple[float, ...] = (0.0,)

    @model_validator(mode="after")
    def _check_params(self) -> Self:
        expected = _PARAM_COUNT[self.distribution]
        if len(self.params) != expected:
            msg = f"{self.distribution} latency takes {expected} parameter(s), got {len(self.params)}"
            raise ValueError(msg)
        if any(param < 0 for param in self.params):
            msg = "latency parameters must be non-negative"
            raise ValueError(msg)
        if self.distribution is LatencyDistribution.UNIFORM and self.params[0] > self.params[1]:
            msg = "uniform latency needs low <= high"
            raise ValueError(msg)
        return self

    @classmethod
    def parse(cls, text: str) -> "LatencyModel":
        """Parses `constant:MS`, `uniform:LOW,HIGH` or `lognormal:MU,SIGMA`."""
        name, _, raw_params = text.partition(":")
        params = tuple(float(param) for param in raw_params.split(",")) if raw_params else ()
        return cls(distribution=LatencyDistribution(name.strip().lower()), params=params)

    def sample(self, rng: random.Random) -> float:
        """Draws one delay in seconds."""
        match self.distribution:
            case LatencyDistribution.CONSTANT:
                millis = self.params[0]
            case LatencyDistribution.UNIFORM:
                millis = rng.uniform(*self.params)
            case LatencyDistribution.LOGNORMAL:
                millis = rng.lognormvariate(*self.params)
        return millis / 1000

    def __str__(self) -> str:
        return f"{self.distribution}:{','.join(format(param, 'g') for param in self.params)}"


class ChannelDescriptor(BaseModel):
    model_config = ConfigDict(frozen=True)

    channel_id: Annotated[str, Field(min_length=1)]
    medium: MediumType
    host: str = "127.0.0.1"
    port: Annotated[int, Field(ge=0, le=65535)]
    latency_model: LatencyModel = LatencyModel()
    tapped: bool = False

    @property
    def endpoint(self) -> str:
        return f"{self.host}:{self.port}"

    @property
    def url(self) -> str:
        return f"http://{self.endpoint}"


def _check_unique_channels(channels: list[ChannelDescriptor]) -> list[ChannelDescriptor]:
    seen: set[str] = set()
    for channel in channels:
        if channel.channel_id in seen:
            msg = f"channel ids must be unique: '{channel.channel_id}' appears twice"
            raise ValueError(msg)
        seen.add(channel.channel_id)
    return channels


ChannelSet = Annotated[list[ChannelDescriptor], AfterValidator(_check_unique_channels)]
PublicKeyBytes = Annotated[Base64Bytes, AfterValidator(_check_public_key)]


class KeyRequest(MainBaseModel):
    """Body of `POST /get-key-parameters` at the key management server."""

    tagname: Annotated[str, Field(min_length=1)]
    key_bits: int
    num_splits: Annotated[int, Field(ge=1, le=MAX_FRAGMENTS)]
    shuffle: bool = True
    channels: Annotated[ChannelSet, Field(min_length=1)]
    public_key: PublicKeyBytes
    party_label: str = ""


class ProxyKeyRequest(KeyRequest):
    """Body of `POST /get-key-parameters` at a proxy.

    A client behind a proxy may bring no channels of its own. `reply_to` is the base URL of the client's
    `/receive-key-fragment` endpoint and `credential` the kiosk credential text.
    """

    channels: ChannelSet = []
    reply_to: str | None = None
    credential: str | None = None

    def to_upstream(self, channels: list[ChannelDescriptor]) -> KeyRequest:
        return KeyRequest(
            tagname=self.tagname,
            key_bits=self.key_bits,
            num_splits=self.num_splits,
            shuffle=self.shuffle,
            channels=channels,
            public_key=self.public_key,
            party_label=self.party_label,
        )


class AckStatus(StrEnum):
    WAITING = "waiting"
    DISPATCHED = "dispatched"


class Ack(BaseModel):
    status: AckStatus


class FragmentMessage(MainBaseModel):
    """An encrypted fragment on the wire. Channels, proxies and clients all exchange this."""

    session_tag: Annotated[str, Field(min_length=1)]
    ciphertext: Base64Bytes

    @classmethod
    def from_fragment(cls, fragment: EncryptedFragment) -> "FragmentMessage":
        return cls(session_tag=fragment.session_tag, ciphertext=fragment.ciphertext)

    def to_fragment(self, channel_id: str | None = None) -> EncryptedFragment:
        return EncryptedFragment(session_tag=self.session_tag, ciphertext=self.ciphertext, channel_id=channel_id)


class AbortNotice(MainBaseModel):
    session_tag: Annotated[str, Field(min_length=1)]
    reason: str = ""


class KemPublicKey(BaseModel):
    provider: str
    public_key: Base64Bytes


class TunnelEnvelope(MainBaseModel):
    """A request sealed inside the symmetric tunnel keyed by a KEM shared secret."""

    provider: str
    kem_ciphertext: Base64Bytes
    context: Annotated[str, Field(pattern=r"^[0-9a-f]{64}$")]
    sealed: Base64Bytes


class RouteEntry(BaseModel):
    proxy_id: str
    address: str
    channels: list[ChannelDescriptor]


class PoolPayload(MainBaseModel):
    request: ProxyKeyRequest
    route: list[RouteEntry] = []
    hop_count: Annotated[int, Field(ge=0)] = 0
    entry_id: str


class PoolReturn(MainBaseModel):
    """A fragment travelling back along the recorded pool path. `path` lists the remaining proxy addresses."""

    fragment: FragmentMessage
    path: list[str] = []


class NodeStatus(BaseModel):
    name: str
    version: str
    role: str
    sessions: dict[str, int] = {}
