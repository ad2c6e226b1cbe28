#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
import logging
from configparser import ConfigParser
from datetime import timedelta
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, FilePath, field_validator
from pydantic.fields import FieldInfo
from pydantic_settings import (
    BaseSettings,
    EnvSettingsSource,
    InitSettingsSource,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
)

from keyfrag_common.constants import DEFAULT_RSA_KEY_SIZE, SUPPORTED_KEY_BITS
from keyfrag_common.keycore import EncryptionMode
from keyfrag_common.models import ChannelDescriptor
from keyfrag_server.channels import parse_channel_lines
from keyfrag_server.proxy import ChannelPolicy, PoolPeer, ProxyConfig, ProxyMode, ReturnPath

_log = logging.getLogger("keyfrag:settings")


class IniFileSettingsSource(PydanticBaseSettingsSource):
    def __init__(self, settings_cls: type[BaseSettings], config_files: tuple[Path, ...]):
        super().__init__(settings_cls)
        self._config_files = config_files

    def get_field_value(self, field: FieldInfo, field_name: str) -> tuple[Any, str, bool]:
        # This method is abstract in PydanticBaseSettingsSource, but only ever called from
        # PydanticBaseEnvSettingsSource, which we aren't.
        return None, "", False

    def __call__(self) -> dict[str, Any]:
        for path in self._config_files:
            if not path.is_file():
                _log.info("No file found at '%s'", path)
                continue
            _log.info("Reading config file '%s'", path)

            parser = ConfigParser()
            parser.read(path)
            return {key: dict(section) for key, section in parser.items() if key != "DEFAULT"}

        _log.warning("No config file found!")
        return {}


def _channels_from_text(value: object) -> object:
    if isinstance(value, str):
        return parse_channel_lines(value)
    return value


def _none_if_empty(value: object) -> object:
    if isinstance(value, str) and not value.strip():
        return None
    return value


class GeneralSettings(BaseModel):
    log_level: Literal["NONE", "DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = "INFO"

    @field_validator("log_level", mode="before")
    @classmethod
    def logging_level_to_upper(cls, value: str) -> str:
        return value.upper()


class ChannelSettings(BaseModel):
    """Delivery behaviour of the channel transport of every node."""

    delivery_retries: int = 2
    delivery_timeout: float = 5.0
    seed: int | None = None
    """Seeds the latency sampling; unseeded if empty."""

    @field_validator("seed", mode="before")
    @classmethod
    def empty_to_none(cls, value: object) -> object:
        return _none_if_empty(value)


class QkmsSettings(BaseModel):
    listen_address: str = "127.0.0.1"
    listen_port: int = 9030
    pairing_window: timedelta = timedelta(seconds=30)
    supported_key_bits: tuple[int, ...] = SUPPORTED_KEY_BITS
    encryption_mode: EncryptionMode = EncryptionMode.DIRECT
    kem: str | None = None
    """KEM provider for the tunnel endpoint (`stub` or `ml-kem-768`), none to disable it."""
    kem_seed: int = 0

    @field_validator("kem", mode="before")
    @classmethod
    def empty_to_none(cls, value: object) -> object:
        return _none_if_empty(value)

    @field_validator("supported_key_bits", mode="before")
    @classmethod
    def split_key_bits(cls, value: object) -> object:
        if isinstance(value, str):
            return tuple(int(bits) for bits in value.replace(",", " ").split())
        return value

    @field_validator("supported_key_bits")
    @classmethod
    def check_key_bits(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if not value or any(bits <= 0 or bits % 8 for bits in value):
            msg = "key lengths must be positive multiples of 8"
            raise ValueError(msg)
        return value


class ProxySettings(BaseModel):
    proxy_id: str = "proxy-1"
    listen_address: str = "127.0.0.1"
    listen_port: int = 9031
    public_address: str | None = None
    """Base URL other nodes reach this proxy at; derived from the listen address if empty."""
    qkms_url: str = "http://127.0.0.1:9030"
    mode: ProxyMode = ProxyMode.EXPLICIT
    channels: list[ChannelDescriptor] = []
    channel_policy: ChannelPolicy = ChannelPolicy.REPLACE
    pool_peers: list[PoolPeer] = []
    forward_probability: float = 0.5
    decay: float = 1.0
    max_hops: int = 8
    return_path: ReturnPath = ReturnPath.EXIT
    exclude_self: bool = False
    kiosk_public_key: FilePath | None = None
    kem: str | None = None
    kem_seed: int = 0
    delivery_retries: int = 2
    session_ttl: timedelta = timedelta(seconds=60)

    @field_validator("channels", mode="before")
    @classmethod
    def transform_to_channels(cls, value: object) -> object:
        return _channels_from_text(value)

    @field_validator("public_address", "kiosk_public_key", "kem", mode="before")
    @classmethod
    def empty_to_none(cls, value: object) -> object:
        return _none_if_empty(value)

    @field_validator("pool_peers", mode="before")
    @classmethod
    def transform_to_peers(cls, value: object) -> object:
        if not isinstance(value, str):
            return value

        peers: dict[str, PoolPeer] = {}
        for raw_line in value.splitlines():
            line = raw_line.strip()
            if not line or line.startswith("#"):
                continue

            data = line.split()
            if len(data) != 2:
                msg = f"expected 'proxy_id url', got '{line}'"
                raise ValueError(msg)

            proxy_id, address = data
            if proxy_id in peers:
                msg = f"must contain unique pool peers: failed for {proxy_id}"
                raise ValueError(msg)
            peers[proxy_id] = PoolPeer(proxy_id=proxy_id, address=address.rstrip("/"))

        return list(peers.values())

    @property
    def address(self) -> str:
        return (self.public_address or f"http://{self.listen_address}:{self.listen_port}").rstrip("/")

    def to_config(self) -> ProxyConfig:
        """Raises [ProxyConfigurationError][keyfrag_server.proxy.ProxyConfigurationError] on invalid values."""
        return ProxyConfig(
            proxy_id=self.proxy_id,
            address=self.address,
            mode=self.mode,
            own_channels=tuple(self.channels),
            pool_peers=tuple(self.pool_peers),
            forward_probability=self.forward_probability,
            decay=self.decay,
            max_hops=self.max_hops,
            return_path=self.return_path,
            channel_policy=self.channel_policy,
            exclude_self=self.exclude_self,
        )


class ClientSettings(BaseModel):
    listen_address: str = "127.0.0.1"
    listen_port: int = 9032
    reply_url: str | None = None
    """Base URL fragments are forwarded to by a proxy. Without it the client listens on its own channels only."""
    target: str = "http://127.0.0.1:9030"
    """Key management server or proxy the client sends its requests to."""
    redirects: dict[str, str] = {}
    """`from_url to_url` per line; requests for `from_url` go to `to_url` (transparent proxying)."""
    channels: list[ChannelDescriptor] = []
    private_key: FilePath | None = None
    """PEM or DER PKCS#8 RSA private key; a fresh key is generated per start if empty."""
    rsa_key_size: int = DEFAULT_RSA_KEY_SIZE
    deadline: timedelta = timedelta(seconds=60)
    kem: str | None = None
    kem_seed: int = 0
    credential: str | None = None

    @field_validator("channels", mode="before")
    @classmethod
    def transform_to_channels(cls, value: object) -> object:
        return _channels_from_text(value)

    @field_validator("reply_url", "private_key", "kem", "credential", mode="before")
    @classmethod
    def empty_to_none(cls, value: object) -> object:
        return _none_if_empty(value)

    @field_validator("redirects", mode="before")
    @classmethod
    def transform_to_redirects(cls, value: object) -> object:
        if not isinstance(value, str):
            return value

        redirects = {}
        for raw_line in value.splitlines():
            line = raw_line.strip()
            if not line or line.startswith("#"):
                continue
            data = line.split()
            if len(data) != 2:
                msg = f"expected 'from_url to_url', got '{line}'"
                raise ValueError(msg)
            redirects[data[0]] = data[1]
        return redirects


class KioskSettings(BaseModel):
    validity_window: timedelta = timedelta(hours=1)
    private_key: Path | None = None
    public_key: Path | None = None

    @field_validator("private_key", "public_key", mode="before")
    @classmethod
    def empty_to_none(cls, value: object) -> object:
        return _none_if_empty(value)

    @field_validator("validity_window")
    @classmethod
    def check_positive(cls, value: timedelta) -> timedelta:
        if value <= timedelta(0):
            msg = "must be positive"
            raise ValueError(msg)
        return value


class CustomEnvSettingsSource(EnvSettingsSource):
    """Load settings from environment variables.

    Notify the user if any environment variables are found which overwrite the settings file.

    pydantic-settings v2 tries to parse multi-line ('complex') environment variables as JSON. This subclass overrides
    that behaviour, so channel and peer lists use the same line format as in the config file.
    """

    def _format_settings(self, settings: dict[str, Any], result: set | None = None, parent: str = "") -> set[str]:
        if result is None:
            result = set()

        for key, value in settings.items():
            if isinstance(value, dict):
                self._format_settings(value, result, f"{parent}{key}->")
            else:
                result.add(f"{parent}{key}: {value}")

        return result

    def decode_complex_value(self, field_name: str, field: FieldInfo, value: Any) -> Any:
        return value

    def __call__(self) -> dict[str, Any]:
        env_settings = super().__call__()
        if env_settings:
            formatted_settings = self._format_settings(env_settings)
            _log.info(
                "Reading settings from environment variables, %s in total. Environment variables overwrite "
                "settings from the config file.",
                len(formatted_settings),
            )
            _log.debug("Following settings were read from environment variables: %s", sorted(formatted_settings))
        return env_settings


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="kfrag_", env_nested_delimiter="__", env_ignore_empty=True)

    general: GeneralSettings = GeneralSettings()
    channels: ChannelSettings = ChannelSettings()
    qkms: QkmsSettings = QkmsSettings()
    proxy: ProxySettings = ProxySettings()
    client: ClientSettings = ClientSettings()
    kiosk: KioskSettings = KioskSettings()

    config_files: tuple[Path, ...] = ()

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        if not isinstance(init_settings, InitSettingsSource):
            msg = "Expected 'init_settings' to be of type InitSettingsSource."
            raise TypeError(msg)

        if "config_files" in init_settings.init_kwargs:
            ini_settings = IniFileSettingsSource(settings_cls, init_settings.init_kwargs["config_files"])
            return init_settings, CustomEnvSettingsSource(settings_cls), ini_settings

        return init_settings, env_settings
