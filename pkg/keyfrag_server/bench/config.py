#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
import logging
from configparser import ConfigParser
from pathlib import Path
from typing import Annotated

from pydantic import BaseModel, Field, ValidationError, field_validator

from keyfrag_common.constants import DEFAULT_RSA_KEY_SIZE, MAX_FRAGMENTS
from keyfrag_common.keycore import EncryptionMode
from keyfrag_common.models import LatencyModel, MediumType
from keyfrag_server.bench.errors import HarnessError
from keyfrag_server.client import ClientMode

_log = logging.getLogger("keyfrag:bench")

_SECTION = "bench"


class BenchConfig(BaseModel):
    """One benchmark configuration. Every party gets one simulated channel per entry of `media`."""

    config_id: str = "default"
    runs: Annotated[int, Field(ge=1)] = 1000
    key_bits: int = 256
    num_splits: Annotated[int, Field(ge=1, le=MAX_FRAGMENTS)] = 8
    shuffle: bool = True
    media: Annotated[list[MediumType], Field(min_length=1)] = [
        MediumType.WIFI,
        MediumType.BLUETOOTH,
        MediumType.CELLULAR,
        MediumType.ETHERNET,
    ]
    latency: LatencyModel = LatencyModel()
    mode: ClientMode = ClientMode.CLASSICAL
    encryption_mode: EncryptionMode = EncryptionMode.DIRECT
    via_proxy: bool = False
    kem: str = "stub"
    rsa_key_size: int = DEFAULT_RSA_KEY_SIZE
    seed: int = 0
    parallel: Annotated[int, Field(ge=1)] = 1
    """Trials in flight at once. Anything above one is a stress test, its timings are not comparable."""
    trial_timeout: float = 30.0

    @field_validator("media", mode="before")
    @classmethod
    def split_media(cls, value: object) -> object:
        if isinstance(value, str):
            return [medium.lower() for medium in value.replace(",", " ").split()]
        return value

    @field_validator("latency", mode="before")
    @classmethod
    def parse_latency(cls, value: object) -> object:
        if isinstance(value, str):
            return LatencyModel.parse(value)
        return value


def load_bench_configs(path: Path) -> list[BenchConfig]:
    """Reads `[bench]` and `[bench.NAME]` sections. Values of `[bench]` are defaults for the named sections.

    Raises:
        HarnessError: If the file is missing, has no bench section or holds invalid values.
    """
    if not path.is_file():
        msg = f"No bench configuration found at '{path}'."
        raise HarnessError(msg)

    parser = ConfigParser()
    parser.read(path)
    base = dict(parser[_SECTION]) if parser.has_section(_SECTION) else {}
    named = [section for section in parser.sections() if section.startswith(f"{_SECTION}.")]

    sections = {section.removeprefix(f"{_SECTION}."): base | dict(parser[section]) for section in named}
    if not sections:
        if not parser.has_section(_SECTION):
            msg = f"'{path}' has no [{_SECTION}] section."
            raise HarnessError(msg)
        sections = {base.get("config_id", "default"): base}

    configs = []
    for config_id, values in sections.items():
        try:
            configs.append(BenchConfig.model_validate({**values, "config_id": config_id}))
        except ValidationError as error:
            msg = f"Invalid bench configuration '{config_id}': {error}"
            raise HarnessError(msg) from error

    _log.info("Loaded %d bench configuration(s) from '%s'.", len(configs), path)
    return configs
