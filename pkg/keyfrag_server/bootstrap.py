#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
"""Kiosk credentials: a signed (proxy address, expiry) pair handed to a client before any network exchange.

The credential text is `base64(address UTF-8 || 0x1F || expiry u64 big-endian || Ed25519 signature)`. The kiosk public
key is provisioned to proxies out of band and acts as the trust root.
"""

import base64
import binascii
import logging
import struct
from dataclasses import dataclass
from datetime import timedelta
from enum import StrEnum
from pathlib import Path

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

_log = logging.getLogger("keyfrag:kiosk")

_SEPARATOR = b"\x1f"
_EXPIRY = struct.Struct(">Q")
_SIGNATURE_SIZE = 64


class CredentialStatus(StrEnum):
    ACCEPTED = "accepted"
    EXPIRED = "expired"
    BAD_SIGNATURE = "bad-signature"
    MALFORMED = "malformed"


@dataclass(frozen=True)
class Verdict:
    status: CredentialStatus
    detail: str = ""

    @property
    def accepted(self) -> bool:
        return self.status is CredentialStatus.ACCEPTED


@dataclass(frozen=True)
class Credential:
    proxy_address: str
    expiry: int
    signature: bytes

    def canonical(self) -> bytes:
        return canonical_encoding(self.proxy_address, self.expiry)

    def to_text(self) -> str:
        return base64.b64encode(self.canonical() + self.signature).decode("ascii")

    @classmethod
    def from_text(cls, text: str) -> "Credential":
        """Parses credential text without checking the signature.

        Raises:
            ValueError: If the text is not a structurally valid credential.
        """
        raw = base64.b64decode(text.strip(), validate=True)
        canonical, signature = raw[:-_SIGNATURE_SIZE], raw[-_SIGNATURE_SIZE:]
        proxy_address, expiry = _split_canonical(canonical)
        return cls(proxy_address=proxy_address, expiry=expiry, signature=signature)


def canonical_encoding(proxy_address: str, expiry: int) -> bytes:
    return proxy_address.encode("utf-8") + _SEPARATOR + _EXPIRY.pack(expiry)


def _split_canonical(canonical: bytes) -> tuple[str, int]:
    if len(canonical) < 1 + _EXPIRY.size or canonical[-_EXPIRY.size - 1 : -_EXPIRY.size] != _SEPARATOR:
        msg = "Credential does not contain an address and expiry."
        raise ValueError(msg)
    (expiry,) = _EXPIRY.unpack(canonical[-_EXPIRY.size :])
    return canonical[: -_EXPIRY.size - 1].decode("utf-8"), expiry


def issue_credential(
    proxy_address: str, validity_window: timedelta, signing_key: Ed25519PrivateKey, now: float
) -> Credential:
    """Signs the proxy address together with `now + validity_window` (whole seconds).

    Raises:
        ValueError: If the validity window is not positive.
    """
    if validity_window <= timedelta(0):
        msg = f"Validity window must be positive, got {validity_window}."
        raise ValueError(msg)

    expiry = int(now) + int(validity_window.total_seconds())
    signature = signing_key.sign(canonical_encoding(proxy_address, expiry))
    _log.info("Issued credential for proxy '%s' valid until %d.", proxy_address, expiry)
    return Credential(proxy_address=proxy_address, expiry=expiry, signature=signature)


def verify_credential(credential: Credential | str, public_key: Ed25519PublicKey, now: float) -> Verdict:
    """Checks the kiosk signature over the canonical encoding, then the expiry. Never raises."""
    if isinstance(credential, str):
        try:
            raw = base64.b64decode(credential.strip(), validate=True)
        except (binascii.Error, ValueError):
            return Verdict(CredentialStatus.MALFORMED, "not base64")
        if len(raw) <= _SIGNATURE_SIZE:
            return Verdict(CredentialStatus.MALFORMED, "too short")
        canonical, signature = raw[:-_SIGNATURE_SIZE], raw[-_SIGNATURE_SIZE:]
    else:
        try:
            canonical = credential.canonical()
        except (UnicodeError, struct.error):
            return Verdict(CredentialStatus.MALFORMED, "fields cannot be encoded")
        signature = credential.signature

    try:
        public_key.verify(signature, canonical)
    except InvalidSignature:
        return Verdict(CredentialStatus.BAD_SIGNATURE)

    try:
        _, expiry = _split_canonical(canonical)
    except (ValueError, UnicodeError):
        return Verdict(CredentialStatus.MALFORMED, "signed fields are not a credential")

    if now > expiry:
        return Verdict(CredentialStatus.EXPIRED, f"expired at {expiry}")
    return Verdict(CredentialStatus.ACCEPTED)


def credential_address(credential: str) -> str | None:
    try:
        return Credential.from_text(credential).proxy_address
    except (binascii.Error, ValueError):
        return None


def generate_kiosk_key() -> Ed25519PrivateKey:
    return Ed25519PrivateKey.generate()


def save_kiosk_key(key: Ed25519PrivateKey, directory: Path) -> tuple[Path, Path]:
    """Writes `kiosk.key` (PKCS#8 PEM) and `kiosk.pub` (SubjectPublicKeyInfo PEM) into the directory."""
    directory.mkdir(parents=True, exist_ok=True)
    private_path = directory / "kiosk.key"
    public_path = directory / "kiosk.pub"
    private_path.write_bytes(
        key.private_bytes(serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8, serialization.NoEncryption())
    )
    private_path.chmod(0o600)
    public_path.write_bytes(
        key.public_key().public_bytes(serialization.Encoding.PEM, serialization.PublicFormat.SubjectPublicKeyInfo)
    )
    return private_path, public_path


def load_kiosk_private_key(path: Path) -> Ed25519PrivateKey:
    key = serialization.load_pem_private_key(path.read_bytes(), password=None)
    if not isinstance(key, Ed25519PrivateKey):
        msg = f"'{path}' does not contain an Ed25519 private key."
        raise TypeError(msg)
    return key


def load_kiosk_public_key(path: Path) -> Ed25519PublicKey:
    key = serialization.load_pem_public_key(path.read_bytes())
    if not isinstance(key, Ed25519PublicKey):
        msg = f"'{path}' does not contain an Ed25519 public key."
        raise TypeError(msg)
    return key
