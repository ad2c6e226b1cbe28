#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
"""Pluggable key encapsulation and the symmetric tunnel keyed by its shared secret.

Two providers implement [KemProvider][]: a deterministic stub for tests and ML-KEM-768 through liboqs. The liboqs
binding is optional (`pip install keyfrag-server[pq]`).
"""

import os
import random
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from hashlib import sha256
from typing import ClassVar

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from keyfrag_common.constants import AES_KEY_SIZE, GCM_NONCE_SIZE, TUNNEL_KDF_LABEL

try:
    import oqs

    _OQS_AVAILABLE = True
except ImportError:
    _OQS_AVAILABLE = False


class KemError(Exception):
    pass


class KemUnavailableError(KemError):
    def __init__(self, provider: str):
        super().__init__(f"KEM provider '{provider}' is not available in this installation.")


class TunnelError(KemError):
    pass


@dataclass(frozen=True)
class KemKeyPair:
    public_key: bytes
    secret_key: bytes = field(repr=False)


class KemProvider(ABC):
    name: ClassVar[str]

    @abstractmethod
    def generate_keypair(self) -> KemKeyPair:
        pass

    @abstractmethod
    def encapsulate(self, public_key: bytes) -> tuple[bytes, bytes]:
        """Returns `(ciphertext, shared_secret)`."""

    @abstractmethod
    def decapsulate(self, secret_key: bytes, ciphertext: bytes) -> bytes:
        pass


class StubKem(KemProvider):
    """Deterministic stand-in with the KEM interface. It offers no secrecy and exists for tests only.

    The shared secret is `SHA-256(public_key || ciphertext)` and the ciphertext is a seeded random string, so two
    instances with the same seed produce identical transcripts.
    """

    name = "stub"

    def __init__(self, seed: int = 0):
        self._rng = random.Random(seed)

    def generate_keypair(self) -> KemKeyPair:
        secret_key = self._rng.randbytes(32)
        return KemKeyPair(public_key=sha256(secret_key).digest(), secret_key=secret_key)

    def encapsulate(self, public_key: bytes) -> tuple[bytes, bytes]:
        ciphertext = self._rng.randbytes(32)
        return ciphertext, sha256(public_key + ciphertext).digest()

    def decapsulate(self, secret_key: bytes, ciphertext: bytes) -> bytes:
        if len(ciphertext) != 32:
            msg = "Stub KEM ciphertext must be 32 bytes."
            raise KemError(msg)
        return sha256(sha256(secret_key).digest() + ciphertext).digest()


class OqsKem(KemProvider):
    name = "ml-kem-768"
    algorithm = "ML-KEM-768"

    def __init__(self) -> None:
        if not _OQS_AVAILABLE:
            raise KemUnavailableError(self.name)

    def generate_keypair(self) -> KemKeyPair:
        with oqs.KeyEncapsulation(self.algorithm) as kem:
            public_key = kem.generate_keypair()
            return KemKeyPair(public_key=public_key, secret_key=kem.export_secret_key())

    def encapsulate(self, public_key: bytes) -> tuple[bytes, bytes]:
        with oqs.KeyEncapsulation(self.algorithm) as kem:
            return kem.encap_secret(public_key)

    def decapsulate(self, secret_key: bytes, ciphertext: bytes) -> bytes:
        try:
            with oqs.KeyEncapsulation(self.algorithm, secret_key) as kem:
                return kem.decap_secret(ciphertext)
        except Exception as error:
            msg = "ML-KEM decapsulation failed."
            raise KemError(msg) from error


def get_kem_provider(name: str, *, seed: int = 0) -> KemProvider:
    """Creates the provider registered under `name`. The seed only affects the stub."""
    if name == StubKem.name:
        return StubKem(seed)
    if name == OqsKem.name:
        return OqsKem()
    msg = f"Unknown KEM provider '{name}'."
    raise KemError(msg)


def tunnel_context(tagname: str) -> str:
    """Context binding of a tunnel to its session, hex SHA-256 of the tagname."""
    return sha256(tagname.encode()).hexdigest()


@dataclass(frozen=True)
class TunnelKey:
    """AES-256-GCM key derived from a KEM shared secret and bound to a session context."""

    key: bytes = field(repr=False)
    context: str

    @classmethod
    def derive(cls, shared_secret: bytes, context: str) -> "TunnelKey":
        key = HKDF(
            algorithm=hashes.SHA256(), length=AES_KEY_SIZE, salt=None, info=TUNNEL_KDF_LABEL + context.encode()
        ).derive(shared_secret)
        return cls(key=key, context=context)

    def seal(self, plaintext: bytes, aad: bytes) -> bytes:
        nonce = os.urandom(GCM_NONCE_SIZE)
        return nonce + AESGCM(self.key).encrypt(nonce, plaintext, aad)

    def open(self, sealed: bytes, aad: bytes) -> bytes:
        if len(sealed) <= GCM_NONCE_SIZE:
            msg = "Sealed tunnel message is truncated."
            raise TunnelError(msg)
        try:
            return AESGCM(self.key).decrypt(sealed[:GCM_NONCE_SIZE], sealed[GCM_NONCE_SIZE:], aad)
        except InvalidTag as error:
            msg = "Tunnel message failed authentication."
            raise TunnelError(msg) from error
