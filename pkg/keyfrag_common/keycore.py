#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
"""Session-key generation, fragmentation and per-fragment encryption.

Everything in here is shared by the key management server, the proxies and the clients. Values are immutable once
constructed; randomness is always supplied by the caller so that protocol decisions (key bytes, shuffle order) are
reproducible under a fixed seed. Encryption padding and nonces are drawn from the OS CSPRNG.
"""

import os
import random
import struct
from collections.abc import Iterable, MutableMapping, Sequence
from dataclasses import dataclass, field, replace
from enum import StrEnum
from functools import cached_property
from hashlib import sha256
from typing import TypeAlias

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from keyfrag_common.constants import (
    AES_KEY_SIZE,
    DEFAULT_RSA_KEY_SIZE,
    ENVELOPE_KDF_LABEL,
    FRAGMENT_HEADER,
    GCM_NONCE_SIZE,
    HKDF_SALT_SIZE,
    MAX_FRAGMENTS,
    MODE_TAG_DIRECT,
    MODE_TAG_ENVELOPE,
    SUPPORTED_KEY_BITS,
)

__all__ = [
    "AsymmetricKeyPair",
    "EncryptedFragment",
    "EncryptionMode",
    "EnvelopeKey",
    "FragmentConflictError",
    "FragmentDecryptionError",
    "FragmentModeError",
    "FragmentProtocolError",
    "IncompleteFragmentSetError",
    "KeyCoreError",
    "ParameterError",
    "PlainFragment",
    "SessionKey",
    "decrypt_fragment",
    "direct_plaintext_bound",
    "encrypt_fragment",
    "fragment_key",
    "generate_key",
    "load_private_key",
    "load_public_key",
    "public_key_fingerprint",
    "reconstruct_key",
    "shuffle_fragments",
    "zeroize",
]

_OAEP_HASH_SIZE = hashes.SHA256.digest_size
_WRAPPED_LENGTH = struct.Struct(">H")


class KeyCoreError(Exception):
    pass


class ParameterError(KeyCoreError, ValueError):
    pass


class FragmentModeError(KeyCoreError):
    pass


class FragmentDecryptionError(KeyCoreError):
    pass


class FragmentProtocolError(KeyCoreError):
    pass


class IncompleteFragmentSetError(KeyCoreError):
    def __init__(self, missing: Sequence[int], total: int):
        self.missing = list(missing)
        self.total = total
        super().__init__(f"Fragment set is incomplete: missing indices {self.missing} of {total}.")


class FragmentConflictError(KeyCoreError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"Received two different payloads for fragment index {index}.")


class EncryptionMode(StrEnum):
    DIRECT = "direct-asymmetric"
    ENVELOPE = "envelope"


@dataclass(frozen=True)
class SessionKey:
    """The symmetric secret two parties establish."""

    bits: int
    material: bytes = field(repr=False)

    def __post_init__(self) -> None:
        if self.bits <= 0 or self.bits % 8 or len(self.material) * 8 != self.bits:
            msg = f"Key material of {len(self.material)} bytes does not match a {self.bits} bit key."
            raise ParameterError(msg)


@dataclass(frozen=True)
class PlainFragment:
    index: int
    total: int
    payload: bytes = field(repr=False)

    def __post_init__(self) -> None:
        if not 1 <= self.total <= MAX_FRAGMENTS:
            msg = f"Fragment total must be between 1 and {MAX_FRAGMENTS}, got {self.total}."
            raise FragmentProtocolError(msg)
        if not 0 <= self.index < self.total:
            msg = f"Fragment index {self.index} is out of range for a total of {self.total}."
            raise FragmentProtocolError(msg)

    def serialize(self) -> bytes:
        return FRAGMENT_HEADER.pack(self.index, self.total, len(self.payload)) + self.payload

    @classmethod
    def deserialize(cls, data: bytes) -> "PlainFragment":
        if len(data) < FRAGMENT_HEADER.size:
            msg = "Serialized fragment is shorter than its header."
            raise FragmentProtocolError(msg)

        index, total, length = FRAGMENT_HEADER.unpack_from(data)
        payload = data[FRAGMENT_HEADER.size :]
        if len(payload) != length:
            msg = f"Serialized fragment announces {length} payload bytes but carries {len(payload)}."
            raise FragmentProtocolError(msg)

        return cls(index=index, total=total, payload=payload)


@dataclass(frozen=True)
class EncryptedFragment:
    """One encrypted fragment on the wire. The session tag is its only plaintext metadata."""

    session_tag: str
    ciphertext: bytes = field(repr=False)
    channel_id: str | None = None

    def assign(self, channel_id: str) -> "EncryptedFragment":
        return replace(self, channel_id=channel_id)


PublicKeyLike: TypeAlias = bytes | rsa.RSAPublicKey
PrivateKeyLike: TypeAlias = bytes | rsa.RSAPrivateKey


@dataclass(frozen=True)
class AsymmetricKeyPair:
    """A classical RSA key pair, DER encoded (SubjectPublicKeyInfo / PKCS#8)."""

    public_key: bytes
    private_key: bytes = field(repr=False)

    @classmethod
    def generate(cls, key_size: int = DEFAULT_RSA_KEY_SIZE) -> "AsymmetricKeyPair":
        return cls.from_private_key(rsa.generate_private_key(public_exponent=65537, key_size=key_size))

    @classmethod
    def from_private_key(cls, private: PrivateKeyLike) -> "AsymmetricKeyPair":
        """Builds the pair from a private key object, DER or PEM bytes."""
        if isinstance(private, bytes) and private.lstrip().startswith(b"-----BEGIN"):
            loaded = serialization.load_pem_private_key(private, password=None)
            if not isinstance(loaded, rsa.RSAPrivateKey):
                msg = f"Expected an RSA private key, got {type(loaded).__name__}."
                raise ParameterError(msg)
            private = loaded

        key = load_private_key(private)
        return cls(
            public_key=key.public_key().public_bytes(
                serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
            ),
            private_key=key.private_bytes(
                serialization.Encoding.DER, serialization.PrivateFormat.PKCS8, serialization.NoEncryption()
            ),
        )

    @cached_property
    def private_key_object(self) -> rsa.RSAPrivateKey:
        return load_private_key(self.private_key)

    @cached_property
    def public_key_object(self) -> rsa.RSAPublicKey:
        return load_public_key(self.public_key)

    @property
    def fingerprint(self) -> str:
        return public_key_fingerprint(self.public_key)


def public_key_fingerprint(public_key: bytes) -> str:
    return sha256(public_key).hexdigest()


def load_public_key(key: PublicKeyLike) -> rsa.RSAPublicKey:
    if isinstance(key, rsa.RSAPublicKey):
        return key
    loaded = serialization.load_der_public_key(key)
    if not isinstance(loaded, rsa.RSAPublicKey):
        msg = f"Expected an RSA public key, got {type(loaded).__name__}."
        raise ParameterError(msg)
    return loaded


def load_private_key(key: PrivateKeyLike) -> rsa.RSAPrivateKey:
    if isinstance(key, rsa.RSAPrivateKey):
        return key
    loaded = serialization.load_der_private_key(key, password=None)
    if not isinstance(loaded, rsa.RSAPrivateKey):
        msg = f"Expected an RSA private key, got {type(loaded).__name__}."
        raise ParameterError(msg)
    return loaded


def _oaep(label: bytes) -> padding.OAEP:
    return padding.OAEP(mgf=padding.MGF1(algorithm=hashes.SHA256()), algorithm=hashes.SHA256(), label=label or None)


def _fragment_key(master: bytes, salt: bytes) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=AES_KEY_SIZE, salt=salt, info=ENVELOPE_KDF_LABEL).derive(master)


def zeroize(buffer: bytearray) -> None:
    """Overwrites the buffer in place."""
    buffer[:] = bytes(len(buffer))


def generate_key(bits: int, rng: random.Random, *, supported: Iterable[int] = SUPPORTED_KEY_BITS) -> SessionKey:
    """Samples a session key uniformly at random.

    Args:
        bits: key length in bits, must be one of `supported`
        rng: randomness source, `random.SystemRandom()` in production and a seeded `random.Random` in tests
        supported: whitelist of bit lengths

    Raises:
        ParameterError: If the bit length is not supported.
    """
    if bits % 8 or bits not in tuple(supported):
        msg = f"Unsupported key length of {bits} bits."
        raise ParameterError(msg)
    return SessionKey(bits=bits, material=rng.randbytes(bits // 8))


def fragment_key(key: SessionKey, n: int) -> list[PlainFragment]:
    """Splits the key into `n` contiguous chunks whose sizes differ by at most one byte.

    The first `len(key) mod n` chunks carry the extra byte.
    """
    size = len(key.material)
    if not 1 <= n <= min(size, MAX_FRAGMENTS):
        msg = f"Cannot split a {size} byte key into {n} non-empty fragments."
        raise ParameterError(msg)

    base, extra = divmod(size, n)
    fragments = []
    offset = 0
    for index in range(n):
        length = base + (1 if index < extra else 0)
        fragments.append(PlainFragment(index=index, total=n, payload=key.material[offset : offset + length]))
        offset += length

    return fragments


def shuffle_fragments(fragments: Sequence[PlainFragment], rng: random.Random) -> list[PlainFragment]:
    """Returns a uniformly random permutation (Fisher-Yates) of the fragments."""
    shuffled = list(fragments)
    rng.shuffle(shuffled)
    return shuffled


@dataclass(frozen=True)
class EnvelopeKey:
    """A symmetric master key wrapped once under the recipient's public key.

    Every fragment sealed with it gets its own AES key, derived from the master with a random salt.
    """

    master: bytes = field(repr=False)
    wrapped: bytes

    @classmethod
    def create(cls, recipient_public: PublicKeyLike, session_tag: str) -> "EnvelopeKey":
        master = AESGCM.generate_key(bit_length=AES_KEY_SIZE * 8)
        wrapped = load_public_key(recipient_public).encrypt(master, _oaep(session_tag.encode()))
        return cls(master=master, wrapped=wrapped)


def direct_plaintext_bound(recipient_public: PublicKeyLike) -> int:
    """Largest plaintext (in bytes) a single RSA-OAEP-SHA256 encryption can carry."""
    return load_public_key(recipient_public).key_size // 8 - 2 * _OAEP_HASH_SIZE - 2


def encrypt_fragment(
    fragment: PlainFragment,
    recipient_public: PublicKeyLike,
    mode: EncryptionMode,
    *,
    session_tag: str,
    envelope: EnvelopeKey | None = None,
) -> EncryptedFragment:
    """Encrypts the serialized fragment (index, total and payload together) for the recipient.

    The session tag is bound to the ciphertext, as OAEP label in direct mode and as associated data in envelope mode.

    Args:
        fragment: the plaintext fragment
        recipient_public: DER encoded RSA public key (or a loaded key object)
        mode: direct asymmetric encryption or hybrid envelope
        session_tag: the tagname the fragment belongs to
        envelope: wrapped master key to reuse in envelope mode; a fresh one is created if omitted

    Raises:
        FragmentModeError: If the fragment is too large for direct mode.
    """
    plaintext = fragment.serialize()
    label = session_tag.encode()
    public = load_public_key(recipient_public)

    if mode is EncryptionMode.DIRECT:
        bound = direct_plaintext_bound(public)
        if len(plaintext) > bound:
            msg = (
                f"Serialized fragment of {len(plaintext)} bytes exceeds the direct mode bound of {bound} bytes, "
                f"use envelope mode instead."
            )
            raise FragmentModeError(msg)
        ciphertext = bytes([MODE_TAG_DIRECT]) + public.encrypt(plaintext, _oaep(label))
    else:
        if envelope is None:
            envelope = EnvelopeKey.create(public, session_tag)
        salt = os.urandom(HKDF_SALT_SIZE)
        nonce = os.urandom(GCM_NONCE_SIZE)
        sealed = AESGCM(_fragment_key(envelope.master, salt)).encrypt(nonce, plaintext, label)
        ciphertext = b"".join((
            bytes([MODE_TAG_ENVELOPE]),
            _WRAPPED_LENGTH.pack(len(envelope.wrapped)),
            envelope.wrapped,
            salt,
            nonce,
            sealed,
        ))

    return EncryptedFragment(session_tag=session_tag, ciphertext=ciphertext)


def _open_envelope(
    body: bytes, private: rsa.RSAPrivateKey, label: bytes, unwrap_cache: MutableMapping[bytes, bytes] | None
) -> bytes:
    (wrapped_length,) = _WRAPPED_LENGTH.unpack_from(body)
    offset = _WRAPPED_LENGTH.size
    wrapped = body[offset : offset + wrapped_length]
    offset += wrapped_length
    salt = body[offset : offset + HKDF_SALT_SIZE]
    offset += HKDF_SALT_SIZE
    nonce = body[offset : offset + GCM_NONCE_SIZE]
    offset += GCM_NONCE_SIZE
    sealed = body[offset:]

    if len(wrapped) != wrapped_length or len(salt) != HKDF_SALT_SIZE or len(nonce) != GCM_NONCE_SIZE:
        msg = "Truncated envelope."
        raise ValueError(msg)

    cache_key = label + b"\x00" + wrapped
    master = unwrap_cache.get(cache_key) if unwrap_cache is not None else None
    if master is None:
        master = private.decrypt(wrapped, _oaep(label))
        if unwrap_cache is not None:
            unwrap_cache[cache_key] = master

    return AESGCM(_fragment_key(master, salt)).decrypt(nonce, sealed, label)


def decrypt_fragment(
    encrypted: EncryptedFragment,
    private_key: PrivateKeyLike,
    *,
    unwrap_cache: MutableMapping[bytes, bytes] | None = None,
) -> PlainFragment:
    """Decrypts a fragment produced by [encrypt_fragment][].

    Args:
        encrypted: the encrypted fragment
        private_key: DER encoded RSA private key (or a loaded key object)
        unwrap_cache: optional per-session cache of unwrapped envelope master keys

    Raises:
        FragmentDecryptionError: On a wrong key, a wrong session tag or any tampering.
    """
    data = encrypted.ciphertext
    if not data:
        msg = "Empty ciphertext."
        raise FragmentDecryptionError(msg)

    label = encrypted.session_tag.encode()
    mode_tag, body = data[0], data[1:]
    try:
        private = load_private_key(private_key)
        if mode_tag == MODE_TAG_DIRECT:
            plaintext = private.decrypt(body, _oaep(label))
        elif mode_tag == MODE_TAG_ENVELOPE:
            plaintext = _open_envelope(body, private, label, unwrap_cache)
        else:
            msg = f"Unknown ciphertext mode tag {mode_tag:#04x}."
            raise FragmentDecryptionError(msg)
    except (ValueError, InvalidTag, struct.error) as error:
        msg = "Fragment could not be decrypted."
        raise FragmentDecryptionError(msg) from error

    return PlainFragment.deserialize(plaintext)


def reconstruct_key(fragments: Iterable[PlainFragment]) -> SessionKey:
    """Concatenates a complete fragment set in index order, undoing any shuffle.

    Raises:
        FragmentProtocolError: If the fragments disagree on the total or no fragment is given.
        FragmentConflictError: If one index carries two different payloads.
        IncompleteFragmentSetError: If any index is missing.
    """
    by_index: dict[int, PlainFragment] = {}
    totals: set[int] = set()

    for fragment in fragments:
        totals.add(fragment.total)
        previous = by_index.get(fragment.index)
        if previous is not None and previous.payload != fragment.payload:
            raise FragmentConflictError(fragment.index)
        by_index[fragment.index] = fragment

    if not totals:
        msg = "Cannot reconstruct a key from zero fragments."
        raise FragmentProtocolError(msg)
    if len(totals) > 1:
        msg = f"Fragments disagree on the fragment total: {sorted(totals)}."
        raise FragmentProtocolError(msg)

    (total,) = totals
    missing = sorted(set(range(total)) - by_index.keys())
    if missing:
        raise IncompleteFragmentSetError(missing, total)

    material = b"".join(by_index[index].payload for index in range(total))
    return SessionKey(bits=len(material) * 8, material=material)
