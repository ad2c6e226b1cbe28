#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.

import base64
from datetime import timedelta
from pathlib import Path

import pytest
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

from keyfrag_common.keycore import AsymmetricKeyPair
from keyfrag_server.bootstrap import (
    Credential,
    CredentialStatus,
    canonical_encoding,
    credential_address,
    generate_kiosk_key,
    issue_credential,
    load_kiosk_private_key,
    load_kiosk_public_key,
    save_kiosk_key,
    verify_credential,
)

ADDRESS = "proxy.example.org:9031"
ISSUED_AT = 1_700_000_000.7


@pytest.fixture(scope="module")
def kiosk_key() -> Ed25519PrivateKey:
    return generate_kiosk_key()


def test_issued_credential_verifies(kiosk_key: Ed25519PrivateKey) -> None:
    credential = issue_credential(ADDRESS, timedelta(minutes=10), kiosk_key, now=ISSUED_AT)

    assert credential.expiry == 1_700_000_600
    assert verify_credential(credential, kiosk_key.public_key(), now=ISSUED_AT).accepted
    assert verify_credential(credential.to_text(), kiosk_key.public_key(), now=ISSUED_AT).accepted
    assert Credential.from_text(credential.to_text()) == credential
    assert credential_address(credential.to_text()) == ADDRESS


def test_issuance_is_deterministic(kiosk_key: Ed25519PrivateKey) -> None:
    first = issue_credential(ADDRESS, timedelta(minutes=10), kiosk_key, now=ISSUED_AT)
    second = issue_credential(ADDRESS, timedelta(minutes=10), kiosk_key, now=ISSUED_AT)

    assert first.to_text() == second.to_text()


def test_validity_window_must_be_positive(kiosk_key: Ed25519PrivateKey) -> None:
    with pytest.raises(ValueError, match="must be positive"):
        issue_credential(ADDRESS, timedelta(0), kiosk_key, now=ISSUED_AT)


def test_credential_is_valid_until_its_expiry(kiosk_key: Ed25519PrivateKey) -> None:
    credential = issue_credential(ADDRESS, timedelta(seconds=30), kiosk_key, now=ISSUED_AT)
    public_key = kiosk_key.public_key()

    assert verify_credential(credential, public_key, now=credential.expiry).accepted
    verdict = verify_credential(credential, public_key, now=credential.expiry + 1)
    assert verdict.status is CredentialStatus.EXPIRED
    assert str(credential.expiry) in verdict.detail


def test_every_single_byte_mutation_is_rejected(kiosk_key: Ed25519PrivateKey) -> None:
    credential = issue_credential(ADDRESS, timedelta(minutes=10), kiosk_key, now=ISSUED_AT)
    raw = base64.b64decode(credential.to_text())

    for position in range(len(raw)):
        mutated = bytearray(raw)
        mutated[position] ^= 0x01
        verdict = verify_credential(base64.b64encode(mutated).decode(), kiosk_key.public_key(), now=ISSUED_AT)
        assert not verdict.accepted, position


def test_extended_expiry_breaks_the_signature(kiosk_key: Ed25519PrivateKey) -> None:
    credential = issue_credential(ADDRESS, timedelta(seconds=30), kiosk_key, now=ISSUED_AT)
    extended = Credential(proxy_address=ADDRESS, expiry=credential.expiry + 3600, signature=credential.signature)

    verdict = verify_credential(extended, kiosk_key.public_key(), now=ISSUED_AT)

    assert verdict.status is CredentialStatus.BAD_SIGNATURE


def test_credential_of_another_kiosk_is_rejected(kiosk_key: Ed25519PrivateKey) -> None:
    credential = issue_credential(ADDRESS, timedelta(minutes=10), generate_kiosk_key(), now=ISSUED_AT)

    verdict = verify_credential(credential, kiosk_key.public_key(), now=ISSUED_AT)

    assert verdict.status is CredentialStatus.BAD_SIGNATURE


@pytest.mark.parametrize("text", ["", "not base64!", base64.b64encode(b"short").decode()])
def test_malformed_credential_text(kiosk_key: Ed25519PrivateKey, text: str) -> None:
    assert verify_credential(text, kiosk_key.public_key(), now=ISSUED_AT).status is CredentialStatus.MALFORMED
    assert credential_address(text) is None


def test_signed_garbage_is_malformed(kiosk_key: Ed25519PrivateKey) -> None:
    text = base64.b64encode(b"no separator" + kiosk_key.sign(b"no separator")).decode()

    assert verify_credential(text, kiosk_key.public_key(), now=ISSUED_AT).status is CredentialStatus.MALFORMED


def test_canonical_encoding_layout() -> None:
    assert canonical_encoding("a:1", 258) == b"a:1\x1f" + bytes(6) + b"\x01\x02"


def test_kiosk_keys_survive_the_filesystem(kiosk_key: Ed25519PrivateKey, tmp_path: Path) -> None:
    private_path, public_path = save_kiosk_key(kiosk_key, tmp_path / "kiosk")

    assert private_path.stat().st_mode & 0o777 == 0o600
    loaded = load_kiosk_private_key(private_path)
    credential = issue_credential(ADDRESS, timedelta(minutes=1), loaded, now=ISSUED_AT)
    assert verify_credential(credential, load_kiosk_public_key(public_path), now=ISSUED_AT).accepted


def test_loading_a_foreign_key_type_fails(tmp_path: Path, keypair: AsymmetricKeyPair) -> None:
    path = tmp_path / "rsa.key"
    path.write_bytes(
        keypair.private_key_object.private_bytes(
            serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8, serialization.NoEncryption()
        )
    )

    with pytest.raises(TypeError, match="Ed25519 private key"):
        load_kiosk_private_key(path)

