#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.

import random
from collections import Counter
from itertools import permutations

import numpy as np
import pytest
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import rsa
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from scipy.stats import chisquare

from keyfrag_common.constants import MODE_TAG_DIRECT, MODE_TAG_ENVELOPE
from keyfrag_common.keycore import (
    AsymmetricKeyPair,
    EncryptedFragment,
    EncryptionMode,
    EnvelopeKey,
    FragmentConflictError,
    FragmentDecryptionError,
    FragmentModeError,
    FragmentProtocolError,
    IncompleteFragmentSetError,
    ParameterError,
    PlainFragment,
    SessionKey,
    decrypt_fragment,
    direct_plaintext_bound,
    encrypt_fragment,
    fragment_key,
    generate_key,
    reconstruct_key,
    shuffle_fragments,
    zeroize,
)


@pytest.fixture
def key() -> SessionKey:
    return generate_key(256, random.Random(42))


def test_generate_key_is_reproducible_under_a_seed() -> None:
    first = generate_key(128, random.Random(3))
    second = generate_key(128, random.Random(3))

    assert first == second
    assert len(first.material) == 16
    assert first.bits == 128


@pytest.mark.parametrize("bits", [0, 64, 100, 512])
def test_generate_key_rejects_unsupported_lengths(bits: int) -> None:
    with pytest.raises(ParameterError, match="Unsupported key length"):
        generate_key(bits, random.Random(0))


def test_session_key_rejects_mismatched_material() -> None:
    with pytest.raises(ParameterError):
        SessionKey(bits=256, material=bytes(31))


def test_fragment_key_splits_into_near_equal_contiguous_chunks(key: SessionKey) -> None:
    fragments = fragment_key(key, 5)

    assert [len(fragment.payload) for fragment in fragments] == [7, 7, 6, 6, 6]
    assert [fragment.index for fragment in fragments] == list(range(5))
    assert all(fragment.total == 5 for fragment in fragments)
    assert b"".join(fragment.payload for fragment in fragments) == key.material


@pytest.mark.parametrize("n", [0, 33])
def test_fragment_key_rejects_impossible_splits(key: SessionKey, n: int) -> None:
    with pytest.raises(ParameterError):
        fragment_key(key, n)


def test_single_fragment_carries_the_whole_key(key: SessionKey) -> None:
    (fragment,) = fragment_key(key, 1)
    assert fragment.payload == key.material


def test_reconstruct_undoes_shuffle(key: SessionKey) -> None:
    fragments = fragment_key(key, 8)
    shuffled = shuffle_fragments(fragments, random.Random(5))

    assert sorted(shuffled, key=lambda fragment: fragment.index) == fragments
    assert reconstruct_key(shuffled) == key


@pytest.mark.slow
def test_shuffle_is_uniform_over_all_orders(key: SessionKey) -> None:
    fragments = fragment_key(key, 4)
    orders = list(permutations(range(4)))
    rng = random.Random(2024)
    samples = 1000 * len(orders)

    counts = Counter(tuple(fragment.index for fragment in shuffle_fragments(fragments, rng)) for _ in range(samples))

    assert set(counts) == set(orders)
    assert chisquare([counts[order] for order in orders]).pvalue > 0.001


@pytest.mark.slow
def test_generated_bits_are_unbiased() -> None:
    rng = random.SystemRandom()
    keys = np.frombuffer(b"".join(generate_key(256, rng).material for _ in range(4000)), dtype=np.uint8)
    bits = np.unpackbits(keys).reshape(4000, 256)

    # Five standard deviations of a fair coin mean over 4000 draws.
    tolerance = 5 * np.sqrt(0.25 / 4000)
    assert np.all(np.abs(bits.mean(axis=0) - 0.5) < tolerance)
    assert abs(bits.mean() - 0.5) < 5 * np.sqrt(0.25 / bits.size)


def test_reconstruct_accepts_identical_duplicates(key: SessionKey) -> None:
    fragments = fragment_key(key, 4)
    assert reconstruct_key([*fragments, fragments[2]]) == key


def test_reconstruct_reports_missing_indices(key: SessionKey) -> None:
    fragments = fragment_key(key, 6)

    with pytest.raises(IncompleteFragmentSetError) as exc_info:
        reconstruct_key([fragments[0], fragments[2], fragments[5]])

    assert exc_info.value.missing == [1, 3, 4]
    assert exc_info.value.total == 6


def test_reconstruct_rejects_conflicting_payloads(key: SessionKey) -> None:
    fragments = fragment_key(key, 4)
    forged = PlainFragment(index=1, total=4, payload=bytes(len(fragments[1].payload)))

    with pytest.raises(FragmentConflictError) as exc_info:
        reconstruct_key([*fragments, forged])

    assert exc_info.value.index == 1


def test_reconstruct_rejects_disagreeing_totals(key: SessionKey) -> None:
    with pytest.raises(FragmentProtocolError, match="disagree"):
        reconstruct_key([*fragment_key(key, 2), fragment_key(key, 4)[3]])


def test_reconstruct_rejects_empty_input() -> None:
    with pytest.raises(FragmentProtocolError):
        reconstruct_key([])


@pytest.mark.parametrize(("index", "total"), [(2, 2), (-1, 3), (0, 0)])
def test_plain_fragment_validates_header(index: int, total: int) -> None:
    with pytest.raises(FragmentProtocolError):
        PlainFragment(index=index, total=total, payload=b"x")


def test_plain_fragment_deserialize_rejects_truncation() -> None:
    serialized = PlainFragment(index=0, total=1, payload=b"abcd").serialize()

    with pytest.raises(FragmentProtocolError, match="header"):
        PlainFragment.deserialize(serialized[:5])
    with pytest.raises(FragmentProtocolError, match="payload bytes"):
        PlainFragment.deserialize(serialized[:-1])


@pytest.mark.parametrize(
    ("mode", "mode_tag"), [(EncryptionMode.DIRECT, MODE_TAG_DIRECT), (EncryptionMode.ENVELOPE, MODE_TAG_ENVELOPE)]
)
def test_encrypted_fragment_opens_to_the_original(
    key: SessionKey, keypair: AsymmetricKeyPair, mode: EncryptionMode, mode_tag: int
) -> None:
    fragment = fragment_key(key, 3)[1]

    encrypted = encrypt_fragment(fragment, keypair.public_key, mode, session_tag="tag-a")

    assert encrypted.ciphertext[0] == mode_tag
    assert fragment.payload not in encrypted.ciphertext
    assert decrypt_fragment(encrypted, keypair.private_key) == fragment


@pytest.mark.parametrize("mode", list(EncryptionMode))
def test_fragment_is_bound_to_its_session_tag(
    key: SessionKey, keypair: AsymmetricKeyPair, mode: EncryptionMode
) -> None:
    encrypted = encrypt_fragment(fragment_key(key, 2)[0], keypair.public_key, mode, session_tag="tag-a")
    moved = EncryptedFragment(session_tag="tag-b", ciphertext=encrypted.ciphertext)

    with pytest.raises(FragmentDecryptionError):
        decrypt_fragment(moved, keypair.private_key)


@pytest.mark.parametrize("mode", list(EncryptionMode))
def test_fragment_does_not_open_under_another_key(
    key: SessionKey, keypair: AsymmetricKeyPair, other_keypair: AsymmetricKeyPair, mode: EncryptionMode
) -> None:
    encrypted = encrypt_fragment(fragment_key(key, 2)[0], keypair.public_key, mode, session_tag="tag-a")

    with pytest.raises(FragmentDecryptionError):
        decrypt_fragment(encrypted, other_keypair.private_key)


@pytest.mark.parametrize("mode", list(EncryptionMode))
def test_tampered_ciphertext_is_rejected(
    key: SessionKey, keypair: AsymmetricKeyPair, mode: EncryptionMode
) -> None:
    encrypted = encrypt_fragment(fragment_key(key, 2)[0], keypair.public_key, mode, session_tag="tag-a")
    tampered = bytearray(encrypted.ciphertext)
    tampered[-1] ^= 0x01

    with pytest.raises(FragmentDecryptionError):
        decrypt_fragment(EncryptedFragment(session_tag="tag-a", ciphertext=bytes(tampered)), keypair.private_key)


@pytest.mark.parametrize("ciphertext", [b"", b"\x07garbage", b"\x02\x00"])
def test_malformed_ciphertext_is_rejected(keypair: AsymmetricKeyPair, ciphertext: bytes) -> None:
    with pytest.raises(FragmentDecryptionError):
        decrypt_fragment(EncryptedFragment(session_tag="tag-a", ciphertext=ciphertext), keypair.private_key)


def test_direct_mode_refuses_oversized_fragments() -> None:
    small = AsymmetricKeyPair.generate(1024)
    assert direct_plaintext_bound(small.public_key) == 62
    fragment = PlainFragment(index=0, total=1, payload=bytes(60))

    with pytest.raises(FragmentModeError, match="envelope mode"):
        encrypt_fragment(fragment, small.public_key, EncryptionMode.DIRECT, session_tag="tag")

    encrypted = encrypt_fragment(fragment, small.public_key, EncryptionMode.ENVELOPE, session_tag="tag")
    assert decrypt_fragment(encrypted, small.private_key) == fragment


def test_envelope_master_is_unwrapped_once_per_session(key: SessionKey, keypair: AsymmetricKeyPair) -> None:
    envelope = EnvelopeKey.create(keypair.public_key, "tag-a")
    fragments = fragment_key(key, 8)
    encrypted = [
        encrypt_fragment(fragment, keypair.public_key, EncryptionMode.ENVELOPE, session_tag="tag-a", envelope=envelope)
        for fragment in fragments
    ]
    cache: dict[bytes, bytes] = {}

    opened = [decrypt_fragment(item, keypair.private_key, unwrap_cache=cache) for item in encrypted]

    assert opened == fragments
    assert list(cache.values()) == [envelope.master]
    # Every fragment has its own salt and nonce.
    assert len({item.ciphertext for item in encrypted}) == 8


def test_key_pair_from_pem_matches_the_generated_key() -> None:
    private = rsa.generate_private_key(public_exponent=65537, key_size=1024)
    pem = private.private_bytes(
        serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8, serialization.NoEncryption()
    )

    from_pem = AsymmetricKeyPair.from_private_key(pem)
    from_object = AsymmetricKeyPair.from_private_key(private)

    assert from_pem == from_object
    assert AsymmetricKeyPair.from_private_key(from_pem.private_key) == from_pem
    assert len(from_pem.fingerprint) == 64


def test_key_pair_rejects_non_rsa_keys() -> None:
    pem = Ed25519PrivateKey.generate().private_bytes(
        serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8, serialization.NoEncryption()
    )

    with pytest.raises(ParameterError, match="RSA"):
        AsymmetricKeyPair.from_private_key(pem)


def test_zeroize_overwrites_in_place() -> None:
    buffer = bytearray(b"secret")
    view = buffer

    zeroize(buffer)

    assert view == bytearray(6)
