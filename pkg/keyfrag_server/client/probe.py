#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
"""A probe message encrypted under an established session key, used to show both parties hold the same key."""

import os

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from keyfrag_common.constants import GCM_NONCE_SIZE
from keyfrag_common.keycore import SessionKey


class ProbeError(Exception):
    pass


def seal_probe(key: SessionKey, message: bytes, tagname: str) -> bytes:
    nonce = os.urandom(GCM_NONCE_SIZE)
    return nonce + AESGCM(key.material).encrypt(nonce, message, tagname.encode())


def open_probe(key: SessionKey, sealed: bytes, tagname: str) -> bytes:
    try:
        return AESGCM(key.material).decrypt(sealed[:GCM_NONCE_SIZE], sealed[GCM_NONCE_SIZE:], tagname.encode())
    except (InvalidTag, ValueError) as error:
        msg = "Probe message did not decrypt under the session key."
        raise ProbeError(msg) from error
