#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.

from struct import Struct
from typing import Final

# General.
KiB: Final[int] = 1024
MiB: Final[int] = 1024 * KiB

# Session keys.
SUPPORTED_KEY_BITS: Final[tuple[int, ...]] = (128, 192, 256)

# Plaintext fragment header: index u16, total u16, payload length u32, big-endian.
FRAGMENT_HEADER: Final[Struct] = Struct(">HHI")
MAX_FRAGMENTS: Final[int] = 0xFFFF

# Ciphertext mode tags (first byte of every encrypted fragment).
MODE_TAG_DIRECT: Final[int] = 0x01
MODE_TAG_ENVELOPE: Final[int] = 0x02

# Symmetric primitives.
AES_KEY_SIZE: Final[int] = 32
GCM_NONCE_SIZE: Final[int] = 12
HKDF_SALT_SIZE: Final[int] = 16

DEFAULT_RSA_KEY_SIZE: Final[int] = 2048

# Request.
MAX_REQUEST_SIZE: Final[int] = 1 * MiB

# HKDF info labels.
TUNNEL_KDF_LABEL: Final[bytes] = b"keyfrag/tunnel/v1"
ENVELOPE_KDF_LABEL: Final[bytes] = b"keyfrag/envelope/fragment/v1"
